//! Dense raster primitives: images, gradient fields, disparity maps, masks,
//! and the warps that move data between the two views.
//!
//! Disparity convention: disparities are non-negative and a left-view pixel
//! at column `x` corresponds to the right-view pixel at column `x - d`.
//! Equivalently, a right-view pixel at `x` corresponds to the left-view pixel
//! at `x + d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Event, EventStream};

/// What a raster's values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Conventional frame intensity.
    Intensity,
    /// Intensity recovered from events.
    Reconstruction,
    /// Event voxel data.
    Voxel,
}

/// Camera a raster belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Left,
    Right,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::Left => View::Right,
            View::Right => View::Left,
        }
    }
}

/// Direction of a backward warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpDirection {
    /// Synthesize the left view from a right-view source: `out(x) = src(x - d(x))`.
    RightToLeft,
    /// Synthesize the right view from a left-view source: `out(x) = src(x + d(x))`.
    LeftToRight,
}

impl WarpDirection {
    /// View the warped output lives in.
    pub fn target(self) -> View {
        match self {
            WarpDirection::RightToLeft => View::Left,
            WarpDirection::LeftToRight => View::Right,
        }
    }

    /// Warp that synthesizes `target` from the opposite view.
    pub fn into_view(target: View) -> Self {
        match target {
            View::Left => WarpDirection::RightToLeft,
            View::Right => WarpDirection::LeftToRight,
        }
    }

    /// Sign applied to the disparity when forming the sampling column.
    pub fn offset_sign(self) -> f64 {
        match self {
            WarpDirection::RightToLeft => -1.0,
            WarpDirection::LeftToRight => 1.0,
        }
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InputData(format!(
            "{what} contains non-finite values"
        )))
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::arg("raster dimensions must be positive"));
    }
    if len != width * height {
        return Err(Error::arg(format!(
            "raster data length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

fn check_same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

fn flip_rows<T: Copy>(data: &[T], width: usize) -> Vec<T> {
    data.chunks(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
    modality: Modality,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>, modality: Modality) -> Result<Self> {
        check_dims(width, height, data.len())?;
        check_finite(&data, "image")?;
        Ok(Self {
            width,
            height,
            data,
            modality,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64, modality: Modality) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], modality)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        modality: Modality,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data, modality)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Pointwise `a * I + b`.
    pub fn affine(&self, a: f64, b: f64) -> Image {
        Image {
            data: self.data.iter().map(|v| a * v + b).collect(),
            ..self.clone()
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        Image {
            data: flip_rows(&self.data, self.width),
            ..self.clone()
        }
    }
}

/// Horizontal and vertical derivatives of a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl GradientField {
    pub fn new(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        check_dims(width, height, gx.len())?;
        check_dims(width, height, gy.len())?;
        check_finite(&gx, "gradient field")?;
        check_finite(&gy, "gradient field")?;
        Ok(Self {
            width,
            height,
            gx,
            gy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gx: vec![0.0; width * height],
            gy: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> [&[f64]; 2] {
        [&self.gx, &self.gy]
    }

    pub fn scaled(&self, s: f64) -> GradientField {
        GradientField {
            width: self.width,
            height: self.height,
            gx: self.gx.iter().map(|v| v * s).collect(),
            gy: self.gy.iter().map(|v| v * s).collect(),
        }
    }

    /// Smallest and largest value over both channels.
    pub fn value_range(&self) -> (f64, f64) {
        self.gx
            .iter()
            .chain(&self.gy)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Crops both channels to `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GradientField {
        let pick = |c: &[f64]| -> Vec<f64> {
            (y0..y0 + h)
                .flat_map(|y| {
                    c[y * self.width + x0..y * self.width + x0 + w]
                        .iter()
                        .copied()
                })
                .collect()
        };
        GradientField {
            width: w,
            height: h,
            gx: pick(&self.gx),
            gy: pick(&self.gy),
        }
    }
}

/// Per-pixel horizontal disparity in pixels, tagged with its reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    view: View,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>, view: View) -> Result<Self> {
        check_dims(width, height, data.len())?;
        check_finite(&data, "disparity map")?;
        Ok(Self {
            width,
            height,
            data,
            view,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64, view: View) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
            view,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn with_view(mut self, view: View) -> Self {
        self.view = view;
        self
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn flip_horizontal(&self) -> DisparityMap {
        DisparityMap {
            data: flip_rows(&self.data, self.width),
            ..self.clone()
        }
    }

    /// Median disparity over pixels selected by `keep`.
    pub fn median_where(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let mut vals: Vec<f64> = (0..self.data.len())
            .filter(|&i| keep(i))
            .map(|i| self.data[i])
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        Some(if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        })
    }

    pub fn as_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
            modality: Modality::Intensity,
        }
    }
}

/// Binary per-pixel mask. What `true` means is fixed by the producer:
/// occlusion masks set occluded/invalid pixels, warp validity masks set
/// pixels that received a sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

/// Occlusion mask: `true` = occluded or otherwise excluded.
pub type OcclusionMask = Mask;

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn invert(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
            ..self.clone()
        }
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask {
            data: flip_rows(&self.data, self.width),
            ..self.clone()
        }
    }
}

/// Central differences in the interior, one-sided differences on the border.
pub fn gradient(img: &Image) -> Result<GradientField> {
    gradient_of(img.data(), img.width(), img.height())
}

pub(crate) fn gradient_of(data: &[f64], w: usize, h: usize) -> Result<GradientField> {
    if w < 3 || h < 3 {
        return Err(Error::arg(format!(
            "gradient needs at least 3x3, got {w}x{h}"
        )));
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x == 0 {
                data[i + 1] - data[i]
            } else if x == w - 1 {
                data[i] - data[i - 1]
            } else {
                (data[i + 1] - data[i - 1]) / 2.0
            };
            gy[i] = if y == 0 {
                data[i + w] - data[i]
            } else if y == h - 1 {
                data[i] - data[i - w]
            } else {
                (data[i + w] - data[i - w]) / 2.0
            };
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// Transpose of [`gradient`]: maps per-pixel sensitivities with respect to
/// `(gx, gy)` back to sensitivities with respect to the source raster.
pub(crate) fn gradient_adjoint(ax: &[f64], ay: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let a = ax[i];
            if x == 0 {
                out[i + 1] += a;
                out[i] -= a;
            } else if x == w - 1 {
                out[i] += a;
                out[i - 1] -= a;
            } else {
                out[i + 1] += 0.5 * a;
                out[i - 1] -= 0.5 * a;
            }
            let b = ay[i];
            if y == 0 {
                out[i + w] += b;
                out[i] -= b;
            } else if y == h - 1 {
                out[i] += b;
                out[i - w] -= b;
            } else {
                out[i + w] += 0.5 * b;
                out[i - w] -= 0.5 * b;
            }
        }
    }
    out
}

/// Linear sample of `row` at real column `u`. Returns the value and its
/// derivative with respect to `u`, or `None` outside `[0, len-1]`.
#[inline]
pub(crate) fn sample_linear(row: &[f64], u: f64) -> Option<(f64, f64)> {
    let last = (row.len() - 1) as f64;
    if !(0.0..=last).contains(&u) {
        return None;
    }
    if row.len() == 1 {
        return Some((row[0], 0.0));
    }
    let x0 = (u.floor() as usize).min(row.len() - 2);
    let a = u - x0 as f64;
    let slope = row[x0 + 1] - row[x0];
    Some((row[x0] + a * slope, slope))
}

/// Values, sensitivities to the disparity, and validity of a backward warp.
pub(crate) struct WarpSamples {
    pub values: Vec<f64>,
    pub d_values: Vec<f64>,
    pub valid: Vec<bool>,
}

pub(crate) fn warp_raster(
    src: &[f64],
    w: usize,
    h: usize,
    disp: &[f64],
    direction: WarpDirection,
) -> WarpSamples {
    let sign = direction.offset_sign();
    let mut values = vec![0.0; w * h];
    let mut d_values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let i = y * w + x;
            let u = x as f64 + sign * disp[i];
            if let Some((v, slope)) = sample_linear(row, u) {
                values[i] = v;
                d_values[i] = sign * slope;
                valid[i] = true;
            }
        }
    }
    WarpSamples {
        values,
        d_values,
        valid,
    }
}

/// Backward warp with linear interpolation along the scanline.
///
/// `disp` must be the disparity of the warp's target view. Samples that fall
/// outside the source are 0 and marked invalid in the returned mask
/// (`true` = valid).
pub fn warp_by_disparity(
    img: &Image,
    disp: &DisparityMap,
    direction: WarpDirection,
) -> Result<(Image, Mask)> {
    check_same_shape(img.shape(), disp.shape())?;
    if disp.view() != direction.target() {
        return Err(Error::arg(format!(
            "{direction:?} warp needs a {:?}-view disparity",
            direction.target()
        )));
    }
    let s = warp_raster(
        img.data(),
        img.width(),
        img.height(),
        disp.data(),
        direction,
    );
    Ok((
        Image {
            width: img.width,
            height: img.height,
            data: s.values,
            modality: img.modality,
        },
        Mask {
            width: img.width,
            height: img.height,
            data: s.valid,
        },
    ))
}

/// Resamples `src` into `via`'s view, using `via` as the sampling offsets.
/// Returns the projected disparity and its validity (`true` = valid).
pub fn project_disparity(src: &DisparityMap, via: &DisparityMap) -> Result<(DisparityMap, Mask)> {
    check_same_shape(src.shape(), via.shape())?;
    if src.view() == via.view() {
        return Err(Error::arg(
            "projection needs disparities from opposite views",
        ));
    }
    let direction = WarpDirection::into_view(via.view());
    let s = warp_raster(src.data(), src.width(), src.height(), via.data(), direction);
    Ok((
        DisparityMap {
            width: src.width,
            height: src.height,
            data: s.values,
            view: via.view(),
        },
        Mask {
            width: src.width,
            height: src.height,
            data: s.valid,
        },
    ))
}

/// Left-right consistency check for an arbitrary reference view: a pixel is
/// flagged when `|D - P(D_other; D)| >= t` or the projection left the frame.
pub fn consistency_mask(
    reference: &DisparityMap,
    other: &DisparityMap,
    t: f64,
) -> Result<OcclusionMask> {
    if !(t > 0.0) {
        return Err(Error::arg(format!(
            "occlusion threshold must be positive, got {t}"
        )));
    }
    let (proj, valid) = project_disparity(other, reference)?;
    let data = reference
        .data()
        .iter()
        .zip(proj.data())
        .zip(valid.data())
        .map(|((d, p), ok)| !ok || (d - p).abs() >= t)
        .collect();
    Ok(Mask {
        width: reference.width,
        height: reference.height,
        data,
    })
}

/// Occlusion mask of the left view from the left and right disparities.
pub fn occlusion_mask(dl: &DisparityMap, dr: &DisparityMap, t: f64) -> Result<OcclusionMask> {
    if dl.view() != View::Left || dr.view() != View::Right {
        return Err(Error::arg(
            "occlusion_mask expects (left, right) disparities",
        ));
    }
    consistency_mask(dl, dr, t)
}

/// Moves right-view events into the left view: `x' = round(x + d(x, y))`.
/// Events landing outside the sensor are dropped.
pub fn warp_events(stream: &EventStream, disp: &DisparityMap) -> Result<EventStream> {
    if disp.view() != View::Right {
        return Err(Error::arg("event warping needs a right-view disparity"));
    }
    check_same_shape((stream.width(), stream.height()), disp.shape())?;
    let w = stream.width() as f64;
    let events: Vec<Event> = stream
        .events()
        .iter()
        .filter_map(|e| {
            let nx = (e.x as f64 + disp.get(e.x as usize, e.y as usize)).round();
            (nx >= 0.0 && nx < w).then_some(Event { x: nx as u16, ..*e })
        })
        .collect();
    EventStream::new(stream.width(), stream.height(), events)
}
