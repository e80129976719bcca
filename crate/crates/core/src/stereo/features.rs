use crate::error::{Error, Result};
use crate::event_model::VoxelGrid;
use crate::imageops::{gradient_of, Image, Modality};
use crate::util::{box_count, box_sum};

/// Channels per feature map: gx, gy, gradient magnitude, locally
/// mean-subtracted intensity.
pub const CHANNELS: usize = 4;

/// What a view contributes to matching.
#[derive(Debug, Clone, Copy)]
pub enum MatchInput<'a> {
    Image(&'a Image),
    Voxel(&'a VoxelGrid),
}

impl MatchInput<'_> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatchInput::Image(img) => img.shape(),
            MatchInput::Voxel(v) => (v.width(), v.height()),
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            MatchInput::Image(img) => img.modality(),
            MatchInput::Voxel(_) => Modality::Voxel,
        }
    }
}

/// Fixed gradient features of one view, each channel standardized over the
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: [Vec<f64>; CHANNELS],
    modality: Modality,
}

impl FeatureMap {
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

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn gx(&self) -> &[f64] {
        &self.channels[0]
    }

    pub fn gy(&self) -> &[f64] {
        &self.channels[1]
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.channels[2]
    }

    /// Mirror image of the features. The x gradient changes sign.
    pub fn flip_horizontal(&self) -> FeatureMap {
        let w = self.width;
        let flip = |v: &[f64], s: f64| -> Vec<f64> {
            v.chunks(w)
                .flat_map(|row| row.iter().rev().map(move |x| s * x))
                .collect()
        };
        FeatureMap {
            width: w,
            height: self.height,
            channels: [
                flip(&self.channels[0], -1.0),
                flip(&self.channels[1], 1.0),
                flip(&self.channels[2], 1.0),
                flip(&self.channels[3], 1.0),
            ],
            modality: self.modality,
        }
    }
}

/// Separable [1 2 1]/4 blur with replicated borders.
fn binomial_blur(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = data[y * w + x.saturating_sub(1)];
            let r = data[y * w + (x + 1).min(w - 1)];
            tmp[y * w + x] = 0.25 * l + 0.5 * data[y * w + x] + 0.25 * r;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let u = tmp[y.saturating_sub(1) * w + x];
            let d = tmp[(y + 1).min(h - 1) * w + x];
            out[y * w + x] = 0.25 * u + 0.5 * tmp[y * w + x] + 0.25 * d;
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 0.0 };
    for x in v.iter_mut() {
        *x = (*x - mean) * scale;
    }
}

/// Runs the branch that belongs to the input's modality.
///
/// Intensity images are used as they are; reconstructions and voxel grids
/// (whose intensity proxy is the per-pixel summed absolute polarity over
/// bins) are lightly blurred first to suppress threshold quantization.
pub fn extract_features(input: MatchInput<'_>, patch: usize) -> Result<FeatureMap> {
    let (w, h) = input.shape();
    if patch < 3 || patch.is_multiple_of(2) {
        return Err(Error::arg(format!(
            "patch must be odd and >= 3, got {patch}"
        )));
    }
    if w < patch || h < patch {
        return Err(Error::arg(format!(
            "{w}x{h} input is smaller than the {patch}px patch"
        )));
    }
    let modality = input.modality();
    let base = match input {
        MatchInput::Image(img) => match modality {
            Modality::Intensity => img.data().to_vec(),
            Modality::Reconstruction => binomial_blur(img.data(), w, h),
            Modality::Voxel => return Err(Error::arg("voxel modality needs a voxel grid input")),
        },
        MatchInput::Voxel(v) => {
            let mut proxy = vec![0.0; w * h];
            for b in 0..v.bins() {
                for (p, x) in proxy.iter_mut().zip(v.slice(b)) {
                    *p += x.abs();
                }
            }
            binomial_blur(&proxy, w, h)
        }
    };

    let g = gradient_of(&base, w, h)?;
    let mag: Vec<f64> = g.gx.iter().zip(&g.gy).map(|(a, b)| a.hypot(*b)).collect();
    let radius = patch / 2;
    let local = box_sum(&base, w, h, radius);
    let count = box_count(w, h, radius);
    let centered: Vec<f64> = (0..w * h).map(|i| base[i] - local[i] / count[i]).collect();

    let mut channels = [g.gx, g.gy, mag, centered];
    for c in channels.iter_mut() {
        standardize(c);
    }
    Ok(FeatureMap {
        width: w,
        height: h,
        channels,
        modality,
    })
}
