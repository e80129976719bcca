//! Procedural stereo scenes and a contrast-threshold event simulator.
//!
//! A scene is a stack of fronto-parallel textured planes, each with a
//! constant disparity and an axis-aligned region in left-view coordinates.
//! Later planes are drawn over earlier ones. Textures are continuous
//! functions of position, so sub-pixel disparities render exactly. Pixels
//! covered by no plane show flat mid-gray at disparity 0.
//!
//! Over time the texture slides horizontally inside each region, drifting
//! at `motion` px/s plus a sinusoidal shake, and its contrast ramps linearly
//! from zero (uniform gray) to full over the first `fade_in` seconds. The
//! ramp gives the reconstruction its absolute structure; the shake makes
//! events fire at edges, as camera vibration does.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Event, EventStream, Polarity};
use crate::imageops::{DisparityMap, Image, Mask, Modality, View};

const GRAY: f64 = 0.5;

/// Log-domain crossings closer than this to a threshold still fire.
const CROSSING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Perlin,
    Checker,
    Stripes,
}

/// Axis-aligned rectangle in pixels, `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }

    fn contains(&self, x: f64, y: usize) -> bool {
        y >= self.y
            && y < self.y + self.height
            && x >= self.x as f64
            && x < (self.x + self.width) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// Disparity in pixels.
    pub disparity: f64,
    pub region: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub texture: Texture,
    pub planes: Vec<Plane>,
    /// Horizontal texture velocity in pixels per second.
    pub motion: f64,
    /// Sequence length in seconds.
    pub duration: f64,
    pub frame_rate: f64,
    /// Contrast ramp length in seconds; 0 renders full contrast throughout.
    pub fade_in: f64,
    /// Amplitude in pixels of a horizontal sinusoidal shake on top of
    /// `motion`.
    pub shake: f64,
    /// Whole shake periods over `duration`, so the shake ends where it
    /// started.
    pub shake_cycles: u32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            texture: Texture::Perlin,
            planes: vec![Plane {
                disparity: 6.0,
                region: Rect::full(64, 64),
            }],
            motion: 0.0,
            duration: 0.03,
            frame_rate: 2400.0,
            fade_in: 0.03,
            shake: 0.7,
            shake_cycles: 8,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::Config("scene must be at least 3x3".into()));
        }
        if self.planes.is_empty() {
            return Err(Error::Config("scene needs at least one plane".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            let r = p.region;
            if r.width == 0 || r.height == 0 {
                return Err(Error::Config(format!("plane {i} has a zero-area region")));
            }
            if r.x + r.width > self.width || r.y + r.height > self.height {
                return Err(Error::Config(format!("plane {i} region exceeds the image")));
            }
            if !(p.disparity >= 0.0 && p.disparity.is_finite()) {
                return Err(Error::Config(format!("plane {i} disparity must be >= 0")));
            }
        }
        if !(self.duration > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::Config(
                "duration and frame_rate must be positive".into(),
            ));
        }
        if self.frame_rate * self.duration < 1.0 {
            return Err(Error::Config(
                "frame_rate * duration must cover at least two frames".into(),
            ));
        }
        if !(self.fade_in >= 0.0 && self.motion.is_finite()) {
            return Err(Error::Config(
                "fade_in must be >= 0 and motion finite".into(),
            ));
        }
        if !(self.shake >= 0.0 && self.shake.is_finite()) {
            return Err(Error::Config(
                "shake must be a finite amplitude >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Frame timestamps in microseconds.
    pub fn timestamps(&self) -> Vec<u64> {
        let n = (self.duration * self.frame_rate + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| (k as f64 * 1e6 / self.frame_rate).round() as u64)
            .collect()
    }

    pub fn max_disparity(&self) -> f64 {
        self.planes.iter().map(|p| p.disparity).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Contrast threshold on log intensity.
    pub tau: f64,
    /// Floor added before taking the log.
    pub eps: f64,
    /// Minimum time between events at one pixel, microseconds.
    pub refractory: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            tau: 0.15,
            eps: 1e-3,
            refractory: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth for the final frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub left: DisparityMap,
    pub right: DisparityMap,
    /// Left pixels with no counterpart in the right view (`true`), either
    /// hidden behind a nearer surface or projected out of frame.
    pub occluded: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoSequence {
    pub left_frames: Vec<Image>,
    pub right_frames: Vec<Image>,
    pub timestamps: Vec<u64>,
    pub gt: GroundTruth,
}

/// Seeded gradient noise.
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    fn grad(hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => x - y,
            2 => -x + y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (xf, yf) = (x.floor(), y.floor());
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let (dx, dy) = (x - xf, y - yf);
        let (u, v) = (fade(dx), fade(dy));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        lerp(
            lerp(Self::grad(aa, dx, dy), Self::grad(ba, dx - 1.0, dy), u),
            lerp(
                Self::grad(ab, dx, dy - 1.0),
                Self::grad(bb, dx - 1.0, dy - 1.0),
                u,
            ),
            v,
        )
    }

    fn fractal(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / 10.0;
        for _ in 0..3 {
            sum += amp * self.noise(x * freq, y * freq);
            amp *= 0.5;
            freq *= 2.0;
        }
        sum
    }
}

enum PlaneTexture {
    Perlin(Box<Perlin>),
    Checker { phase: f64 },
    Stripes { phase: f64 },
}

impl PlaneTexture {
    fn new(kind: Texture, seed: u64) -> Self {
        let phase = (seed % 97) as f64 * 0.37;
        match kind {
            Texture::Perlin => PlaneTexture::Perlin(Box::new(Perlin::new(seed))),
            Texture::Checker => PlaneTexture::Checker { phase },
            Texture::Stripes => PlaneTexture::Stripes { phase },
        }
    }

    /// Full-contrast value in `[0.05, 0.95]` at texture coordinate `(u, v)`.
    fn sample(&self, u: f64, v: f64) -> f64 {
        use std::f64::consts::PI;
        let value = match self {
            PlaneTexture::Perlin(p) => GRAY + 0.6 * p.fractal(u, v),
            PlaneTexture::Checker { phase } => {
                let s = ((u + phase) * PI / 8.0).sin() * ((v + phase) * PI / 8.0).sin();
                GRAY + 0.4 * (4.0 * s).tanh()
            }
            PlaneTexture::Stripes { phase } => {
                GRAY + 0.35 * ((u + phase) * 2.0 * PI / 11.0).sin()
                    + 0.05 * (v * 2.0 * PI / 23.0).sin()
            }
        };
        value.clamp(0.05, 0.95)
    }
}

struct Renderer<'a> {
    cfg: &'a SceneConfig,
    textures: Vec<PlaneTexture>,
}

impl<'a> Renderer<'a> {
    fn new(cfg: &'a SceneConfig) -> Self {
        let textures = (0..cfg.planes.len())
            .map(|k| {
                PlaneTexture::new(
                    cfg.texture,
                    cfg.seed.wrapping_mul(1009).wrapping_add(k as u64),
                )
            })
            .collect();
        Self { cfg, textures }
    }

    /// Topmost plane seen at column `x` of `view`.
    fn plane_at(&self, x: usize, y: usize, view: View) -> Option<usize> {
        self.cfg.planes.iter().enumerate().rev().find_map(|(k, p)| {
            let xl = match view {
                View::Left => x as f64,
                View::Right => x as f64 + p.disparity,
            };
            p.region.contains(xl, y).then_some(k)
        })
    }

    fn frame(&self, t_us: u64, view: View) -> Image {
        let cfg = self.cfg;
        let t = t_us as f64 * 1e-6;
        let contrast = if cfg.fade_in > 0.0 {
            (t / cfg.fade_in).min(1.0)
        } else {
            1.0
        };
        let phase = std::f64::consts::TAU * cfg.shake_cycles as f64 * t / cfg.duration;
        let shift = cfg.motion * t + cfg.shake * phase.sin();
        Image::from_fn(
            cfg.width,
            cfg.height,
            Modality::Intensity,
            |x, y| match self.plane_at(x, y, view) {
                Some(k) => {
                    let d = match view {
                        View::Left => 0.0,
                        View::Right => cfg.planes[k].disparity,
                    };
                    let v = self.textures[k].sample(x as f64 + d + shift, y as f64);
                    GRAY + contrast * (v - GRAY)
                }
                None => GRAY,
            },
        )
        .expect("rendered values are finite")
    }

    fn disparity(&self, view: View) -> DisparityMap {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let data = (0..w * h)
            .map(|i| {
                self.plane_at(i % w, i / w, view)
                    .map_or(0.0, |k| self.cfg.planes[k].disparity)
            })
            .collect();
        DisparityMap::new(w, h, data, view).expect("finite disparities")
    }
}

/// Marks left pixels that lose the forward splat into the right view, or
/// land outside it. The larger disparity (nearer surface) wins each target.
pub fn forward_splat_occlusion(left: &DisparityMap) -> Mask {
    let (w, h) = left.shape();
    let mut occluded = Mask::filled(w, h, false);
    for y in 0..h {
        let mut winner = vec![f64::NEG_INFINITY; w];
        let target = |x: usize| (x as f64 - left.get(x, y)).round();
        for x in 0..w {
            let tx = target(x);
            if tx >= 0.0 && (tx as usize) < w {
                let slot = &mut winner[tx as usize];
                *slot = slot.max(left.get(x, y));
            }
        }
        for x in 0..w {
            let tx = target(x);
            let hidden = tx < 0.0 || tx as usize >= w || left.get(x, y) < winner[tx as usize];
            occluded.set(x, y, hidden);
        }
    }
    occluded
}

/// Renders the left and right sequences together with ground truth for the
/// final frame.
pub fn render_stereo_sequence(cfg: &SceneConfig) -> Result<StereoSequence> {
    cfg.validate()?;
    let renderer = Renderer::new(cfg);
    let timestamps = cfg.timestamps();
    let (left_frames, right_frames): (Vec<Image>, Vec<Image>) = timestamps
        .par_iter()
        .map(|&t| {
            (
                renderer.frame(t, View::Left),
                renderer.frame(t, View::Right),
            )
        })
        .unzip();
    let left = renderer.disparity(View::Left);
    let right = renderer.disparity(View::Right);
    let occluded = forward_splat_occlusion(&left);
    Ok(StereoSequence {
        left_frames,
        right_frames,
        timestamps,
        gt: GroundTruth {
            left,
            right,
            occluded,
        },
    })
}

fn pixel_events(
    log_series: impl Iterator<Item = f64>,
    timestamps: &[u64],
    sim: &SimulatorConfig,
    x: u16,
    y: u16,
    out: &mut Vec<Event>,
) {
    let mut series = log_series;
    let Some(first) = series.next() else { return };
    let mut reference = first;
    let mut prev = first;
    let mut last_emit: Option<u64> = None;
    for (k, current) in series.enumerate() {
        let (ta, tb) = (timestamps[k] as f64, timestamps[k + 1] as f64);
        let delta = current - prev;
        if delta != 0.0 {
            let (step, polarity) = if delta > 0.0 {
                (sim.tau, Polarity::Positive)
            } else {
                (-sim.tau, Polarity::Negative)
            };
            loop {
                let level = reference + step;
                let reached = if delta > 0.0 {
                    level <= current + CROSSING_TOLERANCE
                } else {
                    level >= current - CROSSING_TOLERANCE
                };
                if !reached {
                    break;
                }
                let frac = ((level - prev) / delta).clamp(0.0, 1.0);
                let t = (ta + frac * (tb - ta)).round() as u64;
                reference = level;
                if last_emit.is_some_and(|last| t - last < sim.refractory) {
                    continue;
                }
                last_emit = Some(t);
                out.push(Event::new(t, x, y, polarity));
            }
        }
        prev = current;
    }
}

/// Contrast-threshold event generation with linear interpolation of log
/// intensity between frames.
///
/// Each pixel keeps a reference log level; whenever the interpolated signal
/// crosses `reference ± tau` an event of that sign is emitted at the
/// crossing time and the reference moves by `± tau`. Crossings within the
/// refractory period still move the reference but emit nothing.
pub fn simulate_events(
    frames: &[Image],
    timestamps: &[u64],
    sim: &SimulatorConfig,
) -> Result<EventStream> {
    sim.validate()?;
    if frames.len() < 2 {
        return Err(Error::arg("event simulation needs at least two frames"));
    }
    if frames.len() != timestamps.len() {
        return Err(Error::arg("one timestamp per frame required"));
    }
    if !timestamps.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::arg("frame timestamps must be strictly increasing"));
    }
    let (w, h) = frames[0].shape();
    for f in frames {
        if f.shape() != (w, h) {
            return Err(Error::ShapeMismatch {
                expected: (w, h),
                actual: f.shape(),
            });
        }
        if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InputData(
                "frame intensities must lie in [0, 1]".into(),
            ));
        }
    }
    let logs: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.data().iter().map(|v| (v + sim.eps).ln()).collect())
        .collect();

    let rows: Vec<Vec<Event>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..w {
                let i = y * w + x;
                pixel_events(
                    logs.iter().map(|l| l[i]),
                    timestamps,
                    sim,
                    x as u16,
                    y as u16,
                    &mut out,
                );
            }
            out
        })
        .collect();
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventStream::new(w, h, events)
}
