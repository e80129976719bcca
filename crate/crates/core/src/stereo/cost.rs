use rayon::prelude::*;

use super::features::FeatureMap;
use super::MatchParams;
use crate::error::{Error, Result};
use crate::imageops::{DisparityMap, Mask, View};
use crate::losses::Moments;

/// Matching cost per pixel and candidate disparity; lower is better and
/// `+∞` marks a candidate whose correspondence leaves the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d_max: usize,
    reference: View,
    cost: Vec<f64>,
}

impl CostVolume {
    /// Builds a volume from raw costs laid out `(y, x, d)`.
    pub fn new(
        width: usize,
        height: usize,
        d_max: usize,
        reference: View,
        cost: Vec<f64>,
    ) -> Result<Self> {
        if cost.len() != width * height * (d_max + 1) {
            return Err(Error::arg(format!(
                "cost volume needs {} values, got {}",
                width * height * (d_max + 1),
                cost.len()
            )));
        }
        if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Error::arg("cost volume contains NaN or -inf"));
        }
        Ok(Self {
            width,
            height,
            d_max,
            reference,
            cost,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// View whose pixel grid indexes the volume.
    pub fn reference(&self) -> View {
        self.reference
    }

    pub fn data(&self) -> &[f64] {
        &self.cost
    }

    pub fn get(&self, x: usize, y: usize, d: usize) -> f64 {
        self.cost[(y * self.width + x) * (self.d_max + 1) + d]
    }

    /// All candidate costs of one pixel.
    pub fn column(&self, x: usize, y: usize) -> &[f64] {
        let n = self.d_max + 1;
        let start = (y * self.width + x) * n;
        &self.cost[start..start + n]
    }
}

/// Sums `f(-k) + f(k)` outward from the centre, so a mirrored window yields
/// bit-identical totals. Offsets outside `lo..=hi` contribute zero.
fn symmetric_sum(lo: isize, hi: isize, r: isize, f: impl Fn(isize) -> f64) -> f64 {
    let get = |i: isize| if (lo..=hi).contains(&i) { f(i) } else { 0.0 };
    let mut acc = get(0);
    for k in 1..=r {
        acc += get(-k) + get(k);
    }
    acc
}

/// Structure score of one channel over the window centred at `(xa, y)` in
/// `a` and `(xb, y)` in `b`, clipped so both windows stay in frame.
#[allow(clippy::too_many_arguments)]
fn window_score(
    a: &[f64],
    b: &[f64],
    w: usize,
    h: usize,
    y: usize,
    xa: usize,
    xb: usize,
    r: usize,
    c1: f64,
    c2: f64,
) -> f64 {
    let r = r as isize;
    let (xa, xb) = (xa as isize, xb as isize);
    let i_lo = (-r).max(-xa).max(-xb);
    let i_hi = r.min(w as isize - 1 - xa).min(w as isize - 1 - xb);
    let j_lo = y.saturating_sub(r as usize);
    let j_hi = (y + r as usize).min(h - 1);
    let at = |v: &[f64], j: usize, x: isize, i: isize| v[j * w + (x + i) as usize];
    let n = ((j_hi - j_lo + 1) as isize * (i_hi - i_lo + 1)) as f64;

    let (mut sa, mut sb) = (0.0, 0.0);
    for j in j_lo..=j_hi {
        sa += symmetric_sum(i_lo, i_hi, r, |i| at(a, j, xa, i));
        sb += symmetric_sum(i_lo, i_hi, r, |i| at(b, j, xb, i));
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for j in j_lo..=j_hi {
        let da = |i: isize| at(a, j, xa, i) - ma;
        let db = |i: isize| at(b, j, xb, i) - mb;
        va += symmetric_sum(i_lo, i_hi, r, |i| da(i) * da(i));
        vb += symmetric_sum(i_lo, i_hi, r, |i| db(i) * db(i));
        cov += symmetric_sum(i_lo, i_hi, r, |i| da(i) * db(i));
    }
    Moments {
        mean_a: ma,
        mean_b: mb,
        var_a: va / n,
        var_b: vb / n,
        cov: cov / n,
    }
    .score(c1, c2)
}

/// `(0.01 L)², (0.03 L)²` with `L` the joint range of one channel over
/// both maps. Per-channel ranges are unchanged by mirroring, which negates
/// the horizontal gradient.
fn stabilizers(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = (hi - lo).max(1e-6);
    ((0.01 * range).powi(2), (0.03 * range).powi(2))
}

fn check_inputs(fl: &FeatureMap, fr: &FeatureMap, p: &MatchParams) -> Result<()> {
    p.validate()?;
    if fl.shape() != fr.shape() {
        return Err(Error::ShapeMismatch {
            expected: fl.shape(),
            actual: fr.shape(),
        });
    }
    if p.d_max >= fl.width() {
        return Err(Error::arg(format!(
            "d_max {} must be smaller than the width {}",
            p.d_max,
            fl.width()
        )));
    }
    Ok(())
}

/// Shared builder: `reference` pixel `x` is compared with `other` pixel
/// `x + sign·d`.
fn build(fl: &FeatureMap, fr: &FeatureMap, p: &MatchParams, reference: View) -> Result<CostVolume> {
    check_inputs(fl, fr, p)?;
    let (w, h) = fl.shape();
    let n = p.d_max + 1;
    let r = p.patch / 2;
    let (cx1, cx2) = stabilizers(fl.gx(), fr.gx());
    let (cy1, cy2) = stabilizers(fl.gy(), fr.gy());
    let mut cost = vec![0.0; w * h * n];
    cost.par_chunks_mut(w * n).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for d in 0..n {
                // (left column, right column) of the candidate pair
                let pair = match reference {
                    View::Left => x.checked_sub(d).map(|xr| (x, xr)),
                    View::Right => Some((x + d, x)).filter(|(xl, _)| *xl < w),
                };
                row[x * n + d] = match pair {
                    None => f64::INFINITY,
                    Some((xl, xr)) => {
                        let sx = window_score(fl.gx(), fr.gx(), w, h, y, xl, xr, r, cx1, cx2);
                        let sy = window_score(fl.gy(), fr.gy(), w, h, y, xl, xr, r, cy1, cy2);
                        1.0 - 0.5 * (sx + sy)
                    }
                };
            }
        }
    });
    CostVolume::new(w, h, p.d_max, reference, cost)
}

/// Left-referenced volume: left pixel `x` against right pixel `x - d`.
pub fn build_cost_volume(fl: &FeatureMap, fr: &FeatureMap, p: &MatchParams) -> Result<CostVolume> {
    build(fl, fr, p, View::Left)
}

/// Right-referenced volume: right pixel `x` against left pixel `x + d`.
pub fn build_cost_volume_right(
    fl: &FeatureMap,
    fr: &FeatureMap,
    p: &MatchParams,
) -> Result<CostVolume> {
    build(fl, fr, p, View::Right)
}

/// `p.aggregate_iters` passes of a 3×3 box filter over every disparity
/// slice. Infinite costs count as missing; a pixel whose neighbourhood is
/// all missing stays infinite.
pub fn aggregate(cv: &CostVolume, p: &MatchParams) -> CostVolume {
    let (w, h, n) = (cv.width, cv.height, cv.d_max + 1);
    let mut cur = cv.cost.clone();
    for _ in 0..p.aggregate_iters {
        let src = &cur;
        let mut next = vec![0.0; cur.len()];
        next.par_chunks_mut(w * n).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                for d in 0..n {
                    let (mut sum, mut count) = (0.0, 0u32);
                    let (lo, hi) = (-(x.min(1) as isize), (w - 1 - x).min(1) as isize);
                    for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        let c = |i: isize| src[(yy * w + (x as isize + i) as usize) * n + d];
                        count += (lo..=hi).filter(|&i| c(i).is_finite()).count() as u32;
                        sum +=
                            symmetric_sum(lo, hi, 1, |i| if c(i).is_finite() { c(i) } else { 0.0 });
                    }
                    row[x * n + d] = if count > 0 {
                        sum / count as f64
                    } else {
                        f64::INFINITY
                    };
                }
            }
        });
        cur = next;
    }
    CostVolume {
        cost: cur,
        ..cv.clone()
    }
}

/// Winner-take-all with parabolic sub-pixel refinement; ties go to the
/// smaller disparity. Columns without a finite cost get disparity 0 and are
/// marked invalid (`true` = valid).
pub fn wta_disparity(cv: &CostVolume) -> (DisparityMap, Mask) {
    let (w, h) = (cv.width, cv.height);
    let mut disp = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let col = cv.column(x, y);
            let mut best: Option<usize> = None;
            for (d, &c) in col.iter().enumerate() {
                if c.is_finite() && best.is_none_or(|b| c < col[b]) {
                    best = Some(d);
                }
            }
            let Some(d) = best else { continue };
            let mut value = d as f64;
            if d > 0 && d < cv.d_max {
                let (cm, c0, cp) = (col[d - 1], col[d], col[d + 1]);
                let denom = cm - 2.0 * c0 + cp;
                if cm.is_finite() && cp.is_finite() && denom > 0.0 {
                    value += ((cm - cp) / (2.0 * denom)).clamp(-0.5, 0.5);
                }
            }
            disp[y * w + x] = value;
            valid[y * w + x] = true;
        }
    }
    (
        DisparityMap::new(w, h, disp, cv.reference).expect("finite disparities"),
        Mask::new(w, h, valid).expect("matching shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::{Image, Modality};
    use crate::stereo::{extract_features, MatchInput};

    fn params(d_max: usize, patch: usize) -> MatchParams {
        MatchParams {
            d_max,
            patch,
            aggregate_iters: 1,
            ..MatchParams::default()
        }
    }

    fn texture(x: f64, y: f64) -> f64 {
        (0.9 * x).sin() * (0.7 * y + 0.2).cos()
            + 0.5 * (0.31 * x * y).sin()
            + 0.2 * (2.3 * x + y).cos()
    }

    fn features(img: &Image, patch: usize) -> FeatureMap {
        extract_features(MatchInput::Image(img), patch).unwrap()
    }

    #[test]
    fn identical_maps_cost_zero_at_zero_disparity() {
        let img = Image::from_fn(20, 12, Modality::Intensity, |x, y| {
            texture(x as f64, y as f64)
        })
        .unwrap();
        let f = features(&img, 5);
        let cv = build_cost_volume(&f, &f, &params(4, 5)).unwrap();
        for y in 0..12 {
            for x in 0..20 {
                assert!(cv.get(x, y, 0).abs() < 1e-12);
            }
        }
        assert_eq!(cv.get(2, 0, 3), f64::INFINITY);
    }

    #[test]
    fn pure_translation_is_recovered() {
        let (w, h, shift) = (32, 16, 4.0);
        let left = Image::from_fn(w, h, Modality::Intensity, |x, y| {
            texture(x as f64, y as f64)
        })
        .unwrap();
        let right = Image::from_fn(w, h, Modality::Intensity, |x, y| {
            texture(x as f64 + shift, y as f64)
        })
        .unwrap();
        let p = params(8, 5);
        let cv = build_cost_volume(&features(&left, 5), &features(&right, 5), &p).unwrap();
        for y in 3..h - 3 {
            for x in 12..w - 3 {
                let col = cv.column(x, y);
                let best = (0..=8).min_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
                assert_eq!(best, 4, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn rejects_d_max_at_width() {
        let img = Image::from_fn(8, 8, Modality::Intensity, |x, y| {
            texture(x as f64, y as f64)
        })
        .unwrap();
        let f = features(&img, 3);
        assert!(build_cost_volume(&f, &f, &params(8, 3)).is_err());
    }

    fn volume(
        w: usize,
        h: usize,
        d_max: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> CostVolume {
        let mut c = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for d in 0..=d_max {
                    c.push(f(x, y, d));
                }
            }
        }
        CostVolume::new(w, h, d_max, View::Left, c).unwrap()
    }

    #[test]
    fn aggregation_fixed_point_and_spike() {
        let p = params(2, 3);
        let flat = volume(5, 4, 2, |_, _, _| 0.75);
        assert_eq!(aggregate(&flat, &p), flat);

        let spike = volume(
            5,
            5,
            2,
            |x, y, d| if (x, y, d) == (2, 2, 1) { 9.0 } else { 0.0 },
        );
        let out = aggregate(&spike, &p);
        for y in 0..5usize {
            for x in 0..5usize {
                let inside = x.abs_diff(2) <= 1 && y.abs_diff(2) <= 1;
                assert_eq!(out.get(x, y, 1), if inside { 1.0 } else { 0.0 });
                assert_eq!(out.get(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn aggregation_skips_missing_costs() {
        let v = volume(4, 1, 1, |x, _, d| {
            if d == 1 && x == 0 {
                f64::INFINITY
            } else {
                1.0 + x as f64
            }
        });
        let out = aggregate(&v, &params(1, 3));
        // pixel 0 sees x = 0 (missing) and x = 1 (cost 2)
        assert_eq!(out.get(0, 0, 1), 2.0);
        let all_inf = volume(2, 2, 1, |_, _, d| if d == 1 { f64::INFINITY } else { 0.0 });
        assert_eq!(
            aggregate(&all_inf, &params(1, 3)).get(0, 0, 1),
            f64::INFINITY
        );
    }

    /// Separable clipped box oracle for finite volumes.
    #[test]
    fn aggregation_matches_separable_oracle() {
        let (w, h, dm) = (7, 6, 3);
        let v = volume(w, h, dm, |x, y, d| {
            ((x * 31 + y * 17 + d * 7) % 13) as f64 / 13.0
        });
        let p = MatchParams {
            aggregate_iters: 2,
            ..params(dm, 3)
        };
        let out = aggregate(&v, &p);
        for d in 0..=dm {
            let mut s: Vec<f64> = (0..w * h).map(|i| v.get(i % w, i / w, d)).collect();
            for _ in 0..2 {
                let mut t = vec![0.0; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let xs = x.saturating_sub(1)..=(x + 1).min(w - 1);
                        let k = xs.clone().count() as f64;
                        t[y * w + x] = xs.map(|xx| s[y * w + xx]).sum::<f64>() / k;
                    }
                }
                for y in 0..h {
                    for x in 0..w {
                        let ys = y.saturating_sub(1)..=(y + 1).min(h - 1);
                        let k = ys.clone().count() as f64;
                        s[y * w + x] = ys.map(|yy| t[yy * w + x]).sum::<f64>() / k;
                    }
                }
            }
            for i in 0..w * h {
                assert!((out.get(i % w, i / w, d) - s[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wta_examples() {
        let v = volume(3, 2, 9, |_, _, d| (d as f64 - 7.0).abs());
        let (d, valid) = wta_disparity(&v);
        assert!(d.data().iter().all(|&x| x == 7.0));
        assert_eq!(valid.count(), 6);

        let costs = |c: [f64; 3]| {
            volume(
                1,
                1,
                6,
                move |_, _, d| if (3..=5).contains(&d) { c[d - 3] } else { 5.0 },
            )
        };
        assert_eq!(wta_disparity(&costs([1.0, 0.2, 1.0])).0.get(0, 0), 4.0);
        let skew = wta_disparity(&costs([1.0, 0.2, 0.6])).0.get(0, 0);
        assert!((skew - (4.0 + 0.4 / (2.0 * 1.2))).abs() < 1e-12);

        let tie = volume(1, 1, 4, |_, _, d| if d == 1 || d == 3 { 0.0 } else { 1.0 });
        assert_eq!(wta_disparity(&tie).0.get(0, 0), 1.0);

        let dead = volume(2, 1, 2, |x, _, _| if x == 0 { f64::INFINITY } else { 0.5 });
        let (d, valid) = wta_disparity(&dead);
        assert_eq!(
            (d.get(0, 0), valid.get(0, 0), valid.get(1, 0)),
            (0.0, false, true)
        );
    }
}
