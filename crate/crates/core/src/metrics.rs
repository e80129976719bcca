//! Disparity evaluation: end-point error and bad-pixel ratios.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{DisparityMap, Mask};
use crate::util::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub epe: f64,
    pub bad1: f64,
    pub bad3: f64,
    pub bad5: f64,
    pub valid_count: usize,
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{:>12}", "metric", "value")?;
        writeln!(f, "{:<12}{:>12.4}", "EPE", self.epe)?;
        writeln!(f, "{:<12}{:>12.4}", ">1px", self.bad1)?;
        writeln!(f, "{:<12}{:>12.4}", ">3px", self.bad3)?;
        writeln!(f, "{:<12}{:>12.4}", ">5px", self.bad5)?;
        write!(f, "{:<12}{:>12}", "pixels", self.valid_count)
    }
}

/// Absolute errors over pixels not set in `mask`.
fn errors(d: &DisparityMap, gt: &DisparityMap, mask: &Mask) -> Result<Vec<f64>> {
    if d.shape() != gt.shape() || mask.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            expected: gt.shape(),
            actual: if d.shape() != gt.shape() {
                d.shape()
            } else {
                mask.shape()
            },
        });
    }
    let errs: Vec<f64> = d
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| !m)
        .map(|((a, b), _)| (a - b).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::InputData("no valid pixels to evaluate".into()));
    }
    Ok(errs)
}

/// Mean absolute disparity error over unmasked pixels.
pub fn epe(d: &DisparityMap, gt: &DisparityMap, mask: &Mask) -> Result<f64> {
    let errs = errors(d, gt, mask)?;
    Ok(compensated_sum(errs.iter().copied()) / errs.len() as f64)
}

/// Fraction of unmasked pixels with error strictly above `delta`.
pub fn bad_pixel_ratio(
    d: &DisparityMap,
    gt: &DisparityMap,
    delta: f64,
    mask: &Mask,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::arg("bad-pixel threshold must be positive"));
    }
    let errs = errors(d, gt, mask)?;
    Ok(errs.iter().filter(|&&e| e > delta).count() as f64 / errs.len() as f64)
}

pub fn evaluate(d: &DisparityMap, gt: &DisparityMap, mask: &Mask) -> Result<EvalResult> {
    let errs = errors(d, gt, mask)?;
    let n = errs.len() as f64;
    let ratio = |delta: f64| errs.iter().filter(|&&e| e > delta).count() as f64 / n;
    Ok(EvalResult {
        epe: compensated_sum(errs.iter().copied()) / n,
        bad1: ratio(1.0),
        bad3: ratio(3.0),
        bad5: ratio(5.0),
        valid_count: errs.len(),
    })
}
