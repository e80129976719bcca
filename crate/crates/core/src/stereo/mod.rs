//! Multi-modal stereo matching and self-supervised disparity refinement.
//!
//! Each modality has its own feature branch; matching compares gradient
//! structure between windows, so an intensity image can be matched against
//! an event reconstruction or an event voxel grid. Left- and right-referenced
//! disparities are both produced, and swapping the views together with their
//! branches yields the mirrored pair.

mod cost;
mod features;
mod matcher;
mod refine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cost::{aggregate, build_cost_volume, build_cost_volume_right, wta_disparity, CostVolume};
pub use features::{extract_features, FeatureMap, MatchInput, CHANNELS};
pub use matcher::{match_left_referenced, match_mirrored_right, stereo_match, MatchOutput};
pub use refine::{refine_self_supervised, RefineOutput, StereoObjective, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    /// Largest disparity searched, pixels.
    pub d_max: usize,
    /// Odd side length of the matching window.
    pub patch: usize,
    /// 3×3 box-filter passes over each cost slice.
    pub aggregate_iters: usize,
    /// Descent iterations during refinement.
    pub refine_iters: usize,
    /// Largest per-iteration disparity update, pixels.
    pub step: f64,
    /// Iterations between re-estimation of the auxiliary disparities.
    pub rematch_every: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            d_max: 41,
            patch: 7,
            aggregate_iters: 1,
            refine_iters: 100,
            step: 0.5,
            rematch_every: 10,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 {
            return Err(Error::arg("d_max must be at least 1"));
        }
        if self.patch < 3 || self.patch.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "patch must be odd and >= 3, got {}",
                self.patch
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::arg("step must be positive"));
        }
        if self.rematch_every == 0 {
            return Err(Error::arg("rematch_every must be at least 1"));
        }
        Ok(())
    }
}
