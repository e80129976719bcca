use super::cost::{
    aggregate, build_cost_volume, build_cost_volume_right, wta_disparity, CostVolume,
};
use super::features::{extract_features, MatchInput};
use super::MatchParams;
use crate::error::{Error, Result};
use crate::imageops::{DisparityMap, Mask, View};

/// Both disparity maps of a pair with their WTA validity (`true` = valid).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutput {
    pub left: DisparityMap,
    pub right: DisparityMap,
    pub left_valid: Mask,
    pub right_valid: Mask,
}

fn check_shapes(left: &MatchInput<'_>, right: &MatchInput<'_>) -> Result<()> {
    if left.shape() != right.shape() {
        return Err(Error::ShapeMismatch {
            expected: left.shape(),
            actual: right.shape(),
        });
    }
    Ok(())
}

fn finish(cv: &CostVolume, p: &MatchParams) -> (DisparityMap, Mask) {
    wta_disparity(&aggregate(cv, p))
}

/// Left-referenced and right-referenced matching of a rectified pair.
pub fn stereo_match(
    left: MatchInput<'_>,
    right: MatchInput<'_>,
    p: &MatchParams,
) -> Result<MatchOutput> {
    check_shapes(&left, &right)?;
    let fl = extract_features(left, p.patch)?;
    let fr = extract_features(right, p.patch)?;
    let (dl, vl) = finish(&build_cost_volume(&fl, &fr, p)?, p);
    let (dr, vr) = finish(&build_cost_volume_right(&fl, &fr, p)?, p);
    log::debug!(
        "matched {:?} against {:?}: {} / {} valid",
        fl.modality(),
        fr.modality(),
        vl.count(),
        vr.count()
    );
    Ok(MatchOutput {
        left: dl,
        right: dr,
        left_valid: vl,
        right_valid: vr,
    })
}

/// Left-referenced disparity only.
pub fn match_left_referenced(
    left: MatchInput<'_>,
    right: MatchInput<'_>,
    p: &MatchParams,
) -> Result<(DisparityMap, Mask)> {
    check_shapes(&left, &right)?;
    let fl = extract_features(left, p.patch)?;
    let fr = extract_features(right, p.patch)?;
    Ok(finish(&build_cost_volume(&fl, &fr, p)?, p))
}

/// Right-view disparity obtained by swapping the views: each input keeps
/// its own branch, both are mirrored so the right view becomes a left view,
/// and the left-referenced matcher runs on the swapped pair.
pub fn match_mirrored_right(
    left: MatchInput<'_>,
    right: MatchInput<'_>,
    p: &MatchParams,
) -> Result<(DisparityMap, Mask)> {
    check_shapes(&left, &right)?;
    let fl = extract_features(left, p.patch)?.flip_horizontal();
    let fr = extract_features(right, p.patch)?.flip_horizontal();
    let (d, valid) = finish(&build_cost_volume(&fr, &fl, p)?, p);
    Ok((
        d.flip_horizontal().with_view(View::Right),
        valid.flip_horizontal(),
    ))
}
