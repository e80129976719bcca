use serde::Serialize;

use super::features::MatchInput;
use super::matcher::{match_left_referenced, stereo_match};
use super::MatchParams;
use crate::error::{Error, Result};
use crate::imageops::{
    consistency_mask, gradient, gradient_adjoint, gradient_of, warp_by_disparity, warp_raster,
    DisparityMap, GradientField, Image, Mask, View, WarpDirection,
};
use crate::losses::{
    cross_consistency_loss, edge_weights, internal_disparity_loss, smoothness_with_grad,
    structure_loss_raw, total_loss, LossComponents, LossReport, LossWeights,
};

/// Consecutive loss increases that end refinement early.
const DIVERGENCE_RUN: usize = 20;
/// Step halvings tried before an iteration counts as stalled.
const MAX_HALVINGS: usize = 12;
/// Per-pixel step damping, relative to the mean gradient magnitude.
const PRECONDITION: f64 = 1.0;

/// Why refinement stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran all iterations.
    Completed,
    /// No step length decreased the loss, even after re-estimation.
    Converged,
    /// The loss rose for too many consecutive iterations.
    Diverged,
}

/// Auxiliary disparities re-estimated by matching on projected images.
#[derive(Debug, Clone)]
struct Auxiliary {
    /// Disparity of the projected pair in the left view; pairs with `dl`.
    dr_w: DisparityMap,
    /// Disparity of the projected pair in the right view; pairs with `dr`.
    dl_w: DisparityMap,
    itn: f64,
}

/// The refinement objective for one intensity/reconstruction pair.
///
/// The structure term is evaluated in both views: in the left view `∇I^l`
/// is compared with the gradient of `I^r` warped by `D^l` (scaled by `ρ`),
/// in the right view `ρ∇I^r` with the gradient of `I^l` warped by `D^r`.
/// Differentiating after warping means a ragged disparity field distorts
/// the warped structure and is penalized by the loss itself.
#[derive(Debug, Clone)]
pub struct StereoObjective {
    left: Image,
    right: Image,
    gl: GradientField,
    gr: GradientField,
    c1: f64,
    c2: f64,
    edge_left: (Vec<f64>, Vec<f64>),
    edge_right: (Vec<f64>, Vec<f64>),
    weights: LossWeights,
    occ_left: Mask,
    occ_right: Mask,
    aux: Option<Auxiliary>,
}

/// Loss gradients with respect to the left and right disparities.
type Gradients = (Vec<f64>, Vec<f64>);

fn check_map(d: &DisparityMap, view: View, shape: (usize, usize)) -> Result<()> {
    if d.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: d.shape(),
        });
    }
    if d.view() != view {
        return Err(Error::arg(format!("expected a {view:?}-view disparity")));
    }
    Ok(())
}

/// Backward warp of a raster with replicated borders, so samples beyond the
/// source do not create artificial edges. Returns the warped raster, its
/// derivative with respect to each pixel's disparity (zero where the sample
/// left the source) and the validity of each sample.
fn warp_replicate(
    src: &[f64],
    w: usize,
    h: usize,
    disp: &[f64],
    direction: WarpDirection,
) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let s = warp_raster(src, w, h, disp, direction);
    let mut values = s.values;
    for (i, ok) in s.valid.iter().enumerate() {
        if !ok {
            let y = i / w;
            let u = (i % w) as f64 + direction.offset_sign() * disp[i];
            let x = if u < 0.0 { 0 } else { w - 1 };
            values[i] = src[y * w + x];
        }
    }
    (values, s.d_values, s.valid)
}

impl StereoObjective {
    /// `left` is the intensity view, `right` the reconstruction view.
    pub fn new(left: &Image, right: &Image, weights: &LossWeights) -> Result<Self> {
        weights.validate()?;
        if left.shape() != right.shape() {
            return Err(Error::ShapeMismatch {
                expected: left.shape(),
                actual: right.shape(),
            });
        }
        let gl = gradient(left)?;
        let gr = gradient(right)?.scaled(weights.rho);
        let (c1, c2) = weights.stabilizers(&gl, &gr);
        let (w, h) = left.shape();
        Ok(Self {
            left: left.clone(),
            right: right.clone(),
            gl,
            gr,
            c1,
            c2,
            edge_left: edge_weights(left)?,
            edge_right: edge_weights(right)?,
            weights: weights.clone(),
            occ_left: Mask::filled(w, h, false),
            occ_right: Mask::filled(w, h, false),
            aux: None,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.left.shape()
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    /// Occlusion masks excluded from the structure term (`true` = excluded).
    pub fn set_occlusion(&mut self, left: Mask, right: Mask) -> Result<()> {
        for m in [&left, &right] {
            if m.shape() != self.shape() {
                return Err(Error::ShapeMismatch {
                    expected: self.shape(),
                    actual: m.shape(),
                });
            }
        }
        self.occ_left = left;
        self.occ_right = right;
        Ok(())
    }

    pub fn occlusion(&self) -> (&Mask, &Mask) {
        (&self.occ_left, &self.occ_right)
    }

    fn uses_general_losses(&self) -> bool {
        self.weights.lambda_cc > 0.0 || self.weights.lambda_itn > 0.0
    }

    /// Loss at `(dl, dr)`.
    pub fn evaluate(&self, dl: &DisparityMap, dr: &DisparityMap) -> Result<LossReport> {
        self.check(dl, dr)?;
        Ok(self.eval(dl.data(), dr.data(), false).0)
    }

    /// Loss at `(dl, dr)` with its derivative with respect to every
    /// disparity of both maps. The cross-consistency term contributes
    /// through `dl` and `dr` only; the re-estimated auxiliary disparities
    /// are held fixed.
    pub fn evaluate_with_gradient(
        &self,
        dl: &DisparityMap,
        dr: &DisparityMap,
    ) -> Result<(LossReport, Vec<f64>, Vec<f64>)> {
        self.check(dl, dr)?;
        let (report, grads) = self.eval(dl.data(), dr.data(), true);
        let (gl, gr) = grads.expect("requested gradient");
        Ok((report, gl, gr))
    }

    fn check(&self, dl: &DisparityMap, dr: &DisparityMap) -> Result<()> {
        check_map(dl, View::Left, self.shape())?;
        check_map(dr, View::Right, self.shape())
    }

    fn eval(&self, dl: &[f64], dr: &[f64], with_grad: bool) -> (LossReport, Option<Gradients>) {
        let (w, h) = self.shape();
        let n = w * h;
        let lw = &self.weights;

        // Left view: ∇I^l against ρ∇(I^r warped by D^l).
        let (warped_r, dwr, valid_l) =
            warp_replicate(self.right.data(), w, h, dl, WarpDirection::RightToLeft);
        let b = gradient_of(&warped_r, w, h)
            .expect("image at least 3x3")
            .scaled(lw.rho);
        let excl_l = Mask::new(
            w,
            h,
            (0..n)
                .map(|i| self.occ_left.data()[i] || !valid_l[i])
                .collect(),
        )
        .expect("shape");
        let (sl, gsl) = structure_loss_raw(
            &self.gl, &b, &excl_l, lw.window, self.c1, self.c2, with_grad,
        );

        // Right view: ρ∇I^r against ∇(I^l warped by D^r).
        let (warped_l, dwl, valid_r) =
            warp_replicate(self.left.data(), w, h, dr, WarpDirection::LeftToRight);
        let a = gradient_of(&warped_l, w, h).expect("image at least 3x3");
        let excl_r = Mask::new(
            w,
            h,
            (0..n)
                .map(|i| self.occ_right.data()[i] || !valid_r[i])
                .collect(),
        )
        .expect("shape");
        let (sr, gsr) = structure_loss_raw(
            &self.gr, &a, &excl_r, lw.window, self.c1, self.c2, with_grad,
        );

        let (sml, gml) =
            smoothness_with_grad(dl, w, h, &self.edge_left.0, &self.edge_left.1, with_grad);
        let (smr, gmr) =
            smoothness_with_grad(dr, w, h, &self.edge_right.0, &self.edge_right.1, with_grad);

        let general = self.uses_general_losses();
        let (cc, itn) = match (&self.aux, general) {
            (Some(aux), true) => {
                let dlm = DisparityMap::new(w, h, dl.to_vec(), View::Left).expect("finite");
                let drm = DisparityMap::new(w, h, dr.to_vec(), View::Right).expect("finite");
                let cc = cross_consistency_loss(&dlm, &drm, &aux.dl_w, &aux.dr_w).expect("shape");
                (cc, aux.itn)
            }
            _ => (0.0, 0.0),
        };

        let report = total_loss(
            LossComponents {
                gd: 0.5 * (sl.value + sr.value),
                sm: 0.5 * (sml + smr),
                cc,
                itn,
                gd_map: sl.map,
            },
            lw,
        )
        .expect("finite loss");

        let grads = with_grad.then(|| {
            let (gsl, gsr) = (gsl.expect("gradient"), gsr.expect("gradient"));
            let (gml, gmr) = (gml.expect("gradient"), gmr.expect("gradient"));
            let kg = 0.5 * lw.lambda_gd;
            let ks = 0.5 * lw.lambda_sm;
            // Back through the gradient stencil to the warped images.
            let img_l = gradient_adjoint(&gsl.gx, &gsl.gy, w, h);
            let img_r = gradient_adjoint(&gsr.gx, &gsr.gy, w, h);
            let mut g_l: Vec<f64> = (0..n)
                .map(|i| kg * lw.rho * img_l[i] * dwr[i] + ks * gml[i])
                .collect();
            let mut g_r: Vec<f64> = (0..n)
                .map(|i| kg * img_r[i] * dwl[i] + ks * gmr[i])
                .collect();
            if let (Some(aux), true) = (&self.aux, general) {
                let kc = lw.lambda_cc / n as f64;
                let abs_grad = |d: f64, other: f64| {
                    let s = if d >= 0.0 { 1.0 } else { -1.0 };
                    let diff = d.abs() - other.abs();
                    if diff > 0.0 {
                        s
                    } else if diff < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                };
                for i in 0..n {
                    g_l[i] += kc * abs_grad(dl[i], aux.dr_w.data()[i]);
                    g_r[i] += kc * abs_grad(dr[i], aux.dl_w.data()[i]);
                }
            }
            (g_l, g_r)
        });
        (report, grads)
    }

    /// Recomputes the occlusion masks and, when the general losses are
    /// active, the cross-projected and internal disparities.
    fn reestimate(
        &self,
        dl: &DisparityMap,
        dr: &DisparityMap,
        p: &MatchParams,
    ) -> Result<(Mask, Mask, Option<Auxiliary>)> {
        let t = self.weights.t;
        let occ_left = consistency_mask(dl, dr, t)?;
        let occ_right = consistency_mask(dr, dl, t)?;
        if !self.uses_general_losses() {
            return Ok((occ_left, occ_right, None));
        }
        // I^l_w: the reconstruction seen from the left camera;
        // I^r_w: the intensity image seen from the right camera.
        let (il_w, _) = warp_by_disparity(&self.right, dl, WarpDirection::RightToLeft)?;
        let (ir_w, _) = warp_by_disparity(&self.left, dr, WarpDirection::LeftToRight)?;
        let cross = stereo_match(MatchInput::Image(&il_w), MatchInput::Image(&ir_w), p)?;
        let (dl_itn, _) =
            match_left_referenced(MatchInput::Image(&self.left), MatchInput::Image(&il_w), p)?;
        let (dr_itn, _) =
            match_left_referenced(MatchInput::Image(&ir_w), MatchInput::Image(&self.right), p)?;
        let itn = internal_disparity_loss(&dl_itn, &dr_itn.with_view(View::Right))?;
        Ok((
            occ_left,
            occ_right,
            Some(Auxiliary {
                dr_w: cross.left,
                dl_w: cross.right,
                itn,
            }),
        ))
    }
}

/// Result of [`refine_self_supervised`].
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub left: DisparityMap,
    pub right: DisparityMap,
    /// One report per iteration, starting with the initial state. Only the
    /// last entry carries the structure-loss map.
    pub trace: Vec<LossReport>,
    pub stop: StopReason,
    pub occlusion_left: Mask,
    pub occlusion_right: Mask,
}

/// Per-instance first-order minimization of the self-supervised loss over
/// both disparity fields.
///
/// Every iteration takes a normalized gradient step with backtracking (the
/// step halves until the loss decreases and resets after re-estimation).
/// Every `p.rematch_every` iterations the occlusion masks and auxiliary
/// disparities are re-estimated; the new state is kept only if it does not
/// raise the loss. Disparities stay within `[0, d_max]`.
pub fn refine_self_supervised(
    dl0: &DisparityMap,
    dr0: &DisparityMap,
    left: &Image,
    right: &Image,
    w: &LossWeights,
    p: &MatchParams,
) -> Result<RefineOutput> {
    p.validate()?;
    let mut obj = StereoObjective::new(left, right, w)?;
    obj.check(dl0, dr0)?;
    let d_max = p.d_max as f64;
    let mut dl = dl0.clone();
    let mut dr = dr0.clone();
    dl.clamp(0.0, d_max);
    dr.clamp(0.0, d_max);

    let (ol, or, aux) = obj.reestimate(&dl, &dr, p)?;
    obj.set_occlusion(ol, or)?;
    obj.aux = aux;
    let (mut report, mut gl, mut gr) = obj.evaluate_with_gradient(&dl, &dr)?;
    let mut trace = vec![LossReport {
        gd_map: Vec::new(),
        ..report.clone()
    }];
    let mut step = p.step;
    let mut rises = 0;
    let mut stop = StopReason::Completed;
    let mut stalled = false;

    for it in 1..=p.refine_iters {
        if it % p.rematch_every == 0 {
            let (ol, or, aux) = obj.reestimate(&dl, &dr, p)?;
            let mut candidate = obj.clone();
            candidate.set_occlusion(ol, or)?;
            candidate.aux = aux;
            let (r, cgl, cgr) = candidate.evaluate_with_gradient(&dl, &dr)?;
            if r.total <= report.total {
                obj = candidate;
                report = r;
                gl = cgl;
                gr = cgr;
                stalled = false;
            }
            step = p.step;
        }

        let prev = report.total;
        if !stalled {
            let kappa = PRECONDITION * gl.iter().chain(&gr).map(|g| g.abs()).sum::<f64>()
                / (2 * gl.len()) as f64;
            let mut accepted = false;
            if kappa > 0.0 {
                let dir = |g: &f64| g / (g.abs() + kappa);
                for _ in 0..MAX_HALVINGS {
                    let mut tl = dl.clone();
                    let mut tr = dr.clone();
                    for (d, g) in tl.data_mut().iter_mut().zip(&gl) {
                        *d = (*d - step * dir(g)).clamp(0.0, d_max);
                    }
                    for (d, g) in tr.data_mut().iter_mut().zip(&gr) {
                        *d = (*d - step * dir(g)).clamp(0.0, d_max);
                    }
                    let (r, ngl, ngr) = obj.evaluate_with_gradient(&tl, &tr)?;
                    if r.total < report.total {
                        dl = tl;
                        dr = tr;
                        report = r;
                        gl = ngl;
                        gr = ngr;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
            }
            stalled = !accepted;
        }
        trace.push(LossReport {
            gd_map: Vec::new(),
            ..report.clone()
        });
        rises = if report.total > prev { rises + 1 } else { 0 };
        if rises >= DIVERGENCE_RUN {
            log::warn!("refinement diverged after {it} iterations");
            stop = StopReason::Diverged;
            break;
        }
        // Only a re-estimation can unstick a stalled descent.
        let next_rematch = (it / p.rematch_every + 1) * p.rematch_every;
        if stalled && next_rematch > p.refine_iters {
            stop = StopReason::Converged;
            break;
        }
    }
    if let Some(last) = trace.last_mut() {
        last.gd_map = report.gd_map.clone();
    }
    log::debug!(
        "refinement stopped ({stop:?}) after {} recorded iterations, loss {:.6}",
        trace.len() - 1,
        report.total
    );
    Ok(RefineOutput {
        left: dl,
        right: dr,
        trace,
        stop,
        occlusion_left: obj.occ_left.clone(),
        occlusion_right: obj.occ_right.clone(),
    })
}
