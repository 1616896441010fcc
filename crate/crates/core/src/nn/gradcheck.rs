//! Finite-difference verification of the analytic gradients.
//!
//! The check freezes the dropout masks captured during the analytic
//! pass and replays them for every perturbed evaluation, so the
//! stochastic part of the function is held fixed and central
//! differences measure the same deterministic map the backward pass
//! differentiated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::ops;
use super::tensor::Tensor;

/// Which parameters to probe. `All` visits every parameter;
/// `Sample` draws `per_tensor` indices from each parameter tensor,
/// which keeps the check tractable for the full-size classifier.
#[derive(Debug, Clone, Copy)]
pub enum ProbePlan {
    All,
    Sample { per_tensor: usize },
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
    /// `(stage index, flat parameter index, analytic, numeric)` of the
    /// worst probe, for diagnostics.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Denominator floor for the relative error. Keeps finite-difference
/// noise on near-zero gradients (absolute scale ~1e-11) from reading as
/// disagreement.
const REL_FLOOR: f64 = 1e-5;

/// Compares analytic gradients against central finite differences of
/// the loss. For each probed parameter `p` the numeric slope is
/// `(loss(p+h) - loss(p-h)) / 2h`; the relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-5)`.
///
/// A probe that exceeds `tol` is re-measured once with `h/10`: a
/// ReLU or pooling boundary inside the original interval shrinks out
/// of it and the artifact disappears, while a genuinely wrong analytic
/// gradient fails at every step size.
pub fn grad_check(
    net: &Network,
    input: &Tensor,
    true_class: usize,
    h: f64,
    rng: &mut ChaCha8Rng,
    plan: ProbePlan,
) -> GradCheckReport {
    let cache = net.forward_train(input, rng);
    let (_, grads) = net.backward(&cache, true_class);
    let masks = cache.masks.clone();

    let mut work = net.clone();
    let mut report =
        GradCheckReport { max_rel_error: 0.0, params_checked: 0, worst: None };

    let stage_count = net.stages().len();
    for stage_idx in 0..stage_count {
        let Some((gw, gb)) = grads[stage_idx].as_ref() else { continue };
        for (which, ganalytic) in [(0usize, gw), (1usize, gb)] {
            let len = ganalytic.len();
            let probes: Vec<usize> = match plan {
                ProbePlan::All => (0..len).collect(),
                ProbePlan::Sample { per_tensor } => {
                    let take = per_tensor.min(len);
                    let mut seen = std::collections::BTreeSet::new();
                    while seen.len() < take {
                        seen.insert(rng.gen_range(0..len));
                    }
                    seen.into_iter().collect()
                }
            };
            for flat in probes {
                let analytic = ganalytic.data()[flat];
                let mut numeric = fd_slope(
                    &mut work, stage_idx, which, flat, input, true_class, &masks, h,
                );
                let mut rel = rel_error(analytic, numeric);
                if rel >= tol_refine_threshold() {
                    numeric = fd_slope(
                        &mut work, stage_idx, which, flat, input, true_class, &masks, h / 10.0,
                    );
                    rel = rel_error(analytic, numeric);
                }
                report.params_checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((stage_idx, flat, analytic, numeric));
                }
            }
        }
    }
    report
}

/// Refinement trigger: re-probe anything that would fail the strictest
/// tolerance used by the verification suites.
fn tol_refine_threshold() -> f64 {
    1e-4
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[allow(clippy::too_many_arguments)]
fn fd_slope(
    work: &mut Network,
    stage_idx: usize,
    which: usize,
    flat: usize,
    input: &Tensor,
    true_class: usize,
    masks: &[Option<Vec<f64>>],
    h: f64,
) -> f64 {
    let loss_plus = perturbed_loss(work, stage_idx, which, flat, h, input, true_class, masks);
    let loss_minus = perturbed_loss(work, stage_idx, which, flat, -h, input, true_class, masks);
    (loss_plus - loss_minus) / (2.0 * h)
}

#[allow(clippy::too_many_arguments)]
fn perturbed_loss(
    work: &mut Network,
    stage_idx: usize,
    which: usize,
    flat: usize,
    delta: f64,
    input: &Tensor,
    true_class: usize,
    masks: &[Option<Vec<f64>>],
) -> f64 {
    set_param(work, stage_idx, which, flat, delta);
    let probs = work.forward_masked(input, masks);
    set_param(work, stage_idx, which, flat, -delta);
    ops::cross_entropy(&probs, true_class)
}

fn set_param(net: &mut Network, stage_idx: usize, which: usize, flat: usize, delta: f64) {
    let (w, b) = net.stages_mut()[stage_idx].params_mut().expect("probed stage has params");
    let t = if which == 0 { w } else { b };
    t.data_mut()[flat] += delta;
}
