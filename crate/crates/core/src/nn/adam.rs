//! Adam optimizer with bias-corrected first and second moments.

use super::network::{Gradients, Network};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        AdamConfig { learning_rate: lr, ..AdamConfig::default() }
    }
}

/// Moment buffers mirroring the parameter tensors of one network, plus
/// the shared step counter. One state drives one network; shapes are
/// fixed at creation.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    moments: Vec<Option<Moments>>,
}

#[derive(Debug, Clone)]
struct Moments {
    m_w: Tensor,
    v_w: Tensor,
    m_b: Tensor,
    v_b: Tensor,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let moments = net
            .stages()
            .iter()
            .map(|s| {
                s.params().map(|(w, b)| Moments {
                    m_w: Tensor::zeros(w.shape()),
                    v_w: Tensor::zeros(w.shape()),
                    m_b: Tensor::zeros(b.shape()),
                    v_b: Tensor::zeros(b.shape()),
                })
            })
            .collect();
        AdamState { t: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update in place. `grads` must be aligned with the
    /// network's stages (as produced by `Network::backward`).
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, cfg: &AdamConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((stage, slot), grad) in net.stages_mut().iter_mut().zip(&mut self.moments).zip(grads) {
            let (Some((w, b)), Some(mom), Some((gw, gb))) =
                (stage.params_mut(), slot.as_mut(), grad.as_ref())
            else {
                continue;
            };
            update_tensor(w, &mut mom.m_w, &mut mom.v_w, gw, cfg, bc1, bc2);
            update_tensor(b, &mut mom.m_b, &mut mom.v_b, gb, cfg, bc1, bc2);
        }
    }
}

fn update_tensor(
    p: &mut Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    g: &Tensor,
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    let it = p
        .data_mut()
        .iter_mut()
        .zip(m.data_mut().iter_mut())
        .zip(v.data_mut().iter_mut())
        .zip(g.data().iter());
    for (((pv, mv), vv), &gv) in it {
        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
        let m_hat = *mv / bc1;
        let v_hat = *vv / bc2;
        *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}
