//! Bias-corrected Adam.

use super::{Grads, Mlp};
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Gradient contained NaN/Inf; parameters were left untouched.
    SkippedNonFinite,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    skipped: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            skipped: 0,
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates skipped because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> UpdateOutcome {
        if !grads.is_finite() {
            self.skipped += 1;
            return UpdateOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..net.weights.len() {
            azip(
                net.weights[l].iter_mut(),
                self.m_w[l].iter_mut(),
                self.v_w[l].iter_mut(),
                grads.w[l].iter(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            azip(
                net.biases[l].iter_mut(),
                self.m_b[l].iter_mut(),
                self.v_b[l].iter_mut(),
                grads.b[l].iter(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        debug_assert!(net.params_finite(), "parameters went non-finite after Adam step");
        UpdateOutcome::Applied
    }
}

#[allow(clippy::too_many_arguments)]
fn azip<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    g: impl Iterator<Item = &'a f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for (((p, m), v), &g) in params.zip(m).zip(v).zip(g) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
