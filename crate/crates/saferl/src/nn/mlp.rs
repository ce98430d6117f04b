//! Fully connected network with ReLU hidden layers and an output head.
//!
//! The forward pass always returns the raw (pre-head) output; heads are
//! applied by `predict`/`gaussian_params` or folded into the loss
//! functions, which keeps the backward pass a single composed chain.

use super::{Head::*, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    /// Raw output is [mean | log-variance]; log-variance is clamped to
    /// [`LOGVAR_MIN`], [`LOGVAR_MAX`].
    Gaussian,
    Sigmoid,
    Softmax,
}

impl Head {
    pub fn id(&self) -> &'static str {
        match self {
            Linear => "linear",
            Gaussian => "gaussian",
            Sigmoid => "sigmoid",
            Softmax => "softmax",
        }
    }

    pub fn from_id(id: &str) -> Result<Head> {
        match id {
            "linear" => Ok(Linear),
            "gaussian" => Ok(Gaussian),
            "sigmoid" => Ok(Sigmoid),
            "softmax" => Ok(Softmax),
            other => Err(Error::Data(format!("unknown head '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    head: Head,
}

/// Layer inputs captured during a forward pass; enough to run backward.
pub struct Cache {
    inputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Grads {
        Grads {
            w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Scaled uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        head: Head,
        rng: &mut impl Rng,
    ) -> Mlp {
        let raw_out = match head {
            Gaussian => 2 * output_dim,
            _ => output_dim,
        };
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(raw_out);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
            let b = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
            weights.push(w);
            biases.push(b);
        }
        Mlp { widths, weights, biases, head }
    }

    /// Reassemble a network from stored parts, validating shapes.
    pub(crate) fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        head: Head,
    ) -> Result<Mlp> {
        if widths.len() < 2 || weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(Error::Data("inconsistent layer counts".into()));
        }
        if head == Gaussian && widths.last().unwrap() % 2 != 0 {
            return Err(Error::Data("gaussian head needs an even raw output".into()));
        }
        for l in 0..weights.len() {
            if weights[l].nrows() != widths[l + 1]
                || weights[l].ncols() != widths[l]
                || biases[l].len() != widths[l + 1]
            {
                return Err(Error::Data("parameter shape mismatch".into()));
            }
        }
        Ok(Mlp { widths, weights, biases, head })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Raw output width (twice the prediction width for Gaussian heads).
    pub fn raw_output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass returning the raw output.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weights[l].t());
            z += &self.biases[l];
            h = if l < last {
                z.mapv_into(|v| v.max(0.0))
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Forward pass that also captures the per-layer inputs for backward.
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut h = x.to_owned();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            inputs.push(h.clone());
            let mut z = h.dot(&self.weights[l].t());
            z += &self.biases[l];
            h = if l < last {
                z.mapv_into(|v| v.max(0.0))
            } else {
                z
            };
        }
        Ok((h, Cache { inputs }))
    }

    /// Exact gradients of the composed function, given the loss gradient
    /// at the raw output. Also returns the gradient with respect to the
    /// network input (used by losses that differentiate through inputs).
    pub fn backward(&self, cache: &Cache, dl_draw: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        if dl_draw.ncols() != self.raw_output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} columns, network produces {}",
                dl_draw.ncols(),
                self.raw_output_dim()
            )));
        }
        let mut grads = Grads::zeros_like(self);
        let mut delta = dl_draw.to_owned();
        for l in (0..self.n_layers()).rev() {
            grads.w[l] = delta.t().dot(&cache.inputs[l]);
            grads.b[l] = delta.sum_axis(Axis(0));
            let dx = delta.dot(&self.weights[l]);
            if l > 0 {
                // ReLU mask: the stored input of layer l is the previous
                // layer's post-activation, positive iff the unit fired.
                delta = dx * cache.inputs[l].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            } else {
                return Ok((grads, dx));
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Head-applied prediction (identity for Linear/Gaussian heads; use
    /// [`Mlp::gaussian_params`] for Gaussian output).
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let raw = self.forward(x)?;
        Ok(match self.head {
            Linear | Gaussian => raw,
            Sigmoid => raw.mapv(super::sigmoid),
            Softmax => {
                let mut out = raw;
                for mut row in out.rows_mut() {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                out
            }
        })
    }

    /// Split a Gaussian head's raw output into (mean, clamped log-variance).
    pub fn gaussian_params(&self, raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(self.head, Gaussian, "gaussian_params on a non-Gaussian head");
        let d = self.raw_output_dim() / 2;
        let mean = raw.slice(ndarray::s![.., ..d]).to_owned();
        let logvar = raw
            .slice(ndarray::s![.., d..])
            .mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        (mean, logvar)
    }

    /// Single-sample convenience wrapper around [`Mlp::predict`].
    pub fn predict1(&self, x: &[f64]) -> Result<Vec<f64>> {
        let arr = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict(&arr)?.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_linear_head_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(3, &[4], 2, Head::Linear, &mut rng);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        for b in &mut net.biases {
            b.fill(0.0);
        }
        let out = net.forward(&array![[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn identity_single_layer_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(2, &[], 2, Head::Linear, &mut rng);
        net.weights[0] = array![[1.0, 0.0], [0.0, 1.0]];
        net.biases[0].fill(0.0);
        let x = array![[0.25, -0.75], [1.5, 2.5]];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Mlp::new(4, &[8, 8], 3, Head::Linear, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64) - 0.3 * (j as f64));
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(3, &[4], 1, Head::Linear, &mut rng);
        assert!(net.forward(&array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn single_linear_layer_squared_loss_gradient_matches_closed_form() {
        // L = sum((Wx - y)^2) for one sample: dL/dW = 2(Wx - y) x^T.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(2, &[], 1, Head::Linear, &mut rng);
        let x = array![[0.7, -1.3]];
        let y = 0.4;
        let (raw, cache) = net.forward_cached(&x).unwrap();
        let resid = raw[[0, 0]] - y;
        let dl = array![[2.0 * resid]];
        let (grads, _) = net.backward(&cache, &dl).unwrap();
        assert_relative_eq!(grads.w[0][[0, 0]], 2.0 * resid * 0.7, epsilon = 1e-12);
        assert_relative_eq!(grads.w[0][[0, 1]], 2.0 * resid * -1.3, epsilon = 1e-12);
        assert_relative_eq!(grads.b[0][0], 2.0 * resid, epsilon = 1e-12);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(3, &[5], 2, Head::Linear, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| 0.1 * (i + j) as f64);
        let (_, cache) = net.forward_cached(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &Array2::zeros((4, 2))).unwrap();
        assert!(grads.w.iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn softmax_head_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(2, &[6], 4, Head::Softmax, &mut rng);
        let x = Array2::from_shape_fn((7, 2), |(i, j)| (i as f64) * 3.0 - (j as f64));
        let p = net.predict(&x).unwrap();
        for row in p.rows() {
            assert_relative_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn sigmoid_head_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(2, &[8], 1, Head::Sigmoid, &mut rng);
        for scale in [1.0, 100.0, 10000.0] {
            let x = array![[scale, -scale]];
            let p = net.predict(&x).unwrap()[[0, 0]];
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn gaussian_params_clamp_log_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(2, &[], 1, Head::Gaussian, &mut rng);
        let raw = array![[0.5, 99.0], [0.5, -99.0]];
        let (mean, logvar) = net.gaussian_params(&raw);
        assert_eq!(mean, array![[0.5], [0.5]]);
        assert_eq!(logvar, array![[LOGVAR_MAX], [LOGVAR_MIN]]);
    }
}
