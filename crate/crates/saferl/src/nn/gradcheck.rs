//! Central finite-difference gradient checker. This is the independent
//! oracle for every analytic gradient in the crate.

use super::{Grads, Mlp};

const FD_STEP: f64 = 1e-5;

/// Compare the analytic gradient of `loss` against central finite
/// differences over every parameter of `net`. Returns the maximum
/// relative error `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss` must be a pure function of the network (any captured inputs,
/// targets or noise must stay fixed across calls).
pub fn grad_check(net: &Mlp, loss: impl Fn(&Mlp) -> (f64, Grads)) -> f64 {
    let (_, analytic) = loss(net);
    let mut probe = net.clone();
    let mut worst = 0.0f64;

    for layer in 0..probe.weights.len() {
        for idx in 0..probe.weights[layer].len() {
            let orig = probe.weights[layer].as_slice().unwrap()[idx];
            set_w(&mut probe, layer, idx, orig + FD_STEP);
            let up = loss(&probe).0;
            set_w(&mut probe, layer, idx, orig - FD_STEP);
            let down = loss(&probe).0;
            set_w(&mut probe, layer, idx, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.w[layer].as_slice().unwrap()[idx];
            worst = worst.max(rel_err(a, numeric));
        }
        for idx in 0..probe.biases[layer].len() {
            let orig = probe.biases[layer][idx];
            probe.biases[layer][idx] = orig + FD_STEP;
            let up = loss(&probe).0;
            probe.biases[layer][idx] = orig - FD_STEP;
            let down = loss(&probe).0;
            probe.biases[layer][idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.b[layer][idx], numeric));
        }
    }
    worst
}

fn set_w(net: &mut Mlp, layer: usize, idx: usize, value: f64) {
    net.weights[layer].as_slice_mut().unwrap()[idx] = value;
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bce_logits_loss, gaussian_nll_loss, squared_error_loss, Head, Mlp};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = batch(6, 3, seed + 10);

            let net = Mlp::new(3, &[7, 5], 2, Head::Linear, &mut rng);
            let t = batch(6, 2, seed + 20);
            let err = grad_check(&net, |n| {
                let (raw, cache) = n.forward_cached(&x).unwrap();
                let (loss, dl) = squared_error_loss(&raw, &t).unwrap();
                (loss, n.backward(&cache, &dl).unwrap().0)
            });
            assert!(err < 1e-4, "squared error grad check failed: {err}");

            let net = Mlp::new(3, &[7], 2, Head::Gaussian, &mut rng);
            let err = grad_check(&net, |n| {
                let (raw, cache) = n.forward_cached(&x).unwrap();
                let (loss, dl) = gaussian_nll_loss(&raw, &t).unwrap();
                (loss, n.backward(&cache, &dl).unwrap().0)
            });
            assert!(err < 1e-4, "gaussian nll grad check failed: {err}");

            let net = Mlp::new(3, &[7], 1, Head::Sigmoid, &mut rng);
            let labels = batch(6, 1, seed + 30).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let err = grad_check(&net, |n| {
                let (raw, cache) = n.forward_cached(&x).unwrap();
                let (loss, dl) = bce_logits_loss(&raw, &labels).unwrap();
                (loss, n.backward(&cache, &dl).unwrap().0)
            });
            assert!(err < 1e-4, "bce grad check failed: {err}");
        }
    }

    #[test]
    fn checker_detects_a_corrupted_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(2, &[4], 1, Head::Linear, &mut rng);
        let x = batch(5, 2, 1);
        let t = batch(5, 1, 2);
        let err = grad_check(&net, |n| {
            let (raw, cache) = n.forward_cached(&x).unwrap();
            let (loss, dl) = squared_error_loss(&raw, &t).unwrap();
            let (mut grads, _) = n.backward(&cache, &dl).unwrap();
            // Inject a known bug: scale one layer's gradient.
            grads.w[0] *= 1.5;
            (loss, grads)
        });
        assert!(err > 1e-2, "checker missed an injected gradient bug: {err}");
    }

    #[test]
    fn empty_hidden_list_passes_vacuously() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(2, &[], 1, Head::Linear, &mut rng);
        let x = batch(4, 2, 3);
        let t = batch(4, 1, 4);
        let err = grad_check(&net, |n| {
            let (raw, cache) = n.forward_cached(&x).unwrap();
            let (loss, dl) = squared_error_loss(&raw, &t).unwrap();
            (loss, n.backward(&cache, &dl).unwrap().0)
        });
        assert!(err < 1e-6, "single-layer check failed: {err}");
    }
}
