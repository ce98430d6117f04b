//! Loss functions paired with their exact gradients at the raw network
//! output. Heads (sigmoid, softmax, Gaussian clamp) are folded in here so
//! each loss stays numerically stable in logit space.

use super::{sigmoid, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use ndarray::Array2;

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "shape {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean over the batch of the summed squared error.
pub fn squared_error_loss(raw: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(raw, targets)?;
    let n = raw.nrows() as f64;
    let diff = raw - targets;
    let loss = diff.mapv(|v| v * v).sum() / n;
    let grad = diff.mapv(|v| 2.0 * v / n);
    Ok((loss, grad))
}

/// Mean over the batch of half the summed squared error.
pub fn half_squared_error_loss(
    raw: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(raw, targets)?;
    let n = raw.nrows() as f64;
    let diff = raw - targets;
    let loss = 0.5 * diff.mapv(|v| v * v).sum() / n;
    let grad = diff.mapv(|v| v / n);
    Ok((loss, grad))
}

/// Mean Gaussian negative log-likelihood of `targets` under a
/// [mean | log-variance] raw output with diagonal covariance. The
/// log-variance clamp is part of the head, so clamped entries get zero
/// gradient.
pub fn gaussian_nll_loss(raw: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let d = targets.ncols();
    if raw.ncols() != 2 * d || raw.nrows() != targets.nrows() {
        return Err(Error::Shape(format!(
            "gaussian raw output {:?} incompatible with targets {:?}",
            raw.dim(),
            targets.dim()
        )));
    }
    let n = raw.nrows() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut grad = Array2::zeros(raw.raw_dim());
    let mut loss = 0.0;
    for i in 0..raw.nrows() {
        for j in 0..d {
            let mu = raw[[i, j]];
            let lv_raw = raw[[i, d + j]];
            let lv = lv_raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
            let inv_var = (-lv).exp();
            let e = mu - targets[[i, j]];
            loss += 0.5 * (e * e * inv_var + lv + ln2pi);
            grad[[i, j]] = e * inv_var / n;
            if (LOGVAR_MIN..LOGVAR_MAX).contains(&lv_raw) {
                grad[[i, d + j]] = 0.5 * (1.0 - e * e * inv_var) / n;
            }
        }
    }
    Ok((loss / n, grad))
}

/// Binary cross entropy on logits against (possibly soft) targets in [0, 1].
pub fn bce_logits_loss(raw: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(raw, targets)?;
    let n = raw.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(raw.raw_dim());
    for (i, (&x, &t)) in raw.iter().zip(targets.iter()).enumerate() {
        // softplus(x) - x*t, evaluated stably.
        loss += x.max(0.0) - x * t + (-(x.abs())).exp().ln_1p();
        let idx = (i / raw.ncols(), i % raw.ncols());
        grad[idx] = (sigmoid(x) - t) / n;
    }
    Ok((loss / n, grad))
}

/// Cross entropy on logits against integer class labels.
pub fn softmax_ce_loss(raw: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if labels.len() != raw.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            raw.nrows()
        )));
    }
    let n = raw.nrows() as f64;
    let k = raw.ncols();
    let mut loss = 0.0;
    let mut grad = Array2::zeros(raw.raw_dim());
    for (i, row) in raw.rows().into_iter().enumerate() {
        let label = labels[i];
        if label >= k {
            return Err(Error::Shape(format!("label {label} out of range {k}")));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum_exp.ln();
        loss += lse - row[label];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn gaussian_nll_at_mode_with_unit_variance() {
        // mean == target, log-variance 0: loss = d/2 * ln(2*pi).
        let raw = array![[1.0, -2.0, 0.0, 0.0]];
        let t = array![[1.0, -2.0]];
        let (loss, grad) = gaussian_nll_loss(&raw, &t).unwrap();
        assert_relative_eq!(loss, (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_relative_eq!(grad[[0, 0]], 0.0);
        // At zero error the log-variance gradient pushes variance down.
        assert_relative_eq!(grad[[0, 2]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn doubling_variance_at_zero_error_adds_half_log_two_per_dim() {
        let t = array![[0.0, 0.0]];
        let raw1 = array![[0.0, 0.0, 0.0, 0.0]];
        let raw2 = array![[0.0, 0.0, 2f64.ln(), 2f64.ln()]];
        let (l1, _) = gaussian_nll_loss(&raw1, &t).unwrap();
        let (l2, _) = gaussian_nll_loss(&raw2, &t).unwrap();
        assert_relative_eq!(l2 - l1, 2f64.ln(), epsilon = 1e-12); // d/2 * ln2, d = 2
    }

    #[test]
    fn bce_gradient_is_probability_minus_target() {
        let raw = array![[0.0], [3.0]];
        let t = array![[1.0], [0.25]];
        let (_, grad) = bce_logits_loss(&raw, &t).unwrap();
        assert_relative_eq!(grad[[0, 0]], (0.5 - 1.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(grad[[1, 0]], (sigmoid(3.0) - 0.25) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bce_is_stable_for_extreme_logits() {
        let raw = array![[5000.0], [-5000.0]];
        let t = array![[1.0], [0.0]];
        let (loss, grad) = bce_logits_loss(&raw, &t).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        assert!(grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_ce_of_uniform_logits_is_log_k() {
        let raw = array![[0.0, 0.0, 0.0, 0.0]];
        let (loss, _) = softmax_ce_loss(&raw, &[2]).unwrap();
        assert_relative_eq!(loss, 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn squared_error_examples() {
        let (loss, grad) = squared_error_loss(&array![[2.0]], &array![[0.5]]).unwrap();
        assert_relative_eq!(loss, 2.25);
        assert_relative_eq!(grad[[0, 0]], 3.0);
        let (loss, _) = half_squared_error_loss(&array![[0.0]], &array![[2.98]]).unwrap();
        assert_relative_eq!(loss, 4.4402, epsilon = 1e-12);
    }
}
