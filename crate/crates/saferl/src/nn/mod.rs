//! Minimal function-approximation core: fully connected networks with
//! analytic gradients, the Adam update, ensembles, and a finite-difference
//! gradient checker. Every learned model in the crate is built on this.

mod adam;
mod checkpoint;
mod ensemble;
mod gradcheck;
mod loss;
mod mlp;

pub use adam::{Adam, UpdateOutcome};
pub use checkpoint::{load_mlp, save_mlp};
pub use ensemble::Ensemble;
pub use gradcheck::grad_check;
pub use loss::{
    bce_logits_loss, gaussian_nll_loss, half_squared_error_loss, softmax_ce_loss,
    squared_error_loss,
};
pub use mlp::{Cache, Grads, Head, Mlp};

/// Log-variance clamp applied by every Gaussian head.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 2.0;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
