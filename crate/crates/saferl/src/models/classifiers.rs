//! Safe-set classifier with its bootstrapped recursive target, plus the
//! constraint and goal estimators trained by binary cross entropy with
//! class-balanced minibatches.

use super::{sample_indices, FlatData, ModelConfig, NormStats};
use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::nn::{bce_logits_loss, Adam, Head, Mlp};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recursive safe-set target for one transition: states on successful
/// trajectories are safe; other states inherit a discounted share of
/// their successor's safety. Terminal transitions bootstrap a successor
/// value of zero.
pub fn safe_set_target(success_flag: bool, f_s_next: f64, gamma_safe: f64, terminal: bool) -> f64 {
    let succ = if terminal { 0.0 } else { gamma_safe * f_s_next };
    if success_flag {
        1.0
    } else {
        succ
    }
}

/// Train the safe-set network for `steps` minibatches sampled uniformly
/// from all transitions, recomputing the bootstrapped targets from the
/// current network every batch. Returns the per-step loss curve.
#[allow(clippy::too_many_arguments)]
pub fn train_safe_set_steps(
    net: &mut Mlp,
    adam: &mut Adam,
    flat: &FlatData,
    norm: &NormStats,
    gamma_safe: f64,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(steps);
    if flat.is_empty() {
        return curve;
    }
    for _ in 0..steps {
        let idx = sample_indices(&mut rng, flat.len(), batch.min(flat.len()));
        let n = idx.len();
        let mut xs = Array2::zeros((n, 2));
        let mut xn = Array2::zeros((n, 2));
        for (row, &i) in idx.iter().enumerate() {
            let s = norm.norm_state([flat.s[[i, 0]], flat.s[[i, 1]]]);
            let sn = norm.norm_state([flat.s_next[[i, 0]], flat.s_next[[i, 1]]]);
            xs[[row, 0]] = s[0];
            xs[[row, 1]] = s[1];
            xn[[row, 0]] = sn[0];
            xn[[row, 1]] = sn[1];
        }
        let f_next = net.predict(&xn).unwrap();
        let mut targets = Array2::zeros((n, 1));
        for (row, &i) in idx.iter().enumerate() {
            targets[[row, 0]] =
                safe_set_target(flat.success[i], f_next[[row, 0]], gamma_safe, flat.done[i]);
        }
        let (raw, cache) = net.forward_cached(&xs).unwrap();
        let (loss, dl) = bce_logits_loss(&raw, &targets).unwrap();
        let (grads, _) = net.backward(&cache, &dl).unwrap();
        adam.step(net, &grads);
        curve.push(loss);
    }
    curve
}

/// Which label a classifier trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTarget {
    /// Positive where the constraint flag fired.
    Constraint,
    /// Positive where the goal ball was entered.
    Goal,
}

fn labels(flat: &FlatData, which: ClassTarget) -> &[bool] {
    match which {
        ClassTarget::Constraint => &flat.c,
        ClassTarget::Goal => &flat.in_goal,
    }
}

/// Balanced-minibatch BCE training on the visited next-states. Quietly
/// does nothing when a class is empty (online fine-tuning may briefly see
/// such windows); offline training checks positives up front.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier_steps(
    net: &mut Mlp,
    adam: &mut Adam,
    flat: &FlatData,
    norm: &NormStats,
    which: ClassTarget,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Vec<f64> {
    let flags = labels(flat, which);
    let pos: Vec<usize> = (0..flat.len()).filter(|&i| flags[i]).collect();
    let neg: Vec<usize> = (0..flat.len()).filter(|&i| !flags[i]).collect();
    let mut curve = Vec::with_capacity(steps);
    if pos.is_empty() || neg.is_empty() {
        return curve;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (batch / 2).max(1);
    for _ in 0..steps {
        let mut idx = Vec::with_capacity(2 * half);
        for k in sample_indices(&mut rng, pos.len(), half) {
            idx.push(pos[k]);
        }
        for k in sample_indices(&mut rng, neg.len(), half) {
            idx.push(neg[k]);
        }
        let n = idx.len();
        let mut xs = Array2::zeros((n, 2));
        let mut targets = Array2::zeros((n, 1));
        for (row, &i) in idx.iter().enumerate() {
            let s = norm.norm_state([flat.s_next[[i, 0]], flat.s_next[[i, 1]]]);
            xs[[row, 0]] = s[0];
            xs[[row, 1]] = s[1];
            targets[[row, 0]] = if flags[i] { 1.0 } else { 0.0 };
        }
        let (raw, cache) = net.forward_cached(&xs).unwrap();
        let (loss, dl) = bce_logits_loss(&raw, &targets).unwrap();
        let (grads, _) = net.backward(&cache, &dl).unwrap();
        adam.step(net, &grads);
        curve.push(loss);
    }
    curve
}

/// Fit the constraint and goal estimators offline. Refuses to train when
/// a classifier has no positive examples.
pub fn fit_classifiers(
    flat: &FlatData,
    norm: &NormStats,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(Mlp, Mlp, Vec<(String, Vec<f64>)>)> {
    if !flat.c.iter().any(|&c| c) {
        return Err(Error::Refused(
            "constraint estimator has no violating states to learn from".into(),
        ));
    }
    if !flat.in_goal.iter().any(|&g| g) {
        return Err(Error::Refused(
            "goal estimator has no in-goal states to learn from".into(),
        ));
    }
    let mut constraint = Mlp::new(
        2,
        &cfg.class_hidden,
        1,
        Head::Sigmoid,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "constr-init", 0)),
    );
    let mut goal = Mlp::new(
        2,
        &cfg.class_hidden,
        1,
        Head::Sigmoid,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "goal-init", 0)),
    );
    let mut constraint_adam = Adam::new(&constraint, cfg.lr);
    let mut goal_adam = Adam::new(&goal, cfg.lr);
    let c_curve = train_classifier_steps(
        &mut constraint,
        &mut constraint_adam,
        flat,
        norm,
        ClassTarget::Constraint,
        cfg.offline_steps,
        cfg.batch,
        derive_seed(seed, "constr-train", 0),
    );
    let g_curve = train_classifier_steps(
        &mut goal,
        &mut goal_adam,
        flat,
        norm,
        ClassTarget::Goal,
        cfg.offline_steps,
        cfg.batch,
        derive_seed(seed, "goal-train", 0),
    );
    Ok((
        constraint,
        goal,
        vec![("constraint".into(), c_curve), ("goal".into(), g_curve)],
    ))
}
