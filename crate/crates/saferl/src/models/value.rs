//! Value ensemble: scalar networks trained offline by regression on the
//! discounted cost-to-go of demonstration trajectories, and online by the
//! temporal-difference error against a lagged target copy.

use super::{sample_indices, FlatData, ModelConfig, NormStats};
use crate::config::derive_seed;
use crate::dataset::{Dataset, EpisodeRecord, Origin};
use crate::nn::{squared_error_loss, Adam, Ensemble, Grads, Head, Mlp};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Discounted cost-to-go target for the state at index `t` of an episode:
/// the sum of the remaining rewards discounted starting at gamma^1. A
/// terminal state (t = episode length) has an empty sum, i.e. target 0.
pub fn value_offline_target(ep: &EpisodeRecord, t: usize, gamma: f64) -> f64 {
    let mut g = 0.0;
    for j in (t..ep.transitions.len()).rev() {
        g = gamma * (ep.transitions[j].r + g);
    }
    g
}

#[derive(Debug, Clone)]
pub struct ValueEnsemble {
    pub members: Ensemble,
    /// Lagged target parameters, hard-copied every `target_sync` steps.
    pub targets: Vec<Mlp>,
    pub gamma: f64,
}

impl ValueEnsemble {
    pub fn new(cfg: &ModelConfig, seed: u64) -> ValueEnsemble {
        let members = Ensemble::new(cfg.n_value, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "value-init", i as u64));
            Mlp::new(2, &cfg.value_hidden, 1, Head::Linear, &mut rng)
        });
        let targets = members.members.clone();
        ValueEnsemble { members, targets, gamma: cfg.gamma }
    }

    pub(crate) fn from_members(members: Vec<Mlp>, targets: Vec<Mlp>, gamma: f64) -> ValueEnsemble {
        ValueEnsemble { members: Ensemble { members }, targets, gamma }
    }

    /// Ensemble-mean value of normalized states.
    pub fn mean_value(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut acc = Array1::zeros(x.nrows());
        for m in &self.members.members {
            let v = m.forward(x).expect("value input is 2-wide");
            acc += &v.column(0);
        }
        acc / self.members.len() as f64
    }

    /// Offline fit: regress every member onto the discounted cost-to-go of
    /// the goal-reaching and online episodes.
    pub fn train_offline(
        &mut self,
        dataset: &Dataset,
        norm: &NormStats,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Vec<f64> {
        let mut states = Vec::new();
        let mut targets = Vec::new();
        for ep in &dataset.episodes {
            if ep.origin == Origin::OfflineCv {
                continue;
            }
            for t in 0..ep.transitions.len() {
                let target = value_offline_target(ep, t, cfg.gamma);
                // Rewards lie in {0, -1}, so cost-to-go targets are never
                // positive.
                debug_assert!(target <= 1e-12, "positive cost-to-go target {target}");
                states.push(norm.norm_state(ep.transitions[t].s));
                targets.push(target);
            }
        }
        let n = states.len();
        assert!(n > 0, "value training requires goal-reaching or online episodes");
        let xs = Array2::from_shape_fn((n, 2), |(i, j)| states[i][j]);
        let ts = Array2::from_shape_fn((n, 1), |(i, _)| targets[i]);

        let mut curve = vec![0.0; cfg.offline_steps];
        let n_members = self.members.members.len() as f64;
        for (m, member) in self.members.members.iter_mut().enumerate() {
            let mut adam = Adam::new(member, cfg.lr);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "value-batch", m as u64));
            for slot in curve.iter_mut() {
                let idx = sample_indices(&mut rng, n, cfg.batch.min(n));
                let xb = Array2::from_shape_fn((idx.len(), 2), |(i, j)| xs[[idx[i], j]]);
                let tb = Array2::from_shape_fn((idx.len(), 1), |(i, _)| ts[[idx[i], 0]]);
                let (raw, cache) = member.forward_cached(&xb).unwrap();
                let (loss, dl) = squared_error_loss(&raw, &tb).unwrap();
                let (grads, _) = member.backward(&cache, &dl).unwrap();
                adam.step(member, &grads);
                *slot += loss / n_members;
            }
        }
        // Lagged targets start as a copy of the freshly trained members.
        self.targets = self.members.members.clone();
        curve
    }

    /// Online TD updates on transitions from goal-reaching demos and
    /// online episodes. `steps_done` carries the gradient-step counter
    /// across calls so target syncs land every `target_sync` steps.
    #[allow(clippy::too_many_arguments)]
    pub fn train_online_td(
        &mut self,
        flat: &FlatData,
        norm: &NormStats,
        adams: &mut [Adam],
        cfg: &ModelConfig,
        steps: usize,
        mut steps_done: usize,
        seed: u64,
    ) -> usize {
        let usable: Vec<usize> = (0..flat.len()).filter(|&i| flat.for_value[i]).collect();
        if usable.is_empty() {
            return steps_done;
        }
        for step in 0..steps {
            for (m, (member, adam)) in
                self.members.members.iter_mut().zip(adams.iter_mut()).enumerate()
            {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    "td-batch",
                    (m * 1_000_003 + step) as u64,
                ));
                let picks = sample_indices(&mut rng, usable.len(), cfg.batch.min(usable.len()));
                let idx: Vec<usize> = picks.iter().map(|&k| usable[k]).collect();
                let (loss, grads) = td_loss_core(member, &self.targets[m], flat, norm, &idx, cfg.gamma);
                let _ = loss;
                adam.step(member, &grads);
            }
            steps_done += 1;
            if steps_done % cfg.target_sync == 0 {
                self.targets = self.members.members.clone();
            }
        }
        steps_done
    }
}

fn td_loss_core(
    member: &Mlp,
    target_net: &Mlp,
    flat: &FlatData,
    norm: &NormStats,
    idx: &[usize],
    gamma: f64,
) -> (f64, Grads) {
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
    let v_next = target_net.forward(&xn).unwrap();
    let mut targets = Array2::zeros((n, 1));
    for (row, &i) in idx.iter().enumerate() {
        let bootstrap = if flat.done[i] { 0.0 } else { v_next[[row, 0]] };
        targets[[row, 0]] = flat.r[i] + gamma * bootstrap;
    }
    let (raw, cache) = member.forward_cached(&xs).unwrap();
    let (loss, dl) = squared_error_loss(&raw, &targets).unwrap();
    let (grads, _) = member.backward(&cache, &dl).unwrap();
    (loss, grads)
}

/// Mean squared TD error of one member against a fixed target network,
/// with parameter gradients. Exposed for the gradient-check suite.
pub fn td_loss_and_grads(
    member: &Mlp,
    target_net: &Mlp,
    flat: &FlatData,
    norm: &NormStats,
    idx: &[usize],
    gamma: f64,
) -> (f64, Grads) {
    td_loss_core(member, target_net, flat, norm, idx, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use approx::assert_relative_eq;

    fn episode_with_rewards(rewards: &[f64]) -> EpisodeRecord {
        let transitions: Vec<Transition> = rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                s: [i as f64, 0.0],
                a: [1.0, 0.0],
                r,
                s_next: [(i + 1) as f64, 0.0],
                c: false,
                done: i + 1 == rewards.len(),
                skill: None,
            })
            .collect();
        EpisodeRecord::from_transitions(transitions, Origin::OfflineGr)
    }

    #[test]
    fn offline_target_geometric_sum() {
        // Three remaining steps of -1 at gamma = 0.99.
        let ep = episode_with_rewards(&[-1.0, -1.0, -1.0]);
        let g = value_offline_target(&ep, 0, 0.99);
        assert_relative_eq!(g, -(0.99 + 0.99_f64.powi(2) + 0.99_f64.powi(3)), epsilon = 1e-12);
        assert_relative_eq!(g, -2.940399, epsilon = 1e-6);
    }

    #[test]
    fn offline_target_terminal_state_is_zero() {
        let ep = episode_with_rewards(&[-1.0, -1.0, 0.0]);
        assert_eq!(value_offline_target(&ep, 3, 0.99), 0.0);
    }

    #[test]
    fn offline_target_gamma_zero_is_zero() {
        let ep = episode_with_rewards(&[-1.0, -1.0]);
        assert_eq!(value_offline_target(&ep, 0, 0.0), 0.0);
    }

    #[test]
    fn td_example_from_closed_form() {
        // V(s) = 0, r = -1, gamma = 0.99, V'(s') = -10:
        // per-sample loss (0 - (-10.9))^2 = 118.81.
        let mut d = Dataset::new();
        d.push(episode_with_rewards(&[-1.0, -1.0]));
        let flat = FlatData::from_dataset(&d);
        let norm = NormStats::from_dataset(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut member = Mlp::new(2, &[], 1, Head::Linear, &mut rng);
        member.weights[0].fill(0.0);
        member.biases[0].fill(0.0);
        let mut target = member.clone();
        target.biases[0].fill(-10.0);
        // Use the non-terminal first transition only.
        let (loss, _) = td_loss_and_grads(&member, &target, &flat, &norm, &[0], 0.99);
        assert_relative_eq!(loss, 118.81, epsilon = 1e-9);
    }

    #[test]
    fn td_loss_zero_when_consistent() {
        let mut d = Dataset::new();
        d.push(episode_with_rewards(&[-1.0]));
        let flat = FlatData::from_dataset(&d);
        let norm = NormStats::from_dataset(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut member = Mlp::new(2, &[], 1, Head::Linear, &mut rng);
        member.weights[0].fill(0.0);
        member.biases[0].fill(-1.0); // terminal: target = r + 0 = -1
        let target = member.clone();
        let (loss, _) = td_loss_and_grads(&member, &target, &flat, &norm, &[0], 0.99);
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn td_gradients_match_finite_differences() {
        let mut d = Dataset::new();
        d.push(episode_with_rewards(&[-1.0, -1.0, -1.0, 0.0]));
        let flat = FlatData::from_dataset(&d);
        let norm = NormStats::from_dataset(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let member = Mlp::new(2, &[6], 1, Head::Linear, &mut rng);
        let target = Mlp::new(2, &[6], 1, Head::Linear, &mut rng);
        let idx: Vec<usize> = vec![0, 1, 2, 3];
        let err = crate::nn::grad_check(&member, |n| {
            td_loss_and_grads(n, &target, &flat, &norm, &idx, 0.99)
        });
        assert!(err < 1e-4, "td grad check: {err}");
    }

    #[test]
    fn lagged_target_changes_only_at_sync_events() {
        let mut d = Dataset::new();
        for _ in 0..3 {
            d.push(episode_with_rewards(&[-1.0; 20]));
        }
        let flat = FlatData::from_dataset(&d);
        let norm = NormStats::from_dataset(&d).unwrap();
        let cfg = ModelConfig { n_value: 1, target_sync: 50, ..ModelConfig::default() };
        let mut ens = ValueEnsemble::new(&cfg, 0);
        let mut adams: Vec<Adam> = ens.members.members.iter().map(|m| Adam::new(m, cfg.lr)).collect();

        let before = ens.targets[0].clone();
        // 49 steps: no sync yet.
        let done = ens.train_online_td(&flat, &norm, &mut adams, &cfg, 49, 0, 1);
        assert_eq!(done, 49);
        assert_eq!(ens.targets[0].weights, before.weights);
        // One more step crosses the sync boundary.
        ens.train_online_td(&flat, &norm, &mut adams, &cfg, 1, done, 1);
        assert_eq!(ens.targets[0].weights, ens.members.members[0].weights);
    }

    #[test]
    fn offline_value_orders_start_below_near_goal() {
        // Build goal-reaching episodes along a line; early states carry
        // more future cost than late ones.
        let mut d = Dataset::new();
        for _ in 0..10 {
            let mut rewards = vec![-1.0; 40];
            *rewards.last_mut().unwrap() = 0.0;
            d.push(episode_with_rewards(&rewards));
        }
        let norm = NormStats::from_dataset(&d).unwrap();
        let cfg = ModelConfig { offline_steps: 800, n_value: 2, ..ModelConfig::default() };
        let mut ens = ValueEnsemble::new(&cfg, 4);
        ens.train_offline(&d, &norm, &cfg, 5);
        let probe = |s: [f64; 2]| {
            let x = Array2::from_shape_vec((1, 2), norm.norm_state(s).to_vec()).unwrap();
            ens.mean_value(&x)[0]
        };
        assert!(
            probe([0.0, 0.0]) < probe([39.0, 0.0]),
            "start value must be more negative than near-goal value"
        );
    }
}
