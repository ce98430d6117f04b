//! Chance-constrained receding-horizon action selection: cross-entropy
//! search over open-loop action sequences, scored on sampled model
//! rollouts, gated by the safe-set probability at the horizon and the
//! per-step constraint-violation fraction.

use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Everything the planner needs from a model. The crate's learned bundle
/// implements it; tests substitute exact toy models.
pub trait PlannerModel: Sync {
    /// Number of rollout particles' dynamics choices this model exposes
    /// (informational; sampling happens inside `advance`).
    fn advance(&self, states: &Array2<f64>, actions: &Array2<f64>, step_seed: u64) -> Array2<f64>;
    /// Goal indicator f_G evaluated on raw states.
    fn goal_score(&self, states: &Array2<f64>) -> Array1<f64>;
    /// Terminal value V evaluated on raw states.
    fn terminal_value(&self, states: &Array2<f64>) -> Array1<f64>;
    /// Safe-set probability f_S on raw states.
    fn safe_prob(&self, states: &Array2<f64>) -> Array1<f64>;
    /// Constraint probability f_C on raw states.
    fn constraint_prob(&self, states: &Array2<f64>) -> Array1<f64>;
}

impl PlannerModel for ModelBundle {
    fn advance(&self, states: &Array2<f64>, actions: &Array2<f64>, step_seed: u64) -> Array2<f64> {
        let n = states.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let n_ens = self.dynamics.members.len();
        let members: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_ens)).collect();
        let noise = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        self.dynamics.step_batch(states, actions, &members, &noise)
    }

    fn goal_score(&self, states: &Array2<f64>) -> Array1<f64> {
        self.goal_prob(states)
    }

    fn terminal_value(&self, states: &Array2<f64>) -> Array1<f64> {
        self.value_mean(states)
    }

    fn safe_prob(&self, states: &Array2<f64>) -> Array1<f64> {
        ModelBundle::safe_prob(self, states)
    }

    fn constraint_prob(&self, states: &Array2<f64>) -> Array1<f64> {
        ModelBundle::constraint_prob(self, states)
    }
}

/// Cross-entropy planner parameters. Defaults carry the published values;
/// desk-scale runs shrink the sampling effort via [`CemConfig::desk`].
#[derive(Debug, Clone)]
pub struct CemConfig {
    pub horizon: usize,
    pub n_candidates: usize,
    pub n_elite: usize,
    pub n_iterations: usize,
    pub n_particles: usize,
    /// Minimum fraction of particles whose terminal state scores safe.
    pub required_safe_frac: f64,
    /// Maximum per-step fraction of particles flagged by the constraint
    /// estimator.
    pub max_violation_frac: f64,
    /// Componentwise action bound.
    pub action_bound: f64,
    /// Variance floor for the refit sampling distribution.
    pub var_floor: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            horizon: 5,
            n_candidates: 1000,
            n_elite: 100,
            n_iterations: 5,
            n_particles: 20,
            required_safe_frac: 0.8,
            max_violation_frac: 0.2,
            action_bound: 1.0,
            var_floor: 1e-4,
        }
    }
}

impl CemConfig {
    /// Reduced sampling effort for CPU-bound runs; thresholds unchanged.
    pub fn desk(action_bound: f64) -> CemConfig {
        CemConfig {
            n_candidates: 150,
            n_elite: 15,
            n_iterations: 3,
            n_particles: 10,
            action_bound,
            ..CemConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elite > self.n_candidates || self.n_elite == 0 {
            return Err(Error::Config("n_elite must be in 1..=n_candidates".into()));
        }
        if self.horizon == 0 || self.n_particles == 0 || self.n_iterations == 0 {
            return Err(Error::Config("horizon, particles and iterations must be positive".into()));
        }
        for (name, v) in [
            ("required_safe_frac", self.required_safe_frac),
            ("max_violation_frac", self.max_violation_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub actions: Vec<[f64; 2]>,
    pub objective: f64,
    pub feasible: bool,
    /// Fraction of particles whose terminal state scored safe.
    pub safe_frac: f64,
    /// Max over steps of the violating particle fraction.
    pub viol_frac: f64,
}

#[derive(Debug, Clone)]
struct Scored {
    actions: Vec<[f64; 2]>,
    objective: f64,
    safe_frac: f64,
    viol_frac: f64,
}

/// Chance-constraint gate.
pub fn feasible(safe_frac: f64, viol_frac: f64, cfg: &CemConfig) -> bool {
    safe_frac >= cfg.required_safe_frac && viol_frac <= cfg.max_violation_frac
}

/// Score one candidate action sequence; see [`cem_plan`] for the batched
/// path the planner itself uses.
pub fn score_candidate(
    model: &dyn PlannerModel,
    s_t: [f64; 2],
    actions: &[[f64; 2]],
    cfg: &CemConfig,
    seed: u64,
) -> (f64, f64, f64) {
    let scored = score_all(model, s_t, std::slice::from_ref(&actions.to_vec()), cfg, seed, 0);
    let s = &scored[0];
    (s.objective, s.safe_frac, s.viol_frac)
}

/// Roll every candidate's particle set through the model and score it:
/// objective = particle mean of the summed goal indicator over the
/// intermediate states plus the terminal value; safety statistics from
/// thresholding f_S / f_C at 0.5.
fn score_all(
    model: &dyn PlannerModel,
    s_t: [f64; 2],
    candidates: &[Vec<[f64; 2]>],
    cfg: &CemConfig,
    plan_seed: u64,
    iteration: usize,
) -> Vec<Scored> {
    let n_cand = candidates.len();
    let n_part = cfg.n_particles;
    let n_rows = n_cand * n_part;
    let h = cfg.horizon;

    let mut states = Array2::zeros((n_rows, 2));
    for mut row in states.rows_mut() {
        row[0] = s_t[0];
        row[1] = s_t[1];
    }
    let mut goal_acc = vec![0.0f64; n_rows];
    let mut viol_count_max = vec![0u32; n_cand];

    for k in 0..h {
        let mut actions = Array2::zeros((n_rows, 2));
        for r in 0..n_rows {
            let a = candidates[r / n_part][k];
            actions[[r, 0]] = a[0];
            actions[[r, 1]] = a[1];
        }
        let step_seed = derive_seed(plan_seed, "plan-step", (iteration * h + k) as u64);
        states = model.advance(&states, &actions, step_seed);

        // Constraint fraction per step over the predicted states
        // s_{t+1} .. s_{t+H}.
        let c_prob = model.constraint_prob(&states);
        let mut counts = vec![0u32; n_cand];
        for r in 0..n_rows {
            if c_prob[r] >= 0.5 {
                counts[r / n_part] += 1;
            }
        }
        for (cand, &cnt) in counts.iter().enumerate() {
            viol_count_max[cand] = viol_count_max[cand].max(cnt);
        }

        // Goal indicator over the intermediate states s_{t+1}..s_{t+H-1}.
        if k + 1 < h {
            let g = model.goal_score(&states);
            for r in 0..n_rows {
                goal_acc[r] += g[r];
            }
        }
    }

    let safe = model.safe_prob(&states);
    let value = model.terminal_value(&states);
    let mut out = Vec::with_capacity(n_cand);
    for cand in 0..n_cand {
        let rows = cand * n_part..(cand + 1) * n_part;
        let mut obj = 0.0;
        let mut safe_count = 0u32;
        for r in rows.clone() {
            obj += goal_acc[r] + value[r];
            if safe[r] >= 0.5 {
                safe_count += 1;
            }
        }
        out.push(Scored {
            actions: candidates[cand].clone(),
            objective: obj / n_part as f64,
            safe_frac: safe_count as f64 / n_part as f64,
            viol_frac: viol_count_max[cand] as f64 / n_part as f64,
        });
    }
    out
}

/// Sampling distribution over the flattened horizon x action space.
struct SampleDist {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn sample_candidates(
    dist: Option<&SampleDist>,
    cfg: &CemConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<[f64; 2]>> {
    let dims = cfg.horizon * 2;
    (0..cfg.n_candidates)
        .map(|_| {
            let mut seq = Vec::with_capacity(cfg.horizon);
            for k in 0..cfg.horizon {
                let mut a = [0.0; 2];
                for (j, slot) in a.iter_mut().enumerate() {
                    let d = 2 * k + j;
                    let v = match dist {
                        // First round: uniform over the action box.
                        None => rng.gen_range(-cfg.action_bound..=cfg.action_bound),
                        Some(dist) => {
                            let eps: f64 = rng.sample(StandardNormal);
                            dist.mean[d] + dist.std[d] * eps
                        }
                    };
                    *slot = v.clamp(-cfg.action_bound, cfg.action_bound);
                }
                seq.push(a);
            }
            debug_assert_eq!(seq.len() * 2, dims);
            seq
        })
        .collect()
}

fn refit(elites: &[&Scored], cfg: &CemConfig) -> SampleDist {
    let dims = cfg.horizon * 2;
    let n = elites.len() as f64;
    let mut mean = vec![0.0; dims];
    for e in elites {
        for k in 0..cfg.horizon {
            mean[2 * k] += e.actions[k][0] / n;
            mean[2 * k + 1] += e.actions[k][1] / n;
        }
    }
    let mut var = vec![0.0; dims];
    for e in elites {
        for k in 0..cfg.horizon {
            var[2 * k] += (e.actions[k][0] - mean[2 * k]).powi(2) / n;
            var[2 * k + 1] += (e.actions[k][1] - mean[2 * k + 1]).powi(2) / n;
        }
    }
    let std = var.iter().map(|v| v.max(cfg.var_floor).sqrt()).collect();
    SampleDist { mean, std }
}

fn better_fallback(a: &Scored, b: &Scored) -> bool {
    let ka = a.safe_frac - a.viol_frac;
    let kb = b.safe_frac - b.viol_frac;
    ka > kb || (ka == kb && a.objective > b.objective)
}

/// Iterative sampling / elite-refit search for the best feasible action
/// sequence. Elites survive into the next iteration's pool with their
/// recorded scores, so the elite-mean objective never decreases. When no
/// candidate is ever feasible the best (safe_frac - viol_frac) candidate
/// is returned with `feasible = false`.
pub fn cem_plan(
    model: &dyn PlannerModel,
    s_t: [f64; 2],
    cfg: &CemConfig,
    seed: u64,
) -> PlanResult {
    cfg.validate().expect("planner config validated by caller");
    let mut carried: Vec<Scored> = Vec::new();
    let mut best_feasible: Option<Scored> = None;
    let mut best_fallback: Option<Scored> = None;
    let mut dist: Option<SampleDist> = None;
    let mut prev_elite_mean = f64::NEG_INFINITY;

    for iteration in 0..cfg.n_iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "cem-sample", iteration as u64));
        let candidates = sample_candidates(dist.as_ref(), cfg, &mut rng);
        let mut pool = score_all(model, s_t, &candidates, cfg, seed, iteration);
        pool.extend(carried.iter().cloned());

        for s in &pool {
            if feasible(s.safe_frac, s.viol_frac, cfg) {
                if best_feasible.as_ref().map_or(true, |b| s.objective > b.objective) {
                    best_feasible = Some(s.clone());
                }
            }
            if best_fallback.as_ref().map_or(true, |b| better_fallback(s, b)) {
                best_fallback = Some(s.clone());
            }
        }

        let mut feas: Vec<&Scored> = pool
            .iter()
            .filter(|s| feasible(s.safe_frac, s.viol_frac, cfg))
            .collect();
        feas.sort_by(|a, b| b.objective.total_cmp(&a.objective));
        let elites: Vec<&Scored> = if feas.is_empty() {
            // Nothing feasible this round: pull the sampler toward the
            // least-unsafe region instead of stalling.
            let mut all: Vec<&Scored> = pool.iter().collect();
            all.sort_by(|a, b| {
                (b.safe_frac - b.viol_frac)
                    .total_cmp(&(a.safe_frac - a.viol_frac))
                    .then(b.objective.total_cmp(&a.objective))
            });
            all.into_iter().take(cfg.n_elite).collect()
        } else {
            let elites: Vec<&Scored> = feas.into_iter().take(cfg.n_elite).collect();
            let elite_mean =
                elites.iter().map(|e| e.objective).sum::<f64>() / elites.len() as f64;
            debug_assert!(
                elite_mean >= prev_elite_mean - 1e-9,
                "elite mean decreased: {prev_elite_mean} -> {elite_mean}"
            );
            prev_elite_mean = prev_elite_mean.max(elite_mean);
            elites
        };
        dist = Some(refit(&elites, cfg));
        carried = elites.into_iter().cloned().collect();
    }

    let (chosen, is_feasible) = match (&best_feasible, &best_fallback) {
        (Some(b), _) => (b.clone(), true),
        (None, Some(f)) => (f.clone(), false),
        (None, None) => unreachable!("at least one candidate is always scored"),
    };
    debug_assert!(chosen
        .actions
        .iter()
        .all(|a| a[0].abs() <= cfg.action_bound + 1e-12 && a[1].abs() <= cfg.action_bound + 1e-12));
    PlanResult {
        actions: chosen.actions,
        objective: chosen.objective,
        feasible: is_feasible,
        safe_frac: chosen.safe_frac,
        viol_frac: chosen.viol_frac,
    }
}

/// Receding-horizon action: the first step of the planned sequence.
pub fn act(model: &dyn PlannerModel, s_t: [f64; 2], cfg: &CemConfig, seed: u64) -> [f64; 2] {
    cem_plan(model, s_t, cfg, seed).actions[0]
}
