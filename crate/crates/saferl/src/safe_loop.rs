//! The end-to-end safe learning loop: offline-trained models drive a
//! receding-horizon planner through online episodes; after every episode
//! the models are fine-tuned on the grown replay store, and at window
//! boundaries a low-return window of online episodes is optimistically
//! forgotten so the safe set stays open to exploration.

use crate::config::derive_seed;
use crate::dataset::{Dataset, EpisodeRecord, Origin};
use crate::env::{normalized_return, Env, EnvConfig};
use crate::error::Result;
use crate::models::{save_bundle, BundleTrainer, ModelBundle};
use crate::planner::{cem_plan, CemConfig};
use crate::report::{fmt_f64, Csv};
use ndarray::{Array1, Array2};
use std::path::Path;

/// Optimistic-forgetting parameters: check every `n_forget` online
/// episodes, drop the window when its mean normalized return falls below
/// `r_min`.
#[derive(Debug, Clone)]
pub struct ForgettingConfig {
    pub enabled: bool,
    pub n_forget: usize,
    pub r_min: f64,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig { enabled: true, n_forget: 25, r_min: 0.5 }
    }
}

/// Episode store with an immutable offline prefix. Online episodes are
/// appended in order; forgetting may remove only the most recent online
/// window.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    data: Dataset,
    n_offline: usize,
    horizon: usize,
}

impl ReplayStore {
    pub fn from_offline(offline: Dataset, horizon: usize) -> ReplayStore {
        let n_offline = offline.episodes.len();
        debug_assert!(offline.episodes.iter().all(|e| e.origin != Origin::Online));
        ReplayStore { data: offline, n_offline, horizon }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn n_offline(&self) -> usize {
        self.n_offline
    }

    pub fn n_online(&self) -> usize {
        self.data.episodes.len() - self.n_offline
    }

    pub fn push_online(&mut self, ep: EpisodeRecord) {
        debug_assert_eq!(ep.origin, Origin::Online);
        self.data.push(ep);
    }

    /// Mean normalized return of the trailing `window` online episodes.
    pub fn window_mean(&self, window: usize) -> Option<f64> {
        let n_online = self.n_online();
        if n_online == 0 || window == 0 {
            return None;
        }
        let take = window.min(n_online);
        let tail = &self.data.episodes[self.data.episodes.len() - take..];
        Some(tail.iter().map(|e| normalized_return(e, self.horizon)).sum::<f64>() / take as f64)
    }

    /// Drop the trailing window of online episodes when its mean
    /// normalized return is below the threshold. Offline episodes are
    /// untouched; returns the number of episodes removed.
    pub fn optimistic_forget(&mut self, fcfg: &ForgettingConfig) -> usize {
        let n_online = self.n_online();
        if n_online == 0 {
            return 0;
        }
        let window = fcfg.n_forget.min(n_online);
        match self.window_mean(window) {
            Some(mean) if mean < fcfg.r_min => {
                self.data.episodes.truncate(self.data.episodes.len() - window);
                debug_assert!(self.data.episodes.len() >= self.n_offline);
                window
            }
            _ => 0,
        }
    }
}

/// Fraction of free-space grid cells the safe set classifies as safe,
/// evaluated with the supplied probe.
pub fn safe_set_area_of(
    probe: impl Fn(&Array2<f64>) -> Array1<f64>,
    env: &EnvConfig,
    grid: (usize, usize),
) -> f64 {
    let (nx, ny) = grid;
    let mut cells = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let x = (i as f64 + 0.5) * env.arena_w / nx as f64;
            let y = (j as f64 + 0.5) * env.arena_h / ny as f64;
            if !env.in_constraint(crate::geom::Vec2::new(x, y)) {
                cells.push([x, y]);
            }
        }
    }
    if cells.is_empty() {
        return 0.0;
    }
    let states = Array2::from_shape_fn((cells.len(), 2), |(i, j)| cells[i][j]);
    let probs = probe(&states);
    probs.iter().filter(|&&p| p >= 0.5).count() as f64 / cells.len() as f64
}

/// Safe-set area of a trained bundle over the arena.
pub fn safe_set_area(bundle: &ModelBundle, env: &EnvConfig, grid: (usize, usize)) -> f64 {
    safe_set_area_of(|s| bundle.safe_prob(s), env, grid)
}

/// Write the four model heatmaps (value, constraint, safe set, goal) as
/// x,y,value CSV grids over the arena.
pub fn export_heatmaps(
    bundle: &ModelBundle,
    env: &EnvConfig,
    grid: (usize, usize),
    dir: &Path,
) -> Result<()> {
    let (nx, ny) = grid;
    let mut points = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            points.push([
                (i as f64 + 0.5) * env.arena_w / nx as f64,
                (j as f64 + 0.5) * env.arena_h / ny as f64,
            ]);
        }
    }
    let states = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j]);
    let layers: [(&str, Array1<f64>); 4] = [
        ("value", bundle.value_mean(&states)),
        ("constraint", bundle.constraint_prob(&states)),
        ("safe_set", bundle.safe_prob(&states)),
        ("goal", bundle.goal_prob(&states)),
    ];
    for (name, values) in layers {
        let mut csv = Csv::new(&bundle.config_hash, &["x", "y", "value"]);
        for (row, p) in points.iter().enumerate() {
            csv.row(&[fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(values[row])]);
        }
        csv.write(&dir.join(format!("{name}.csv")))?;
    }
    Ok(())
}

/// One row of the per-episode training report.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub episode: usize,
    pub ret: f64,
    pub normalized: f64,
    pub reached_goal: bool,
    pub violated: bool,
    pub forgot: bool,
    pub safe_area: f64,
}

/// Per-planning-step diagnostics, optionally collected.
#[derive(Debug, Clone)]
pub struct PlanDiag {
    pub episode: usize,
    pub step: usize,
    pub objective: f64,
    pub safe_frac: f64,
    pub viol_frac: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub rows: Vec<EpisodeRow>,
    pub diags: Vec<PlanDiag>,
}

impl TrainReport {
    pub fn goal_reaches(&self) -> usize {
        self.rows.iter().filter(|r| r.reached_goal).count()
    }

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violated).count()
    }

    pub fn to_csv(&self, config_hash: &str) -> Csv {
        let mut csv = Csv::new(
            config_hash,
            &[
                "episode",
                "return",
                "normalized_return",
                "reached_goal",
                "violated",
                "forget_event",
                "safe_set_area",
            ],
        );
        for r in &self.rows {
            csv.row(&[
                r.episode.to_string(),
                fmt_f64(r.ret),
                fmt_f64(r.normalized),
                (r.reached_goal as u8).to_string(),
                (r.violated as u8).to_string(),
                (r.forgot as u8).to_string(),
                fmt_f64(r.safe_area),
            ]);
        }
        csv
    }

    pub fn diags_csv(&self, config_hash: &str) -> Csv {
        let mut csv = Csv::new(
            config_hash,
            &["episode", "step", "objective", "safe_frac", "viol_frac", "feasible"],
        );
        for d in &self.diags {
            csv.row(&[
                d.episode.to_string(),
                d.step.to_string(),
                fmt_f64(d.objective),
                fmt_f64(d.safe_frac),
                fmt_f64(d.viol_frac),
                (d.feasible as u8).to_string(),
            ]);
        }
        csv
    }
}

/// Online-loop parameters beyond the planner's own.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub episodes: usize,
    /// Gradient steps per model per episode.
    pub updates_per_model: usize,
    pub forget: ForgettingConfig,
    /// Heatmap export interval in episodes (0 = never).
    pub heatmap_every: usize,
    /// Checkpoint interval in episodes (0 = only final).
    pub ckpt_every: usize,
    /// Grid used for the safe-set area statistic and heatmaps.
    pub grid: (usize, usize),
    pub collect_plan_diagnostics: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            episodes: 50,
            updates_per_model: 200,
            forget: ForgettingConfig::default(),
            heatmap_every: 0,
            ckpt_every: 0,
            grid: (100, 75),
            collect_plan_diagnostics: false,
        }
    }
}

/// Run the online phase: plan, execute, store, update, forget. When
/// `out_dir` is given, the report CSV is re-flushed after every episode
/// and checkpoints/heatmaps are written at their intervals, so an aborted
/// run leaves a usable partial report behind.
#[allow(clippy::too_many_arguments)]
pub fn run_online(
    env_cfg: &EnvConfig,
    bundle: &mut ModelBundle,
    trainer: &mut BundleTrainer,
    store: &mut ReplayStore,
    cem: &CemConfig,
    online: &OnlineConfig,
    seed: u64,
    start_episode: usize,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    let mut env = Env::new(env_cfg.clone())?;
    let mut report = TrainReport::default();

    for i in 0..online.episodes {
        let episode = start_episode + i + 1;
        env.reset(derive_seed(seed, "online-reset", episode as u64));
        let mut transitions = Vec::new();
        loop {
            let t = env.t();
            let plan = cem_plan(
                bundle,
                env.state().to_array(),
                cem,
                derive_seed(seed, "plan", (episode * 10_000 + t) as u64),
            );
            if online.collect_plan_diagnostics {
                report.diags.push(PlanDiag {
                    episode,
                    step: t,
                    objective: plan.objective,
                    safe_frac: plan.safe_frac,
                    viol_frac: plan.viol_frac,
                    feasible: plan.feasible,
                });
            }
            let tr = env.step(plan.actions[0])?;
            let done = tr.done;
            transitions.push(tr);
            if done {
                break;
            }
        }
        let ep = EpisodeRecord::from_transitions(transitions, Origin::Online);
        let ret = ep.total_return;
        let normalized = normalized_return(&ep, env_cfg.horizon);
        let reached_goal = ep.reached_goal;
        let violated = ep.violated;
        store.push_online(ep);

        trainer.update_online(
            bundle,
            store.dataset(),
            online.updates_per_model,
            derive_seed(seed, "online-update", episode as u64),
        );

        let mut forgot = false;
        if online.forget.enabled && episode % online.forget.n_forget == 0 {
            forgot = store.optimistic_forget(&online.forget) > 0;
        }

        let safe_area = safe_set_area(bundle, env_cfg, online.grid);
        report.rows.push(EpisodeRow {
            episode,
            ret,
            normalized,
            reached_goal,
            violated,
            forgot,
            safe_area,
        });

        if let Some(dir) = out_dir {
            report.to_csv(&bundle.config_hash).write(&dir.join("report.csv"))?;
            if online.collect_plan_diagnostics {
                report.diags_csv(&bundle.config_hash).write(&dir.join("plan_diagnostics.csv"))?;
            }
            if online.heatmap_every > 0 && episode % online.heatmap_every == 0 {
                export_heatmaps(bundle, env_cfg, online.grid, &dir.join(format!("heatmaps_ep{episode}")))?;
            }
            if online.ckpt_every > 0 && episode % online.ckpt_every == 0 {
                checkpoint(bundle, store, env_cfg, episode, &dir.join(format!("ckpt_ep{episode}")))?;
            }
        }
    }

    // Report consistency: goal reaches in the report match episodes whose
    // final reward was zero.
    debug_assert_eq!(
        report.goal_reaches(),
        report.rows.iter().filter(|r| r.reached_goal).count()
    );
    Ok(report)
}

/// Save a resumable checkpoint: the bundle, the full store, and the
/// episode counter.
pub fn checkpoint(
    bundle: &ModelBundle,
    store: &ReplayStore,
    env_cfg: &EnvConfig,
    episode: usize,
    dir: &Path,
) -> Result<()> {
    save_bundle(bundle, dir)?;
    crate::dataset::save_dataset(
        store.dataset(),
        env_cfg.kind.id(),
        &bundle.config_hash,
        &dir.join("store.jsonl"),
    )?;
    crate::report::write_atomic(
        &dir.join("state.txt"),
        format!("episode = {episode}\nn_offline = {}\n", store.n_offline()).as_bytes(),
    )
}
