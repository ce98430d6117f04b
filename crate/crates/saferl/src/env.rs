//! The three 2D navigation tasks: SimplePointBot (velocity control),
//! Bottleneck (velocity control between two chambers), and
//! SimpleVelocityBot (acceleration control, velocity hidden from the
//! observation).
//!
//! All three share the same contract: discrete reward (0 inside the goal
//! ball, -1 elsewhere), a closed constraint region whose boundary counts
//! as a violation, and episodes that terminate on goal entry, violation,
//! or the step horizon.

use crate::dataset::{EpisodeRecord, Origin, Transition};
use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    Spb,
    Bottleneck,
    Svb,
}

impl EnvKind {
    pub fn id(&self) -> &'static str {
        match self {
            EnvKind::Spb => "spb",
            EnvKind::Bottleneck => "bottleneck",
            EnvKind::Svb => "svb",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "spb" => Ok(EnvKind::Spb),
            "bottleneck" => Ok(EnvKind::Bottleneck),
            "svb" => Ok(EnvKind::Svb),
            other => Err(Error::Config(format!("unknown environment id '{other}'"))),
        }
    }
}

/// Initial state distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartDist {
    /// Always start at `EnvConfig::start`.
    Point,
    /// Uniform over the arena minus the constraint region.
    UniformFree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub arena_w: f64,
    pub arena_h: f64,
    /// Constraint region as a union of closed rectangles.
    pub obstacles: Vec<Rect>,
    pub start: Vec2,
    pub start_dist: StartDist,
    pub goal: Vec2,
    pub goal_radius: f64,
    /// Per-component action bound (velocity for SPB/Bottleneck,
    /// acceleration for SVB).
    pub a_max: f64,
    /// Speed bound for SVB; unused by the velocity-controlled tasks.
    pub v_max: f64,
    pub horizon: usize,
    pub noise_std: f64,
}

impl EnvConfig {
    /// Canonical task geometry selected by string id.
    pub fn named(id: &str) -> Result<EnvConfig> {
        let kind = EnvKind::from_id(id)?;
        let cfg = match kind {
            EnvKind::Spb => EnvConfig {
                kind,
                arena_w: 100.0,
                arena_h: 75.0,
                obstacles: vec![Rect::new(30.0, 25.0, 70.0, 50.0)],
                start: Vec2::new(10.0, 37.5),
                start_dist: StartDist::Point,
                goal: Vec2::new(90.0, 37.5),
                goal_radius: 3.0,
                a_max: 1.0,
                v_max: 0.0,
                horizon: 100,
                noise_std: 0.0,
            },
            EnvKind::Bottleneck => EnvConfig {
                kind,
                arena_w: 100.0,
                arena_h: 75.0,
                // Two chambers joined by a corridor; the walls above and
                // below the corridor are the constraint region.
                obstacles: vec![
                    Rect::new(40.0, 0.0, 60.0, 32.0),
                    Rect::new(40.0, 43.0, 60.0, 75.0),
                ],
                start: Vec2::new(10.0, 37.5),
                start_dist: StartDist::Point,
                goal: Vec2::new(90.0, 37.5),
                goal_radius: 3.0,
                a_max: 1.0,
                v_max: 0.0,
                horizon: 100,
                noise_std: 0.0,
            },
            EnvKind::Svb => EnvConfig {
                kind,
                arena_w: 100.0,
                arena_h: 75.0,
                obstacles: vec![Rect::new(30.0, 25.0, 70.0, 50.0)],
                start: Vec2::new(10.0, 37.5),
                start_dist: StartDist::Point,
                goal: Vec2::new(90.0, 37.5),
                goal_radius: 3.0,
                a_max: 0.5,
                v_max: 3.0,
                horizon: 100,
                noise_std: 0.0,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arena(&self) -> Rect {
        Rect::new(0.0, 0.0, self.arena_w, self.arena_h)
    }

    pub fn in_constraint(&self, s: Vec2) -> bool {
        self.obstacles.iter().any(|r| r.contains(s))
    }

    pub fn in_goal(&self, s: Vec2) -> bool {
        s.dist(self.goal) <= self.goal_radius
    }

    /// Discrete reward: 0 inside the goal ball (boundary inclusive), -1
    /// everywhere else.
    pub fn reward(&self, s_next: Vec2) -> f64 {
        if self.in_goal(s_next) {
            0.0
        } else {
            -1.0
        }
    }

    /// Euclidean distance from a point to the constraint region.
    pub fn constraint_distance(&self, p: Vec2) -> f64 {
        self.obstacles
            .iter()
            .map(|r| {
                let dx = (r.x0 - p.x).max(0.0).max(p.x - r.x1);
                let dy = (r.y0 - p.y).max(0.0).max(p.y - r.y1);
                dx.hypot(dy)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.goal_radius > 0.0) {
            return Err(Error::Config("goal_radius must be positive".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Config("a_max must be positive".into()));
        }
        if self.kind == EnvKind::Svb && !(self.v_max > 0.0) {
            return Err(Error::Config("svb requires a positive v_max".into()));
        }
        if self.constraint_distance(self.goal) <= self.goal_radius {
            return Err(Error::Config(
                "goal ball intersects the constraint region".into(),
            ));
        }
        if self.in_constraint(self.start) {
            return Err(Error::Config("start state lies in the constraint region".into()));
        }
        if !self.arena().contains(self.start) || !self.arena().contains(self.goal) {
            return Err(Error::Config("start/goal must lie inside the arena".into()));
        }
        Ok(())
    }
}

/// One environment instance. Holds the full internal state (position,
/// hidden velocity for SVB, step counter, noise stream); observations
/// expose position only.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    state: Vec2,
    vel: Vec2,
    t: usize,
    skill: Option<usize>,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Env> {
        cfg.validate()?;
        let start = cfg.start;
        Ok(Env {
            cfg,
            state: start,
            vel: Vec2::ZERO,
            t: 0,
            skill: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> Vec2 {
        self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Tag subsequent transitions with a skill index (unsupervised phase).
    pub fn set_skill(&mut self, skill: Option<usize>) {
        self.skill = skill;
    }

    /// Sample the initial state. The same seed always yields the same
    /// state and the same downstream noise stream.
    pub fn reset(&mut self, seed: u64) -> Vec2 {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.vel = Vec2::ZERO;
        self.state = match self.cfg.start_dist {
            StartDist::Point => self.cfg.start,
            StartDist::UniformFree => loop {
                let p = Vec2::new(
                    self.rng.gen_range(0.0..self.cfg.arena_w),
                    self.rng.gen_range(0.0..self.cfg.arena_h),
                );
                if !self.cfg.in_constraint(p) {
                    break p;
                }
            },
        };
        self.state
    }

    /// Advance one step. Actions are clipped componentwise to the action
    /// bound; non-finite actions are rejected.
    pub fn step(&mut self, action: [f64; 2]) -> Result<Transition> {
        let a = Vec2::from_array(action);
        if !a.is_finite() {
            return Err(Error::MalformedInput(format!(
                "action must be finite, got [{}, {}]",
                action[0], action[1]
            )));
        }
        let a = a.clamp_components(self.cfg.a_max);
        let prev = self.state;

        let mut next = match self.cfg.kind {
            EnvKind::Spb | EnvKind::Bottleneck => prev + a,
            EnvKind::Svb => {
                self.vel = (self.vel + a).clamp_norm(self.cfg.v_max);
                prev + self.vel
            }
        };
        if self.cfg.noise_std > 0.0 {
            let d = rand_distr::Normal::new(0.0, self.cfg.noise_std)
                .expect("noise_std checked finite");
            next = next + Vec2::new(self.rng.sample(d), self.rng.sample(d));
        }
        next = self.cfg.arena().clamp_point(next);

        self.t += 1;
        let r = self.cfg.reward(next);
        let c = self.cfg.in_constraint(next);
        let in_goal = self.cfg.in_goal(next);
        // Config validation keeps the goal ball and constraint region
        // disjoint; this must hold for every emitted transition.
        debug_assert!(!(in_goal && c), "state both in-goal and in-constraint");
        let done = in_goal || c || self.t >= self.cfg.horizon;
        self.state = next;

        Ok(Transition {
            s: prev.to_array(),
            a: a.to_array(),
            r,
            s_next: next.to_array(),
            c,
            done,
            skill: self.skill,
        })
    }
}

/// Fraction of the horizon left unused: `(T + total_return) / T`.
/// 1 means the goal was hit on the first step, 0 means it was never hit.
pub fn normalized_return(ep: &EpisodeRecord, horizon: usize) -> f64 {
    (horizon as f64 + ep.total_return) / horizon as f64
}

/// Run one episode under `policy`, which maps (step index, observed
/// state) to an action.
pub fn rollout<F>(env: &mut Env, seed: u64, origin: Origin, mut policy: F) -> Result<EpisodeRecord>
where
    F: FnMut(usize, Vec2) -> [f64; 2],
{
    env.reset(seed);
    let mut transitions = Vec::new();
    loop {
        let a = policy(env.t(), env.state());
        let tr = env.step(a)?;
        let done = tr.done;
        transitions.push(tr);
        if done {
            break;
        }
    }
    Ok(EpisodeRecord::from_transitions(transitions, origin))
}
