//! Hand-designed demonstration controllers and batch dataset generation.
//!
//! SPB and Bottleneck use waypoint-schedule controllers (target point per
//! time window, proportional clipped action). SVB is acceleration
//! controlled, so it navigates waypoint legs with a track-to-point /
//! fly-by-point guidance law and a gain-scheduled PID on velocity error.

use crate::config::derive_seed;
use crate::dataset::{Dataset, EpisodeRecord, Origin};
use crate::env::{Env, EnvConfig, EnvKind, rollout};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Waypoint set (s_0, s_1, s_2, s_g) plus the index of the leg currently
/// being flown.
#[derive(Debug, Clone)]
pub struct WaypointPlan {
    pub points: Vec<Vec2>,
    pub goal_index: usize,
}

impl WaypointPlan {
    pub fn new(points: Vec<Vec2>) -> Result<WaypointPlan> {
        for w in points.windows(2) {
            if w[0].dist(w[1]) < 1e-9 {
                return Err(Error::Geometry("consecutive waypoints coincide".into()));
            }
        }
        Ok(WaypointPlan { points, goal_index: 0 })
    }

    fn triple(&self, i: usize) -> Option<(Vec2, Vec2, Vec2)> {
        if i + 2 < self.points.len() {
            Some((self.points[i], self.points[i + 1], self.points[i + 2]))
        } else {
            None
        }
    }
}

/// Default intermediate waypoints for each task's canonical geometry.
///
/// SPB's clipped-difference action moves diagonally at (±1, ±1) until one
/// component's residual shrinks, so the final leg must start east of the
/// block. SVB's fly-by turns are placed at right angles, where the fillet
/// entry/exit law is exact.
pub fn default_waypoints(cfg: &EnvConfig) -> (Vec2, Vec2) {
    match cfg.kind {
        // Over the top of the block, dropping down its east side.
        EnvKind::Spb => (Vec2::new(30.0, 65.0), Vec2::new(70.0, 65.0)),
        EnvKind::Svb => (Vec2::new(10.0, 65.0), Vec2::new(90.0, 65.0)),
        // Straight down the corridor.
        EnvKind::Bottleneck => (Vec2::new(30.0, 37.5), Vec2::new(60.0, 37.5)),
    }
}

/// Goal-reaching waypoint schedule: target s_1 before step 20, s_2 before
/// step 60, then the goal. The action is the clipped difference to the
/// target, which preserves direction.
pub fn spb_goal_action(t: usize, s: Vec2, plan: &WaypointPlan, a_max: f64) -> [f64; 2] {
    let target = if t < 20 {
        plan.points[1]
    } else if t < 60 {
        plan.points[2]
    } else {
        *plan.points.last().unwrap()
    };
    (target - s).clamp_components(a_max).to_array()
}

/// Constraint-violating schedule: head for a random free point s_d, then
/// turn into the constraint center.
pub fn spb_constraint_action(t: usize, s: Vec2, s_d: Vec2, s_c: Vec2, a_max: f64) -> [f64; 2] {
    let target = if t < 15 { s_d } else { s_c };
    (target - s).clamp_components(a_max).to_array()
}

/// PID state acting on one velocity-error component.
#[derive(Debug, Clone)]
pub struct PidState {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    integral: f64,
    prev_error: f64,
}

impl PidState {
    pub fn new(k_p: f64, k_i: f64, k_d: f64) -> PidState {
        PidState { k_p, k_i, k_d, integral: 0.0, prev_error: 0.0 }
    }

    /// One PID evaluation: K_p e + K_i * integral(e) + K_d * de/dt.
    /// The accumulator is updated before the output is formed.
    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        assert!(dt > 0.0, "pid requires a positive time step");
        // Anti-windup clamp: saturated actuators would otherwise grow the
        // accumulator without bound.
        self.integral = (self.integral + e * dt).clamp(-20.0, 20.0);
        let derivative = (e - self.prev_error) / dt;
        self.prev_error = e;
        self.k_p * e + self.k_i * self.integral + self.k_d * derivative
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
    }
}

/// Navigation modes for an acceleration-controlled agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavMode {
    TrackToPoint,
    FlyByPoint,
    GoalCapture,
}

/// Track angles of the two legs around waypoint b and the signed turn
/// angle between them, wrapped to (-pi, pi].
pub fn turn_geometry(a: Vec2, b: Vec2, c: Vec2) -> Result<(f64, f64, f64)> {
    let leg_in = (b - a)
        .unit()
        .ok_or_else(|| Error::Geometry("coincident waypoints a, b".into()))?;
    let leg_out = (c - b)
        .unit()
        .ok_or_else(|| Error::Geometry("coincident waypoints b, c".into()))?;
    let theta_in = leg_in.angle();
    let theta_out = leg_out.angle();
    Ok((theta_in, theta_out, wrap_angle(theta_out - theta_in)))
}

/// Signed progress past the plane through `z` with normal `q`: negative on
/// approach, zero on the plane, positive once crossed.
pub fn plane_progress(s: Vec2, z: Vec2, q: Vec2) -> f64 {
    (s - z).dot(q)
}

const NO_TURN: f64 = 1e-9;

/// Entry point of the fillet on leg a->b: the mode-switch plane for
/// track-to-point. A straight-through turn keeps the plane at b itself.
pub fn turn_entry_point(a: Vec2, b: Vec2, c: Vec2, r: f64) -> Result<Vec2> {
    let (_, _, phi) = turn_geometry(a, b, c)?;
    let q = (b - a).unit().expect("checked by turn_geometry");
    let half = (phi.abs() / 2.0).tan();
    if half.abs() < NO_TURN {
        Ok(b)
    } else {
        Ok(b - q * (r / half))
    }
}

/// Track a straight line toward waypoint b of the leg a->b (turn
/// continuing to c). Returns the demanded heading and whether the entry
/// plane of the turn has been crossed.
pub fn track_to_point(s: Vec2, a: Vec2, b: Vec2, c: Vec2, r: f64) -> Result<(f64, bool)> {
    let (theta_in, _, _) = turn_geometry(a, b, c)?;
    let q = (b - a).unit().expect("checked by turn_geometry");
    let z = turn_entry_point(a, b, c, r)?;
    let switch = plane_progress(s, z, q) > 0.0;

    let d_obj = s.dist(b);
    let heading = if d_obj < 1e-9 {
        theta_in
    } else {
        let beta = (b - s).angle();
        let d_track = a.dist(b);
        let off_track = wrap_angle(beta - theta_in);
        wrap_angle(d_track * off_track / (2.0 * d_obj) + theta_in)
    };
    Ok((heading, switch))
}

/// Fillet geometry for the turn at waypoint b: circle center, exit point
/// on the outgoing leg, and the signed turn angle.
pub fn fillet(a: Vec2, b: Vec2, c: Vec2, r: f64) -> Result<(Vec2, Vec2, f64)> {
    let (_, _, psi) = turn_geometry(a, b, c)?;
    if psi.abs() < NO_TURN {
        return Err(Error::Geometry("no fillet for a straight-through turn".into()));
    }
    let q0 = (b - a).unit().unwrap();
    let q1 = (c - b).unit().unwrap();
    let bisector = (q1 - q0)
        .unit()
        .ok_or_else(|| Error::Geometry("legs are parallel; no fillet bisector".into()))?;
    let center = b + bisector * (r / (psi.abs() / 2.0).sin());
    let exit = b + q1 * (r / (psi.abs() / 2.0).tan());
    Ok((center, exit, psi))
}

/// Orbit the turn fillet at constant radius. Returns the demanded heading
/// and whether the exit plane has been crossed.
pub fn fly_by_point(s: Vec2, a: Vec2, b: Vec2, c: Vec2, r: f64, k_orbit: f64) -> Result<(f64, bool)> {
    let (center, exit, psi) = fillet(a, b, c, r)?;
    let q1 = (c - b).unit().unwrap();
    let switch = plane_progress(s, exit, q1) > 0.0;

    let rel = s - center;
    let gamma = rel.angle();
    let e_t = (rel.norm() - r) / r;
    // Orbit counterclockwise for left turns, clockwise for right turns.
    // The arctan term rotates the tangent heading toward the circle when
    // the radius error is nonzero: inward when outside, outward when
    // inside.
    let dir = if psi >= 0.0 { 1.0 } else { -1.0 };
    let heading = wrap_angle(gamma + dir * (std::f64::consts::FRAC_PI_2 + (k_orbit * e_t).atan()));
    Ok((heading, switch))
}

/// Demanded approach speed toward the goal: quadratic far out, constant
/// on approach, zero inside the capture zone.
pub fn goal_capture_speed(d_goal: f64) -> f64 {
    assert!(d_goal >= 0.0);
    if d_goal > 20.0 {
        0.075 * d_goal * d_goal
    } else if d_goal < 10.0 {
        0.0
    } else {
        3.0
    }
}

/// Table of PID gains per route segment.
#[derive(Debug, Clone, Copy)]
pub struct GainSchedule {
    /// Gains flown from s_0 until the goal-capture handoff at s_2.
    pub enroute: (f64, f64, f64),
    /// Gains for the final s_2 -> s_g segment.
    pub capture: (f64, f64, f64),
}

impl Default for GainSchedule {
    fn default() -> Self {
        GainSchedule { enroute: (5.0, 0.05, 0.0), capture: (5.0, 0.5, 4.0) }
    }
}

/// Waypoint navigator for the acceleration-controlled task. Velocity is
/// not observed, so it is estimated from consecutive positions.
#[derive(Debug, Clone)]
pub struct SvbController {
    plan: WaypointPlan,
    mode: NavMode,
    radius: f64,
    k_orbit: f64,
    cruise_speed: f64,
    gains: GainSchedule,
    pid_x: PidState,
    pid_y: PidState,
    prev_pos: Option<Vec2>,
    pub last_heading: Option<f64>,
}

impl SvbController {
    pub fn new(plan: WaypointPlan, radius: f64, gains: GainSchedule) -> SvbController {
        let (k_p, k_i, k_d) = gains.enroute;
        SvbController {
            plan,
            mode: NavMode::TrackToPoint,
            radius,
            k_orbit: 4.0,
            cruise_speed: 2.5,
            gains,
            pid_x: PidState::new(k_p, k_i, k_d),
            pid_y: PidState::new(k_p, k_i, k_d),
            prev_pos: None,
            last_heading: None,
        }
    }

    pub fn for_env(cfg: &EnvConfig) -> SvbController {
        let (s1, s2) = default_waypoints(cfg);
        let plan = WaypointPlan::new(vec![cfg.start, s1, s2, cfg.goal])
            .expect("canonical waypoints are distinct");
        // The turn radius must respect the acceleration bound: the arc is
        // only flyable when cruise_speed^2 / radius stays below a_max.
        SvbController::new(plan, 20.0, GainSchedule::default())
    }

    pub fn mode(&self) -> NavMode {
        self.mode
    }

    fn enter_capture(&mut self) {
        self.mode = NavMode::GoalCapture;
        let (k_p, k_i, k_d) = self.gains.capture;
        self.pid_x = PidState::new(k_p, k_i, k_d);
        self.pid_y = PidState::new(k_p, k_i, k_d);
    }

    fn advance_leg(&mut self) {
        self.plan.goal_index += 1;
        if self.plan.triple(self.plan.goal_index).is_none() {
            self.enter_capture();
        } else {
            self.mode = NavMode::TrackToPoint;
        }
    }

    /// Demanded heading and speed for the current position, advancing the
    /// mode state machine when a switch plane is crossed.
    fn guidance(&mut self, s: Vec2) -> (f64, f64) {
        let goal = *self.plan.points.last().unwrap();
        loop {
            match self.mode {
                NavMode::GoalCapture => {
                    let d = s.dist(goal);
                    let heading = (goal - s).angle();
                    return (heading, goal_capture_speed(d));
                }
                NavMode::TrackToPoint => {
                    let (a, b, c) = self
                        .plan
                        .triple(self.plan.goal_index)
                        .expect("track mode always has a full triple");
                    let (heading, switch) =
                        track_to_point(s, a, b, c, self.radius).expect("valid plan geometry");
                    if !switch {
                        return (heading, self.cruise_speed);
                    }
                    let (_, _, phi) = turn_geometry(a, b, c).unwrap();
                    if phi.abs() < NO_TURN {
                        // Straight through: skip the fly-by arc entirely.
                        self.advance_leg();
                    } else {
                        self.mode = NavMode::FlyByPoint;
                    }
                }
                NavMode::FlyByPoint => {
                    let (a, b, c) = self
                        .plan
                        .triple(self.plan.goal_index)
                        .expect("fly-by mode always has a full triple");
                    let (heading, switch) =
                        fly_by_point(s, a, b, c, self.radius, self.k_orbit)
                            .expect("valid plan geometry");
                    if !switch {
                        return (heading, self.cruise_speed);
                    }
                    self.advance_leg();
                }
            }
        }
    }

    /// Acceleration command for the observed position.
    pub fn action(&mut self, _t: usize, s: Vec2) -> [f64; 2] {
        let v_est = match self.prev_pos {
            Some(p) => s - p,
            None => Vec2::ZERO,
        };
        self.prev_pos = Some(s);
        let (heading, speed) = self.guidance(s);
        self.last_heading = Some(heading);
        let v_dem = Vec2::from_angle(heading) * speed;
        let e = v_dem - v_est;
        [self.pid_x.update(e.x, 1.0), self.pid_y.update(e.y, 1.0)]
    }
}

/// PID-driven constraint violator for the acceleration task: fly at a
/// random free point, then turn into the constraint center.
#[derive(Debug, Clone)]
pub struct SvbConstraintController {
    s_d: Vec2,
    s_c: Vec2,
    cruise_speed: f64,
    pid_x: PidState,
    pid_y: PidState,
    prev_pos: Option<Vec2>,
}

impl SvbConstraintController {
    pub fn new(s_d: Vec2, s_c: Vec2, gains: GainSchedule) -> SvbConstraintController {
        let (k_p, k_i, k_d) = gains.enroute;
        SvbConstraintController {
            s_d,
            s_c,
            cruise_speed: 3.0,
            pid_x: PidState::new(k_p, k_i, k_d),
            pid_y: PidState::new(k_p, k_i, k_d),
            prev_pos: None,
        }
    }

    pub fn action(&mut self, t: usize, s: Vec2) -> [f64; 2] {
        let v_est = match self.prev_pos {
            Some(p) => s - p,
            None => Vec2::ZERO,
        };
        self.prev_pos = Some(s);
        let target = if t < 15 { self.s_d } else { self.s_c };
        let to_target = target - s;
        let v_dem = match to_target.unit() {
            Some(u) => u * self.cruise_speed.min(to_target.norm()),
            None => Vec2::ZERO,
        };
        let e = v_dem - v_est;
        [self.pid_x.update(e.x, 1.0), self.pid_y.update(e.y, 1.0)]
    }
}

fn sample_free_point(cfg: &EnvConfig, rng: &mut impl Rng) -> Vec2 {
    loop {
        let p = Vec2::new(
            rng.gen_range(0.0..cfg.arena_w),
            rng.gen_range(0.0..cfg.arena_h),
        );
        if !cfg.in_constraint(p) && !cfg.in_goal(p) {
            return p;
        }
    }
}

fn constraint_center(cfg: &EnvConfig) -> Vec2 {
    cfg.obstacles[0].center()
}

/// One goal-reaching demo episode.
pub fn goal_demo(cfg: &EnvConfig, seed: u64) -> Result<EpisodeRecord> {
    let mut env = Env::new(cfg.clone())?;
    match cfg.kind {
        EnvKind::Spb | EnvKind::Bottleneck => {
            let (s1, s2) = default_waypoints(cfg);
            let plan = WaypointPlan::new(vec![cfg.start, s1, s2, cfg.goal])?;
            let a_max = cfg.a_max;
            rollout(&mut env, seed, Origin::OfflineGr, |t, s| {
                spb_goal_action(t, s, &plan, a_max)
            })
        }
        EnvKind::Svb => {
            let mut ctrl = SvbController::for_env(cfg);
            rollout(&mut env, seed, Origin::OfflineGr, |t, s| ctrl.action(t, s))
        }
    }
}

/// One constraint-violating demo episode.
pub fn constraint_demo(cfg: &EnvConfig, seed: u64) -> Result<EpisodeRecord> {
    let mut env = Env::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "cv-target", 0));
    let s_d = sample_free_point(cfg, &mut rng);
    let s_c = constraint_center(cfg);
    match cfg.kind {
        EnvKind::Spb | EnvKind::Bottleneck => {
            let a_max = cfg.a_max;
            rollout(&mut env, seed, Origin::OfflineCv, |t, s| {
                spb_constraint_action(t, s, s_d, s_c, a_max)
            })
        }
        EnvKind::Svb => {
            let mut ctrl = SvbConstraintController::new(s_d, s_c, GainSchedule::default());
            rollout(&mut env, seed, Origin::OfflineCv, |t, s| ctrl.action(t, s))
        }
    }
}

const DEMO_RETRY_FACTOR: usize = 20;

/// Generate a partitioned demo dataset: `n_gr` goal-reaching episodes and
/// `n_cv` constraint-violating episodes. Rollouts that miss their label
/// are retried with fresh seeds up to a bounded budget.
pub fn generate_demos(cfg: &EnvConfig, n_gr: usize, n_cv: usize, seed: u64) -> Result<Dataset> {
    let mut dataset = Dataset::new();
    let mut attempt = 0u64;
    let budget = (n_gr.max(1) * DEMO_RETRY_FACTOR) as u64;
    let mut collected = 0;
    while collected < n_gr {
        if attempt >= budget {
            return Err(Error::Run(format!(
                "goal-reaching demos: only {collected}/{n_gr} succeeded within {budget} attempts"
            )));
        }
        let ep = goal_demo(cfg, derive_seed(seed, "demo-gr", attempt))?;
        attempt += 1;
        if ep.reached_goal && !ep.violated {
            dataset.push(ep);
            collected += 1;
        }
    }

    let mut attempt = 0u64;
    let budget = (n_cv.max(1) * DEMO_RETRY_FACTOR) as u64;
    let mut collected = 0;
    while collected < n_cv {
        if attempt >= budget {
            return Err(Error::Run(format!(
                "constraint demos: only {collected}/{n_cv} violated within {budget} attempts"
            )));
        }
        let ep = constraint_demo(cfg, derive_seed(seed, "demo-cv", attempt))?;
        attempt += 1;
        if ep.violated {
            dataset.push(ep);
            collected += 1;
        }
    }
    Ok(dataset)
}
