//! Property suites that back the safety claims: worst-case checks of the
//! separation formulas, recursive feasibility of the AV planner, fidelity of
//! the closed-form motion update, and batch simulations with the always-on
//! monitor.
//!
//! Everything here is deterministic given its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::av_planner::{plan, PlanError, PlannerConfig, ReferenceMotion, ReferenceObject, ReferenceTarget};
use crate::geometry::{build_intersection, IntersectionModel, IntersectionSpec, PathGeometry, Pose, Turn};
use crate::hv_driver::HvMode;
use crate::kinematics::{stopping_distance, unicycle_rk4, unicycle_step};
use crate::params::Params;
use crate::scenario::Scenario;
use crate::separation::{s_hv, s_star, FollowContext, LeadKind, OwnLimit, SeparationParams};
use crate::sim_engine::trace::TraceLevel;
use crate::sim_engine::{run_on, Mutation, RunOptions, SafetyReport, SimError};

/// Gap slack allowed by the worst-case episodes.
pub const ORACLE_TOL: f64 = 1e-9;

/// A follow distance under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formula {
    /// Automated follower behind an automated lead, full AV braking.
    AvBehindAv,
    /// Automated follower behind a human-like lead, full AV braking.
    AvBehindHv,
    /// Automated follower restricted to human braking, human-like lead.
    HvLimitedBehindHv,
    /// Automated follower restricted to human braking, automated lead.
    HvLimitedBehindAv,
    /// Human driver behind any lead.
    HumanFollow,
}

impl Formula {
    pub const ALL: [Formula; 5] = [
        Formula::AvBehindAv,
        Formula::AvBehindHv,
        Formula::HvLimitedBehindHv,
        Formula::HvLimitedBehindAv,
        Formula::HumanFollow,
    ];

    fn context(self) -> Option<FollowContext> {
        match self {
            Formula::AvBehindAv => Some(FollowContext::new(LeadKind::Av, OwnLimit::AvLimited)),
            Formula::AvBehindHv => Some(FollowContext::new(LeadKind::HvLike, OwnLimit::AvLimited)),
            Formula::HvLimitedBehindHv => Some(FollowContext::new(LeadKind::HvLike, OwnLimit::HvLimited)),
            Formula::HvLimitedBehindAv => Some(FollowContext::new(LeadKind::Av, OwnLimit::HvLimited)),
            Formula::HumanFollow => None,
        }
    }

    /// Required gap for follower speed `v` and lead speed `u`.
    pub fn required(self, v: f64, u: f64, sep: &SeparationParams) -> f64 {
        match self.context() {
            Some(ctx) => s_star(ctx, v, u, sep),
            None => s_hv(v, u, sep),
        }
    }
}

/// Speed profile of one party in a braking episode.
#[derive(Clone, Copy, Debug)]
enum Profile {
    /// Holds `v` until `react`, then one speed per slot, each `|brake|·h`
    /// lower than the one before.
    Slots { v: f64, react: f64, brake: f64 },
    /// Holds `v` until `react`, then brakes continuously.
    Continuous { v: f64, react: f64, brake: f64 },
}

impl Profile {
    fn speed(self, t: f64, h: f64) -> f64 {
        match self {
            Profile::Slots { v, react, .. } | Profile::Continuous { v, react, .. } if t < react => v,
            Profile::Slots { v, react, brake } => {
                let k = ((t - react) / h + 1e-9).floor() + 1.0;
                (v + k * brake * h).max(0.0)
            }
            Profile::Continuous { v, react, brake } => (v + brake * (t - react)).max(0.0),
        }
    }

    /// First time after `t` at which the speed law changes form.
    fn next_event(self, t: f64, h: f64) -> f64 {
        let (v, react, brake) = match self {
            Profile::Slots { v, react, brake } | Profile::Continuous { v, react, brake } => (v, react, brake),
        };
        if t < react - 1e-12 {
            return react;
        }
        match self {
            Profile::Slots { .. } => {
                let k = ((t - react) / h + 1e-9).floor() + 1.0;
                react + k * h
            }
            Profile::Continuous { .. } => {
                let stop = react + v / -brake;
                if stop > t + 1e-12 {
                    stop
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn stopped_for_good(self, t: f64, h: f64) -> bool {
        self.speed(t, h) == 0.0
            && !matches!(self, Profile::Slots { react, .. } | Profile::Continuous { react, .. } if t < react)
    }
}

/// Smallest gap reached when `lead` and `follower` start `gap` apart and
/// both follow their profiles until standstill. Exact: speeds are piecewise
/// affine, so the gap is minimised at a breakpoint or where the speeds meet.
fn min_gap(gap: f64, lead: Profile, follower: Profile, h: f64) -> f64 {
    let (mut t, mut g, mut lowest) = (0.0_f64, gap, gap);
    for _ in 0..100_000 {
        if lead.stopped_for_good(t, h) && follower.stopped_for_good(t, h) {
            break;
        }
        let t1 = lead.next_event(t, h).min(follower.next_event(t, h));
        let dt = t1 - t;
        // Relative speed is affine inside the interval; recover it from the
        // midpoint and the slope between the quarter points.
        let rel = |s: f64| lead.speed(s, h) - follower.speed(s, h);
        let (q1, q3) = (t + 0.25 * dt, t + 0.75 * dt);
        let slope = (rel(q3) - rel(q1)) / (0.5 * dt);
        let r0 = rel(t + 0.5 * dt) - slope * 0.5 * dt;
        let gap_at = |tau: f64| g + r0 * tau + 0.5 * slope * tau * tau;
        if slope > 0.0 {
            let tau = -r0 / slope;
            if tau > 0.0 && tau < dt {
                lowest = lowest.min(gap_at(tau));
            }
        }
        g = gap_at(dt);
        lowest = lowest.min(g);
        t = t1;
    }
    lowest
}

/// Worst-case braking episode for one formula: the follower starts exactly at
/// the required gap, the lead brakes as hard as its kind allows from the
/// lowest speed consistent with its sample, and the follower holds its speed
/// through its response time before braking at its own limit.
pub fn worst_case_min_gap(formula: Formula, v: f64, u: f64, sep: &SeparationParams) -> f64 {
    let h = sep.h;
    let gap = formula.required(v, u, sep);
    let hv_lead = Profile::Continuous { v: (u + sep.a_min_hv * h).max(0.0), react: 0.0, brake: sep.a_min_hv };
    let (lead, follower) = match formula {
        Formula::AvBehindAv => (
            Profile::Slots { v: u, react: 0.0, brake: sep.a_min_av },
            Profile::Slots { v, react: 0.0, brake: sep.a_min_av },
        ),
        Formula::AvBehindHv => (hv_lead, Profile::Slots { v, react: 0.0, brake: sep.a_min_av }),
        Formula::HvLimitedBehindHv => (hv_lead, Profile::Slots { v, react: sep.t_r_hv, brake: sep.a_min_hv }),
        Formula::HvLimitedBehindAv => (
            Profile::Slots { v: u, react: 0.0, brake: sep.a_min_av },
            Profile::Slots { v, react: sep.t_r_hv, brake: sep.a_min_hv },
        ),
        Formula::HumanFollow => (
            Profile::Continuous { v: u, react: 0.0, brake: sep.a_min_hv },
            Profile::Continuous { v, react: sep.t_r_hv, brake: sep.a_min_hv },
        ),
    };
    min_gap(gap, lead, follower, h)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OracleReport {
    pub formula: Formula,
    pub episodes: usize,
    pub min_gap: f64,
    /// Speeds (follower, lead) of the tightest episode.
    pub worst: (f64, f64),
    pub passed: bool,
}

/// Run `episodes` random worst-case episodes for `formula`.
pub fn separation_oracle(formula: Formula, episodes: usize, sep: &SeparationParams, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport { formula, episodes, min_gap: f64::INFINITY, worst: (0.0, 0.0), passed: true };
    for i in 0..episodes {
        // Always include the corner cases.
        let (v, u) = match i {
            0 => (sep.v_max, 0.0),
            1 => (sep.v_max, sep.v_max),
            2 => (0.0, 0.0),
            _ => (rng.random_range(0.0..=sep.v_max), rng.random_range(0.0..=sep.v_max)),
        };
        let g = worst_case_min_gap(formula, v, u, sep);
        if g < report.min_gap {
            report.min_gap = g;
            report.worst = (v, u);
        }
    }
    report.passed = report.min_gap >= sep.s_min - ORACLE_TOL;
    report
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct FeasibilityReport {
    pub states: usize,
    /// States whose successor had no feasible braking sequence.
    pub failures: usize,
    /// Random draws discarded because the starting state was already unsafe.
    pub rejected: usize,
}

/// A straight path of the default junction; the planner only reads its
/// curvature.
fn straight_path(params: &Params) -> PathGeometry {
    let model = build_intersection(&IntersectionSpec::four_way(), params).expect("default junction is valid");
    model.paths.into_iter().find(|p| p.turn == Turn::Straight).expect("default junction has a straight path")
}

/// Draw a random planning situation with a feasible starting state.
fn random_situation(
    rng: &mut ChaCha8Rng,
    params: &Params,
    sep: &SeparationParams,
    cfg: &PlannerConfig,
    path: &PathGeometry,
) -> Option<(Vec<ReferenceObject>, f64, f64)> {
    let v_max = params.v_max;
    let v_now = rng.random_range(0.0..=v_max);
    let hv_limited = rng.random_bool(0.5);
    let own = if hv_limited { OwnLimit::HvLimited } else { OwnLimit::AvLimited };
    let brake = if hv_limited { params.a_min_hv } else { params.a_min_av };
    let mut refs = Vec::new();
    match rng.random_range(0..4) {
        0 => {}
        1 => {
            let u = rng.random_range(0.0..=v_max);
            let lead_brake = if rng.random_bool(0.5) { params.a_min_av } else { params.a_min_hv };
            let lead = if lead_brake == params.a_min_av { LeadKind::Av } else { LeadKind::HvLike };
            refs.push(ReferenceObject {
                target: ReferenceTarget::Vehicle(1),
                gap: rng.random_range(0.0..100.0),
                ctx: FollowContext::new(lead, own),
                motion: ReferenceMotion::Slots { u, brake: lead_brake },
            });
        }
        2 => {
            let w = rng.random_range(0.0..=v_max);
            refs.push(ReferenceObject {
                target: ReferenceTarget::Vehicle(1),
                gap: rng.random_range(0.0..100.0),
                ctx: FollowContext::new(LeadKind::HvLike, own),
                motion: ReferenceMotion::Continuous { w, brake: params.a_min_hv },
            });
        }
        _ => {}
    }
    if rng.random_bool(0.5) {
        refs.push(ReferenceObject {
            target: ReferenceTarget::StopLine,
            gap: rng.random_range(0.0..100.0),
            ctx: FollowContext::new(LeadKind::Av, own),
            motion: ReferenceMotion::Fixed,
        });
    }
    match plan(&refs, v_now, brake, path, 0.0, params, sep, cfg) {
        Ok(_) => Some((refs, v_now, brake)),
        Err(PlanError::InfeasibleState { .. }) => None,
    }
}

/// Distance and final speed of a human lead holding acceleration `a` for `h`
/// seconds from `w`, clamped to `[0, v_max]`.
fn hv_slot_motion(w: f64, a: f64, h: f64, v_max: f64) -> (f64, f64) {
    let limit = if a < 0.0 { 0.0 } else { v_max };
    let reach = if a == 0.0 { f64::INFINITY } else { (limit - w) / a };
    if reach >= h {
        (w * h + 0.5 * a * h * h, w + a * h)
    } else {
        (w * reach + 0.5 * a * reach * reach + limit * (h - reach), limit)
    }
}

/// Recursive feasibility of the planner: from random safe states, execute
/// the first planned speed while every reference moves within its limits
/// (worst case half of the time, random otherwise), then require that
/// maximal braking is still a feasible plan.
pub fn planner_feasibility(states: usize, params: &Params, cfg: &PlannerConfig, seed: u64) -> FeasibilityReport {
    let sep = SeparationParams::from(params);
    let path = straight_path(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FeasibilityReport::default();
    let h = params.h;
    while report.states < states {
        let Some((refs, v_now, brake)) = random_situation(&mut rng, params, &sep, cfg, &path) else {
            report.rejected += 1;
            continue;
        };
        report.states += 1;
        let result = plan(&refs, v_now, brake, &path, 0.0, params, &sep, cfg).expect("feasible start");
        let v1 = result.speeds[0];
        let worst = rng.random_bool(0.5);
        let next: Vec<ReferenceObject> = refs
            .iter()
            .map(|r| {
                let (moved, motion) = match r.motion {
                    ReferenceMotion::Slots { u, brake } => {
                        let lo = (u + brake * h).max(0.0);
                        let hi = (u + params.a_max * h).min(params.v_max).max(lo);
                        let u1 = if worst { lo } else { rng.random_range(lo..=hi) };
                        (u1 * h, ReferenceMotion::Slots { u: u1, brake })
                    }
                    ReferenceMotion::Continuous { w, brake } => {
                        let a = if worst { brake } else { rng.random_range(brake..=params.a_max) };
                        let (d, w1) = hv_slot_motion(w, a, h, params.v_max);
                        (d, ReferenceMotion::Continuous { w: w1, brake })
                    }
                    ReferenceMotion::Fixed => (0.0, ReferenceMotion::Fixed),
                };
                ReferenceObject { gap: r.gap + moved - v1 * h, motion, ..*r }
            })
            .collect();
        if plan(&next, v1, brake, &path, v1 * h, params, &sep, cfg).is_err() {
            report.failures += 1;
        }
    }
    report
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct KinematicsReport {
    pub samples: usize,
    /// Largest position difference between the closed form and RK4.
    pub max_rk4_error: f64,
    /// Largest jump between a tiny yaw rate and exactly zero.
    pub max_continuity_error: f64,
}

/// Compare the closed-form slot update with fine RK4 integration.
pub fn kinematics_fidelity(samples: usize, params: &Params, seed: u64) -> KinematicsReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = KinematicsReport { samples, ..Default::default() };
    let omega_max = params.v_max / params.rho_min;
    for _ in 0..samples {
        let pose = Pose {
            x: rng.random_range(-100.0..100.0),
            y: rng.random_range(-100.0..100.0),
            theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let v = rng.random_range(0.0..=params.v_max);
        let omega = rng.random_range(-omega_max..=omega_max);
        let exact = unicycle_step(pose, v, omega, params.h);
        let numeric = unicycle_rk4(pose, v, omega, params.h, 200);
        report.max_rk4_error = report.max_rk4_error.max(exact.point().distance(numeric.point()));

        let straight = unicycle_step(pose, v, 0.0, params.h);
        for tiny in [1e-9, -1e-9, 1e-12] {
            report.max_continuity_error = report
                .max_continuity_error
                .max(unicycle_step(pose, v, tiny, params.h).point().distance(straight.point()));
        }
    }
    report
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityReport {
    /// Largest deviation over the moving speeds of the grid.
    pub max_error_moving: f64,
    /// Deviation at standstill, where the follow distance collapses to the
    /// bumper margin because the closing-speed indicator is off.
    pub error_at_rest: f64,
}

/// Compare the AV-behind-AV distance with a stopped lead against the
/// classical stopping distance plus one slot at speed, over `grid + 1`
/// evenly spaced speeds.
pub fn stopped_lead_identity(params: &Params, grid: usize) -> IdentityReport {
    let sep = SeparationParams::from(params);
    let ctx = FollowContext::new(LeadKind::Av, OwnLimit::AvLimited);
    let error = |v: f64| {
        let lhs = s_star(ctx, v, 0.0, &sep) - sep.s_min;
        let rhs = stopping_distance(v, params.a_min_av) + v * params.h - params.a_min_av * params.h * params.h / 2.0;
        (lhs - rhs).abs()
    };
    IdentityReport {
        max_error_moving: (1..=grid).map(|i| error(params.v_max * i as f64 / grid as f64)).fold(0.0, f64::max),
        error_at_rest: error(0.0),
    }
}

/// The randomized safety batch: every combination of arrival rate, human
/// share, driver mode and seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchConfig {
    /// Arrivals per second on each path; the largest saturates the junction.
    pub rates: Vec<f64>,
    pub hv_fractions: Vec<f64>,
    pub modes: Vec<HvMode>,
    pub seeds: Vec<u64>,
    pub horizon: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.005, 0.01, 0.02, 0.035, 0.05],
            hv_fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            modes: HvMode::ALL.to_vec(),
            seeds: (0..7).collect(),
            horizon: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub rate: f64,
    pub hv_fraction: f64,
    pub mode: HvMode,
    pub seed: u64,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rate={} hv={} mode={:?} seed={}", self.rate, self.hv_fraction, self.mode, self.seed)
    }
}

impl BatchConfig {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &rate in &self.rates {
            for &hv_fraction in &self.hv_fractions {
                for &mode in &self.modes {
                    for &seed in &self.seeds {
                        out.push(Cell { rate, hv_fraction, mode, seed });
                    }
                }
            }
        }
        out
    }

    pub fn scenario(&self, cell: &Cell) -> Scenario {
        Scenario::poisson(cell.rate, cell.hv_fraction, cell.mode, self.horizon)
    }
}

/// Outcome of one batch cell.
#[derive(Clone, Debug, Serialize)]
pub struct CellOutcome {
    pub cell: Cell,
    pub report: SafetyReport,
    /// Run-fatal diagnostic, if the run aborted.
    pub fatal: Option<String>,
}

impl CellOutcome {
    pub fn is_safe(&self) -> bool {
        self.fatal.is_none() && self.report.is_safe()
    }
}

/// Run one batch cell with the given options.
pub fn run_cell(config: &BatchConfig, model: &IntersectionModel, cell: &Cell, opts: RunOptions) -> CellOutcome {
    let scenario = config.scenario(cell);
    match run_on(&scenario, model.clone(), cell.seed, opts) {
        Ok(out) => CellOutcome { cell: *cell, report: out.report, fatal: None },
        Err(e) => CellOutcome {
            cell: *cell,
            report: e.partial().map(|p| p.report.clone()).unwrap_or_default(),
            fatal: Some(e.to_string()),
        },
    }
}

/// Junction shared by every cell of a batch (all use the default layout).
pub fn batch_model(config: &BatchConfig) -> IntersectionModel {
    let probe = Cell { rate: 0.0, hv_fraction: 0.0, mode: HvMode::Nominal, seed: 0 };
    config.scenario(&probe).validate().expect("default junction is valid")
}

/// Run every cell of the batch with tracing off.
pub fn run_batch(config: &BatchConfig) -> Vec<CellOutcome> {
    let model = batch_model(config);
    let opts = RunOptions { trace: TraceLevel::Off, ..Default::default() };
    config.cells().iter().map(|cell| run_cell(config, &model, cell, opts)).collect()
}

/// Run the batch with `mutation` applied until the monitor flags something.
/// Returns the first cell whose run was not safe, if any.
pub fn find_mutation_violation(config: &BatchConfig, mutation: Mutation) -> Option<CellOutcome> {
    let model = batch_model(config);
    let opts = RunOptions { trace: TraceLevel::Off, stop_at_first_violation: true, mutation: Some(mutation) };
    // Dense traffic exposes weakened rules soonest, so try it first.
    let mut cells = config.cells();
    cells.sort_by(|a, b| b.rate.total_cmp(&a.rate));
    cells.iter().map(|cell| run_cell(config, &model, cell, opts)).find(|o| !o.is_safe())
}

/// Whether two full-trace runs of the same scenario and seed serialize to the
/// same bytes.
pub fn is_deterministic(scenario: &Scenario, seed: u64) -> Result<bool, SimError> {
    let opts = RunOptions { trace: TraceLevel::Full, ..Default::default() };
    let first = crate::sim_engine::run(scenario, seed, opts)?.trace.to_jsonl();
    let second = crate::sim_engine::run(scenario, seed, opts)?.trace.to_jsonl();
    Ok(first == second)
}
