//! Closed-loop simulation.
//!
//! Each slot starts with a boundary phase on a frozen snapshot of the world:
//! exited vehicles leave, arrivals enter, the manager updates the uncertain
//! set, permissions and signal colours, and every automated vehicle plans
//! and commits its speed for the slot. The slot is then advanced in
//! micro-steps in which human drivers decide and move, automated vehicles
//! hold their committed speed, and the safety monitor checks the world.

pub mod metrics;
pub mod monitor;
pub mod trace;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::av_planner::{plan, select_reference_objects, validate_plan, ReferenceTarget};
use crate::geometry::{IntersectionModel, Turn};
use crate::hv_driver::{can_follow, hv_decide, EntryControl, HvDecision, HvObservation};
use crate::intersection_manager::{
    assign_permissions, check_policy1, compute_exited, compute_uncertain, conflicting_pairs, update_signals, HvRecord,
    Light, ManagerConfig, ManagerState, Observed, PolicyViolation, Request, SignalRecord, SignalState,
};
use crate::kinematics::{advance_on_path, step_hv, Envelope, VehicleState};
use crate::params::{Params, VehicleKind};
use crate::scenario::{Arrivals, Scenario, ScenarioError};
use crate::separation::{s_hv, s_star, FollowContext, LeadKind, SeparationParams};
use crate::world::{effective_brake_limit, right_turn_clear, virtual_hv_flags, Corridor, Vehicle};

use metrics::{ExitRecord, Metrics, SlotMetrics};
use monitor::{check_av_relations, check_snapshot, Finding, OnsetFilter, Violation, ViolationKind};
use trace::{EventBody, GrantSet, Trace, TraceLevel};

/// Random sub-stream for arrivals.
const ARRIVAL_STREAM: u64 = 1;
/// Random sub-stream for human driver behaviour.
const DRIVER_STREAM: u64 = 2;

/// Speed below which a vehicle counts as stopped.
const HALT_SPEED: f64 = 0.1;

/// Deliberate defects used to show that the checks are not vacuous.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Grant permissions without checking for conflicting paths.
    NoConflictCheck,
    /// Halve the response-time coefficient of the human-lead, human-limited
    /// follow distance.
    HvHvCoefficientHalved,
    /// Multiply one follow-distance formula by `factor` (index as in
    /// [`FollowContext::formula_index`], 4 for the human driver distance).
    WeakenFormula { index: usize, factor: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub trace: TraceLevel,
    /// End the run at the first safety violation.
    pub stop_at_first_violation: bool,
    pub mutation: Option<Mutation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PermissionConflict {
    pub slot: u64,
    pub vehicles: (u64, u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Liveness {
    pub spawned: u64,
    pub exited: u64,
    /// Vehicles still on the road at the end.
    pub in_system: usize,
    /// Arrivals still waiting outside the modelled road.
    pub queued: usize,
    /// Longest time any vehicle still on the road has spent in the system.
    pub oldest_age: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SafetyReport {
    pub slots_run: u64,
    pub violations: Vec<Violation>,
    /// Slots in which permitted, planned or uncertain vehicles were on
    /// conflicting paths.
    pub permission_conflicts: Vec<PermissionConflict>,
    /// Problems in the signal colour sequence.
    pub signal_violations: Vec<PolicyViolation>,
    pub metrics: Metrics,
    pub liveness: Liveness,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty() && self.permission_conflicts.is_empty() && self.signal_violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.finding.kind == kind).count()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub trace: Trace,
    pub report: SafetyReport,
    pub slots: Vec<SlotMetrics>,
    pub signals: Vec<SignalRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FatalKind {
    InfeasibleState,
    RulesInfeasible,
    ProtocolConflict,
    InvalidPlan,
    Kinematics,
}

impl std::fmt::Display for FatalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FatalKind::InfeasibleState => "infeasible-state",
            FatalKind::RulesInfeasible => "rules-infeasible",
            FatalKind::ProtocolConflict => "protocol conflict",
            FatalKind::InvalidPlan => "invalid plan",
            FatalKind::Kinematics => "kinematics",
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("slot {slot}: {kind}: {detail}")]
    Fatal { slot: u64, kind: FatalKind, detail: String, partial: Box<RunOutput> },
}

impl SimError {
    /// Results gathered up to the failure.
    pub fn partial(&self) -> Option<&RunOutput> {
        match self {
            SimError::Fatal { partial, .. } => Some(partial),
            SimError::Scenario(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Arrival {
    kind: VehicleKind,
    speed: f64,
}

struct Fatal {
    kind: FatalKind,
    detail: String,
}

fn fatal(kind: FatalKind, detail: impl ToString) -> Fatal {
    Fatal { kind, detail: detail.to_string() }
}

/// Separation parameters with the requested defect applied.
pub fn mutated_separation(params: &Params, mutation: Option<Mutation>) -> SeparationParams {
    let mut sep = SeparationParams::from(params);
    match mutation {
        Some(Mutation::HvHvCoefficientHalved) => sep.hv_hv_h2_coefficient *= 0.5,
        Some(Mutation::WeakenFormula { index, factor }) if index < sep.scale.len() => sep.scale[index] = factor,
        _ => {}
    }
    sep
}

struct Simulation {
    scenario: Scenario,
    model: IntersectionModel,
    params: Params,
    sep: SeparationParams,
    pristine: SeparationParams,
    manager_cfg: ManagerConfig,
    opts: RunOptions,
    vehicles: Vec<Vehicle>,
    next_id: u64,
    queues: Vec<VecDeque<Arrival>>,
    manager: ManagerState,
    signals: SignalState,
    arrivals_rng: ChaCha8Rng,
    driver_rng: ChaCha8Rng,
    out: RunOutput,
    micro_filter: OnsetFilter,
    boundary_filter: OnsetFilter,
    exits: Vec<ExitRecord>,
    stops: [u64; 2],
    spawned: u64,
    slot: u64,
}

/// Simulate `scenario` with all randomness derived from `seed`.
pub fn run(scenario: &Scenario, seed: u64, opts: RunOptions) -> Result<RunOutput, SimError> {
    let model = scenario.validate()?;
    run_on(scenario, model, seed, opts)
}

/// [`run`] on a junction already built from `scenario.geometry` (building
/// the junction dominates the cost of short runs).
pub fn run_on(
    scenario: &Scenario,
    model: IntersectionModel,
    seed: u64,
    opts: RunOptions,
) -> Result<RunOutput, SimError> {
    let params = scenario.params.clone();
    let mut manager_cfg = scenario.manager;
    manager_cfg.skip_conflict_check = opts.mutation == Some(Mutation::NoConflictCheck);
    let mut arrivals_rng = ChaCha8Rng::seed_from_u64(seed);
    arrivals_rng.set_stream(ARRIVAL_STREAM);
    let mut driver_rng = ChaCha8Rng::seed_from_u64(seed);
    driver_rng.set_stream(DRIVER_STREAM);
    let mut sim = Simulation {
        sep: mutated_separation(&params, opts.mutation),
        pristine: SeparationParams::from(&params),
        signals: SignalState::all_red(&model),
        queues: vec![VecDeque::new(); model.paths.len()],
        scenario: scenario.clone(),
        model,
        params,
        manager_cfg,
        opts,
        vehicles: Vec::new(),
        next_id: 1,
        manager: ManagerState::default(),
        arrivals_rng,
        driver_rng,
        out: RunOutput { trace: Trace::new(opts.trace), ..RunOutput::default() },
        micro_filter: OnsetFilter::default(),
        boundary_filter: OnsetFilter::default(),
        exits: Vec::new(),
        stops: [0; 2],
        spawned: 0,
        slot: 0,
    };
    let result = sim.run_all();
    sim.finish();
    match result {
        Ok(()) => Ok(sim.out),
        Err(f) => Err(SimError::Fatal { slot: sim.slot, kind: f.kind, detail: f.detail, partial: Box::new(sim.out) }),
    }
}

impl Simulation {
    fn time(&self) -> f64 {
        self.slot as f64 * self.params.h
    }

    fn stopped_early(&self) -> bool {
        self.opts.stop_at_first_violation && !self.out.report.is_safe()
    }

    fn run_all(&mut self) -> Result<(), Fatal> {
        while self.slot < self.scenario.horizon {
            self.step_slot()?;
            self.out.report.slots_run = self.slot + 1;
            if self.stopped_early() {
                break;
            }
            self.slot += 1;
        }
        Ok(())
    }

    fn observed(&self) -> Vec<Observed> {
        self.vehicles
            .iter()
            .map(|c| Observed {
                id: c.id,
                kind: c.kind,
                path: c.path(),
                s: c.state.s,
                v: c.state.v,
                v_prev: match c.kind {
                    VehicleKind::Av => c.state.v_prev,
                    VehicleKind::Hv => c.boundary_speed,
                },
                stop_latched: c.stop_latched,
            })
            .collect()
    }

    fn record(&mut self, micro: u32, findings: Vec<Finding>) {
        for finding in findings {
            self.out.trace.push(self.slot, micro, EventBody::Violation(finding.clone()));
            self.out.report.violations.push(Violation { slot: self.slot, micro, finding });
        }
    }

    fn step_slot(&mut self) -> Result<(), Fatal> {
        let slot = self.slot;

        // Automated vehicles keep the relation they planned for.
        let corridor = Corridor::build(&self.model, &self.vehicles);
        let findings = check_av_relations(&self.model, &self.vehicles, &corridor, &self.pristine);
        let fresh = self.boundary_filter.filter(findings);
        self.record(0, fresh);

        // Exited vehicles leave the system.
        let observed = self.observed();
        let exited = compute_exited(&self.model, &observed);
        let model = &self.model;
        let stops = &mut self.stops;
        self.vehicles.retain(|c| {
            let gone = exited.contains(&c.id) && c.state.s > model.paths[c.path()].exit_point;
            if gone {
                stops[c.kind as usize] += u64::from(c.stops);
            }
            !gone
        });

        self.arrivals();

        let observed = self.observed();
        let requests: Vec<Request> = self
            .vehicles
            .iter()
            .filter(|c| c.is_av() && !self.manager.permitted_av.contains(&c.id))
            .filter(|c| {
                let d = self.model.paths[c.path()].entry_point - c.state.s;
                (0.0..=self.model.d_c).contains(&d)
            })
            .map(|c| Request { vehicle: c.id, path: c.path(), slot })
            .collect();
        let uncertain = compute_uncertain(
            &self.model,
            &observed,
            &self.signals,
            &self.manager.uncertain,
            &exited,
            &self.params,
            &self.sep,
        );
        let next =
            assign_permissions(&self.manager, &self.model, &observed, &requests, uncertain, exited, &self.manager_cfg);
        for (a, b) in conflicting_pairs(&self.model, &next, &observed) {
            self.out.report.permission_conflicts.push(PermissionConflict { slot, vehicles: (a, b) });
        }
        for &id in next.permitted_av.difference(&self.manager.permitted_av) {
            let path = self.vehicle(id).path();
            self.out.trace.push(slot, 0, EventBody::Grant { vehicle: id, path, set: GrantSet::Av });
        }
        for &id in next.planned_hv.difference(&self.manager.planned_hv) {
            let path = self.vehicle(id).path();
            self.out.trace.push(slot, 0, EventBody::Grant { vehicle: id, path, set: GrantSet::Hv });
        }
        self.manager = next;

        let colors = update_signals(&self.signals, &self.manager, &self.model, &observed, &self.sep)
            .map_err(|e| fatal(FatalKind::ProtocolConflict, e))?;
        for (path, (old, new)) in self.signals.colors.iter().zip(&colors.colors).enumerate() {
            if let (Some(from), Some(to)) = (*old, *new) {
                if from != to {
                    self.out.trace.push(slot, 0, EventBody::ColorChange { path, from, to });
                }
            }
        }
        self.signals = colors;
        let hvs = observed
            .iter()
            .filter(|c| c.kind == VehicleKind::Hv)
            .map(|c| HvRecord {
                path: c.path,
                distance: c.distance(&self.model),
                v: c.v,
                stop_latched: c.stop_latched,
                exited: self.manager.exited.contains(&c.id),
            })
            .collect();
        self.out.signals.push(SignalRecord { slot, colors: self.signals.colors.clone(), hvs });

        self.plan_avs()?;
        for c in self.vehicles.iter_mut().filter(|c| !c.is_av()) {
            c.boundary_speed = c.state.v;
        }
        self.slot_metrics();
        self.out.trace.push(
            slot,
            0,
            EventBody::Slot {
                vehicles: self.vehicles.len(),
                permitted: self.manager.permitted_av.iter().copied().collect(),
                planned: self.manager.planned_hv.iter().copied().collect(),
                uncertain: self.manager.uncertain.iter().copied().collect(),
            },
        );
        self.out.trace.flush();

        for micro in 1..=self.params.micro_steps {
            self.micro_step(micro)?;
            if self.stopped_early() {
                break;
            }
        }
        Ok(())
    }

    fn vehicle(&self, id: u64) -> &Vehicle {
        self.vehicles.iter().find(|c| c.id == id).expect("manager sets only hold live vehicles")
    }

    fn arrivals(&mut self) {
        match &self.scenario.arrivals {
            Arrivals::Poisson { rate, hv_fraction, paths } => {
                let mean = rate * self.params.h;
                let all: Vec<usize> =
                    if paths.is_empty() { (0..self.model.paths.len()).collect() } else { paths.clone() };
                if mean > 0.0 {
                    let dist = Poisson::new(mean).expect("rate validated");
                    for path in all {
                        let n = dist.sample(&mut self.arrivals_rng) as u64;
                        for _ in 0..n {
                            let kind = if self.arrivals_rng.random_bool(*hv_fraction) {
                                VehicleKind::Hv
                            } else {
                                VehicleKind::Av
                            };
                            self.queues[path].push_back(Arrival { kind, speed: self.params.v_max });
                        }
                    }
                }
            }
            Arrivals::Schedule { vehicles } => {
                for a in vehicles.iter().filter(|a| a.slot == self.slot) {
                    self.queues[a.path].push_back(Arrival { kind: a.kind, speed: a.speed });
                }
            }
        }
        for path in 0..self.queues.len() {
            while let Some(&arrival) = self.queues[path].front() {
                if !self.try_spawn(path, arrival) {
                    break;
                }
                self.queues[path].pop_front();
            }
        }
    }

    /// Place an arrival at the start of its path at the highest initial
    /// speed (from the requested one down to standstill) at which every
    /// separation relation still holds.
    fn try_spawn(&mut self, path: usize, arrival: Arrival) -> bool {
        let geom = &self.model.paths[path];
        if self.vehicles.iter().any(|c| c.path() == path && c.state.s < self.params.s_min) {
            return false;
        }
        let mut speed = arrival.speed;
        loop {
            let state = VehicleState::on_path(geom, 0.0, speed);
            self.vehicles.push(Vehicle::new(self.next_id, arrival.kind, state, self.time()));
            if self.admissible_spawn() {
                let c = self.vehicles.last().expect("just pushed");
                self.out.trace.push(
                    self.slot,
                    0,
                    EventBody::Spawn { vehicle: c.id, vtype: c.kind, path, s: c.state.s, v: speed },
                );
                self.next_id += 1;
                self.spawned += 1;
                return true;
            }
            self.vehicles.pop();
            if speed <= 0.0 {
                return false;
            }
            speed = (speed - 2.0).max(0.0);
        }
    }

    /// Whether the most recently added vehicle keeps every relation intact,
    /// including those of automated vehicles whose braking limit it changes.
    fn admissible_spawn(&self) -> bool {
        let n = self.vehicles.len();
        let corridor = Corridor::build(&self.model, &self.vehicles);
        let leads = corridor.leads(&self.model, &self.vehicles);
        let flags = virtual_hv_flags(&self.model, &self.vehicles, &leads);
        let me = &self.vehicles[n - 1];
        let sep = &self.sep;
        let with_flags = |i: usize| {
            let mut c = self.vehicles[i].clone();
            c.virtual_hv = flags[i];
            c
        };

        if let Some(lead) = leads[n - 1] {
            let lv = with_flags(lead.index);
            match me.kind {
                VehicleKind::Hv => {
                    if lead.gap < s_hv(me.state.v, lv.state.v, &self.pristine)
                        || !can_follow(me.state.v, lead.gap, lv.state.v, &self.params, sep)
                    {
                        return false;
                    }
                }
                VehicleKind::Av => {
                    let ctx = FollowContext::new(lv.lead_kind(), with_flags(n - 1).own_limit());
                    if lead.gap < s_star(ctx, me.state.v, lv.speed_sample(), sep) {
                        return false;
                    }
                }
            }
        }
        // Automated vehicles that must now brake like human drivers, or whose
        // lead must, keep their relations under the new formulas.
        (0..n).all(|i| {
            let c = with_flags(i);
            if !c.is_av() {
                return true;
            }
            let lead_changed = leads[i].is_some_and(|l| flags[l.index] != self.vehicles[l.index].virtual_hv);
            if i != n - 1 && flags[i] == self.vehicles[i].virtual_hv && !lead_changed {
                return true;
            }
            let path = &self.model.paths[c.path()];
            let lead_ok = leads[i].is_none_or(|l| {
                let lv = with_flags(l.index);
                let ctx = FollowContext::new(lv.lead_kind(), c.own_limit());
                l.gap >= s_star(ctx, c.state.v, lv.speed_sample(), sep)
            });
            let stop_ok = c.state.s > path.entry_point
                || self.manager.permitted_av.contains(&c.id)
                || path.entry_point - c.state.s
                    >= s_star(FollowContext::new(LeadKind::Av, c.own_limit()), c.state.v, 0.0, sep);
            lead_ok && stop_ok
        })
    }

    fn plan_avs(&mut self) -> Result<(), Fatal> {
        let corridor = Corridor::build(&self.model, &self.vehicles);
        let leads = corridor.leads(&self.model, &self.vehicles);
        let flags = virtual_hv_flags(&self.model, &self.vehicles, &leads);
        for (c, &f) in self.vehicles.iter_mut().zip(&flags) {
            if c.is_av() {
                c.virtual_hv = f;
            }
        }
        let mut commands = Vec::new();
        for (i, me) in self.vehicles.iter().enumerate() {
            if !me.is_av() {
                continue;
            }
            let path = &self.model.paths[me.path()];
            let permitted = self.manager.permitted_av.contains(&me.id);
            let lead = leads[i].map(|l| (&self.vehicles[l.index], l.gap));
            let refs = select_reference_objects(me, lead, permitted, path, &self.params);
            let brake = effective_brake_limit(&self.params, me.virtual_hv);
            let result =
                plan(&refs, me.state.v, brake, path, me.state.s, &self.params, &self.sep, &self.scenario.planner)
                    .map_err(|e| fatal(FatalKind::InfeasibleState, format!("vehicle {}: {e}", me.id)))?;
            validate_plan(&refs, me.state.v, &result.speeds, brake, &self.params, &self.sep)
                .map_err(|e| fatal(FatalKind::InvalidPlan, format!("vehicle {}: {e}", me.id)))?;
            let lead_id = refs.iter().find_map(|r| match r.target {
                ReferenceTarget::Vehicle(id) => Some(id),
                ReferenceTarget::StopLine => None,
            });
            self.out.trace.push(
                self.slot,
                0,
                EventBody::Plan {
                    vehicle: me.id,
                    speeds: result.speeds.clone(),
                    feasible_by: result.feasible_by,
                    virtual_hv: me.virtual_hv,
                    permitted,
                    lead: lead_id,
                },
            );
            commands.push((i, result.speeds[0], permitted));
        }
        for (i, v, permitted) in commands {
            let c = &mut self.vehicles[i];
            debug_assert!(v >= c.state.v + effective_brake_limit(&self.params, c.virtual_hv) * self.params.h - 1e-9);
            c.state.v_prev = c.state.v;
            c.state.v = v;
            c.permitted_at_plan = permitted;
        }
        Ok(())
    }

    fn hv_observation(&self, i: usize, corridor: &Corridor) -> (HvObservation, bool) {
        let me = &self.vehicles[i];
        let path = &self.model.paths[me.path()];
        let lead = corridor.lead(&self.model, &self.vehicles, i).map(|l| (l.gap, self.vehicles[l.index].state.v));
        let list = corridor.on_path(me.path());
        let pos = list.iter().position(|&(_, j)| j == i).expect("listed");
        let follower = pos.checked_sub(1).map(|k| {
            let (s, j) = list[k];
            (me.state.s - s, self.vehicles[j].state.v)
        });
        let mut clear = true;
        let control = if me.state.s > path.entry_point {
            EntryControl::Entered
        } else if path.turn == Turn::Right {
            clear = right_turn_clear(&self.model, &self.vehicles, corridor, i, &self.sep);
            EntryControl::RightTurn { clear }
        } else if path.entry_point - me.state.s <= self.model.d_h {
            EntryControl::Signal(self.signals.color(me.path()).expect("signalized path"))
        } else {
            EntryControl::Unseen
        };
        let obs = HvObservation {
            s: me.state.s,
            v: me.state.v,
            entry_point: path.entry_point,
            lead,
            follower,
            control,
            latched: me.stop_latched,
        };
        (obs, clear)
    }

    fn micro_step(&mut self, micro: u32) -> Result<(), Fatal> {
        let delta = self.params.delta();
        let corridor = Corridor::build(&self.model, &self.vehicles);
        let mut decisions: Vec<Option<(HvDecision, bool)>> = vec![None; self.vehicles.len()];
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].is_av() {
                continue;
            }
            let (obs, clear) = self.hv_observation(i, &corridor);
            let d = hv_decide(&obs, &self.params, &self.sep, self.scenario.hv_mode, &mut self.driver_rng)
                .map_err(|e| fatal(FatalKind::RulesInfeasible, format!("vehicle {}: {e}", self.vehicles[i].id)))?;
            decisions[i] = Some((d, clear));
        }

        let hv_env = Envelope {
            v_max: self.params.v_max,
            a_min: self.params.a_min_hv,
            a_max: self.params.a_max,
            rho_min: self.params.rho_min,
        };
        let t0 = self.time() + (micro - 1) as f64 * delta;
        let mut findings = Vec::new();
        for (i, decision) in decisions.into_iter().enumerate() {
            let c = &self.vehicles[i];
            let path = &self.model.paths[c.path()];
            let old_s = c.state.s;
            let next = match decision {
                None => advance_on_path(path, &c.state, c.state.v, delta),
                Some((d, _)) => {
                    step_hv(path, &c.state, &[d.accel], delta, &hv_env)
                        .map_err(|e| fatal(FatalKind::Kinematics, format!("vehicle {}: {e}", c.id)))?
                        .0
                }
            };
            let new_s = next.s;
            if old_s <= path.entry_point && new_s > path.entry_point {
                let right = match decision {
                    None => self.manager.permitted_av.contains(&c.id),
                    Some((d, clear)) if path.turn == Turn::Right => clear && !d.latched,
                    Some((d, _)) => self.signals.color(c.path()) != Some(Light::Red) && !d.latched,
                };
                if !right {
                    findings.push(Finding {
                        kind: ViolationKind::EntryWithoutRight,
                        vehicles: vec![c.id],
                        gap: path.entry_point - old_s,
                        required: 0.0,
                    });
                }
            }
            if old_s <= path.exit_point && new_s > path.exit_point {
                let frac = if new_s > old_s { (path.exit_point - old_s) / (new_s - old_s) } else { 1.0 };
                let time = t0 + frac * delta;
                let delay = (time - c.spawn_time) - (path.exit_point - c.spawn_s) / self.params.v_max;
                self.exits.push(ExitRecord { vehicle: c.id, kind: c.kind, time, delay });
                self.out.trace.push(self.slot, micro, EventBody::Exit { vehicle: c.id, time, delay });
            }
            let c = &mut self.vehicles[i];
            c.state = next;
            if let Some((d, _)) = decision {
                c.stop_latched = d.latched;
            }
            let halted = c.state.v < HALT_SPEED;
            if halted && !c.halted {
                c.stops += 1;
            }
            c.halted = halted;
        }
        self.record(micro, findings);

        let corridor = Corridor::build(&self.model, &self.vehicles);
        let findings = check_snapshot(&self.model, &self.vehicles, &corridor, &self.pristine);
        let fresh = self.micro_filter.filter(findings);
        self.record(micro, fresh);

        if self.out.trace.wants(trace::EventKind::StateSample) {
            for c in &self.vehicles {
                let s = c.state;
                self.out.trace.push(
                    self.slot,
                    micro,
                    EventBody::StateSample { vehicle: c.id, s: s.s, v: s.v, x: s.x, y: s.y, theta: s.theta },
                );
            }
        }
        self.out.trace.flush();
        Ok(())
    }

    fn slot_metrics(&mut self) {
        let count = |l: Light| self.signals.colors.iter().filter(|c| **c == Some(l)).count();
        let avs = self.vehicles.iter().filter(|c| c.is_av()).count();
        self.out.slots.push(SlotMetrics {
            slot: self.slot,
            time: self.time(),
            vehicles: self.vehicles.len(),
            avs,
            hvs: self.vehicles.len() - avs,
            queued: self.queues.iter().map(VecDeque::len).sum(),
            exited_total: self.exits.len(),
            permitted: self.manager.permitted_av.len(),
            planned: self.manager.planned_hv.len(),
            uncertain: self.manager.uncertain.len(),
            green: count(Light::Green),
            amber: count(Light::Amber),
            violations_total: self.out.report.violations.len(),
        });
    }

    fn finish(&mut self) {
        self.out.trace.flush();
        self.out.report.signal_violations = check_policy1(&self.out.signals, &self.model, &self.pristine);
        let mut stops = self.stops;
        for c in &self.vehicles {
            stops[c.kind as usize] += u64::from(c.stops);
        }
        let duration = self.out.report.slots_run as f64 * self.params.h;
        self.out.report.metrics = Metrics::from_exits(
            &self.exits,
            duration,
            stops[VehicleKind::Av as usize],
            stops[VehicleKind::Hv as usize],
        );
        let end = duration;
        self.out.report.liveness = Liveness {
            spawned: self.spawned,
            exited: self.exits.len() as u64,
            in_system: self.vehicles.len(),
            queued: self.queues.iter().map(VecDeque::len).sum(),
            oldest_age: self.vehicles.iter().map(|c| end - c.spawn_time).fold(0.0, f64::max),
        };
    }
}
