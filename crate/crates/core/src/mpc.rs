//! Receding-horizon loop: assemble, solve, apply the first step, repeat.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{ArrivalMatrix, RateMatrix};
use crate::milp::{
    assemble, extract_controls, extract_next_state, AmodProblem, HorizonWindow, InstanceError,
    MilpInstance, ObjectiveTerms,
};
use crate::scenario::{ModelParams, Network, NodeId, OutageEvent, OutageSchedule, ScenarioError};
use crate::solver::{oracle_solve, solve, solve_timed, OracleError, SolveError, SolveOptions, SolveStatus};
use crate::state::{ControlSet, FleetState, StateError};

/// Tolerance of the per-step SOC audit.
pub const AUDIT_SOC_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MpcError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid run input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("audit failed at step {step}: {detail}")]
    Audit { step: usize, detail: String },
}

/// Initial vehicle locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "nodes", rename_all = "kebab-case")]
pub enum Placement {
    Uniform,
    /// Drawn in proportion to per-node weights (typically origin demand).
    DemandWeighted(Vec<f64>),
    Explicit(Vec<NodeId>),
}

/// Vehicles parked at `γ_init` with no one waiting.
pub fn initial_state(
    params: &ModelParams,
    network: &Network,
    placement: &Placement,
    seed: u64,
) -> Result<FleetState, MpcError> {
    let n = network.len();
    let k = params.fleet_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<NodeId> = match placement {
        Placement::Uniform => (0..k).map(|_| rng.gen_range(0..n)).collect(),
        Placement::DemandWeighted(w) => {
            if w.len() != n {
                return Err(MpcError::Invalid(format!("{} placement weights for {n} nodes", w.len())));
            }
            let dist = WeightedIndex::new(w)
                .map_err(|e| MpcError::Invalid(format!("placement weights: {e}")))?;
            (0..k).map(|_| dist.sample(&mut rng)).collect()
        }
        Placement::Explicit(list) => {
            if list.len() != k {
                return Err(MpcError::Invalid(format!(
                    "explicit placement lists {} vehicles, fleet size is {k}",
                    list.len()
                )));
            }
            list.clone()
        }
    };
    let state = FleetState::parked(n, &nodes, params.gamma_init);
    state.validate(network, params)?;
    Ok(state)
}

/// What the horizon does near the end of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Keep length `T`; steps past `L` see no arrivals.
    #[default]
    Pad,
    /// Shrink to `max(2, min(T, L − ℓ))`.
    Truncate,
}

impl Boundary {
    pub fn window_len(self, horizon_t: usize, horizon_l: usize, step: usize) -> usize {
        match self {
            Self::Pad => horizon_t,
            Self::Truncate => horizon_t.min(horizon_l.saturating_sub(step)).max(2),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MpcOptions {
    pub solve: SolveOptions,
    pub boundary: Boundary,
    /// Use expected arrivals for prediction steps `t ≥ 1` instead of the realised ones.
    pub forecast: Option<RateMatrix>,
    /// Soften the emergency cover with this penalty per uncovered SOC unit.
    pub cover_penalty: Option<f64>,
}

/// A closed-loop run's inputs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Arc<Network>,
    pub params: ModelParams,
    pub outages: OutageSchedule,
    pub arrivals: ArrivalMatrix,
    pub initial: FleetState,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), MpcError> {
        self.params.validate()?;
        self.outages.validate(self.network.len(), self.params.horizon_l)?;
        if self.arrivals.nodes != self.network.len() || self.arrivals.steps < self.params.horizon_l {
            return Err(MpcError::Invalid(format!(
                "arrivals cover {} nodes × {} steps, need {} × {}",
                self.arrivals.nodes,
                self.arrivals.steps,
                self.network.len(),
                self.params.horizon_l
            )));
        }
        if self.initial.fleet_size() != self.params.fleet_size {
            return Err(MpcError::Invalid(format!(
                "initial state has {} vehicles, fleet size is {}",
                self.initial.fleet_size(),
                self.params.fleet_size
            )));
        }
        self.initial.validate(&self.network, &self.params)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    pub step: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepKpi {
    pub step: usize,
    /// Passengers still waiting after this step's pickups.
    pub waiting: u64,
    pub pickups: usize,
    pub relocations: usize,
    /// Travel steps of the relocations started this step.
    pub relocation_steps: u64,
    pub charged: f64,
    pub discharged: f64,
    pub delivered: f64,
    pub requirement: f64,
    pub outage_nodes: Vec<NodeId>,
    /// First-step objective value.
    pub stage_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub step: usize,
    pub window: usize,
    pub status: SolveStatus,
    /// `None` when the iteration has no solution (likewise below).
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    /// Gap above the tolerance or time limit hit.
    pub flagged: bool,
    pub columns: usize,
    pub rows: usize,
    /// Largest bound, integrality or row violation of the accepted solution.
    pub max_violation: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halt {
    pub step: usize,
    pub status: SolveStatus,
    pub outage_nodes: Vec<NodeId>,
    pub requirement: f64,
    pub message: String,
}

/// SOC overwritten at a day boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocReset {
    pub step: usize,
    pub before: Vec<f64>,
}

/// Everything needed to audit, summarise or replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub travel_time: Vec<Vec<u32>>,
    pub params: ModelParams,
    pub outages: OutageSchedule,
    pub arrivals: Vec<ArrivalRecord>,
    /// Planned number of steps (`days × L`).
    pub steps: usize,
    pub boundary: Boundary,
    pub seed: Option<u64>,
    pub states: Vec<FleetState>,
    pub controls: Vec<ControlSet>,
    pub kpis: Vec<StepKpi>,
    pub iterations: Vec<IterationStats>,
    pub resets: Vec<SocReset>,
    pub halt: Option<Halt>,
    /// Solver wall time per iteration; kept out of the JSON so traces stay reproducible.
    #[serde(skip)]
    pub wall_seconds: Vec<f64>,
}

impl RunTrace {
    pub fn completed(&self) -> bool {
        self.halt.is_none() && self.controls.len() == self.steps
    }

    pub fn closed_loop_cost(&self) -> f64 {
        self.kpis.iter().map(|k| k.stage_cost).sum()
    }

    pub fn arrival_matrix(&self) -> ArrivalMatrix {
        let n = self.travel_time.len();
        let mut m = ArrivalMatrix::zeros(n, self.steps);
        for a in &self.arrivals {
            if a.step < self.steps {
                m.add(a.origin, a.destination, a.step, a.count);
            }
        }
        m
    }

    pub fn network(&self) -> Result<Network, MpcError> {
        Ok(Network::from_travel_times(self.travel_time.clone())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, MpcError> {
        serde_json::from_str(text).map_err(|e| MpcError::Invalid(format!("trace JSON: {e}")))
    }

    /// `step,status,objective,bound,gap,flagged,wall_seconds`.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("step,window,status,objective,bound,gap,flagged,max_violation,wall_seconds\n");
        for (it, wall) in self.iterations.iter().zip(self.wall_seconds.iter().chain(std::iter::repeat(&f64::NAN))) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6}\n",
                it.step,
                it.window,
                it.status,
                cell(it.objective),
                cell(it.bound),
                cell(it.gap),
                it.flagged,
                cell(it.max_violation),
                wall
            ));
        }
        out
    }

    /// One row per step with the KPI columns.
    pub fn kpi_csv(&self) -> String {
        let mut out = String::from(
            "step,waiting,pickups,relocations,relocation_steps,charged,discharged,delivered,requirement,outage_nodes,stage_cost\n",
        );
        for k in &self.kpis {
            let nodes: Vec<String> = k.outage_nodes.iter().map(|n| n.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                k.step,
                k.waiting,
                k.pickups,
                k.relocations,
                k.relocation_steps,
                k.charged,
                k.discharged,
                k.delivered,
                k.requirement,
                nodes.join(" "),
                k.stage_cost
            ));
        }
        out
    }

    /// Per vehicle and step: position and SOC.
    pub fn vehicle_csv(&self) -> String {
        let mut out = String::from("step,vehicle,kind,node,remaining,soc\n");
        for (s, st) in self.states.iter().enumerate() {
            for (k, v) in st.vehicles.iter().enumerate() {
                let (kind, node, rem) = match v.position {
                    crate::state::VehiclePosition::Parked { node } => ("parked", node, 0),
                    crate::state::VehiclePosition::EnRoute { to, remaining } => ("en-route", to, remaining),
                };
                out.push_str(&format!("{s},{k},{kind},{node},{rem},{}\n", v.soc));
            }
        }
        out
    }
}

/// Runs `L` MPC iterations from the scenario's initial state.
///
/// Infeasible or unsolved iterations stop the run; the trace then carries a
/// [`Halt`] and the steps completed so far.
pub fn run(scenario: &Scenario, opts: &MpcOptions) -> Result<RunTrace, MpcError> {
    scenario.validate()?;
    opts.solve.validate()?;
    let p = &scenario.params;
    let len_l = p.horizon_l;
    let mut trace = empty_trace(scenario, len_l, opts.boundary);
    let mut state = scenario.initial.clone();
    for step in 0..len_l {
        let StepInstance { instance, window_len, outage_nodes, requirement } =
            step_instance(scenario, opts, &state, step)?;
        let timed = solve_timed(&instance, &opts.solve)?;
        let sol = &timed.solution;
        trace.wall_seconds.push(timed.wall_seconds);
        let gap = sol.relative_gap();
        trace.iterations.push(IterationStats {
            step,
            window: window_len,
            status: sol.status,
            objective: finite(sol.objective),
            bound: finite(sol.bound),
            gap: finite(gap),
            flagged: sol.status != SolveStatus::Optimal,
            columns: instance.num_cols(),
            rows: instance.num_rows(),
            max_violation: if sol.status.has_solution() { Some(instance.max_violation(&sol.values).0) } else { None },
        });
        if !sol.status.has_solution() {
            let message = halt_message(step, sol.status, &outage_nodes, requirement, &state, p);
            log::error!("{message}");
            trace.halt = Some(Halt { step, status: sol.status, outage_nodes, requirement, message });
            return Ok(trace);
        }
        if sol.status == SolveStatus::GapFeasible {
            log::warn!("step {step}: accepted incumbent with relative gap {gap:.2e}");
        }
        let controls = extract_controls(&instance, sol)?;
        let next = extract_next_state(&instance, sol)?;
        let expected = state.propagate(&controls, &scenario.arrivals, step, &scenario.network, p)?;
        compare_states(step, &expected, &next)?;
        let origin = instance.origin.as_deref().ok_or(InstanceError::NotAnAmodInstance)?;
        let terms = ObjectiveTerms::from_values(origin, &sol.values)?;
        let stage_cost = terms.waiting[0]
            + terms.rho1 * terms.relocation[0]
            + terms.rho2 * terms.energy[0]
            + terms.cover_penalty * terms.slack[0];
        trace.kpis.push(StepKpi {
            step,
            waiting: next.total_waiting(),
            pickups: controls.pickups.len(),
            relocations: controls.relocations.len(),
            relocation_steps: controls
                .relocations
                .iter()
                .map(|d| scenario.network.steps(d.from, d.to) as u64)
                .sum(),
            charged: controls.charge.iter().sum(),
            discharged: controls.discharge.iter().sum(),
            delivered: controls.delivered,
            requirement,
            outage_nodes,
            stage_cost,
        });
        trace.controls.push(controls);
        trace.states.push(next.clone());
        state = next;
    }
    Ok(trace)
}

struct StepInstance {
    instance: MilpInstance,
    window_len: usize,
    outage_nodes: Vec<NodeId>,
    requirement: f64,
}

fn step_instance(
    scenario: &Scenario,
    opts: &MpcOptions,
    state: &FleetState,
    step: usize,
) -> Result<StepInstance, MpcError> {
    let p = &scenario.params;
    let len_l = p.horizon_l;
    let window_len = opts.boundary.window_len(p.horizon_t, len_l, step);
    let mut window =
        HorizonWindow::from_schedule(&scenario.arrivals, &scenario.outages, p, step, window_len, len_l);
    if let Some(rates) = &opts.forecast {
        for t in 1..window_len {
            let abs = step + t;
            for i in 0..window.nodes {
                for j in (0..window.nodes).filter(|&j| j != i) {
                    let lambda = if abs < len_l { rates.rate_at(i, j, abs) } else { 0.0 };
                    window.set_arrivals(i, j, t, lambda);
                }
            }
        }
    }
    let outage_nodes = window.active_outage_nodes(0);
    let requirement = window.requirement[0];
    let mut problem = AmodProblem::new(scenario.network.clone(), p.clone(), state.clone(), window)?;
    problem.cover_penalty = opts.cover_penalty;
    let instance = assemble(problem)?;
    Ok(StepInstance { instance, window_len, outage_nodes, requirement })
}

fn empty_trace(scenario: &Scenario, steps: usize, boundary: Boundary) -> RunTrace {
    RunTrace {
        travel_time: scenario.network.travel_time.clone(),
        params: scenario.params.clone(),
        outages: scenario.outages.clone(),
        arrivals: scenario
            .arrivals
            .nonzero()
            .filter(|&(_, _, s, _)| s < steps)
            .map(|(origin, destination, step, count)| ArrivalRecord { origin, destination, step, count })
            .collect(),
        steps,
        boundary,
        seed: None,
        states: vec![scenario.initial.clone()],
        controls: Vec::new(),
        kpis: Vec::new(),
        iterations: Vec::new(),
        resets: Vec::new(),
        halt: None,
        wall_seconds: Vec::new(),
    }
}

fn halt_message(
    step: usize,
    status: SolveStatus,
    outage_nodes: &[NodeId],
    requirement: f64,
    state: &FleetState,
    params: &ModelParams,
) -> String {
    let mut msg = format!("step {step}: horizon MILP {status}");
    if outage_nodes.is_empty() {
        msg.push_str("; no outage active");
    } else {
        let present: Vec<usize> = outage_nodes
            .iter()
            .map(|&n| state.vehicles.iter().filter(|v| v.position.available_at() == Some(n)).count())
            .collect();
        msg.push_str(&format!(
            "; outage active at nodes {outage_nodes:?} needing {requirement:.4} SOC per step \
             ({:.4} per discharging vehicle), vehicles available there: {present:?}",
            params.eta * params.theta_v2b
        ));
    }
    msg
}

fn compare_states(step: usize, expected: &FleetState, got: &FleetState) -> Result<(), MpcError> {
    let audit = |detail: String| Err(MpcError::Audit { step, detail });
    for i in 0..expected.nodes {
        for j in 0..expected.nodes {
            if expected.waiting(i, j) != got.waiting(i, j) {
                return audit(format!(
                    "waiting {i}->{j}: recursion gives {}, MILP gives {}",
                    expected.waiting(i, j),
                    got.waiting(i, j)
                ));
            }
        }
    }
    for (k, (a, b)) in expected.vehicles.iter().zip(&got.vehicles).enumerate() {
        if a.position != b.position {
            return audit(format!("vehicle {k}: recursion gives {:?}, MILP gives {:?}", a.position, b.position));
        }
        if (a.soc - b.soc).abs() > AUDIT_SOC_TOL {
            return audit(format!("vehicle {k}: SOC {} vs {}", a.soc, b.soc));
        }
    }
    Ok(())
}

/// Replays a trace's controls through the state recursion and checks every state.
pub fn audit_trace(trace: &RunTrace) -> Result<(), MpcError> {
    let net = trace.network()?;
    let arrivals = trace.arrival_matrix();
    let len_l = trace.params.horizon_l.max(1);
    if trace.states.len() != trace.controls.len() + 1 {
        return Err(MpcError::Invalid(format!(
            "{} states for {} control sets",
            trace.states.len(),
            trace.controls.len()
        )));
    }
    for (step, controls) in trace.controls.iter().enumerate() {
        let day_step = step % len_l;
        let before = &trace.states[step];
        let day_arrivals = day_slice(&arrivals, step - day_step, len_l);
        let mut expected = before.propagate(controls, &day_arrivals, day_step, &net, &trace.params)?;
        if let Some(reset) = trace.resets.iter().find(|r| r.step == step + 1) {
            for (k, v) in expected.vehicles.iter().enumerate() {
                if (v.soc - reset.before[k]).abs() > AUDIT_SOC_TOL {
                    return Err(MpcError::Audit {
                        step,
                        detail: format!("vehicle {k}: SOC before reset {} vs recorded {}", v.soc, reset.before[k]),
                    });
                }
            }
            for v in &mut expected.vehicles {
                v.soc = trace.params.gamma_init;
            }
        }
        compare_states(step, &expected, &trace.states[step + 1])?;
        for (k, v) in trace.states[step + 1].vehicles.iter().enumerate() {
            if v.soc < trace.params.gamma_min - AUDIT_SOC_TOL || v.soc > trace.params.gamma_max + AUDIT_SOC_TOL {
                return Err(MpcError::Audit { step, detail: format!("vehicle {k}: SOC {} out of bounds", v.soc) });
            }
        }
    }
    Ok(())
}

fn day_slice(arrivals: &ArrivalMatrix, start: usize, len: usize) -> ArrivalMatrix {
    let mut out = ArrivalMatrix::zeros(arrivals.nodes, len);
    for (i, j, s, c) in arrivals.nonzero() {
        if s >= start && s < start + len {
            out.add(i, j, s - start, c);
        }
    }
    out
}

/// One day of a multi-day run.
#[derive(Debug, Clone)]
pub struct DayInput {
    pub arrivals: ArrivalMatrix,
    pub outages: OutageSchedule,
}

/// Chains daily runs; positions and waiting passengers carry over, SOC is
/// reset to `γ_init` at each boundary when `soc_reset` is set.
pub fn run_multiday(
    base: &Scenario,
    days: &[DayInput],
    soc_reset: bool,
    opts: &MpcOptions,
) -> Result<RunTrace, MpcError> {
    if days.is_empty() {
        return Err(MpcError::Invalid("no days to run".into()));
    }
    let len_l = base.params.horizon_l;
    let mut combined: Option<RunTrace> = None;
    let mut state = base.initial.clone();
    for (d, day) in days.iter().enumerate() {
        let mut reset = None;
        if d > 0 && soc_reset {
            reset = Some(SocReset { step: d * len_l, before: state.vehicles.iter().map(|v| v.soc).collect() });
            for v in &mut state.vehicles {
                v.soc = base.params.gamma_init;
            }
        }
        let scenario = Scenario {
            network: base.network.clone(),
            params: base.params.clone(),
            outages: day.outages.clone(),
            arrivals: day.arrivals.clone(),
            initial: state.clone(),
        };
        let mut t = run(&scenario, opts)?;
        let offset = d * len_l;
        shift_trace(&mut t, offset);
        let halted = t.halt.is_some();
        state = t.states.last().cloned().unwrap_or_else(|| state.clone());
        combined = Some(match combined.take() {
            None => {
                t.steps = days.len() * len_l;
                t
            }
            Some(mut acc) => {
                if let Some(r) = reset {
                    acc.resets.push(r);
                }
                acc.outages.events.extend(t.outages.events);
                acc.arrivals.extend(t.arrivals);
                // the boundary state is the one the new day starts from (after any reset)
                acc.states.pop();
                acc.states.extend(t.states);
                acc.controls.extend(t.controls);
                acc.kpis.extend(t.kpis);
                acc.iterations.extend(t.iterations);
                acc.wall_seconds.extend(t.wall_seconds);
                acc.halt = t.halt;
                acc
            }
        });
        if halted {
            break;
        }
    }
    Ok(combined.expect("at least one day"))
}

fn shift_trace(t: &mut RunTrace, offset: usize) {
    if offset == 0 {
        return;
    }
    for ev in &mut t.outages.events {
        *ev = OutageEvent { node: ev.node, start_step: ev.start_step + offset, end_step: ev.end_step + offset };
    }
    for a in &mut t.arrivals {
        a.step += offset;
    }
    for k in &mut t.kpis {
        k.step += offset;
    }
    for it in &mut t.iterations {
        it.step += offset;
    }
    if let Some(h) = &mut t.halt {
        h.step += offset;
    }
}

/// The whole run as one MILP with `T = L` (small instances only).
pub fn full_horizon_reference(scenario: &Scenario, opts: &SolveOptions) -> Result<f64, MpcError> {
    scenario.validate()?;
    let p = &scenario.params;
    let len_l = p.horizon_l.max(2);
    let window = HorizonWindow::from_schedule(&scenario.arrivals, &scenario.outages, p, 0, len_l, p.horizon_l);
    let problem = AmodProblem::new(scenario.network.clone(), p.clone(), scenario.initial.clone(), window)?;
    let instance = assemble(problem)?;
    let sol = solve(&instance, opts)?;
    if !sol.status.has_solution() {
        return Err(MpcError::Invalid(format!("full-horizon reference is {}", sol.status)));
    }
    Ok(sol.objective)
}

/// One MPC iteration solved by the configured backend and by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub step: usize,
    pub backend: SolveStatus,
    pub backend_objective: f64,
    pub oracle: Option<SolveStatus>,
    pub oracle_objective: f64,
    pub agree: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn all_agree(&self) -> bool {
        self.rows.iter().all(|r| r.agree)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:>5} {:>12} {:>14} {:>12} {:>14} {:>6}\n", "step", "backend", "objective", "oracle", "objective", "agree");
        for r in &self.rows {
            let oracle = r.oracle.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:>5} {:>12} {:>14.8} {:>12} {:>14.8} {:>6}{}\n",
                r.step,
                r.backend.to_string(),
                r.backend_objective,
                oracle,
                r.oracle_objective,
                r.agree,
                if r.note.is_empty() { String::new() } else { format!("  {}", r.note) }
            ));
        }
        out
    }
}

/// Follows the backend's closed loop and re-solves every iteration exhaustively.
///
/// `mutate` edits each assembled instance before either solver sees it.
pub fn oracle_check(
    scenario: &Scenario,
    opts: &MpcOptions,
    mutate: Option<&dyn Fn(&mut MilpInstance)>,
) -> Result<OracleReport, MpcError> {
    scenario.validate()?;
    opts.solve.validate()?;
    let mut report = OracleReport::default();
    let mut state = scenario.initial.clone();
    for step in 0..scenario.params.horizon_l {
        let StepInstance { mut instance, .. } = step_instance(scenario, opts, &state, step)?;
        if let Some(f) = mutate {
            f(&mut instance);
        }
        let backend = solve(&instance, &opts.solve)?;
        let mut row = OracleRow {
            step,
            backend: backend.status,
            backend_objective: backend.objective,
            oracle: None,
            oracle_objective: f64::NAN,
            agree: false,
            note: String::new(),
        };
        match oracle_solve(&instance, opts.solve.oracle_limit) {
            Ok(o) => {
                row.oracle = Some(o.status);
                row.oracle_objective = o.objective;
                row.agree = match (backend.status.has_solution(), o.status.has_solution()) {
                    (true, true) => {
                        let tol = opts.solve.rel_gap * backend.objective.abs().max(o.objective.abs()) + 1e-7;
                        (backend.objective - o.objective).abs() <= tol
                    }
                    (false, false) => backend.status == o.status,
                    _ => false,
                };
            }
            Err(OracleError::Mismatch(msg)) => row.note = msg,
            Err(e) => return Err(e.into()),
        }
        let proceed = row.agree && backend.status.has_solution();
        report.rows.push(row);
        if !proceed {
            break;
        }
        let controls = extract_controls(&instance, &backend)?;
        let next = extract_next_state(&instance, &backend)?;
        let expected = state.propagate(&controls, &scenario.arrivals, step, &scenario.network, &scenario.params)?;
        compare_states(step, &expected, &next)?;
        state = next;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_nodes(l: usize, t: usize) -> (Arc<Network>, ModelParams) {
        let net = Network::from_travel_times(vec![vec![0, 1], vec![1, 0]]).unwrap();
        let params = ModelParams { horizon_l: l, horizon_t: t, fleet_size: 1, ..Default::default() };
        (Arc::new(net), params)
    }

    #[test]
    fn placement_rules() {
        let (net, mut p) = two_nodes(4, 3);
        p.fleet_size = 3;
        assert!(initial_state(&p, &net, &Placement::Explicit(vec![0, 1]), 0).is_err());
        let s = initial_state(&p, &net, &Placement::Explicit(vec![0, 1, 1]), 0).unwrap();
        assert_eq!(s.vehicles[2].position.node(), 1);
        let a = initial_state(&p, &net, &Placement::Uniform, 9).unwrap();
        let b = initial_state(&p, &net, &Placement::Uniform, 9).unwrap();
        assert_eq!(a, b);
        let w = initial_state(&p, &net, &Placement::DemandWeighted(vec![0.0, 1.0]), 3).unwrap();
        assert!(w.vehicles.iter().all(|v| v.position.node() == 1));
        assert!(initial_state(&p, &net, &Placement::DemandWeighted(vec![0.0, 0.0]), 3).is_err());
    }

    #[test]
    fn truncate_never_drops_below_two() {
        assert_eq!(Boundary::Truncate.window_len(10, 240, 0), 10);
        assert_eq!(Boundary::Truncate.window_len(10, 240, 235), 5);
        assert_eq!(Boundary::Truncate.window_len(10, 240, 239), 2);
        assert_eq!(Boundary::Pad.window_len(10, 240, 239), 10);
    }

    #[test]
    fn adjacent_vehicle_serves_passenger_after_one_step() {
        let (net, p) = two_nodes(4, 3);
        let mut arrivals = ArrivalMatrix::zeros(2, 4);
        arrivals.add(0, 1, 0, 1);
        let sc = Scenario {
            initial: FleetState::parked(2, &[1], p.gamma_init),
            network: net,
            params: p,
            outages: OutageSchedule::none(),
            arrivals,
        };
        let trace = run(&sc, &MpcOptions::default()).unwrap();
        assert!(trace.completed());
        audit_trace(&trace).unwrap();
        let waiting: u64 = trace.kpis.iter().map(|k| k.waiting).sum();
        assert_eq!(waiting, 1);
        assert_eq!(trace.kpis[0].relocations, 1);
        assert_eq!(trace.kpis[1].pickups, 1);
        let back = RunTrace::from_json(&trace.to_json()).unwrap();
        assert_eq!(back, RunTrace { wall_seconds: Vec::new(), ..trace });
    }

    #[test]
    fn impossible_cover_halts_with_diagnostic() {
        let (net, p) = two_nodes(4, 3);
        let sc = Scenario {
            initial: FleetState::parked(2, &[0], p.gamma_init),
            network: net,
            params: p,
            outages: OutageSchedule {
                events: vec![OutageEvent { node: 1, start_step: 0, end_step: 2 }],
                q_demand: 0.005,
                q_backup: 0.0,
            },
            arrivals: ArrivalMatrix::zeros(2, 4),
        };
        let trace = run(&sc, &MpcOptions::default()).unwrap();
        let halt = trace.halt.as_ref().unwrap();
        assert_eq!(halt.step, 0);
        assert_eq!(halt.outage_nodes, vec![1]);
        assert!(halt.message.contains("step 0"));
        assert!(trace.controls.is_empty());
        let relaxed = run(&sc, &MpcOptions { cover_penalty: Some(1e3), ..Default::default() }).unwrap();
        assert!(relaxed.completed());
    }
}
