//! Exhaustive reference solver for tiny instances.
//!
//! Fleet instances are solved by a memoised enumeration over every integer
//! control sequence (pickups and relocations per vehicle and step), with the
//! state recursions evaluated by this module's own code. Charge and discharge
//! amounts are enumerated over a finite candidate set: zero, the rate bound,
//! the value that makes the SOC cap or floor tight, and for at most one
//! vehicle per step the value that makes the building cover tight. With a
//! linear objective the optimum sits on one of these points whenever no SOC
//! bound binds across several steps; the oracle-scale fixtures are built
//! inside that regime. At the last prediction step departures are not
//! enumerated: they cannot lower the objective (pickups cost nothing and
//! change no counted state, relocations cost `ρ1·t`).
//!
//! The optimum is written back into a full column vector and checked
//! against the instance's own rows and objective; any disagreement is a
//! `Mismatch`, never a silent answer.
//!
//! Generic instances without a fleet model must be pure binary and are
//! brute-forced.

use std::collections::HashMap;

use super::{Solution, SolveStatus};
use crate::milp::{AmodProblem, MilpInstance, VarKind, VariableLayout};
use crate::scenario::NodeId;
use crate::state::VehiclePosition;

/// Default refusal threshold on the nominal branching product.
pub const DEFAULT_ORACLE_LIMIT: f64 = 1e12;

const TOL: f64 = 1e-9;
const CHECK_TOL: f64 = 1e-7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large for exhaustive enumeration: nominal branching {branching:.3e} exceeds the limit {limit:.3e} ({detail})")]
    TooLarge { branching: f64, limit: f64, detail: String },
    #[error("instance has {0} free continuous columns and no fleet model to enumerate them")]
    Unsupported(usize),
    #[error("oracle optimum disagrees with the instance: {0}")]
    Mismatch(String),
}

/// Nominal size of the enumeration tree for a fleet problem.
pub fn branching_product(problem: &AmodProblem) -> f64 {
    let n = problem.network.len() as f64;
    let per_vehicle_step = (1.0 + 2.0 * (n - 1.0)) * 6.0;
    per_vehicle_step.powf((problem.state.fleet_size() * problem.horizon()) as f64)
}

pub fn oracle_solve(instance: &MilpInstance, limit: f64) -> Result<Solution, OracleError> {
    match instance.origin.as_deref() {
        Some(problem) => solve_fleet(instance, problem, limit),
        None => solve_binary(instance, limit),
    }
}

fn solve_binary(instance: &MilpInstance, limit: f64) -> Result<Solution, OracleError> {
    let free: Vec<usize> = (0..instance.num_cols())
        .filter(|&c| instance.columns[c].lower != instance.columns[c].upper)
        .collect();
    let continuous = free.iter().filter(|&&c| instance.columns[c].kind == VarKind::Continuous).count();
    if continuous > 0 {
        return Err(OracleError::Unsupported(continuous));
    }
    let branching = 2f64.powi(free.len() as i32);
    if branching > limit || free.len() >= 63 {
        return Err(OracleError::TooLarge {
            branching,
            limit,
            detail: format!("{} free binaries", free.len()),
        });
    }
    let mut x: Vec<f64> = instance.columns.iter().map(|c| c.lower).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u64..(1u64 << free.len()) {
        for (b, &c) in free.iter().enumerate() {
            let col = &instance.columns[c];
            x[c] = if mask >> b & 1 == 1 { col.upper } else { col.lower };
        }
        if instance.max_violation(&x).0 > TOL {
            continue;
        }
        let obj = instance.objective_value(&x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x.clone()));
        }
    }
    Ok(match best {
        Some((objective, values)) => Solution { status: SolveStatus::Optimal, objective, bound: objective, values },
        None => Solution::infeasible(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Task {
    from: NodeId,
    to: NodeId,
    relocate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Discharge {
    Fixed(f64),
    /// Whatever remains of the building requirement, up to `max`.
    Fill { max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Choice {
    task: Option<Task>,
    e: f64,
    g: Discharge,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    d: Vec<f64>,
    pos: Vec<VehiclePosition>,
    soc: Vec<f64>,
}

type Key = (usize, Vec<i64>, Vec<VehiclePosition>, Vec<i64>);

#[derive(Debug, Clone)]
struct Decision {
    tasks: Vec<Option<Task>>,
    e: Vec<f64>,
    g: Vec<f64>,
    slack: f64,
}

struct Dp<'a> {
    p: &'a AmodProblem,
    n: usize,
    k: usize,
    h: usize,
    pairs: Vec<(NodeId, NodeId)>,
    memo: HashMap<Key, Option<(f64, Decision)>>,
}

fn quant(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

impl<'a> Dp<'a> {
    fn key(&self, t: usize, s: &Node) -> Key {
        (t, s.d.iter().map(|&x| quant(x)).collect(), s.pos.clone(), s.soc.iter().map(|&x| quant(x)).collect())
    }

    fn pair_index(&self, i: NodeId, j: NodeId) -> usize {
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }

    fn vehicle_choices(&self, t: usize, s: &Node, k: usize) -> Vec<Choice> {
        let p = &self.p.params;
        let w = &self.p.window;
        let net = &*self.p.network;
        let last = t + 1 == self.h;
        let pos = s.pos[k];
        let soc = s.soc[k];
        let mut tasks = vec![None];
        if let (Some(from), false) = (pos.available_at(), last) {
            for to in (0..self.n).filter(|&to| to != from) {
                if soc + TOL < p.gamma_min + p.theta_d * net.steps(from, to) as f64 {
                    continue;
                }
                if s.d[self.pair_index(from, to)] + w.arrivals(from, to, t) >= 1.0 - TOL {
                    tasks.push(Some(Task { from, to, relocate: false }));
                }
                tasks.push(Some(Task { from, to, relocate: true }));
            }
        }
        let parked_at = match pos {
            VehiclePosition::Parked { node } => Some(node),
            VehiclePosition::EnRoute { .. } => None,
        };
        let mut out = Vec::new();
        for task in tasks {
            let moving = !last
                && (task.is_some() || matches!(pos, VehiclePosition::EnRoute { remaining, .. } if remaining > 0));
            let base = soc - if moving { p.theta_d } else { 0.0 };
            let mut energy: Vec<(f64, Discharge)> = vec![(0.0, Discharge::Fixed(0.0))];
            if let Some(node) = parked_at {
                if !w.outage(node, t) {
                    let cap = (p.gamma_max - base).clamp(0.0, p.theta_c);
                    for e in [p.theta_c, cap] {
                        if e > 0.0 && !energy.iter().any(|&(x, _)| (x - e).abs() <= TOL) {
                            energy.push((e, Discharge::Fixed(0.0)));
                        }
                    }
                } else {
                    let floor = (base - p.gamma_min).clamp(0.0, p.theta_v2b);
                    let mut gs: Vec<f64> = Vec::new();
                    for g in [p.theta_v2b, floor] {
                        if g > 0.0 && !gs.iter().any(|&x| (x - g).abs() <= TOL) {
                            gs.push(g);
                        }
                    }
                    energy.extend(gs.into_iter().map(|g| (0.0, Discharge::Fixed(g))));
                    if w.requirement[t] > 0.0 && floor > 0.0 {
                        energy.push((0.0, Discharge::Fill { max: floor }));
                    }
                }
            }
            for (e, g) in energy {
                if let Discharge::Fixed(g) = g {
                    let next = base + e - g;
                    if next < p.gamma_min - TOL || next > p.gamma_max + TOL {
                        continue;
                    }
                }
                out.push(Choice { task, e, g });
            }
        }
        out
    }

    fn best(&mut self, t: usize, s: &Node) -> Option<f64> {
        if t == self.h {
            return Some(0.0);
        }
        let key = self.key(t, s);
        if let Some(v) = self.memo.get(&key) {
            return v.as_ref().map(|(c, _)| *c);
        }
        let result = self.expand(t, s);
        let cost = result.as_ref().map(|(c, _)| *c);
        self.memo.insert(key, result);
        cost
    }

    fn expand(&mut self, t: usize, s: &Node) -> Option<(f64, Decision)> {
        let choices: Vec<Vec<Choice>> = (0..self.k).map(|k| self.vehicle_choices(t, s, k)).collect();
        if choices.iter().any(|c| c.is_empty()) {
            return None;
        }
        let mut best: Option<(f64, Decision)> = None;
        let mut idx = vec![0usize; self.k];
        loop {
            let pick: Vec<Choice> = (0..self.k).map(|k| choices[k][idx[k]]).collect();
            if let Some((stage, decision, next)) = self.apply(t, s, &pick) {
                if let Some(rest) = self.best(t + 1, &next) {
                    let total = stage + rest;
                    if best.as_ref().map_or(true, |(b, _)| total < *b - 1e-12) {
                        best = Some((total, decision));
                    }
                }
            }
            // odometer over per-vehicle choices
            let mut k = 0;
            loop {
                if k == self.k {
                    return best;
                }
                idx[k] += 1;
                if idx[k] < choices[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Joint feasibility, stage cost and successor of one combined decision.
    fn apply(&self, t: usize, s: &Node, pick: &[Choice]) -> Option<(f64, Decision, Node)> {
        let p = &self.p.params;
        let w = &self.p.window;
        let net = &*self.p.network;
        let last = t + 1 == self.h;
        if pick.iter().filter(|c| matches!(c.g, Discharge::Fill { .. })).count() > 1 {
            return None;
        }
        let mut picked = vec![0.0; self.pairs.len()];
        for c in pick {
            if let Some(Task { from, to, relocate: false }) = c.task {
                picked[self.pair_index(from, to)] += 1.0;
            }
        }
        for (q, &(i, j)) in self.pairs.iter().enumerate() {
            if picked[q] > s.d[q] + w.arrivals(i, j, t) + TOL {
                return None;
            }
        }
        let fixed_g: f64 = pick.iter().map(|c| if let Discharge::Fixed(g) = c.g { g } else { 0.0 }).sum();
        let req = w.requirement[t];
        let mut g: Vec<f64> = Vec::with_capacity(self.k);
        for c in pick {
            g.push(match c.g {
                Discharge::Fixed(x) => x,
                Discharge::Fill { max } => {
                    let need = req / p.eta - fixed_g;
                    if need <= TOL || need > max + TOL {
                        return None;
                    }
                    need.min(max)
                }
            });
        }
        let delivered = p.eta * g.iter().sum::<f64>();
        let shortfall = (req - delivered).max(0.0);
        let slack = match self.p.cover_penalty {
            Some(_) => shortfall,
            None if shortfall > TOL => return None,
            None => 0.0,
        };

        let mut next = Node { d: s.d.clone(), pos: s.pos.clone(), soc: s.soc.clone() };
        for (q, &(i, j)) in self.pairs.iter().enumerate() {
            next.d[q] = s.d[q] + w.arrivals(i, j, t) - picked[q];
        }
        let sigma = w.sigma[t];
        let mut stage: f64 = s.d.iter().sum();
        for (k, c) in pick.iter().enumerate() {
            let pos = match (c.task, s.pos[k]) {
                (Some(task), _) => VehiclePosition::EnRoute { to: task.to, remaining: net.steps(task.from, task.to) - 1 },
                (None, VehiclePosition::EnRoute { to, remaining: 0 }) => VehiclePosition::Parked { node: to },
                (None, VehiclePosition::EnRoute { to, remaining }) => VehiclePosition::EnRoute { to, remaining: remaining - 1 },
                (None, parked) => parked,
            };
            let burn = if !last && pos.is_moving() { p.theta_d } else { 0.0 };
            let soc = s.soc[k] + c.e - g[k] - burn;
            if soc < p.gamma_min - TOL || soc > p.gamma_max + TOL {
                return None;
            }
            next.pos[k] = pos;
            next.soc[k] = soc;
            if let Some(Task { from, to, relocate: true }) = c.task {
                stage += p.rho1 * net.steps(from, to) as f64;
            }
            stage += p.rho2 * ((c.e - p.eta * g[k]) * sigma + p.omega * g[k]);
        }
        stage += self.p.cover_penalty.unwrap_or(0.0) * slack;
        let decision = Decision { tasks: pick.iter().map(|c| c.task).collect(), e: pick.iter().map(|c| c.e).collect(), g, slack };
        Some((stage, decision, next))
    }

    fn successor(&self, t: usize, s: &Node, d: &Decision) -> Node {
        let pick: Vec<Choice> = (0..self.k)
            .map(|k| Choice { task: d.tasks[k], e: d.e[k], g: Discharge::Fixed(d.g[k]) })
            .collect();
        self.apply(t, s, &pick).expect("recorded decision is feasible").2
    }
}

fn solve_fleet(instance: &MilpInstance, problem: &AmodProblem, limit: f64) -> Result<Solution, OracleError> {
    let branching = branching_product(problem);
    if branching > limit {
        return Err(OracleError::TooLarge {
            branching,
            limit,
            detail: format!(
                "N={}, K={}, T={}",
                problem.network.len(),
                problem.state.fleet_size(),
                problem.horizon()
            ),
        });
    }
    let lay = problem.layout().map_err(|e| OracleError::Mismatch(e.to_string()))?;
    if lay.counts.total() != instance.num_cols() {
        return Err(OracleError::Mismatch(format!(
            "instance has {} columns, the fleet model implies {}",
            instance.num_cols(),
            lay.counts.total()
        )));
    }
    let n = problem.network.len();
    let pairs: Vec<(NodeId, NodeId)> =
        (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let state = &problem.state;
    let root = Node {
        d: pairs.iter().map(|&(i, j)| state.waiting(i, j) as f64).collect(),
        pos: state.vehicles.iter().map(|v| v.position).collect(),
        soc: state.vehicles.iter().map(|v| v.soc).collect(),
    };
    let mut dp = Dp { p: problem, n, k: state.fleet_size(), h: problem.horizon(), pairs, memo: HashMap::new() };
    if root.soc.iter().any(|&s| s < problem.params.gamma_min - TOL || s > problem.params.gamma_max + TOL) {
        return Ok(Solution::infeasible());
    }
    let Some(cost) = dp.best(0, &root) else {
        return Ok(Solution::infeasible());
    };

    let mut values = vec![0.0; instance.num_cols()];
    let mut node = root;
    for t in 0..dp.h {
        let key = dp.key(t, &node);
        let decision = dp.memo[&key].as_ref().expect("optimal path is feasible").1.clone();
        write_step(&lay, &dp, t, &node, &decision, &mut values);
        if t + 1 < dp.h {
            node = dp.successor(t, &node, &decision);
        }
    }

    let (viol, at) = instance.max_violation(&values);
    if viol > CHECK_TOL {
        return Err(OracleError::Mismatch(format!("enumerated optimum violates {at} by {viol:.3e}")));
    }
    let objective = instance.objective_value(&values);
    if (objective - cost).abs() > CHECK_TOL * cost.abs().max(1.0) {
        return Err(OracleError::Mismatch(format!(
            "enumerated cost {cost} but the instance objective evaluates to {objective}"
        )));
    }
    Ok(Solution { status: SolveStatus::Optimal, objective, bound: objective, values })
}

fn write_step(lay: &VariableLayout, dp: &Dp<'_>, t: usize, s: &Node, d: &Decision, x: &mut [f64]) {
    for (q, &(i, j)) in dp.pairs.iter().enumerate() {
        x[lay.waiting(i, j, t)] = s.d[q];
    }
    for k in 0..dp.k {
        match s.pos[k] {
            VehiclePosition::Parked { node } => x[lay.parked(k, node, t)] = 1.0,
            VehiclePosition::EnRoute { to, remaining } => x[lay.transit(k, to, remaining as usize, t)] = 1.0,
        }
        x[lay.soc(k, t)] = s.soc[k];
        x[lay.charge(k, t)] = d.e[k];
        x[lay.discharge(k, t)] = d.g[k];
        if let Some(task) = d.tasks[k] {
            let c = if task.relocate { lay.relocate(k, task.from, task.to, t) } else { lay.pickup(k, task.from, task.to, t) };
            x[c] = 1.0;
        }
    }
    if lay.counts.slack > 0 {
        x[lay.slack(t)] = d.slack;
    }
}
