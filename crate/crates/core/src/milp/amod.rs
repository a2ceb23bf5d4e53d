//! The fleet MILP over one prediction horizon: assembly, index layout and extraction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{InstanceError, MilpInstance, RowKey, Sense, VarKey, VarKind};
use crate::demand::ArrivalMatrix;
use crate::scenario::{ModelParams, Network, NodeId, OutageSchedule};
use crate::solver::Solution;
use crate::state::{ControlSet, Dispatch, FleetState, VehiclePosition, VehicleState};

/// Tolerance used when rounding binaries and reconciling continuous states.
pub const INTEGRALITY_TOL: f64 = 1e-6;
const ENERGY_EPS: f64 = 1e-9;

/// Column counts per variable family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub waiting: usize,
    pub transit: usize,
    pub parked: usize,
    pub soc: usize,
    pub charge: usize,
    pub discharge: usize,
    pub pickup: usize,
    pub relocate: usize,
    pub slack: usize,
}

impl FamilyCounts {
    pub fn total(&self) -> usize {
        self.waiting
            + self.transit
            + self.parked
            + self.soc
            + self.charge
            + self.discharge
            + self.pickup
            + self.relocate
            + self.slack
    }
}

/// Arithmetic column layout. Families are stored in contiguous blocks in the
/// order d, a, u, γ, e, g, v, r, s; `t` is always the fastest index.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub nodes: usize,
    pub vehicles: usize,
    pub horizon: usize,
    pub counts: FamilyCounts,
    slots: Vec<usize>,
    slot_offset: Vec<usize>,
    total_slots: usize,
    base: [usize; 9],
}

/// Declares the index space for `N` nodes, `K` vehicles and `T` steps.
pub fn index_variables(
    nodes: usize,
    vehicles: usize,
    horizon: usize,
    network: &Network,
) -> Result<VariableLayout, InstanceError> {
    VariableLayout::new(nodes, vehicles, horizon, network, false)
}

impl VariableLayout {
    pub fn new(
        nodes: usize,
        vehicles: usize,
        horizon: usize,
        network: &Network,
        with_slack: bool,
    ) -> Result<Self, InstanceError> {
        if nodes != network.len() {
            return Err(InstanceError::Dimension(format!(
                "layout for {nodes} nodes but network has {}",
                network.len()
            )));
        }
        if nodes == 0 || horizon == 0 {
            return Err(InstanceError::Dimension("nodes and horizon must be positive".into()));
        }
        let overflow = || InstanceError::IndexOverflow { nodes, vehicles, horizon };
        let slots: Vec<usize> = (0..nodes).map(|i| network.inbound_slots(i)).collect();
        let mut slot_offset = Vec::with_capacity(nodes);
        let mut total_slots = 0usize;
        for &s in &slots {
            slot_offset.push(total_slots);
            total_slots += s;
        }
        let mul = |xs: &[usize]| -> Result<usize, InstanceError> {
            xs.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x)).ok_or_else(overflow)
        };
        let pairs = mul(&[nodes, nodes - 1])?;
        let counts = FamilyCounts {
            waiting: mul(&[pairs, horizon])?,
            transit: mul(&[vehicles, total_slots, horizon])?,
            parked: mul(&[vehicles, nodes, horizon])?,
            soc: mul(&[vehicles, horizon])?,
            charge: mul(&[vehicles, horizon])?,
            discharge: mul(&[vehicles, horizon])?,
            pickup: mul(&[vehicles, pairs, horizon])?,
            relocate: mul(&[vehicles, pairs, horizon])?,
            slack: if with_slack { horizon } else { 0 },
        };
        let sizes = [
            counts.waiting,
            counts.transit,
            counts.parked,
            counts.soc,
            counts.charge,
            counts.discharge,
            counts.pickup,
            counts.relocate,
            counts.slack,
        ];
        let mut base = [0usize; 9];
        let mut acc = 0usize;
        for (b, s) in base.iter_mut().zip(sizes) {
            *b = acc;
            acc = acc.checked_add(s).ok_or_else(overflow)?;
        }
        // Backends address columns with 32-bit signed indices.
        if acc > i32::MAX as usize {
            return Err(overflow());
        }
        Ok(Self { nodes, vehicles, horizon, counts, slots, slot_offset, total_slots, base })
    }

    pub fn slots(&self, node: NodeId) -> usize {
        self.slots[node]
    }

    fn pair(&self, i: usize, j: usize) -> usize {
        i * (self.nodes - 1) + if j < i { j } else { j - 1 }
    }

    pub fn waiting(&self, i: usize, j: usize, t: usize) -> usize {
        self.base[0] + self.pair(i, j) * self.horizon + t
    }

    pub fn transit(&self, k: usize, i: usize, theta: usize, t: usize) -> usize {
        self.base[1] + ((k * self.total_slots + self.slot_offset[i] + theta) * self.horizon) + t
    }

    pub fn parked(&self, k: usize, i: usize, t: usize) -> usize {
        self.base[2] + (k * self.nodes + i) * self.horizon + t
    }

    pub fn soc(&self, k: usize, t: usize) -> usize {
        self.base[3] + k * self.horizon + t
    }

    pub fn charge(&self, k: usize, t: usize) -> usize {
        self.base[4] + k * self.horizon + t
    }

    pub fn discharge(&self, k: usize, t: usize) -> usize {
        self.base[5] + k * self.horizon + t
    }

    pub fn pickup(&self, k: usize, i: usize, j: usize, t: usize) -> usize {
        self.base[6] + (k * self.nodes * (self.nodes - 1) + self.pair(i, j)) * self.horizon + t
    }

    pub fn relocate(&self, k: usize, i: usize, j: usize, t: usize) -> usize {
        self.base[7] + (k * self.nodes * (self.nodes - 1) + self.pair(i, j)) * self.horizon + t
    }

    pub fn slack(&self, t: usize) -> usize {
        self.base[8] + t
    }

    /// Column of a key, or `None` when the key lies outside the layout.
    pub fn col(&self, key: &VarKey) -> Option<usize> {
        let n = self.nodes;
        let h = self.horizon;
        let pair_ok = |i: u32, j: u32| (i as usize) < n && (j as usize) < n && i != j;
        let veh_ok = |k: u32| (k as usize) < self.vehicles;
        let c = match *key {
            VarKey::Waiting { i, j, t } if pair_ok(i, j) && (t as usize) < h => {
                self.waiting(i as usize, j as usize, t as usize)
            }
            VarKey::Transit { k, i, theta, t }
                if veh_ok(k)
                    && (i as usize) < n
                    && (theta as usize) < self.slots[i as usize]
                    && (t as usize) < h =>
            {
                self.transit(k as usize, i as usize, theta as usize, t as usize)
            }
            VarKey::Parked { k, i, t } if veh_ok(k) && (i as usize) < n && (t as usize) < h => {
                self.parked(k as usize, i as usize, t as usize)
            }
            VarKey::Soc { k, t } if veh_ok(k) && (t as usize) < h => self.soc(k as usize, t as usize),
            VarKey::Charge { k, t } if veh_ok(k) && (t as usize) < h => {
                self.charge(k as usize, t as usize)
            }
            VarKey::Discharge { k, t } if veh_ok(k) && (t as usize) < h => {
                self.discharge(k as usize, t as usize)
            }
            VarKey::Pickup { k, i, j, t } if veh_ok(k) && pair_ok(i, j) && (t as usize) < h => {
                self.pickup(k as usize, i as usize, j as usize, t as usize)
            }
            VarKey::Relocate { k, i, j, t } if veh_ok(k) && pair_ok(i, j) && (t as usize) < h => {
                self.relocate(k as usize, i as usize, j as usize, t as usize)
            }
            VarKey::CoverSlack { t } if self.counts.slack > 0 && (t as usize) < h => {
                self.slack(t as usize)
            }
            _ => return None,
        };
        Some(c)
    }
}

/// Exogenous inputs over one prediction window, indexed by prediction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonWindow {
    pub nodes: usize,
    pub len: usize,
    /// `P_{ijt}`, row-major `(i, j, t)`. Fractional values are allowed for forecast windows.
    pub arrivals: Vec<f64>,
    /// `outage_{it}`, row-major `(i, t)`.
    pub outage: Vec<bool>,
    /// Electricity price per step.
    pub sigma: Vec<f64>,
    /// SOC the building must receive per step.
    pub requirement: Vec<f64>,
}

impl HorizonWindow {
    pub fn empty(nodes: usize, len: usize, sigma: f64) -> Self {
        Self {
            nodes,
            len,
            arrivals: vec![0.0; nodes * nodes * len],
            outage: vec![false; nodes * len],
            sigma: vec![sigma; len],
            requirement: vec![0.0; len],
        }
    }

    /// Window of `len` steps starting at real-time step `start`; anything at or
    /// beyond `horizon_l` is zero-padded.
    pub fn from_schedule(
        arrivals: &ArrivalMatrix,
        outages: &OutageSchedule,
        params: &ModelParams,
        start: usize,
        len: usize,
        horizon_l: usize,
    ) -> Self {
        let n = arrivals.nodes;
        let mut w = Self::empty(n, len, params.sigma);
        for t in 0..len {
            let step = start + t;
            w.sigma[t] = params.sigma_at(step);
            if step >= horizon_l {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        w.arrivals[(i * n + j) * len + t] = arrivals.get(i, j, step) as f64;
                    }
                }
            }
            for ev in outages.events.iter().filter(|e| e.covers(step) && e.node < n) {
                w.outage[ev.node * len + t] = true;
            }
            let active = (0..n).filter(|&i| w.outage[i * len + t]).count();
            w.requirement[t] = active as f64 * outages.shortfall();
        }
        w
    }

    pub fn arrivals(&self, i: NodeId, j: NodeId, t: usize) -> f64 {
        self.arrivals[(i * self.nodes + j) * self.len + t]
    }

    pub fn set_arrivals(&mut self, i: NodeId, j: NodeId, t: usize, value: f64) {
        self.arrivals[(i * self.nodes + j) * self.len + t] = value;
    }

    pub fn outage(&self, i: NodeId, t: usize) -> bool {
        self.outage[i * self.len + t]
    }

    pub fn active_outage_nodes(&self, t: usize) -> Vec<NodeId> {
        (0..self.nodes).filter(|&i| self.outage(i, t)).collect()
    }
}

/// Everything needed to assemble one horizon MILP.
#[derive(Debug, Clone, PartialEq)]
pub struct AmodProblem {
    pub network: Arc<Network>,
    pub params: ModelParams,
    pub state: FleetState,
    pub window: HorizonWindow,
    /// Penalty per SOC unit of uncovered building demand; `None` keeps the cover hard.
    pub cover_penalty: Option<f64>,
}

impl AmodProblem {
    pub fn new(
        network: Arc<Network>,
        params: ModelParams,
        state: FleetState,
        window: HorizonWindow,
    ) -> Result<Self, InstanceError> {
        let p = Self { network, params, state, window, cover_penalty: None };
        p.check_dimensions()?;
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.window.len
    }

    pub fn layout(&self) -> Result<VariableLayout, InstanceError> {
        VariableLayout::new(
            self.network.len(),
            self.state.fleet_size(),
            self.horizon(),
            &self.network,
            self.cover_penalty.is_some(),
        )
    }

    fn check_dimensions(&self) -> Result<(), InstanceError> {
        let n = self.network.len();
        if self.window.nodes != n {
            return Err(InstanceError::Dimension(format!(
                "window covers {} nodes, network has {n}",
                self.window.nodes
            )));
        }
        let t = self.window.len;
        if self.window.arrivals.len() != n * n * t
            || self.window.outage.len() != n * t
            || self.window.sigma.len() != t
            || self.window.requirement.len() != t
        {
            return Err(InstanceError::Dimension("window tables do not match its length".into()));
        }
        if t < 2 {
            return Err(InstanceError::Dimension(format!("horizon must be at least 2, got {t}")));
        }
        self.state.validate(&self.network, &self.params)?;
        Ok(())
    }
}

/// Assembles the horizon MILP for `problem`.
pub fn assemble(problem: AmodProblem) -> Result<MilpInstance, InstanceError> {
    problem.check_dimensions()?;
    let lay = problem.layout()?;
    let net = &*problem.network;
    let p = &problem.params;
    let w = &problem.window;
    let s = &problem.state;
    let n = lay.nodes;
    let kk = lay.vehicles;
    let h = lay.horizon;
    let mut m = MilpInstance::new();
    m.columns.reserve(lay.counts.total());

    let u32_ = |x: usize| x as u32;
    let fixed = |v: f64| (v, v);

    // d
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for t in 0..h {
                let (lo, hi) =
                    if t == 0 { fixed(s.waiting(i, j) as f64) } else { (0.0, f64::INFINITY) };
                let key = VarKey::Waiting { i: u32_(i), j: u32_(j), t: u32_(t) };
                m.add_column(key, VarKind::Continuous, lo, hi, 1.0)?;
            }
        }
    }
    // a
    for k in 0..kk {
        for i in 0..n {
            for theta in 0..lay.slots(i) {
                for t in 0..h {
                    let (lo, hi) = if t == 0 {
                        fixed(s.transit_flag(k, i, theta as u32) as u8 as f64)
                    } else {
                        (0.0, 1.0)
                    };
                    let key =
                        VarKey::Transit { k: u32_(k), i: u32_(i), theta: u32_(theta), t: u32_(t) };
                    m.add_column(key, VarKind::Binary, lo, hi, 0.0)?;
                }
            }
        }
    }
    // u
    for k in 0..kk {
        for i in 0..n {
            for t in 0..h {
                let (lo, hi) =
                    if t == 0 { fixed(s.parked_flag(k, i) as u8 as f64) } else { (0.0, 1.0) };
                let key = VarKey::Parked { k: u32_(k), i: u32_(i), t: u32_(t) };
                m.add_column(key, VarKind::Binary, lo, hi, 0.0)?;
            }
        }
    }
    // γ
    for k in 0..kk {
        for t in 0..h {
            let (lo, hi) =
                if t == 0 { fixed(s.vehicles[k].soc) } else { (p.gamma_min, p.gamma_max) };
            m.add_column(VarKey::Soc { k: u32_(k), t: u32_(t) }, VarKind::Continuous, lo, hi, 0.0)?;
        }
    }
    // e
    for k in 0..kk {
        for t in 0..h {
            let cost = p.rho2 * w.sigma[t];
            let key = VarKey::Charge { k: u32_(k), t: u32_(t) };
            m.add_column(key, VarKind::Continuous, 0.0, p.theta_c, cost)?;
        }
    }
    // g
    for k in 0..kk {
        for t in 0..h {
            let cost = p.rho2 * (p.omega - p.eta * w.sigma[t]);
            let key = VarKey::Discharge { k: u32_(k), t: u32_(t) };
            m.add_column(key, VarKind::Continuous, 0.0, p.theta_v2b, cost)?;
        }
    }
    // v, r; a pickup needs someone who can have arrived by t
    let mut reachable = vec![false; n * n * h];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut seen = s.waiting(i, j) as f64;
            for t in 0..h {
                seen += w.arrivals(i, j, t);
                reachable[(i * n + j) * h + t] = seen > 0.0;
            }
        }
    }
    for (relocate, rho) in [(false, 0.0), (true, p.rho1)] {
        for k in 0..kk {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    for t in 0..h {
                        let (k32, i32_, j32, t32) = (u32_(k), u32_(i), u32_(j), u32_(t));
                        let key = if relocate {
                            VarKey::Relocate { k: k32, i: i32_, j: j32, t: t32 }
                        } else {
                            VarKey::Pickup { k: k32, i: i32_, j: j32, t: t32 }
                        };
                        let cost = rho * net.steps(i, j) as f64;
                        let hi = if relocate || reachable[(i * n + j) * h + t] { 1.0 } else { 0.0 };
                        m.add_column(key, VarKind::Binary, 0.0, hi, cost)?;
                    }
                }
            }
        }
    }
    if let Some(penalty) = problem.cover_penalty {
        for t in 0..h {
            m.add_column(VarKey::CoverSlack { t: u32_(t) }, VarKind::Continuous, 0.0, f64::INFINITY, penalty)?;
        }
    }
    debug_assert_eq!(m.num_cols(), lay.counts.total());

    let departures = |k: usize, i: usize, t: usize| -> Vec<(usize, f64)> {
        (0..n)
            .filter(|&j| j != i)
            .flat_map(|j| [(lay.pickup(k, i, j, t), 1.0), (lay.relocate(k, i, j, t), 1.0)])
            .collect()
    };

    for t in 0..h {
        let last = t + 1 == h;
        let t32 = u32_(t);
        if !last {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let mut terms = vec![(lay.waiting(i, j, t + 1), 1.0), (lay.waiting(i, j, t), -1.0)];
                    terms.extend((0..kk).map(|k| (lay.pickup(k, i, j, t), 1.0)));
                    let key = RowKey::QueueFlow { i: u32_(i), j: u32_(j), t: t32 };
                    m.add_row(key, terms, Sense::Eq, w.arrivals(i, j, t))?;
                }
            }
            for k in 0..kk {
                for i in 0..n {
                    let slots = lay.slots(i);
                    for theta in 0..slots {
                        let mut terms = vec![(lay.transit(k, i, theta, t + 1), 1.0)];
                        if theta + 1 < slots {
                            terms.push((lay.transit(k, i, theta + 1, t), -1.0));
                        }
                        for j in (0..n).filter(|&j| j != i && net.steps(j, i) as usize == theta + 1) {
                            terms.push((lay.pickup(k, j, i, t), -1.0));
                            terms.push((lay.relocate(k, j, i, t), -1.0));
                        }
                        let key = RowKey::Movement { k: u32_(k), i: u32_(i), theta: u32_(theta), t: t32 };
                        m.add_row(key, terms, Sense::Eq, 0.0)?;
                    }
                    let mut terms = vec![(lay.parked(k, i, t + 1), 1.0), (lay.parked(k, i, t), -1.0)];
                    if slots > 0 {
                        terms.push((lay.transit(k, i, 0, t), -1.0));
                    }
                    terms.extend(departures(k, i, t));
                    m.add_row(RowKey::Parking { k: u32_(k), i: u32_(i), t: t32 }, terms, Sense::Eq, 0.0)?;
                }
                let mut terms = vec![
                    (lay.soc(k, t + 1), 1.0),
                    (lay.soc(k, t), -1.0),
                    (lay.charge(k, t), -1.0),
                    (lay.discharge(k, t), 1.0),
                ];
                for i in 0..n {
                    terms.extend((0..lay.slots(i)).map(|th| (lay.transit(k, i, th, t + 1), p.theta_d)));
                }
                m.add_row(RowKey::SocFlow { k: u32_(k), t: t32 }, terms, Sense::Eq, 0.0)?;

                let mut terms: Vec<(usize, f64)> = (0..n).map(|i| (lay.parked(k, i, t + 1), 1.0)).collect();
                for i in 0..n {
                    terms.extend(departures(k, i, t));
                }
                m.add_row(RowKey::SingleTask { k: u32_(k), t: t32 }, terms, Sense::Le, 1.0)?;
            }
        } else {
            // No successor step: departures must still come from where the
            // vehicle is, and the last charge/discharge must keep SOC in range.
            for k in 0..kk {
                for i in 0..n {
                    let mut terms = departures(k, i, t);
                    terms.push((lay.parked(k, i, t), -1.0));
                    if lay.slots(i) > 0 {
                        terms.push((lay.transit(k, i, 0, t), -1.0));
                    }
                    let key = RowKey::TerminalDeparture { k: u32_(k), i: u32_(i) };
                    m.add_row(key, terms, Sense::Le, 0.0)?;
                }
                let terms = [(lay.soc(k, t), 1.0), (lay.charge(k, t), 1.0), (lay.discharge(k, t), -1.0)];
                m.add_row(RowKey::TerminalSocMin { k: u32_(k) }, terms, Sense::Ge, p.gamma_min)?;
                m.add_row(RowKey::TerminalSocMax { k: u32_(k) }, terms, Sense::Le, p.gamma_max)?;
            }
        }

        for k in 0..kk {
            let mut terms: Vec<(usize, f64)> = (0..n).map(|i| (lay.parked(k, i, t), 1.0)).collect();
            for i in 0..n {
                terms.extend((0..lay.slots(i)).map(|th| (lay.transit(k, i, th, t), 1.0)));
            }
            m.add_row(RowKey::OneHot { k: u32_(k), t: t32 }, terms, Sense::Eq, 1.0)?;
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let mut terms: Vec<(usize, f64)> = (0..kk).map(|k| (lay.pickup(k, i, j, t), 1.0)).collect();
                terms.push((lay.waiting(i, j, t), -1.0));
                let key = RowKey::PickupLimit { i: u32_(i), j: u32_(j), t: t32 };
                m.add_row(key, terms, Sense::Le, w.arrivals(i, j, t))?;
            }
        }
        for k in 0..kk {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let reserve = -p.theta_d * net.steps(i, j) as f64;
                    let terms = [
                        (lay.soc(k, t), 1.0),
                        (lay.pickup(k, i, j, t), reserve),
                        (lay.relocate(k, i, j, t), reserve),
                    ];
                    let key = RowKey::SocFloor { k: u32_(k), i: u32_(i), j: u32_(j), t: t32 };
                    m.add_row(key, terms, Sense::Ge, p.gamma_min)?;
                }
            }
            let mut terms = vec![(lay.charge(k, t), 1.0)];
            terms.extend(
                (0..n).filter(|&i| !w.outage(i, t)).map(|i| (lay.parked(k, i, t), -p.theta_c)),
            );
            m.add_row(RowKey::ChargeLimit { k: u32_(k), t: t32 }, terms, Sense::Le, 0.0)?;
            let mut terms = vec![(lay.discharge(k, t), 1.0)];
            terms.extend((0..n).filter(|&i| w.outage(i, t)).map(|i| (lay.parked(k, i, t), -p.theta_v2b)));
            m.add_row(RowKey::DischargeLimit { k: u32_(k), t: t32 }, terms, Sense::Le, 0.0)?;
        }
        if w.requirement[t] > 0.0 {
            let mut terms: Vec<(usize, f64)> = (0..kk).map(|k| (lay.discharge(k, t), p.eta)).collect();
            if problem.cover_penalty.is_some() {
                terms.push((lay.slack(t), 1.0));
            }
            m.add_row(RowKey::EmergencyCover { t: t32 }, terms, Sense::Ge, w.requirement[t])?;
        }
    }

    m.origin = Some(Arc::new(problem));
    Ok(m)
}

/// Per-step objective components recomputed from a solution vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `ξ^x_t`: waiting passengers.
    pub waiting: Vec<f64>,
    /// `ξ^u_t`: relocation steps started.
    pub relocation: Vec<f64>,
    /// `ξ^m_t`: charging cost net of V2B revenue plus cycling cost.
    pub energy: Vec<f64>,
    /// Uncovered building demand (relaxed mode).
    pub slack: Vec<f64>,
    pub rho1: f64,
    pub rho2: f64,
    pub cover_penalty: f64,
}

impl ObjectiveTerms {
    /// Evaluates the objective components directly from the model definition.
    pub fn from_values(problem: &AmodProblem, values: &[f64]) -> Result<Self, InstanceError> {
        let lay = problem.layout()?;
        if values.len() != lay.counts.total() {
            return Err(InstanceError::SolutionLength { expected: lay.counts.total(), got: values.len() });
        }
        let p = &problem.params;
        let net = &*problem.network;
        let (n, kk, h) = (lay.nodes, lay.vehicles, lay.horizon);
        let mut out = Self {
            rho1: p.rho1,
            rho2: p.rho2,
            cover_penalty: problem.cover_penalty.unwrap_or(0.0),
            ..Default::default()
        };
        for t in 0..h {
            let mut x = 0.0;
            let mut u = 0.0;
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    x += values[lay.waiting(i, j, t)];
                    for k in 0..kk {
                        u += net.steps(i, j) as f64 * values[lay.relocate(k, i, j, t)];
                    }
                }
            }
            let sigma = problem.window.sigma[t];
            let energy: f64 = (0..kk)
                .map(|k| {
                    let e = values[lay.charge(k, t)];
                    let g = values[lay.discharge(k, t)];
                    (e - p.eta * g) * sigma + p.omega * g
                })
                .sum();
            out.waiting.push(x);
            out.relocation.push(u);
            out.energy.push(energy);
            out.slack.push(if lay.counts.slack > 0 { values[lay.slack(t)] } else { 0.0 });
        }
        Ok(out)
    }

    pub fn total(&self) -> f64 {
        (0..self.waiting.len())
            .map(|t| {
                self.waiting[t]
                    + self.rho1 * self.relocation[t]
                    + self.rho2 * self.energy[t]
                    + self.cover_penalty * self.slack[t]
            })
            .sum()
    }
}

fn origin_of(instance: &MilpInstance) -> Result<&AmodProblem, InstanceError> {
    instance.origin.as_deref().ok_or(InstanceError::NotAnAmodInstance)
}

fn usable_values<'a>(instance: &MilpInstance, solution: &'a Solution) -> Result<&'a [f64], InstanceError> {
    if !solution.status.has_solution() {
        return Err(InstanceError::Unsolved(solution.status));
    }
    if solution.values.len() != instance.num_cols() {
        return Err(InstanceError::SolutionLength {
            expected: instance.num_cols(),
            got: solution.values.len(),
        });
    }
    Ok(&solution.values)
}

fn clean_energy(x: f64) -> f64 {
    if x.abs() <= ENERGY_EPS { 0.0 } else { x }
}

/// First-step controls of a solved horizon MILP.
pub fn extract_controls(instance: &MilpInstance, solution: &Solution) -> Result<ControlSet, InstanceError> {
    let problem = origin_of(instance)?;
    let values = usable_values(instance, solution)?;
    let lay = problem.layout()?;
    let (n, kk) = (lay.nodes, lay.vehicles);
    let mut controls = ControlSet::idle(kk);
    for k in 0..kk {
        let mut tasks = 0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let d = Dispatch { vehicle: k, from: i, to: j };
                if values[lay.pickup(k, i, j, 0)] > 0.5 {
                    controls.pickups.push(d);
                    tasks += 1;
                }
                if values[lay.relocate(k, i, j, 0)] > 0.5 {
                    controls.relocations.push(d);
                    tasks += 1;
                }
            }
        }
        if tasks > 1 {
            return Err(InstanceError::Rounding { vehicle: k, constraint: "single task" });
        }
        if let Some(d) = controls.dispatch_of(k) {
            if problem.state.vehicles[k].position.available_at() != Some(d.from) {
                return Err(InstanceError::Rounding { vehicle: k, constraint: "departure location" });
            }
        }
        let e = clean_energy(values[lay.charge(k, 0)]);
        let g = clean_energy(values[lay.discharge(k, 0)]);
        if e > 0.0 && g > 0.0 {
            return Err(InstanceError::Rounding { vehicle: k, constraint: "charge/discharge exclusivity" });
        }
        controls.charge[k] = e.max(0.0);
        controls.discharge[k] = g.max(0.0);
    }
    controls.delivered = problem.params.eta * controls.discharge.iter().sum::<f64>();
    Ok(controls)
}

/// State at prediction step 1, handed over as the next real-time state.
pub fn extract_next_state(instance: &MilpInstance, solution: &Solution) -> Result<FleetState, InstanceError> {
    let problem = origin_of(instance)?;
    let values = usable_values(instance, solution)?;
    let controls = extract_controls(instance, solution)?;
    let lay = problem.layout()?;
    let (n, kk) = (lay.nodes, lay.vehicles);
    let mut next = problem.state.clone();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let d = values[lay.waiting(i, j, 1)];
            let r = d.round();
            if (d - r).abs() > INTEGRALITY_TOL || r < 0.0 {
                return Err(InstanceError::Extraction(format!(
                    "waiting count d[{i},{j}] = {d} is not a non-negative integer"
                )));
            }
            next.set_waiting(i, j, r as u32);
        }
    }
    for k in 0..kk {
        let mut found: Vec<VehiclePosition> = Vec::new();
        for i in 0..n {
            if values[lay.parked(k, i, 1)] > 0.5 {
                found.push(VehiclePosition::Parked { node: i });
            }
            for theta in 0..lay.slots(i) {
                if values[lay.transit(k, i, theta, 1)] > 0.5 {
                    found.push(VehiclePosition::EnRoute { to: i, remaining: theta as u32 });
                }
            }
        }
        let [position] = found[..] else {
            return Err(InstanceError::Rounding { vehicle: k, constraint: "one-hot location" });
        };
        let moving = if position.is_moving() { problem.params.theta_d } else { 0.0 };
        let soc = problem.state.vehicles[k].soc + controls.charge[k] - controls.discharge[k] - moving;
        let solved = values[lay.soc(k, 1)];
        if (soc - solved).abs() > INTEGRALITY_TOL {
            return Err(InstanceError::Extraction(format!(
                "vehicle {k}: SOC {solved} at step 1 disagrees with the applied controls ({soc})"
            )));
        }
        next.vehicles[k] = VehicleState { position, soc };
    }
    next.validate(&problem.network, &problem.params)?;
    Ok(next)
}
