//! Outage masks, the building's emergency requirement and the V2B cost model.

use serde::{Deserialize, Serialize};

use crate::scenario::{NodeId, OutageEvent, OutageSchedule};

const HOURS_PER_YEAR: f64 = 8760.0;

/// `outage_{it}` over `nodes × steps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutageMask {
    pub nodes: usize,
    pub steps: usize,
    flags: Vec<bool>,
}

impl OutageMask {
    pub fn get(&self, node: NodeId, step: usize) -> bool {
        node < self.nodes && step < self.steps && self.flags[node * self.steps + step]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Nodes with an active outage at `step`.
    pub fn active_nodes(&self, step: usize) -> Vec<NodeId> {
        (0..self.nodes).filter(|&i| self.get(i, step)).collect()
    }
}

/// Builds the mask; overlapping events on one node are merged and reported.
pub fn outage_mask(schedule: &OutageSchedule, nodes: usize, steps: usize) -> (OutageMask, Vec<String>) {
    let mut flags = vec![false; nodes * steps];
    let mut warnings = Vec::new();
    for (a, ev) in schedule.events.iter().enumerate() {
        for other in &schedule.events[..a] {
            if overlaps(ev, other) {
                let msg = format!(
                    "outage events [{}, {}) and [{}, {}) at node {} overlap; merged",
                    other.start_step, other.end_step, ev.start_step, ev.end_step, ev.node
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        if ev.node >= nodes {
            continue;
        }
        for s in ev.start_step..ev.end_step.min(steps) {
            flags[ev.node * steps + s] = true;
        }
    }
    (OutageMask { nodes, steps, flags }, warnings)
}

fn overlaps(a: &OutageEvent, b: &OutageEvent) -> bool {
    a.node == b.node && a.start_step < b.end_step && b.start_step < a.end_step
}

/// Per-step SOC the fleet must deliver: `Q_d − Q_m` for every node with an
/// active outage at that step (one critical building per node), else 0.
pub fn emergency_requirement(schedule: &OutageSchedule, nodes: usize, steps: usize) -> Vec<f64> {
    let (mask, _) = outage_mask(schedule, nodes, steps);
    (0..steps).map(|s| mask.active_nodes(s).len() as f64 * schedule.shortfall()).collect()
}

/// Building consumption per step (kWh) from an annual intensity.
pub fn building_demand_per_step(kwh_per_m2_year: f64, floor_area_m2: f64, tau_minutes: f64) -> f64 {
    kwh_per_m2_year * floor_area_m2 / (HOURS_PER_YEAR * 60.0 / tau_minutes)
}

/// Energy per step (kWh) from `count` generators of `rating_kw` each.
pub fn generator_supply_per_step(count: u32, rating_kw: f64, tau_minutes: f64) -> f64 {
    count as f64 * rating_kw * tau_minutes / 60.0
}

/// Building-side quantities in SOC units of one vehicle battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmergencyDerivation {
    pub demand_kwh_per_step: f64,
    pub q_demand: f64,
    pub q_backup: f64,
    /// `Q_d − Q_m`.
    pub requirement: f64,
    /// Vehicles that must discharge at full rate to cover the requirement.
    pub min_dischargers: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub kwh_per_m2_year: f64,
    pub floor_area_m2: f64,
    pub generators: u32,
    pub generator_kw: f64,
}

pub fn derive_emergency(
    building: &BuildingSpec,
    battery_kwh: f64,
    tau_minutes: f64,
    theta_v2b: f64,
    eta: f64,
) -> EmergencyDerivation {
    let demand = building_demand_per_step(building.kwh_per_m2_year, building.floor_area_m2, tau_minutes);
    let backup = generator_supply_per_step(building.generators, building.generator_kw, tau_minutes);
    let q_demand = demand / battery_kwh;
    let q_backup = backup / battery_kwh;
    let requirement = (q_demand - q_backup).max(0.0);
    let min_dischargers = (requirement / eta / theta_v2b - 1e-9).ceil().max(0.0) as u32;
    EmergencyDerivation { demand_kwh_per_step: demand, q_demand, q_backup, requirement, min_dischargers }
}

/// How the relocation-time difference enters the relocation cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelocationUnits {
    /// `T_relo` in minutes multiplied by the per-step charge rate.
    #[default]
    Minutes,
    /// `T_relo / τ` steps multiplied by the per-step charge rate.
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostInputs {
    pub fleet_size: usize,
    /// Annual V2B infrastructure cost per vehicle (€).
    pub c_v: f64,
    pub sigma: f64,
    pub omega: f64,
    pub battery_kwh: f64,
    pub theta_c: f64,
    pub tau_minutes: f64,
    /// Extra relocation time in the emergency run (minutes).
    pub t_relo_minutes: f64,
    /// Energy discharged to the building per outage (kWh).
    pub q_v2b_kwh: f64,
    /// Outages per year.
    pub f_out: f64,
    /// Annualised cost of one backup generator (€).
    pub generator_annual: f64,
    pub relocation_units: RelocationUnits,
}

impl Default for CostInputs {
    fn default() -> Self {
        Self {
            fleet_size: 30,
            c_v: 45.0,
            sigma: 0.1292,
            omega: 0.0797,
            battery_kwh: 85.0,
            theta_c: 0.01,
            tau_minutes: 6.0,
            t_relo_minutes: 0.0,
            q_v2b_kwh: 0.0,
            f_out: 0.0,
            generator_annual: 13_367.0,
            relocation_units: RelocationUnits::Minutes,
        }
    }
}

impl CostInputs {
    /// Problems with the inputs; a negative `T_relo` is reported but allowed.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("c_v", self.c_v),
            ("sigma", self.sigma),
            ("omega", self.omega),
            ("battery_kwh", self.battery_kwh),
            ("theta_c", self.theta_c),
            ("q_v2b_kwh", self.q_v2b_kwh),
            ("f_out", self.f_out),
            ("generator_annual", self.generator_annual),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.t_relo_minutes < 0.0 {
            out.push(format!(
                "T_relo = {} min is negative: the emergency run relocated less than the normal run",
                self.t_relo_minutes
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Annual infrastructure cost (€/year).
    pub c_i: f64,
    /// Energy cost per outage (€).
    pub c_e: f64,
    /// Relocation cost per outage (€).
    pub c_r: f64,
    pub f_out: f64,
    /// `C_i + f_out (C_e + C_r)` (€/year).
    pub c_v2b: f64,
}

pub fn v2b_cost(inputs: &CostInputs) -> CostBreakdown {
    let c_i = inputs.fleet_size as f64 * inputs.c_v;
    let c_e = (inputs.sigma + inputs.omega) * inputs.q_v2b_kwh;
    let t_relo = match inputs.relocation_units {
        RelocationUnits::Minutes => inputs.t_relo_minutes,
        RelocationUnits::Steps => inputs.t_relo_minutes / inputs.tau_minutes,
    };
    let c_r = t_relo * inputs.theta_c * inputs.battery_kwh * inputs.sigma;
    CostBreakdown { c_i, c_e, c_r, f_out: inputs.f_out, c_v2b: c_i + inputs.f_out * (c_e + c_r) }
}

/// Outage frequency at which V2B and one more generator cost the same.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BreakEven {
    /// V2B is cheaper iff `f_out < f_star`; `threshold = floor(f_star)`.
    Finite { f_star: f64, threshold: u64 },
    /// Per-outage cost is zero or negative while the generator costs more than
    /// the infrastructure: V2B is cheaper at every frequency.
    Unbounded,
    /// The generator costs less than the V2B infrastructure alone, so V2B is
    /// never cheaper.
    GeneratorDominates { f_star: f64 },
}

impl BreakEven {
    pub fn f_star(&self) -> f64 {
        match *self {
            Self::Finite { f_star, .. } | Self::GeneratorDominates { f_star } => f_star,
            Self::Unbounded => f64::INFINITY,
        }
    }

    pub fn v2b_cheaper(&self, f_out: f64) -> bool {
        match *self {
            Self::Finite { f_star, .. } => f_out < f_star,
            Self::Unbounded => true,
            Self::GeneratorDominates { .. } => false,
        }
    }

    pub fn verdict(&self) -> String {
        match *self {
            Self::Finite { f_star, threshold } => format!(
                "V2B is cheaper below {f_star:.2} outages/year (up to {threshold}); a generator is cheaper above"
            ),
            Self::Unbounded => "V2B is cheaper at every outage frequency".into(),
            Self::GeneratorDominates { .. } => {
                "generator dominates: its annual cost is below the V2B infrastructure cost".into()
            }
        }
    }
}

pub fn break_even_frequency(costs: &CostBreakdown, generator_annual: f64) -> BreakEven {
    let margin = generator_annual - costs.c_i;
    let per_outage = costs.c_e + costs.c_r;
    if margin < 0.0 {
        let f_star = if per_outage > 0.0 { margin / per_outage } else { f64::NEG_INFINITY };
        return BreakEven::GeneratorDominates { f_star };
    }
    if per_outage <= 0.0 {
        return if margin > 0.0 { BreakEven::Unbounded } else { BreakEven::Finite { f_star: 0.0, threshold: 0 } };
    }
    let f_star = margin / per_outage;
    BreakEven::Finite { f_star, threshold: f_star.floor() as u64 }
}

/// `f_out,c_v2b_eur,generator_eur,v2b_cheaper` for each frequency.
pub fn f_out_table(inputs: &CostInputs, frequencies: &[f64]) -> String {
    let mut out = String::from("f_out,c_v2b_eur,generator_eur,v2b_cheaper\n");
    for &f in frequencies {
        let c = v2b_cost(&CostInputs { f_out: f, ..inputs.clone() });
        out.push_str(&format!("{f},{:.4},{:.4},{}\n", c.c_v2b, inputs.generator_annual, c.c_v2b < inputs.generator_annual));
    }
    out
}
