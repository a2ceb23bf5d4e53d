//! KPIs, normal/emergency comparison, sensitivity sweeps and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{sample_arrivals, ArrivalMatrix, RateMatrix};
use crate::mpc::{initial_state, run, MpcError, MpcOptions, Placement, RunTrace, Scenario};
use crate::par::{self, Execution};
use crate::resilience::outage_mask;
use crate::scenario::{ModelParams, Network, OutageSchedule};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("scenarios differ beyond the outage: {normal} vs {emergency}")]
    FingerprintMismatch { normal: String, emergency: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalyticsError + '_ {
    move |source| AnalyticsError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSummary {
    /// Hash of network, parameters, demand and initial state; the outage is excluded.
    pub fingerprint: String,
    pub steps_planned: usize,
    pub steps_completed: usize,
    pub infeasible: bool,
    pub passengers: u64,
    pub total_waiting_min: f64,
    pub total_relocation_min: f64,
    pub total_charge_soc: f64,
    /// `B σ Σe − B σ η Σg + B ω Σg` (€).
    pub charge_eur: f64,
    pub total_discharge_soc: f64,
    /// Discharge during outage steps (SOC).
    pub outage_discharge_soc: f64,
    pub q_v2b_kwh: f64,
    /// SOC the building received over outage steps (`η Σ g`).
    pub delivered_soc: f64,
    pub final_soc: Vec<f64>,
    pub outage_discharge_by_vehicle: Vec<f64>,
    pub flagged_iterations: usize,
}

/// Fingerprint of everything but the outage schedule.
pub fn fingerprint(trace: &RunTrace) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        travel_time: &'a [Vec<u32>],
        params: &'a ModelParams,
        arrivals: &'a [crate::mpc::ArrivalRecord],
        initial: &'a crate::state::FleetState,
        steps: usize,
    }
    let key = Key {
        travel_time: &trace.travel_time,
        params: &trace.params,
        arrivals: &trace.arrivals,
        initial: &trace.states[0],
        steps: trace.steps,
    };
    let bytes = serde_json::to_vec(&key).expect("fingerprint key serialises");
    hex::encode(Sha256::digest(bytes))
}

/// KPIs recomputed from the trace's states and controls.
pub fn summarize(trace: &RunTrace) -> KpiSummary {
    let p = &trace.params;
    let k = trace.states[0].fleet_size();
    let n = trace.travel_time.len();
    let (mask, _) = outage_mask(&trace.outages, n, trace.steps);
    let mut s = KpiSummary {
        fingerprint: fingerprint(trace),
        steps_planned: trace.steps,
        steps_completed: trace.controls.len(),
        infeasible: trace.halt.is_some(),
        passengers: trace.arrivals.iter().filter(|a| a.step < trace.controls.len()).map(|a| a.count as u64).sum(),
        total_waiting_min: 0.0,
        total_relocation_min: 0.0,
        total_charge_soc: 0.0,
        charge_eur: 0.0,
        total_discharge_soc: 0.0,
        outage_discharge_soc: 0.0,
        q_v2b_kwh: 0.0,
        delivered_soc: 0.0,
        final_soc: trace.states.last().map(|st| st.vehicles.iter().map(|v| v.soc).collect()).unwrap_or_default(),
        outage_discharge_by_vehicle: vec![0.0; k],
        flagged_iterations: trace.iterations.iter().filter(|i| i.flagged).count(),
    };
    let len_l = p.horizon_l.max(1);
    for (step, c) in trace.controls.iter().enumerate() {
        s.total_waiting_min += p.tau_minutes * trace.states[step + 1].total_waiting() as f64;
        s.total_relocation_min +=
            p.tau_minutes * c.relocations.iter().map(|d| trace.travel_time[d.from][d.to] as f64).sum::<f64>();
        let e: f64 = c.charge.iter().sum();
        let g: f64 = c.discharge.iter().sum();
        let sigma = p.sigma_at(step % len_l);
        s.total_charge_soc += e;
        s.total_discharge_soc += g;
        s.charge_eur += p.battery_kwh * (sigma * e - sigma * p.eta * g + p.omega * g);
        if mask.active_nodes(step).is_empty() {
            continue;
        }
        s.outage_discharge_soc += g;
        s.delivered_soc += c.delivered;
        for (v, &gk) in c.discharge.iter().enumerate() {
            s.outage_discharge_by_vehicle[v] += gk;
        }
    }
    s.q_v2b_kwh = p.battery_kwh * s.outage_discharge_soc;
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta_waiting_min: f64,
    /// `T_relo`: emergency minus normal relocation minutes.
    pub delta_relocation_min: f64,
    pub q_v2b_kwh: f64,
    /// Set when the emergency run relocated less than the normal one.
    pub negative_relocation: bool,
}

pub fn compare(normal: &KpiSummary, emergency: &KpiSummary) -> Result<DeltaReport, AnalyticsError> {
    if normal.fingerprint != emergency.fingerprint {
        return Err(AnalyticsError::FingerprintMismatch {
            normal: normal.fingerprint.clone(),
            emergency: emergency.fingerprint.clone(),
        });
    }
    let delta_relocation_min = emergency.total_relocation_min - normal.total_relocation_min;
    if delta_relocation_min < 0.0 {
        log::warn!("emergency run relocated {:.1} min less than the normal run", -delta_relocation_min);
    }
    Ok(DeltaReport {
        delta_waiting_min: emergency.total_waiting_min - normal.total_waiting_min,
        delta_relocation_min,
        q_v2b_kwh: emergency.q_v2b_kwh,
        negative_relocation: delta_relocation_min < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// Keep the first `value` passengers of each seed's demand.
    Passengers,
    FleetSize,
    /// Moves every outage event to start here, keeping its length.
    OutageStart,
    OutageNode,
    OutageLength,
    /// Sets both `θ_c` and `θ_v2b`.
    ChargeRate,
}

impl std::str::FromStr for Axis {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "passengers" => Self::Passengers,
            "fleet-size" | "fleet_size" => Self::FleetSize,
            "outage-start" | "outage_start" => Self::OutageStart,
            "outage-node" | "outage_node" => Self::OutageNode,
            "outage-length" | "outage_length" => Self::OutageLength,
            "charge-rate" | "charge_rate" => Self::ChargeRate,
            other => return Err(AnalyticsError::InvalidSweep(format!("unknown axis {other:?}"))),
        })
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone)]
pub enum DemandSource {
    Replay(ArrivalMatrix),
    /// Poisson draws seeded per sweep seed.
    Sample(RateMatrix),
}

/// The scenario a sweep varies.
#[derive(Debug, Clone)]
pub struct SweepBase {
    pub network: Arc<Network>,
    pub params: ModelParams,
    pub outages: OutageSchedule,
    pub demand: DemandSource,
    pub placement: Placement,
}

impl SweepBase {
    pub fn arrivals(&self, seed: u64) -> Result<ArrivalMatrix, String> {
        match &self.demand {
            DemandSource::Replay(a) => Ok(a.clone()),
            DemandSource::Sample(r) => sample_arrivals(r, seed, self.params.horizon_l).map_err(|e| e.to_string()),
        }
    }

    /// Scenario for one point; `arrivals` is the seed's shared draw.
    pub fn point(&self, axis: Axis, value: f64, seed: u64, arrivals: &ArrivalMatrix) -> Result<Scenario, String> {
        let mut params = self.params.clone();
        let mut outages = self.outages.clone();
        let mut arrivals = arrivals.clone();
        let whole = |v: f64| -> Result<usize, String> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(format!("{axis} needs a non-negative integer, got {v}"))
            }
        };
        match axis {
            Axis::Passengers => arrivals = first_passengers(&arrivals, whole(value)? as u64),
            Axis::FleetSize => params.fleet_size = whole(value)?,
            Axis::OutageStart => {
                let start = whole(value)?;
                for ev in &mut outages.events {
                    let len = ev.end_step - ev.start_step;
                    ev.start_step = start;
                    ev.end_step = start + len;
                }
            }
            Axis::OutageNode => {
                let node = whole(value)?;
                for ev in &mut outages.events {
                    ev.node = node;
                }
            }
            Axis::OutageLength => {
                let len = whole(value)?;
                for ev in &mut outages.events {
                    ev.end_step = ev.start_step + len;
                }
            }
            Axis::ChargeRate => {
                params.theta_c = value;
                params.theta_v2b = value;
            }
        }
        let initial = initial_state(&params, &self.network, &self.placement, seed).map_err(|e| e.to_string())?;
        let sc = Scenario { network: self.network.clone(), params, outages, arrivals, initial };
        sc.validate().map_err(|e| e.to_string())?;
        Ok(sc)
    }
}

/// Earliest `keep` passengers in (step, origin, destination) order.
pub fn first_passengers(arrivals: &ArrivalMatrix, keep: u64) -> ArrivalMatrix {
    let mut cells: Vec<(usize, usize, usize, u32)> = arrivals.nonzero().map(|(i, j, s, c)| (s, i, j, c)).collect();
    cells.sort_unstable();
    let mut out = ArrivalMatrix::zeros(arrivals.nodes, arrivals.steps);
    let mut left = keep;
    for (s, i, j, c) in cells {
        if left == 0 {
            break;
        }
        let take = (c as u64).min(left) as u32;
        out.add(i, j, s, take);
        left -= take as u64;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PointStatus {
    Completed,
    Infeasible { step: usize, message: String },
    Error { message: String },
}

impl PointStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::Infeasible { .. } => "infeasible",
            Self::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub status: PointStatus,
    pub summary: Option<KpiSummary>,
    pub trace: Option<RunTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Mean of `f` over completed points with this axis value.
    pub fn mean_by_value(&self, f: impl Fn(&KpiSummary) -> f64) -> Vec<(f64, f64)> {
        let mut values: Vec<f64> = self.points.iter().map(|p| p.value).collect();
        values.dedup();
        let mut seen = Vec::new();
        for v in values {
            if seen.contains(&v) {
                continue;
            }
            seen.push(v);
        }
        seen.into_iter()
            .filter_map(|v| {
                let xs: Vec<f64> = self
                    .points
                    .iter()
                    .filter(|p| p.value == v && p.status == PointStatus::Completed)
                    .filter_map(|p| p.summary.as_ref().map(&f))
                    .collect();
                (!xs.is_empty()).then(|| (v, xs.iter().sum::<f64>() / xs.len() as f64))
            })
            .collect()
    }
}

/// Runs every (value, seed) point; failures are recorded, never fatal.
pub fn sweep(base: &SweepBase, spec: &SweepSpec, opts: &MpcOptions, exec: Execution) -> SweepReport {
    let draws: Vec<Result<ArrivalMatrix, String>> = spec.seeds.iter().map(|&s| base.arrivals(s)).collect();
    let points: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.seeds.len()).map(move |si| (v, si)))
        .collect();
    let results = par::map(exec, &points, |&(value, si)| {
        let seed = spec.seeds[si];
        let scenario = match &draws[si] {
            Ok(a) => base.point(spec.axis, value, seed, a),
            Err(e) => Err(e.clone()),
        };
        let outcome = scenario.and_then(|sc| run(&sc, opts).map_err(|e: MpcError| e.to_string()));
        match outcome {
            Ok(mut trace) => {
                trace.seed = Some(seed);
                let summary = summarize(&trace);
                let status = match &trace.halt {
                    None => PointStatus::Completed,
                    Some(h) => PointStatus::Infeasible { step: h.step, message: h.message.clone() },
                };
                SweepPoint { value, seed, status, summary: Some(summary), trace: Some(trace) }
            }
            Err(message) => {
                log::warn!("{} = {value}, seed {seed}: {message}", spec.axis);
                SweepPoint { value, seed, status: PointStatus::Error { message }, summary: None, trace: None }
            }
        }
    });
    SweepReport { axis: spec.axis, points: results }
}

const SUMMARY_HEADER: &str = "axis,value,seed,status,steps_completed,passengers,waiting_min,relocation_min,charge_soc,charge_eur,discharge_soc,q_v2b_kwh,flagged_iterations";

pub fn summary_csv(report: &SweepReport) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for p in &report.points {
        let _ = write!(out, "{},{},{},{}", report.axis, p.value, p.seed, p.status.label());
        match &p.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{},{},{},{}",
                    s.steps_completed,
                    s.passengers,
                    s.total_waiting_min,
                    s.total_relocation_min,
                    s.total_charge_soc,
                    s.charge_eur,
                    s.total_discharge_soc,
                    s.q_v2b_kwh,
                    s.flagged_iterations
                );
            }
            None => out.push_str(",,,,,,,,,\n"),
        }
    }
    out
}

fn trace_file_name(idx: usize, p: &SweepPoint) -> String {
    format!("point_{idx:03}_v{}_s{}.json", p.value, p.seed)
}

/// Writes `summary.csv`, one trace per point and whitespace-delimited plot data.
pub fn emit_reports(report: &SweepReport, out_dir: &Path) -> Result<Vec<PathBuf>, AnalyticsError> {
    let traces = out_dir.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, body: String| -> Result<(), AnalyticsError> {
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    put(out_dir.join("summary.csv"), summary_csv(report))?;
    for (idx, p) in report.points.iter().enumerate() {
        if let Some(t) = &p.trace {
            put(traces.join(trace_file_name(idx, p)), t.to_json())?;
        }
    }
    let columns: [(&str, fn(&KpiSummary) -> f64); 3] = [
        ("waiting_min", |s| s.total_waiting_min),
        ("relocation_min", |s| s.total_relocation_min),
        ("q_v2b_kwh", |s| s.q_v2b_kwh),
    ];
    for (name, f) in columns {
        let mut body = format!("# {} mean_{name}\n", report.axis);
        for (v, m) in report.mean_by_value(f) {
            let _ = writeln!(body, "{v} {m}");
        }
        put(out_dir.join(format!("{}_{name}.dat", report.axis)), body)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::tiny;
    use crate::mpc::{ArrivalRecord, StepKpi};
    use crate::scenario::OutageEvent;
    use crate::state::{ControlSet, Dispatch, FleetState};

    fn hand_trace(steps: usize, controls: Vec<ControlSet>, outages: OutageSchedule) -> RunTrace {
        let params = ModelParams { horizon_l: steps, fleet_size: 1, ..Default::default() };
        let states = vec![FleetState::parked(2, &[0], 0.8); controls.len() + 1];
        RunTrace {
            travel_time: vec![vec![0, 3], vec![3, 0]],
            params,
            outages,
            arrivals: Vec::new(),
            steps,
            boundary: Default::default(),
            seed: None,
            states,
            kpis: vec![
                StepKpi {
                    step: 0,
                    waiting: 0,
                    pickups: 0,
                    relocations: 0,
                    relocation_steps: 0,
                    charged: 0.0,
                    discharged: 0.0,
                    delivered: 0.0,
                    requirement: 0.0,
                    outage_nodes: vec![],
                    stage_cost: 0.0
                };
                controls.len()
            ],
            controls,
            iterations: Vec::new(),
            resets: Vec::new(),
            halt: None,
            wall_seconds: Vec::new(),
        }
    }

    #[test]
    fn zero_trace_summarises_to_zero() {
        let t = hand_trace(3, vec![ControlSet::idle(1); 3], OutageSchedule::none());
        let s = summarize(&t);
        assert_eq!(s.total_waiting_min, 0.0);
        assert_eq!(s.total_relocation_min, 0.0);
        assert_eq!(s.q_v2b_kwh, 0.0);
        assert!(!s.infeasible);
    }

    #[test]
    fn relocation_of_three_steps_is_eighteen_minutes() {
        let mut c = ControlSet::idle(1);
        c.relocations.push(Dispatch { vehicle: 0, from: 0, to: 1 });
        let t = hand_trace(1, vec![c], OutageSchedule::none());
        assert!((summarize(&t).total_relocation_min - 18.0).abs() < 1e-12);
    }

    #[test]
    fn discharged_energy_in_kwh() {
        let per_step = 0.1644;
        let ev = OutageEvent { node: 0, start_step: 0, end_step: 10 };
        let mut c = ControlSet::idle(1);
        c.discharge[0] = per_step;
        c.delivered = 0.9 * per_step;
        let mut controls = vec![c; 10];
        controls.push(ControlSet::idle(1));
        let t = hand_trace(11, controls, OutageSchedule { events: vec![ev], q_demand: 0.15, q_backup: 0.0 });
        let s = summarize(&t);
        assert!((s.q_v2b_kwh - 139.74).abs() < 0.01, "{}", s.q_v2b_kwh);
        assert!((s.q_v2b_kwh - 85.0 * s.outage_discharge_soc).abs() <= 1e-6 * s.q_v2b_kwh);
        assert!((s.outage_discharge_by_vehicle[0] * 0.9 - s.delivered_soc).abs() < 1e-12);
    }

    #[test]
    fn compare_checks_fingerprints_and_signs() {
        let a = summarize(&hand_trace(3, vec![ControlSet::idle(1); 3], OutageSchedule::none()));
        let d = compare(&a, &a).unwrap();
        assert_eq!(d.delta_waiting_min, 0.0);
        assert_eq!(d.delta_relocation_min, 0.0);
        let mut fewer = a.clone();
        fewer.total_relocation_min -= 6.0;
        assert!(compare(&a, &fewer).unwrap().negative_relocation);
        let mut other = hand_trace(3, vec![ControlSet::idle(1); 3], OutageSchedule::none());
        other.arrivals.push(ArrivalRecord { origin: 0, destination: 1, step: 0, count: 1 });
        assert!(matches!(compare(&a, &summarize(&other)), Err(AnalyticsError::FingerprintMismatch { .. })));
    }

    #[test]
    fn first_passengers_is_nested() {
        let mut a = ArrivalMatrix::zeros(2, 4);
        a.add(0, 1, 2, 2);
        a.add(1, 0, 0, 1);
        let two = first_passengers(&a, 2);
        assert_eq!(two.total(), 2);
        assert_eq!(two.get(1, 0, 0), 1);
        assert_eq!(first_passengers(&a, 10), a);
    }

    fn tiny_base() -> SweepBase {
        let sc = tiny(4, 3, &[(0, 1, 0), (1, 0, 1)]);
        SweepBase {
            network: sc.network,
            params: sc.params,
            outages: OutageSchedule {
                events: vec![OutageEvent { node: 0, start_step: 1, end_step: 2 }],
                q_demand: 0.004,
                q_backup: 0.0,
            },
            demand: DemandSource::Replay(sc.arrivals),
            placement: Placement::Explicit(vec![0]),
        }
    }

    #[test]
    fn empty_sweep_is_empty() {
        let spec = SweepSpec { axis: Axis::FleetSize, values: vec![], seeds: vec![1] };
        let r = sweep(&tiny_base(), &spec, &MpcOptions::default(), Execution::Sequential);
        assert!(r.points.is_empty());
    }

    #[test]
    fn bad_points_are_recorded_and_reports_are_stable() {
        let spec = SweepSpec { axis: Axis::OutageStart, values: vec![1.0, 50.0], seeds: vec![3] };
        let r = sweep(&tiny_base(), &spec, &MpcOptions::default(), Execution::Sequential);
        assert_eq!(r.points[0].status, PointStatus::Completed);
        assert_eq!(r.points[1].status.label(), "error");
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&r, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
        emit_reports(&r, dir.path()).unwrap();
        let again: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
        assert_eq!(first, again);
        let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().contains(",error"));
    }
}
