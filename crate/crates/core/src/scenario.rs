//! Scenario data model: network, trips, model parameters and outage schedules.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Index of a node in `[0, N)`.
pub type NodeId = usize;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("{path}: no usable trips ({dropped_intra} intra-node, {dropped_walk} walk rows dropped)")]
    NoUsableTrips { path: String, dropped_intra: usize, dropped_walk: usize },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node ids must be contiguous from 0; missing id {0}")]
    MissingNode(NodeId),
    #[error("node {0} has a non-finite centroid")]
    NonFiniteCentroid(NodeId),
    #[error("a network needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("travel time matrix is malformed: {0}")]
    BadTravelTimes(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid outage schedule: {0}")]
    InvalidOutage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Planar centroid in metres (projected coordinates, never re-projected).
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub label: String,
}

/// Nodes plus the discrete travel-time table between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<Node>,
    /// `travel_time[from][to]` in whole steps; zero on the diagonal.
    pub travel_time: Vec<Vec<u32>>,
    /// `distance_km[from][to]`.
    pub distance_km: Vec<Vec<f64>>,
}

impl Network {
    /// Builds a network from an explicit step table (distances are left at zero).
    pub fn from_travel_times(travel_time: Vec<Vec<u32>>) -> Result<Self, ScenarioError> {
        let n = travel_time.len();
        if n == 0 {
            return Err(ScenarioError::BadTravelTimes("empty matrix".into()));
        }
        for (from, row) in travel_time.iter().enumerate() {
            if row.len() != n {
                return Err(ScenarioError::BadTravelTimes(format!(
                    "row {from} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (to, &steps) in row.iter().enumerate() {
                if from == to && steps != 0 {
                    return Err(ScenarioError::BadTravelTimes(format!(
                        "diagonal entry ({from},{to}) must be 0"
                    )));
                }
                if from != to && steps == 0 {
                    return Err(ScenarioError::BadTravelTimes(format!(
                        "off-diagonal entry ({from},{to}) must be at least 1"
                    )));
                }
            }
        }
        let nodes = (0..n)
            .map(|id| Node { id, x: 0.0, y: 0.0, label: format!("n{id}") })
            .collect();
        Ok(Self { nodes, travel_time, distance_km: vec![vec![0.0; n]; n] })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn steps(&self, from: NodeId, to: NodeId) -> u32 {
        self.travel_time[from][to]
    }

    /// Number of in-transit slots tracked for vehicles heading to `node`:
    /// `max_j t_{j,node}`, i.e. `Θ̄ + 1`. Zero for a single-node network.
    pub fn inbound_slots(&self, node: NodeId) -> usize {
        (0..self.len()).map(|j| self.travel_time[j][node] as usize).max().unwrap_or(0)
    }

    /// `Θ̄_i = max_j t_ji − 1`, or `None` when no other node exists.
    pub fn max_remaining(&self, node: NodeId) -> Option<u32> {
        self.inbound_slots(node).checked_sub(1).map(|v| v as u32)
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..n).all(|j| self.travel_time[i][j] == self.travel_time[j][i]))
    }

    pub fn nearest_node(&self, x: f64, y: f64) -> NodeId {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for node in &self.nodes {
            let d = (node.x - x).powi(2) + (node.y - y).powi(2);
            // strict comparison keeps the lowest id on ties
            if d < best_d {
                best_d = d;
                best = node.id;
            }
        }
        best
    }
}

/// Converts centroid distances into whole-step travel times.
///
/// `t = max(1, ceil(distance / speed · 60 / τ))` off the diagonal, 0 on it.
pub fn build_network(
    mut nodes: Vec<Node>,
    speed_kmh: f64,
    tau_minutes: f64,
) -> Result<Network, ScenarioError> {
    if nodes.len() < 2 {
        return Err(ScenarioError::TooFewNodes(nodes.len()));
    }
    if !(speed_kmh > 0.0) || !(tau_minutes > 0.0) {
        return Err(ScenarioError::InvalidParams(format!(
            "speed_kmh ({speed_kmh}) and tau_minutes ({tau_minutes}) must be positive"
        )));
    }
    nodes.sort_by_key(|n| n.id);
    for pair in nodes.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(ScenarioError::DuplicateNode(pair[0].id));
        }
    }
    for (expected, node) in nodes.iter().enumerate() {
        if node.id != expected {
            return Err(ScenarioError::MissingNode(expected));
        }
        if !node.x.is_finite() || !node.y.is_finite() {
            return Err(ScenarioError::NonFiniteCentroid(node.id));
        }
    }
    let n = nodes.len();
    let mut distance_km = vec![vec![0.0; n]; n];
    let mut travel_time = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = ((nodes[i].x - nodes[j].x).powi(2) + (nodes[i].y - nodes[j].y).powi(2)).sqrt()
                / 1000.0;
            distance_km[i][j] = d;
            let minutes = d * 60.0 / speed_kmh;
            let steps = (minutes / tau_minutes - 1e-9).ceil().max(1.0);
            travel_time[i][j] = steps as u32;
        }
    }
    Ok(Network { nodes, travel_time, distance_km })
}

/// One passenger request mapped onto the node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Seconds since midnight (may exceed one day for multi-day files).
    pub departure_seconds: u32,
}

/// Result of reading a trip file.
#[derive(Debug, Clone, PartialEq)]
pub struct TripLoad {
    pub trips: Vec<TripRecord>,
    pub dropped_intra: usize,
    pub dropped_walk: usize,
}

#[derive(Debug, Deserialize)]
struct TripRow {
    origin_x: String,
    origin_y: String,
    dest_x: String,
    dest_y: String,
    departure_seconds: String,
    #[serde(default)]
    mode: String,
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    name: &str,
    path: &str,
    line: u64,
) -> Result<T, ScenarioError> {
    raw.trim().parse::<T>().map_err(|_| ScenarioError::Parse {
        path: path.to_string(),
        line,
        msg: format!("column {name}: cannot parse {raw:?}"),
    })
}

/// Reads a trip file (`origin_x, origin_y, dest_x, dest_y, departure_seconds, mode`),
/// snapping both ends to the nearest centroid. Walk trips and trips that stay
/// inside one node are dropped and counted.
pub fn load_trips(path: impl AsRef<Path>, network: &Network) -> Result<TripLoad, ScenarioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&shown, e))?;
    let mut load = TripLoad { trips: Vec::new(), dropped_intra: 0, dropped_walk: 0 };
    for record in reader.deserialize::<TripRow>() {
        let row = record.map_err(|e| csv_error(&shown, e))?;
        // header is line 1
        let line = load.trips.len() as u64 + load.dropped_intra as u64 + load.dropped_walk as u64 + 2;
        let ox: f64 = parse_field(&row.origin_x, "origin_x", &shown, line)?;
        let oy: f64 = parse_field(&row.origin_y, "origin_y", &shown, line)?;
        let dx: f64 = parse_field(&row.dest_x, "dest_x", &shown, line)?;
        let dy: f64 = parse_field(&row.dest_y, "dest_y", &shown, line)?;
        let dep: f64 = parse_field(&row.departure_seconds, "departure_seconds", &shown, line)?;
        if ![ox, oy, dx, dy, dep].iter().all(|v| v.is_finite()) || dep < 0.0 {
            return Err(ScenarioError::Parse {
                path: shown,
                line,
                msg: "non-finite coordinate or negative departure time".into(),
            });
        }
        if row.mode.trim().eq_ignore_ascii_case("walk") {
            load.dropped_walk += 1;
            continue;
        }
        let origin = network.nearest_node(ox, oy);
        let destination = network.nearest_node(dx, dy);
        if origin == destination {
            load.dropped_intra += 1;
            continue;
        }
        load.trips.push(TripRecord { origin, destination, departure_seconds: dep as u32 });
    }
    if load.trips.is_empty() {
        return Err(ScenarioError::NoUsableTrips {
            path: shown,
            dropped_intra: load.dropped_intra,
            dropped_walk: load.dropped_walk,
        });
    }
    Ok(load)
}

fn csv_error(path: &str, e: csv::Error) -> ScenarioError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    ScenarioError::Parse { path: path.to_string(), line, msg: e.to_string() }
}

/// Reads a node file with columns `id, x, y, label`.
pub fn load_nodes(path: impl AsRef<Path>) -> Result<Vec<Node>, ScenarioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&shown, e))?;
    let mut nodes = Vec::new();
    for record in reader.deserialize::<Node>() {
        nodes.push(record.map_err(|e| csv_error(&shown, e))?);
    }
    Ok(nodes)
}

/// Model parameters; defaults describe the 25-node, 30-vehicle setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub gamma_init: f64,
    /// SOC consumed per step while moving.
    pub theta_d: f64,
    /// SOC gained per step while charging.
    pub theta_c: f64,
    /// SOC discharged per step into the building.
    pub theta_v2b: f64,
    pub eta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub tau_minutes: f64,
    pub horizon_t: usize,
    pub horizon_l: usize,
    pub battery_kwh: f64,
    /// Constant electricity price (€/kWh), used where no schedule entry exists.
    pub sigma: f64,
    /// Optional per-step price schedule overriding `sigma`.
    pub sigma_schedule: Option<Vec<f64>>,
    pub omega: f64,
    pub fleet_size: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gamma_max: 1.0,
            gamma_min: 0.2,
            gamma_init: 0.8,
            theta_d: 0.0092,
            theta_c: 0.01,
            theta_v2b: 0.01,
            eta: 0.9,
            rho1: 0.01,
            rho2: 0.001,
            tau_minutes: 6.0,
            horizon_t: 10,
            horizon_l: 240,
            battery_kwh: 85.0,
            sigma: 0.1292,
            sigma_schedule: None,
            omega: 0.07974,
            fleet_size: 30,
        }
    }
}

impl ModelParams {
    /// Electricity price at an absolute step; beyond the schedule the constant applies.
    pub fn sigma_at(&self, step: usize) -> f64 {
        self.sigma_schedule
            .as_ref()
            .and_then(|s| s.get(step).copied())
            .unwrap_or(self.sigma)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidParams(msg));
        if !(0.0 <= self.gamma_min
            && self.gamma_min < self.gamma_init
            && self.gamma_init <= self.gamma_max
            && self.gamma_max <= 1.0)
        {
            return bad(format!(
                "need 0 <= gamma_min < gamma_init <= gamma_max <= 1, got {} / {} / {}",
                self.gamma_min, self.gamma_init, self.gamma_max
            ));
        }
        for (name, v) in [
            ("theta_d", self.theta_d),
            ("theta_c", self.theta_c),
            ("theta_v2b", self.theta_v2b),
            ("tau_minutes", self.tau_minutes),
            ("battery_kwh", self.battery_kwh),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.rho1 > self.rho2 && self.rho2 > 0.0) {
            return bad(format!("need rho1 > rho2 > 0, got {} / {}", self.rho1, self.rho2));
        }
        if self.horizon_t < 2 {
            return bad(format!("horizon_t must be at least 2, got {}", self.horizon_t));
        }
        if self.sigma < 0.0 || self.omega < 0.0 {
            return bad("sigma and omega must be non-negative".into());
        }
        if let Some(s) = &self.sigma_schedule {
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("sigma_schedule entries must be finite and non-negative".into());
            }
        }
        Ok(())
    }
}

/// A single outage window `[start_step, end_step)` at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageEvent {
    pub node: NodeId,
    pub start_step: usize,
    pub end_step: usize,
}

impl OutageEvent {
    pub fn len(&self) -> usize {
        self.end_step.saturating_sub(self.start_step)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covers(&self, step: usize) -> bool {
        (self.start_step..self.end_step).contains(&step)
    }
}

/// Outage events plus the building's per-step energy balance (SOC units of one battery).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutageSchedule {
    pub events: Vec<OutageEvent>,
    /// Energy the building needs per step.
    pub q_demand: f64,
    /// Energy the fixed backup generators supply per step.
    pub q_backup: f64,
}

impl OutageSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    /// Per-step SOC the fleet must deliver while an outage is active.
    pub fn shortfall(&self) -> f64 {
        (self.q_demand - self.q_backup).max(0.0)
    }

    pub fn validate(&self, nodes: usize, horizon_l: usize) -> Result<(), ScenarioError> {
        if !(self.q_demand >= self.q_backup && self.q_backup >= 0.0) {
            return Err(ScenarioError::InvalidOutage(format!(
                "need q_demand >= q_backup >= 0, got {} / {}",
                self.q_demand, self.q_backup
            )));
        }
        for ev in &self.events {
            if ev.start_step >= ev.end_step {
                return Err(ScenarioError::InvalidOutage(format!(
                    "event at node {} has start {} >= end {}",
                    ev.node, ev.start_step, ev.end_step
                )));
            }
            if ev.end_step > horizon_l {
                return Err(ScenarioError::InvalidOutage(format!(
                    "event at node {} ends at {} beyond L = {horizon_l}",
                    ev.node, ev.end_step
                )));
            }
            if ev.node >= nodes {
                return Err(ScenarioError::InvalidOutage(format!(
                    "event node {} outside [0, {nodes})",
                    ev.node
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationStatus {
    Ok,
    Warn,
    Fail,
}

impl fmt::Display for ValidationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ok => "ok",
            Self::Warn => "warn",
            Self::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    /// Travel time from `from` to `to` reaches or exceeds the prediction horizon.
    HorizonHazard { from: NodeId, to: NodeId, steps: u32, horizon_t: usize },
    /// The whole fleet discharging at full rate cannot cover the building shortfall.
    InsufficientV2bCapacity { required: f64, deliverable: f64 },
    InvalidParams { message: String },
    InvalidOutage { message: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::HorizonHazard { from, to, steps, horizon_t } => write!(
                f,
                "travel time {from}->{to} is {steps} steps, not below the horizon T={horizon_t}"
            ),
            Self::InsufficientV2bCapacity { required, deliverable } => write!(
                f,
                "building shortfall {required:.4} SOC/step exceeds fleet maximum {deliverable:.4}"
            ),
            Self::InvalidParams { message } => write!(f, "parameters: {message}"),
            Self::InvalidOutage { message } => write!(f, "outage schedule: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub status: ValidationStatus,
    pub issues: Vec<ValidationIssue>,
}

/// Diagnostics only: flags horizon hazards (warn) and structural infeasibility (fail).
pub fn validate_scenario(
    params: &ModelParams,
    network: &Network,
    outages: &OutageSchedule,
) -> ValidationReport {
    let mut issues = Vec::new();
    let mut status = ValidationStatus::Ok;
    if let Err(e) = params.validate() {
        issues.push(ValidationIssue::InvalidParams { message: e.to_string() });
        status = ValidationStatus::Fail;
    }
    if let Err(e) = outages.validate(network.len(), params.horizon_l) {
        issues.push(ValidationIssue::InvalidOutage { message: e.to_string() });
        status = ValidationStatus::Fail;
    }
    for from in 0..network.len() {
        for to in 0..network.len() {
            let steps = network.steps(from, to);
            if from != to && steps as usize >= params.horizon_t {
                issues.push(ValidationIssue::HorizonHazard {
                    from,
                    to,
                    steps,
                    horizon_t: params.horizon_t,
                });
                status = status.max(ValidationStatus::Warn);
            }
        }
    }
    if !outages.events.is_empty() {
        let required = outages.q_demand - outages.q_backup;
        let deliverable = params.fleet_size as f64 * params.theta_v2b * params.eta;
        if required > deliverable + 1e-12 {
            issues.push(ValidationIssue::InsufficientV2bCapacity { required, deliverable });
            status = ValidationStatus::Fail;
        }
    }
    ValidationReport { status, issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn line_nodes(xs_km: &[f64]) -> Vec<Node> {
        xs_km
            .iter()
            .enumerate()
            .map(|(id, &x)| Node { id, x: x * 1000.0, y: 0.0, label: String::new() })
            .collect()
    }

    #[test]
    fn six_km_at_sixty_is_one_step() {
        let net = build_network(line_nodes(&[0.0, 6.0]), 60.0, 6.0).unwrap();
        assert_eq!(net.travel_time, vec![vec![0, 1], vec![1, 0]]);
        assert!((net.distance_km[0][1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_centroids_take_one_step() {
        let net = build_network(line_nodes(&[3.0, 3.0]), 60.0, 6.0).unwrap();
        assert_eq!(net.steps(0, 1), 1);
        assert_eq!(net.steps(1, 1), 0);
    }

    #[test]
    fn three_nodes_on_a_line() {
        // 10 km at 50 km/h = 12 min = 2 steps; 20 km = 24 min = 4 steps
        let net = build_network(line_nodes(&[0.0, 10.0, 20.0]), 50.0, 6.0).unwrap();
        assert_eq!(net.travel_time, vec![vec![0, 2, 4], vec![2, 0, 2], vec![4, 2, 0]]);
        assert!(net.is_symmetric());
        assert_eq!(net.max_remaining(0), Some(3));
        assert_eq!(net.max_remaining(1), Some(1));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut nodes = line_nodes(&[0.0, 1.0, 2.0]);
        nodes[2].id = 1;
        assert!(matches!(build_network(nodes, 60.0, 6.0), Err(ScenarioError::DuplicateNode(1))));
    }

    #[test]
    fn single_node_rejected() {
        assert!(matches!(
            build_network(line_nodes(&[0.0]), 60.0, 6.0),
            Err(ScenarioError::TooFewNodes(1))
        ));
    }

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn intra_node_trips_are_dropped() {
        let net = build_network(line_nodes(&[0.0, 10.0, 20.0]), 60.0, 6.0).unwrap();
        let f = write_file(
            "origin_x,origin_y,dest_x,dest_y,departure_seconds,mode\n\
             0,0,10000,0,100,car\n\
             100,0,200,0,200,car\n\
             19000,0,1000,0,300,pt\n",
        );
        let load = load_trips(f.path(), &net).unwrap();
        assert_eq!(load.trips.len(), 2);
        assert_eq!(load.dropped_intra, 1);
        assert_eq!(load.trips[1], TripRecord { origin: 2, destination: 0, departure_seconds: 300 });
    }

    #[test]
    fn walk_trips_are_dropped() {
        let net = build_network(line_nodes(&[0.0, 10.0]), 60.0, 6.0).unwrap();
        let f = write_file(
            "origin_x,origin_y,dest_x,dest_y,departure_seconds,mode\n\
             0,0,10000,0,100,walk\n\
             0,0,10000,0,100,car\n",
        );
        let load = load_trips(f.path(), &net).unwrap();
        assert_eq!((load.trips.len(), load.dropped_walk), (1, 1));
    }

    #[test]
    fn malformed_coordinate_names_the_line() {
        let net = build_network(line_nodes(&[0.0, 10.0]), 60.0, 6.0).unwrap();
        let f = write_file(
            "origin_x,origin_y,dest_x,dest_y,departure_seconds,mode\n\
             0,0,10000,0,100,car\n\
             0,abc,10000,0,100,car\n",
        );
        match load_trips(f.path(), &net) {
            Err(ScenarioError::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("origin_y"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_result_is_an_error() {
        let net = build_network(line_nodes(&[0.0, 10.0]), 60.0, 6.0).unwrap();
        let f = write_file("origin_x,origin_y,dest_x,dest_y,departure_seconds,mode\n1,1,2,2,5,car\n");
        assert!(matches!(load_trips(f.path(), &net), Err(ScenarioError::NoUsableTrips { .. })));
    }

    fn small_net(t: u32) -> Network {
        Network::from_travel_times(vec![vec![0, t], vec![t, 0]]).unwrap()
    }

    #[test]
    fn validation_ok_without_hazards() {
        let params = ModelParams { fleet_size: 2, ..Default::default() };
        let outage = OutageSchedule { events: vec![], q_demand: 1.0, q_backup: 1.0 };
        let report = validate_scenario(&params, &small_net(3), &outage);
        assert_eq!(report.status, ValidationStatus::Ok, "{:?}", report.issues);
    }

    #[test]
    fn validation_warns_at_horizon_boundary() {
        let params = ModelParams { fleet_size: 2, horizon_t: 4, ..Default::default() };
        let report = validate_scenario(&params, &small_net(4), &OutageSchedule::none());
        assert_eq!(report.status, ValidationStatus::Warn);
        assert!(report
            .issues
            .contains(&ValidationIssue::HorizonHazard { from: 0, to: 1, steps: 4, horizon_t: 4 }));
    }

    #[test]
    fn validation_fails_when_fleet_cannot_cover_shortfall() {
        let params = ModelParams { fleet_size: 10, horizon_l: 20, ..Default::default() };
        let outage = OutageSchedule {
            events: vec![OutageEvent { node: 0, start_step: 2, end_step: 5 }],
            q_demand: 1.2,
            q_backup: 1.0,
        };
        let report = validate_scenario(&params, &small_net(1), &outage);
        assert_eq!(report.status, ValidationStatus::Fail);
        match &report.issues[0] {
            ValidationIssue::InsufficientV2bCapacity { required, deliverable } => {
                assert!((required - 0.2).abs() < 1e-12);
                assert!((deliverable - 0.09).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn params_invariants() {
        assert!(ModelParams::default().validate().is_ok());
        let p = ModelParams { rho2: 0.02, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ModelParams { horizon_t: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ModelParams { gamma_init: 0.1, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
