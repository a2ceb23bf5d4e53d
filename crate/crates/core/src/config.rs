//! TOML scenario files, `key=value` overrides and their resolution into runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{DemandSource, SweepBase};
use crate::demand::{estimate_rates, replay_arrivals, ArrivalMatrix, RateMatrix};
use crate::mpc::{initial_state, Boundary, MpcOptions, Placement, Scenario};
use crate::scenario::{build_network, load_nodes, load_trips, ModelParams, Network, NodeId, OutageSchedule};
use crate::solver::{Backend, SolveOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("override {key:?}: {msg}")]
    UnknownKey { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
    #[error(transparent)]
    Mpc(#[from] crate::mpc::MpcError),
    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Whole-step travel times; takes precedence over `nodes_file`.
    pub travel_times: Option<Vec<Vec<u32>>>,
    pub nodes_file: Option<PathBuf>,
    pub speed_kmh: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandKind {
    #[default]
    None,
    /// Every trip in `trips_file` becomes one arrival.
    Replay,
    /// Arrivals read from `arrivals_file` (`origin,destination,step,count`).
    Arrivals,
    /// Poisson draws from rates fitted to `trips_file`.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    pub kind: DemandKind,
    pub trips_file: Option<PathBuf>,
    pub arrivals_file: Option<PathBuf>,
    pub bucket_minutes: u32,
    /// Rescale fitted rates to this expected total over the run.
    pub passengers: Option<f64>,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self { kind: DemandKind::None, trips_file: None, arrivals_file: None, bucket_minutes: 30, passengers: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementKind {
    #[default]
    Uniform,
    DemandWeighted,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub placement: PlacementKind,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub boundary: Boundary,
    pub forecast: bool,
    pub cover_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rel_gap: f64,
    pub time_limit_s: f64,
    pub threads: Option<u32>,
    pub backend: Option<Backend>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { rel_gap: d.rel_gap, time_limit_s: d.time_limit_s, threads: d.threads, backend: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: usize,
    pub soc_reset: bool,
    pub network: NetworkConfig,
    pub demand: DemandConfig,
    pub params: ModelParams,
    pub fleet: FleetConfig,
    pub outage: OutageSchedule,
    pub mpc: MpcConfig,
    pub solver: SolverConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            days: 1,
            soc_reset: true,
            network: NetworkConfig::default(),
            demand: DemandConfig::default(),
            params: ModelParams::default(),
            fleet: FleetConfig::default(),
            outage: OutageSchedule::none(),
            mpc: MpcConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// A parsed scenario file plus the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str, overrides: &[String], origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), msg: e.to_string() })?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse { path: origin.into(), msg: e.to_string() })
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let config = parse_config(&text, overrides, &path.display().to_string())?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

/// Sets `a.b.c = value` in the TOML tree. The value is parsed as TOML and
/// falls back to a string; keys the schema does not know fail on deserialising.
pub fn apply_override(root: &mut toml::Value, raw: &str) -> Result<(), ConfigError> {
    let (key, val) = raw.split_once('=').ok_or_else(|| ConfigError::BadOverride(raw.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(raw.into()));
    }
    let parsed = parse_value(val.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| ConfigError::UnknownKey {
            key: key.into(),
            msg: format!("{part} is not a table"),
        })?;
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| ConfigError::UnknownKey { key: key.into(), msg: "parent is not a table".into() })?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Everything a run needs, with files read and paths resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub network: Arc<Network>,
    pub params: ModelParams,
    pub outages: OutageSchedule,
    /// Demand for the first day.
    pub arrivals: ArrivalMatrix,
    /// Demand for every day (sampled days draw with `seed + day`).
    pub days: Vec<ArrivalMatrix>,
    pub rates: Option<RateMatrix>,
    pub placement: Placement,
    pub seed: u64,
    pub soc_reset: bool,
    pub options: MpcOptions,
    pub fingerprint: String,
}

impl Resolved {
    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let initial = initial_state(&self.params, &self.network, &self.placement, self.seed)?;
        Ok(Scenario {
            network: self.network.clone(),
            params: self.params.clone(),
            outages: self.outages.clone(),
            arrivals: self.arrivals.clone(),
            initial,
        })
    }

    pub fn sweep_base(&self) -> SweepBase {
        let demand = match &self.rates {
            Some(r) => DemandSource::Sample(r.clone()),
            None => DemandSource::Replay(self.arrivals.clone()),
        };
        SweepBase {
            network: self.network.clone(),
            params: self.params.clone(),
            outages: self.outages.clone(),
            demand,
            placement: self.placement.clone(),
        }
    }
}

impl LoadedConfig {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn network(&self) -> Result<Network, ConfigError> {
        let c = &self.config.network;
        if let Some(tt) = &c.travel_times {
            return Ok(Network::from_travel_times(tt.clone())?);
        }
        let Some(nodes_file) = &c.nodes_file else {
            return Err(ConfigError::Invalid("network needs travel_times or nodes_file".into()));
        };
        let speed = c.speed_kmh.ok_or_else(|| ConfigError::Invalid("network.speed_kmh is required with nodes_file".into()))?;
        let nodes = load_nodes(self.path(nodes_file))?;
        Ok(build_network(nodes, speed, self.config.params.tau_minutes)?)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let c = &self.config;
        c.params.validate()?;
        if c.days == 0 {
            return Err(ConfigError::Invalid("days must be at least 1".into()));
        }
        let network = self.network()?;
        let n = network.len();
        let steps = c.params.horizon_l;
        let trips = |field: &Option<PathBuf>| -> Result<_, ConfigError> {
            let f = field.as_ref().ok_or_else(|| ConfigError::Invalid("demand.trips_file is required".into()))?;
            Ok(load_trips(self.path(f), &network)?.trips)
        };
        let mut rates = None;
        let days: Vec<ArrivalMatrix> = match c.demand.kind {
            DemandKind::None => vec![ArrivalMatrix::zeros(n, steps); c.days],
            DemandKind::Replay => {
                let mut p = c.params.clone();
                p.horizon_l = steps * c.days;
                let all = replay_arrivals(&trips(&c.demand.trips_file)?, &p, n)?;
                (0..c.days).map(|d| window(&all, d * steps, steps)).collect()
            }
            DemandKind::Arrivals => {
                let f = c
                    .demand
                    .arrivals_file
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("demand.arrivals_file is required".into()))?;
                let all = ArrivalMatrix::read_csv(self.path(f), n, steps * c.days)?;
                (0..c.days).map(|d| window(&all, d * steps, steps)).collect()
            }
            DemandKind::Sample => {
                let mut r = estimate_rates(&trips(&c.demand.trips_file)?, &c.params, n, c.demand.bucket_minutes)?;
                if let Some(target) = c.demand.passengers {
                    r = r.scaled_to_total(target, steps);
                }
                let draws = (0..c.days)
                    .map(|d| crate::demand::sample_arrivals(&r, c.seed.wrapping_add(d as u64), steps))
                    .collect::<Result<Vec<_>, _>>()?;
                rates = Some(r);
                draws
            }
        };
        let placement = match c.fleet.placement {
            PlacementKind::Uniform => Placement::Uniform,
            PlacementKind::Explicit => Placement::Explicit(c.fleet.nodes.clone()),
            PlacementKind::DemandWeighted => {
                let mut w: Vec<f64> = days[0].origin_totals().iter().map(|&x| x as f64).collect();
                if w.iter().all(|&x| x == 0.0) {
                    w = vec![1.0; n];
                }
                Placement::DemandWeighted(w)
            }
        };
        let backend = match c.solver.backend {
            Some(b) => b,
            None => Backend::from_env()?,
        };
        let solve = SolveOptions {
            rel_gap: c.solver.rel_gap,
            time_limit_s: c.solver.time_limit_s,
            threads: c.solver.threads,
            backend,
            ..Default::default()
        };
        solve.validate()?;
        let options = MpcOptions {
            solve,
            boundary: c.mpc.boundary,
            forecast: if c.mpc.forecast { rates.clone() } else { None },
            cover_penalty: c.mpc.cover_penalty,
        };
        if c.mpc.forecast && rates.is_none() {
            return Err(ConfigError::Invalid("mpc.forecast needs demand.kind = \"sample\"".into()));
        }
        Ok(Resolved {
            network: Arc::new(network),
            params: c.params.clone(),
            outages: c.outage.clone(),
            arrivals: days[0].clone(),
            days,
            rates,
            placement,
            seed: c.seed,
            soc_reset: c.soc_reset,
            options,
            fingerprint: fingerprint_config(c),
        })
    }
}

fn window(all: &ArrivalMatrix, start: usize, len: usize) -> ArrivalMatrix {
    let mut out = ArrivalMatrix::zeros(all.nodes, len);
    for (i, j, s, c) in all.nonzero() {
        if s >= start && s < start + len {
            out.add(i, j, s - start, c);
        }
    }
    out
}

/// SHA-256 of the canonical JSON form of the configuration.
pub fn fingerprint_config(config: &ScenarioConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
seed = 3
[network]
travel_times = [[0, 1], [1, 0]]
[params]
horizon_l = 4
horizon_t = 3
fleet_size = 1
[fleet]
placement = "explicit"
nodes = [1]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = parse_config(TINY, &[], "tiny").unwrap();
        assert_eq!(c.params.horizon_l, 4);
        assert_eq!(c.params.gamma_min, 0.2);
        assert_eq!(c.days, 1);
        assert_eq!(c.demand.kind, DemandKind::None);
    }

    #[test]
    fn overrides_touch_known_keys_only() {
        let c = parse_config(TINY, &["params.fleet_size=2".into(), "fleet.nodes=[0, 1]".into()], "tiny").unwrap();
        assert_eq!(c.params.fleet_size, 2);
        assert_eq!(c.fleet.nodes, vec![0, 1]);
        let c = parse_config(TINY, &["mpc.boundary=truncate".into()], "tiny").unwrap();
        assert_eq!(c.mpc.boundary, Boundary::Truncate);
        assert!(parse_config(TINY, &["params.fleet_sise=2".into()], "tiny").is_err());
        assert!(parse_config(TINY, &["nonsense".into()], "tiny").is_err());
        assert!(parse_config(TINY, &["params.horizon_l.x=1".into()], "tiny").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(parse_config("[params]\nwhatever = 1\n", &[], "x").is_err());
    }

    #[test]
    fn resolves_files_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("arrivals.csv"), "origin,destination,step,count\n0,1,2,3\n").unwrap();
        let text = format!("{TINY}\n[demand]\nkind = \"arrivals\"\narrivals_file = \"arrivals.csv\"\n");
        fs::write(dir.path().join("s.toml"), text).unwrap();
        let loaded = load_config(&dir.path().join("s.toml"), &[]).unwrap();
        let r = loaded.resolve().unwrap();
        assert_eq!(r.arrivals.get(0, 1, 2), 3);
        let sc = r.scenario().unwrap();
        assert_eq!(sc.initial.vehicles[0].position.node(), 1);
        assert_eq!(r.fingerprint.len(), 64);
    }
}
