//! Solving `MilpInstance`s: branch-and-bound backend, exhaustive oracle, MPS export.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::milp::MilpInstance;

#[cfg(feature = "highs")]
mod highs;
pub mod mps;
pub mod oracle;

pub use mps::{export_standard_form, read_standard_form, write_standard_form, MpsModel};
pub use oracle::{oracle_solve, OracleError, DEFAULT_ORACLE_LIMIT};

/// Environment variable naming the backend (`highs` or `oracle`).
pub const BACKEND_ENV: &str = "SAEV_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    /// Proven within the requested relative gap.
    Optimal,
    /// Feasible incumbent, gap not closed.
    GapFeasible,
    Infeasible,
    Unbounded,
    /// Stopped by the time limit without an incumbent.
    TimeLimit,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, Self::Optimal | Self::GapFeasible)
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::GapFeasible => "gap-feasible",
            Self::Infeasible => "infeasible",
            Self::Unbounded => "unbounded",
            Self::TimeLimit => "time-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    /// Best proven lower bound.
    pub bound: f64,
    /// Column values; empty when no solution is available.
    pub values: Vec<f64>,
}

impl Solution {
    pub fn infeasible() -> Self {
        Self { status: SolveStatus::Infeasible, objective: f64::NAN, bound: f64::NAN, values: Vec::new() }
    }

    /// `(objective − bound) / max(1, |objective|)`.
    pub fn relative_gap(&self) -> f64 {
        if !self.status.has_solution() {
            return f64::INFINITY;
        }
        ((self.objective - self.bound) / self.objective.abs().max(1.0)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Highs,
    Oracle,
}

impl Backend {
    /// Backend named by `SAEV_SOLVER`, defaulting to HiGHS.
    pub fn from_env() -> Result<Self, SolveError> {
        match std::env::var(BACKEND_ENV) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(Self::Highs),
        }
    }
}

impl FromStr for Backend {
    type Err = SolveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "highs" => Ok(Self::Highs),
            "oracle" => Ok(Self::Oracle),
            other => Err(SolveError::UnknownBackend(other.to_string())),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Highs => "highs",
            Self::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub rel_gap: f64,
    pub time_limit_s: f64,
    /// Solver-internal thread hint; `None` leaves the backend default.
    pub threads: Option<u32>,
    pub backend: Backend,
    /// Oracle refusal threshold on the nominal branching product.
    pub oracle_limit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rel_gap: 1e-4,
            time_limit_s: 3600.0,
            threads: None,
            backend: Backend::Highs,
            oracle_limit: DEFAULT_ORACLE_LIMIT,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.rel_gap >= 0.0 && self.rel_gap.is_finite()) {
            return Err(SolveError::InvalidOptions(format!("rel_gap must be >= 0, got {}", self.rel_gap)));
        }
        if !(self.time_limit_s > 0.0) {
            return Err(SolveError::InvalidOptions(format!(
                "time limit must be positive, got {}",
                self.time_limit_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error(
        "solver backend `{0}` is not available in this build; \
         export the instance with `export_standard_form` and solve the MPS file externally"
    )]
    BackendUnavailable(Backend),
    #[error("unknown solver backend `{0}` (expected `highs` or `oracle`)")]
    UnknownBackend(String),
    #[error("invalid solve options: {0}")]
    InvalidOptions(String),
    #[error("malformed instance: {0}")]
    Instance(#[from] crate::milp::InstanceError),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Solve outcome plus wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedSolution {
    pub solution: Solution,
    pub wall_seconds: f64,
}

pub fn solve(instance: &MilpInstance, opts: &SolveOptions) -> Result<Solution, SolveError> {
    opts.validate()?;
    instance.check_well_formed()?;
    if instance.num_cols() == 0 {
        return Ok(solve_empty(instance));
    }
    match opts.backend {
        Backend::Oracle => Ok(oracle_solve(instance, opts.oracle_limit)?),
        Backend::Highs => solve_highs(instance, opts),
    }
}

pub fn solve_timed(instance: &MilpInstance, opts: &SolveOptions) -> Result<TimedSolution, SolveError> {
    let start = Instant::now();
    let solution = solve(instance, opts)?;
    Ok(TimedSolution { solution, wall_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(feature = "highs")]
fn solve_highs(instance: &MilpInstance, opts: &SolveOptions) -> Result<Solution, SolveError> {
    highs::solve(instance, opts)
}

#[cfg(not(feature = "highs"))]
fn solve_highs(_instance: &MilpInstance, _opts: &SolveOptions) -> Result<Solution, SolveError> {
    Err(SolveError::BackendUnavailable(Backend::Highs))
}

fn solve_empty(instance: &MilpInstance) -> Solution {
    let feasible = instance.rows.iter().all(|r| r.violation(&[]) <= 1e-9);
    if feasible {
        Solution { status: SolveStatus::Optimal, objective: 0.0, bound: 0.0, values: Vec::new() }
    } else {
        Solution::infeasible()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{RowKey, Sense, VarKey, VarKind};

    #[test]
    fn empty_instance_is_optimal_at_zero() {
        let s = solve(&MilpInstance::new(), &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.objective, 0.0);
    }

    #[cfg(feature = "highs")]
    #[test]
    fn single_binary_minimises_to_minus_one() {
        let mut m = MilpInstance::new();
        let x = m.add_column(VarKey::Generic(0), VarKind::Binary, 0.0, 1.0, -1.0).unwrap();
        m.add_row(RowKey::Generic(0), [(x, 1.0)], Sense::Le, 1.0).unwrap();
        let s = solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.values, vec![1.0]);
        assert!((s.objective + 1.0).abs() < 1e-9);
        let o = solve(&m, &SolveOptions { backend: Backend::Oracle, ..Default::default() }).unwrap();
        assert_eq!(o.objective, -1.0);
    }

    #[cfg(feature = "highs")]
    #[test]
    fn infeasible_is_a_status_not_an_error() {
        let mut m = MilpInstance::new();
        let x = m.add_column(VarKey::Generic(0), VarKind::Binary, 0.0, 1.0, 1.0).unwrap();
        m.add_row(RowKey::Generic(0), [(x, 1.0)], Sense::Ge, 2.0).unwrap();
        let s = solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn backend_names_parse() {
        assert_eq!("HiGHS".parse::<Backend>().unwrap(), Backend::Highs);
        assert_eq!("oracle".parse::<Backend>().unwrap(), Backend::Oracle);
        assert!("cplex".parse::<Backend>().is_err());
    }

    #[test]
    fn options_are_validated() {
        let bad = SolveOptions { rel_gap: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolveOptions { time_limit_s: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
