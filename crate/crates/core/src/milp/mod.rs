//! Abstract linear model with typed column/row keys.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub mod amod;

pub use amod::{
    assemble, extract_controls, extract_next_state, index_variables, AmodProblem, FamilyCounts,
    HorizonWindow, ObjectiveTerms, VariableLayout,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

/// Column identity: family plus subscripts. `t` is the prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarKey {
    /// `d_{ijt}`
    Waiting { i: u32, j: u32, t: u32 },
    /// `a^{kθ}_{it}`
    Transit { k: u32, i: u32, theta: u32, t: u32 },
    /// `u^k_{it}`
    Parked { k: u32, i: u32, t: u32 },
    /// `γ^k_t`
    Soc { k: u32, t: u32 },
    /// `e^k_t`
    Charge { k: u32, t: u32 },
    /// `g^k_t`
    Discharge { k: u32, t: u32 },
    /// `v^k_{ijt}`
    Pickup { k: u32, i: u32, j: u32, t: u32 },
    /// `r^k_{ijt}`
    Relocate { k: u32, i: u32, j: u32, t: u32 },
    /// Penalised shortfall of the emergency cover (relaxed mode only).
    CoverSlack { t: u32 },
    Generic(u32),
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Waiting { i, j, t } => write!(f, "d_{i}_{j}_{t}"),
            Self::Transit { k, i, theta, t } => write!(f, "a_{k}_{i}_{theta}_{t}"),
            Self::Parked { k, i, t } => write!(f, "u_{k}_{i}_{t}"),
            Self::Soc { k, t } => write!(f, "soc_{k}_{t}"),
            Self::Charge { k, t } => write!(f, "e_{k}_{t}"),
            Self::Discharge { k, t } => write!(f, "g_{k}_{t}"),
            Self::Pickup { k, i, j, t } => write!(f, "v_{k}_{i}_{j}_{t}"),
            Self::Relocate { k, i, j, t } => write!(f, "r_{k}_{i}_{j}_{t}"),
            Self::CoverSlack { t } => write!(f, "s_{t}"),
            Self::Generic(n) => write!(f, "x{n}"),
        }
    }
}

/// Row identity, named after the relation it encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKey {
    QueueFlow { i: u32, j: u32, t: u32 },
    Movement { k: u32, i: u32, theta: u32, t: u32 },
    Parking { k: u32, i: u32, t: u32 },
    SocFlow { k: u32, t: u32 },
    OneHot { k: u32, t: u32 },
    SingleTask { k: u32, t: u32 },
    TerminalDeparture { k: u32, i: u32 },
    PickupLimit { i: u32, j: u32, t: u32 },
    SocFloor { k: u32, i: u32, j: u32, t: u32 },
    ChargeLimit { k: u32, t: u32 },
    DischargeLimit { k: u32, t: u32 },
    EmergencyCover { t: u32 },
    TerminalSocMin { k: u32 },
    TerminalSocMax { k: u32 },
    Generic(u32),
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::QueueFlow { i, j, t } => write!(f, "queue_{i}_{j}_{t}"),
            Self::Movement { k, i, theta, t } => write!(f, "move_{k}_{i}_{theta}_{t}"),
            Self::Parking { k, i, t } => write!(f, "park_{k}_{i}_{t}"),
            Self::SocFlow { k, t } => write!(f, "socflow_{k}_{t}"),
            Self::OneHot { k, t } => write!(f, "onehot_{k}_{t}"),
            Self::SingleTask { k, t } => write!(f, "task_{k}_{t}"),
            Self::TerminalDeparture { k, i } => write!(f, "tdep_{k}_{i}"),
            Self::PickupLimit { i, j, t } => write!(f, "pick_{i}_{j}_{t}"),
            Self::SocFloor { k, i, j, t } => write!(f, "socfloor_{k}_{i}_{j}_{t}"),
            Self::ChargeLimit { k, t } => write!(f, "chg_{k}_{t}"),
            Self::DischargeLimit { k, t } => write!(f, "dis_{k}_{t}"),
            Self::EmergencyCover { t } => write!(f, "cover_{t}"),
            Self::TerminalSocMin { k } => write!(f, "tsocmin_{k}"),
            Self::TerminalSocMax { k } => write!(f, "tsocmax_{k}"),
            Self::Generic(n) => write!(f, "c{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub key: VarKey,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub key: RowKey,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, a)| a * values[c]).sum()
    }

    /// Amount by which `values` violate this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InstanceError {
    #[error("row {row} references column {col} but only {cols} are declared")]
    UndeclaredColumn { row: String, col: usize, cols: usize },
    #[error("column {0} declared twice")]
    DuplicateColumn(String),
    #[error("index space overflow for N={nodes}, K={vehicles}, T={horizon}")]
    IndexOverflow { nodes: usize, vehicles: usize, horizon: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    State(#[from] crate::state::StateError),
    #[error("solution is not usable (status {0})")]
    Unsolved(crate::solver::SolveStatus),
    #[error("solution has {got} values for {expected} columns")]
    SolutionLength { expected: usize, got: usize },
    #[error("rounded solution violates {constraint} for vehicle {vehicle}")]
    Rounding { vehicle: usize, constraint: &'static str },
    #[error("next-state extraction failed: {0}")]
    Extraction(String),
    #[error("instance carries no fleet model")]
    NotAnAmodInstance,
}

/// Minimisation model: columns with bounds/integrality, linear rows, linear objective.
#[derive(Debug, Clone, Default)]
pub struct MilpInstance {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    index: HashMap<VarKey, usize>,
    /// Fleet model this instance was assembled from, if any.
    pub origin: Option<Arc<AmodProblem>>,
}

impl MilpInstance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_column(
        &mut self,
        key: VarKey,
        kind: VarKind,
        lower: f64,
        upper: f64,
        cost: f64,
    ) -> Result<usize, InstanceError> {
        let id = self.columns.len();
        if self.index.insert(key, id).is_some() {
            return Err(InstanceError::DuplicateColumn(key.to_string()));
        }
        self.columns.push(Column { key, kind, lower, upper, cost });
        Ok(id)
    }

    /// Adds a row, dropping zero coefficients and merging repeated columns.
    pub fn add_row(
        &mut self,
        key: RowKey,
        terms: impl IntoIterator<Item = (usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> Result<usize, InstanceError> {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (c, a) in terms {
            if c >= self.columns.len() {
                return Err(InstanceError::UndeclaredColumn {
                    row: key.to_string(),
                    col: c,
                    cols: self.columns.len(),
                });
            }
            match merged.iter_mut().find(|(mc, _)| *mc == c) {
                Some(entry) => entry.1 += a,
                None => merged.push((c, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row { key, terms: merged, sense, rhs });
        Ok(self.rows.len() - 1)
    }

    pub fn col(&self, key: &VarKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, col: usize) -> VarKey {
        self.columns[col].key
    }

    pub fn num_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.columns.iter().zip(values).map(|(c, v)| c.cost * v).sum()
    }

    /// Largest bound, integrality or row violation, with a description of where it occurs.
    pub fn max_violation(&self, values: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (c, &v) in self.columns.iter().zip(values) {
            let mut viol = (c.lower - v).max(v - c.upper).max(0.0);
            if c.kind == VarKind::Binary {
                viol = viol.max((v - v.round()).abs());
            }
            if viol > worst.0 {
                worst = (viol, format!("column {}", c.key));
            }
        }
        for r in &self.rows {
            let viol = r.violation(values);
            if viol > worst.0 {
                worst = (viol, format!("row {}", r.key));
            }
        }
        worst
    }

    /// Structural check: every row references declared columns and the index is total.
    pub fn check_well_formed(&self) -> Result<(), InstanceError> {
        for r in &self.rows {
            if let Some(&(c, _)) = r.terms.iter().find(|(c, _)| *c >= self.columns.len()) {
                return Err(InstanceError::UndeclaredColumn {
                    row: r.key.to_string(),
                    col: c,
                    cols: self.columns.len(),
                });
            }
        }
        if self.index.len() != self.columns.len() {
            return Err(InstanceError::Dimension("index map is not total".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_merge_and_drop_zeros() {
        let mut m = MilpInstance::new();
        let x = m.add_column(VarKey::Generic(0), VarKind::Continuous, 0.0, 1.0, 1.0).unwrap();
        let y = m.add_column(VarKey::Generic(1), VarKind::Binary, 0.0, 1.0, -1.0).unwrap();
        m.add_row(RowKey::Generic(0), [(x, 1.0), (y, 0.0), (x, 2.0)], Sense::Le, 3.0).unwrap();
        assert_eq!(m.rows[0].terms, vec![(x, 3.0)]);
        assert!(m.add_row(RowKey::Generic(1), [(7, 1.0)], Sense::Eq, 0.0).is_err());
        assert!(m.add_column(VarKey::Generic(0), VarKind::Binary, 0.0, 1.0, 0.0).is_err());
        assert_eq!(m.objective_value(&[1.0, 1.0]), 0.0);
        assert_eq!(m.max_violation(&[1.5, 0.5]).0, 1.5);
        m.check_well_formed().unwrap();
    }
}
