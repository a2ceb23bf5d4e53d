//! Real-time fleet state and the first-step control set applied to it.

use serde::{Deserialize, Serialize};

use crate::demand::ArrivalMatrix;
use crate::scenario::{ModelParams, Network, NodeId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StateError {
    #[error("state has {got} nodes, network has {expected}")]
    NodeCount { expected: usize, got: usize },
    #[error("vehicle {vehicle}: node {node} outside the network")]
    NodeOutOfRange { vehicle: usize, node: NodeId },
    #[error("vehicle {vehicle}: {remaining} steps remaining to node {node} exceeds its maximum {max}")]
    RemainingOutOfRange { vehicle: usize, node: NodeId, remaining: u32, max: i64 },
    #[error("vehicle {vehicle}: SOC {soc} outside [{min}, {max}]")]
    SocOutOfRange { vehicle: usize, soc: f64, min: f64, max: f64 },
    #[error("vehicle {vehicle} appears in more than one dispatch")]
    MultipleTasks { vehicle: usize },
    #[error("vehicle {vehicle} charges and discharges in the same step")]
    ChargeAndDischarge { vehicle: usize },
    #[error("vehicle {vehicle} dispatched from node {from} but is not there")]
    NotAtOrigin { vehicle: usize, from: NodeId },
    #[error("{picked} pickups on {from}->{to} exceed {available} available passengers")]
    NotEnoughPassengers { from: NodeId, to: NodeId, picked: u32, available: u32 },
}

/// Where a vehicle is at a real-time step: exactly one of the parked (`U`) or
/// in-transit (`A`) flags is set, so the one-hot location rule holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VehiclePosition {
    Parked { node: NodeId },
    /// Heading to `to`; `remaining == 0` means arriving this step.
    EnRoute { to: NodeId, remaining: u32 },
}

impl VehiclePosition {
    /// Node the vehicle is at or heading to.
    pub fn node(&self) -> NodeId {
        match *self {
            Self::Parked { node } => node,
            Self::EnRoute { to, .. } => to,
        }
    }

    /// Node a dispatch may start from at this step (parked, or arriving now).
    pub fn available_at(&self) -> Option<NodeId> {
        match *self {
            Self::Parked { node } => Some(node),
            Self::EnRoute { to, remaining: 0 } => Some(to),
            Self::EnRoute { .. } => None,
        }
    }

    pub fn is_moving(&self) -> bool {
        matches!(self, Self::EnRoute { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: VehiclePosition,
    pub soc: f64,
}

/// Snapshot `(D, U, A, Γ)` at a real-time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub nodes: usize,
    /// Waiting passengers, row-major `(origin, destination)`.
    waiting: Vec<u32>,
    pub vehicles: Vec<VehicleState>,
}

impl FleetState {
    pub fn parked(nodes: usize, placement: &[NodeId], soc: f64) -> Self {
        let vehicles = placement
            .iter()
            .map(|&node| VehicleState { position: VehiclePosition::Parked { node }, soc })
            .collect();
        Self { nodes, waiting: vec![0; nodes * nodes], vehicles }
    }

    pub fn waiting(&self, i: NodeId, j: NodeId) -> u32 {
        self.waiting[i * self.nodes + j]
    }

    pub fn set_waiting(&mut self, i: NodeId, j: NodeId, count: u32) {
        self.waiting[i * self.nodes + j] = count;
    }

    pub fn total_waiting(&self) -> u64 {
        self.waiting.iter().map(|&w| w as u64).sum()
    }

    pub fn fleet_size(&self) -> usize {
        self.vehicles.len()
    }

    /// `U^k_i`.
    pub fn parked_flag(&self, vehicle: usize, node: NodeId) -> bool {
        self.vehicles[vehicle].position == VehiclePosition::Parked { node }
    }

    /// `A^{kθ}_i`.
    pub fn transit_flag(&self, vehicle: usize, node: NodeId, remaining: u32) -> bool {
        self.vehicles[vehicle].position == VehiclePosition::EnRoute { to: node, remaining }
    }

    pub fn validate(&self, network: &Network, params: &ModelParams) -> Result<(), StateError> {
        if self.nodes != network.len() {
            return Err(StateError::NodeCount { expected: network.len(), got: self.nodes });
        }
        for (k, v) in self.vehicles.iter().enumerate() {
            let node = v.position.node();
            if node >= network.len() {
                return Err(StateError::NodeOutOfRange { vehicle: k, node });
            }
            if let VehiclePosition::EnRoute { to, remaining } = v.position {
                let max = network.max_remaining(to).map(i64::from).unwrap_or(-1);
                if remaining as i64 > max {
                    return Err(StateError::RemainingOutOfRange { vehicle: k, node: to, remaining, max });
                }
            }
            let tol = 1e-7;
            if v.soc < params.gamma_min - tol || v.soc > params.gamma_max + tol {
                return Err(StateError::SocOutOfRange {
                    vehicle: k,
                    soc: v.soc,
                    min: params.gamma_min,
                    max: params.gamma_max,
                });
            }
        }
        Ok(())
    }

    /// Applies one step of the queue, movement, parking and SOC recursions.
    pub fn propagate(
        &self,
        controls: &ControlSet,
        arrivals: &ArrivalMatrix,
        step: usize,
        network: &Network,
        params: &ModelParams,
    ) -> Result<FleetState, StateError> {
        controls.check_shape(self)?;
        let mut next = self.clone();
        for i in 0..self.nodes {
            for j in 0..self.nodes {
                if i == j {
                    continue;
                }
                let available = self.waiting(i, j) + arrivals.get(i, j, step);
                let picked =
                    controls.pickups.iter().filter(|d| d.from == i && d.to == j).count() as u32;
                if picked > available {
                    return Err(StateError::NotEnoughPassengers { from: i, to: j, picked, available });
                }
                next.set_waiting(i, j, available - picked);
            }
        }
        for (k, v) in self.vehicles.iter().enumerate() {
            let dispatch = controls.dispatch_of(k);
            let position = match (dispatch, v.position) {
                (Some(d), pos) => {
                    if pos.available_at() != Some(d.from) {
                        return Err(StateError::NotAtOrigin { vehicle: k, from: d.from });
                    }
                    VehiclePosition::EnRoute { to: d.to, remaining: network.steps(d.from, d.to) - 1 }
                }
                (None, VehiclePosition::EnRoute { to, remaining: 0 }) => VehiclePosition::Parked { node: to },
                (None, VehiclePosition::EnRoute { to, remaining }) => {
                    VehiclePosition::EnRoute { to, remaining: remaining - 1 }
                }
                (None, parked) => parked,
            };
            let moving = if position.is_moving() { params.theta_d } else { 0.0 };
            next.vehicles[k] = VehicleState {
                position,
                soc: v.soc + controls.charge[k] - controls.discharge[k] - moving,
            };
        }
        Ok(next)
    }
}

/// Vehicle `vehicle` leaves `from` for `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dispatch {
    pub vehicle: usize,
    pub from: NodeId,
    pub to: NodeId,
}

/// First-step controls `(v, r, e, g, q)` of one MPC iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSet {
    pub pickups: Vec<Dispatch>,
    pub relocations: Vec<Dispatch>,
    /// SOC charged per vehicle.
    pub charge: Vec<f64>,
    /// SOC discharged per vehicle.
    pub discharge: Vec<f64>,
    /// SOC received by the building (`η Σ g`).
    pub delivered: f64,
}

impl ControlSet {
    pub fn idle(vehicles: usize) -> Self {
        Self { charge: vec![0.0; vehicles], discharge: vec![0.0; vehicles], ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.pickups.is_empty()
            && self.relocations.is_empty()
            && self.charge.iter().all(|&e| e == 0.0)
            && self.discharge.iter().all(|&g| g == 0.0)
    }

    pub fn dispatch_of(&self, vehicle: usize) -> Option<Dispatch> {
        self.pickups.iter().chain(&self.relocations).find(|d| d.vehicle == vehicle).copied()
    }

    fn check_shape(&self, state: &FleetState) -> Result<(), StateError> {
        for k in 0..state.fleet_size() {
            let n = self.pickups.iter().chain(&self.relocations).filter(|d| d.vehicle == k).count();
            if n > 1 {
                return Err(StateError::MultipleTasks { vehicle: k });
            }
            if self.charge[k] > 0.0 && self.discharge[k] > 0.0 {
                return Err(StateError::ChargeAndDischarge { vehicle: k });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::from_travel_times(vec![vec![0, 2, 1], vec![2, 0, 1], vec![1, 1, 0]]).unwrap()
    }

    #[test]
    fn idle_propagation_adds_arrivals() {
        let params = ModelParams::default();
        let s = FleetState::parked(3, &[0, 2], 0.8);
        let mut p = ArrivalMatrix::zeros(3, 4);
        p.add(0, 1, 1, 2);
        let next = s.propagate(&ControlSet::idle(2), &p, 1, &net(), &params).unwrap();
        assert_eq!(next.waiting(0, 1), 2);
        assert_eq!(next.vehicles, s.vehicles);
    }

    #[test]
    fn dispatch_enters_transit_and_burns_energy() {
        let params = ModelParams::default();
        let s = FleetState::parked(3, &[0], 0.8);
        let mut c = ControlSet::idle(1);
        c.relocations.push(Dispatch { vehicle: 0, from: 0, to: 1 });
        let p = ArrivalMatrix::zeros(3, 4);
        let s1 = s.propagate(&c, &p, 0, &net(), &params).unwrap();
        assert_eq!(s1.vehicles[0].position, VehiclePosition::EnRoute { to: 1, remaining: 1 });
        assert!((s1.vehicles[0].soc - (0.8 - params.theta_d)).abs() < 1e-15);
        let s2 = s1.propagate(&ControlSet::idle(1), &p, 1, &net(), &params).unwrap();
        assert_eq!(s2.vehicles[0].position, VehiclePosition::EnRoute { to: 1, remaining: 0 });
        let s3 = s2.propagate(&ControlSet::idle(1), &p, 2, &net(), &params).unwrap();
        assert_eq!(s3.vehicles[0].position, VehiclePosition::Parked { node: 1 });
        assert!((s3.vehicles[0].soc - (0.8 - 2.0 * params.theta_d)).abs() < 1e-15);
    }

    #[test]
    fn pickup_needs_a_passenger() {
        let params = ModelParams::default();
        let s = FleetState::parked(3, &[0], 0.8);
        let mut c = ControlSet::idle(1);
        c.pickups.push(Dispatch { vehicle: 0, from: 0, to: 2 });
        let p = ArrivalMatrix::zeros(3, 4);
        assert!(matches!(
            s.propagate(&c, &p, 0, &net(), &params),
            Err(StateError::NotEnoughPassengers { .. })
        ));
    }

    #[test]
    fn validate_rejects_bad_remaining() {
        let params = ModelParams::default();
        let mut s = FleetState::parked(3, &[0], 0.8);
        s.vehicles[0].position = VehiclePosition::EnRoute { to: 2, remaining: 1 };
        assert!(matches!(s.validate(&net(), &params), Err(StateError::RemainingOutOfRange { .. })));
        s.vehicles[0].position = VehiclePosition::EnRoute { to: 1, remaining: 1 };
        assert!(s.validate(&net(), &params).is_ok());
    }
}
