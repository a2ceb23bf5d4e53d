//! Programmatic scenarios used by the tests, the bench and the CLI.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::{sample_arrivals, ArrivalMatrix, RateMatrix};
use crate::milp::{AmodProblem, HorizonWindow};
use crate::mpc::{initial_state, Placement, Scenario};
use crate::scenario::{build_network, ModelParams, Network, Node, NodeId, OutageEvent, OutageSchedule};
use crate::state::{FleetState, VehiclePosition, VehicleState};

/// Horizon problem small enough for the exhaustive oracle.
///
/// Two or three nodes, one or two vehicles, `T ∈ {2, 3}`, SOC in `[0.5, 0.9]`
/// and an occasional coverable outage.
pub fn oracle_scale(seed: u64) -> AmodProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3);
    let k = rng.gen_range(1..=2);
    let t = rng.gen_range(2..=3);
    let mut tt = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = rng.gen_range(1..=2);
            tt[i][j] = s;
            tt[j][i] = s;
        }
    }
    let net = Network::from_travel_times(tt).expect("valid fixture network");
    let params = ModelParams { horizon_t: t, horizon_l: t, fleet_size: k, ..Default::default() };
    let vehicles = (0..k)
        .map(|_| {
            let node = rng.gen_range(0..n);
            let soc = 0.5 + 0.1 * rng.gen_range(0..=4) as f64;
            let position = if rng.gen_bool(0.25) {
                let from = (node + 1) % n;
                let max = net.steps(from, node) - 1;
                VehiclePosition::EnRoute { to: node, remaining: rng.gen_range(0..=max) }
            } else {
                VehiclePosition::Parked { node }
            };
            VehicleState { position, soc }
        })
        .collect();
    let mut state = FleetState::parked(n, &[], params.gamma_init);
    state.vehicles = vehicles;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if rng.gen_bool(0.2) {
                state.set_waiting(i, j, 1);
            }
        }
    }
    let mut window = HorizonWindow::empty(n, t, params.sigma);
    for step in 0..t {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if rng.gen_bool(0.15) {
                    window.set_arrivals(i, j, step, 1.0);
                }
            }
        }
    }
    if rng.gen_bool(0.3) {
        // cover only from t = 1 so a parked vehicle can still reach or stay
        let node = state.vehicles[0].position.node();
        for step in 1..t {
            window.outage[node * t + step] = true;
            window.requirement[step] = 0.5 * params.eta * params.theta_v2b;
        }
    }
    AmodProblem::new(Arc::new(net), params, state, window).expect("valid fixture problem")
}

/// Closed-loop scenario for the oracle: `N ≤ 3`, `K ≤ 2`, `T ≤ 4`, `L ≤ 6`.
///
/// With `with_outage`, vehicle 0's starting node loses power for one or two
/// steps and needs half of one vehicle's discharge rate.
pub fn oracle_scenario(seed: u64, with_outage: bool) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3);
    let k = rng.gen_range(1..=2);
    let t = if n == 3 && k == 2 { rng.gen_range(2..=3) } else { rng.gen_range(2..=4) };
    let l = rng.gen_range(3..=6);
    let mut tt = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = rng.gen_range(1..=2);
            tt[i][j] = s;
            tt[j][i] = s;
        }
    }
    let net = Network::from_travel_times(tt).expect("valid fixture network");
    let params = ModelParams { horizon_t: t, horizon_l: l, fleet_size: k, ..Default::default() };
    let nodes: Vec<NodeId> = (0..k).map(|_| rng.gen_range(0..n)).collect();
    let mut initial = FleetState::parked(n, &nodes, params.gamma_init);
    for v in &mut initial.vehicles {
        v.soc = 0.5 + 0.1 * rng.gen_range(0..=4) as f64;
    }
    let mut arrivals = ArrivalMatrix::zeros(n, l);
    for step in 0..l {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if rng.gen_bool(0.15) {
                    arrivals.add(i, j, step, 1);
                }
            }
        }
    }
    let outages = if with_outage {
        let start = rng.gen_range(1..l);
        let end = (start + rng.gen_range(1..=2)).min(l);
        OutageSchedule {
            events: vec![OutageEvent { node: nodes[0], start_step: start, end_step: end }],
            q_demand: 0.5 * params.eta * params.theta_v2b,
            q_backup: 0.0,
        }
    } else {
        OutageSchedule::none()
    };
    Scenario { network: Arc::new(net), params, outages, arrivals, initial }
}

/// Inputs for one seed of the mid-scale scenario.
#[derive(Debug, Clone)]
pub struct MidScale {
    pub network: Arc<Network>,
    pub params: ModelParams,
    pub rates: RateMatrix,
    /// Node with the most origin demand.
    pub hub: NodeId,
    /// Node farthest from the hub; the default outage location.
    pub remote: NodeId,
}

pub const MID_NODES: usize = 8;
pub const MID_FLEET: usize = 10;
pub const MID_PASSENGERS: f64 = 100.0;
pub const MID_STEPS: usize = 120;
pub const MID_OUTAGE_START: usize = 60;
pub const MID_OUTAGE_LEN: usize = 10;

/// 8 nodes (a hub, a ring of six, one remote node), 10 vehicles, about 100
/// passengers over 120 steps, `T = 10`.
pub fn mid_scale() -> MidScale {
    let km = |x: f64, y: f64| (x * 1000.0, y * 1000.0);
    let mut coords = vec![km(0.0, 0.0)];
    for r in 0..6 {
        let a = r as f64 * std::f64::consts::PI / 3.0;
        coords.push(km(7.0 * a.cos(), 7.0 * a.sin()));
    }
    coords.push(km(20.0, 3.0));
    let nodes = coords
        .into_iter()
        .enumerate()
        .map(|(id, (x, y))| Node { id, x, y, label: String::new() })
        .collect();
    let params = ModelParams { horizon_l: MID_STEPS, horizon_t: 10, fleet_size: MID_FLEET, ..Default::default() };
    let network = build_network(nodes, 60.0, params.tau_minutes).expect("valid mid-scale network");
    let buckets = MID_STEPS * params.tau_minutes as usize / 30;
    let mut rates = RateMatrix::zeros(MID_NODES, buckets, 30, params.tau_minutes);
    for b in 0..buckets {
        // morning and evening bumps
        let shape = 1.0 + 0.8 * ((b as f64 / buckets as f64) * 2.0 * std::f64::consts::PI).sin().abs();
        for i in 0..MID_NODES {
            for j in (0..MID_NODES).filter(|&j| j != i) {
                let w = match (i, j) {
                    (0, _) => 4.0,
                    (_, 0) => 2.0,
                    (7, _) | (_, 7) => 0.3,
                    _ => 0.5,
                };
                rates.set(i, j, b, w * shape);
            }
        }
    }
    let rates = rates.scaled_to_total(MID_PASSENGERS, MID_STEPS);
    MidScale { network: Arc::new(network), params, rates, hub: 0, remote: 7 }
}

impl MidScale {
    pub fn arrivals(&self, seed: u64) -> ArrivalMatrix {
        sample_arrivals(&self.rates, seed, MID_STEPS).expect("rates cover the run")
    }

    /// One outage at `node` over `[start, start + len)` needing three
    /// slow-rate dischargers.
    pub fn outage_at(&self, node: NodeId, start: usize, len: usize) -> OutageSchedule {
        OutageSchedule {
            events: vec![OutageEvent { node, start_step: start, end_step: start + len }],
            q_demand: 0.045,
            q_backup: 0.02,
        }
    }

    pub fn default_outage(&self) -> OutageSchedule {
        self.outage_at(self.remote, MID_OUTAGE_START, MID_OUTAGE_LEN)
    }

    pub fn scenario(&self, seed: u64, params: ModelParams, outages: OutageSchedule) -> Scenario {
        let weights = self.rates.origin_weights();
        let initial = initial_state(&params, &self.network, &Placement::DemandWeighted(weights), seed)
            .expect("placement succeeds");
        Scenario { network: self.network.clone(), params, outages, arrivals: self.arrivals(seed), initial }
    }
}

/// 25 nodes on a 5 km grid, 30 vehicles, about 292 sampled passengers over
/// 240 steps, `T = 10`.
pub fn full_scale(seed: u64) -> Scenario {
    let nodes = (0..25)
        .map(|id| Node { id, x: (id % 5) as f64 * 5000.0, y: (id / 5) as f64 * 5000.0, label: String::new() })
        .collect();
    let params = ModelParams::default();
    let network = build_network(nodes, 60.0, params.tau_minutes).expect("valid grid");
    let buckets = params.horizon_l * params.tau_minutes as usize / 30;
    let mut rates = RateMatrix::zeros(25, buckets, 30, params.tau_minutes);
    for b in 0..buckets {
        let hour = b as f64 / 2.0;
        let shape = 0.2 + (-(hour - 8.0).powi(2) / 4.0).exp() + (-(hour - 18.0).powi(2) / 4.0).exp();
        for i in 0..25 {
            for j in (0..25).filter(|&j| j != i) {
                let central = |n: usize| if n == 12 { 3.0 } else { 1.0 };
                rates.set(i, j, b, shape * central(i) * central(j));
            }
        }
    }
    let rates = rates.scaled_to_total(292.0, params.horizon_l);
    let network = Arc::new(network);
    let initial = initial_state(&params, &network, &Placement::DemandWeighted(rates.origin_weights()), seed)
        .expect("placement succeeds");
    let arrivals = sample_arrivals(&rates, seed, params.horizon_l).expect("rates cover the day");
    Scenario { network, params, outages: OutageSchedule::none(), arrivals, initial }
}

/// Two-node, one-vehicle scenario over `l` steps with passengers at the given steps.
pub fn tiny(l: usize, t: usize, passengers: &[(NodeId, NodeId, usize)]) -> Scenario {
    let net = Network::from_travel_times(vec![vec![0, 1], vec![1, 0]]).expect("valid");
    let params = ModelParams { horizon_l: l, horizon_t: t, fleet_size: 1, ..Default::default() };
    let mut arrivals = ArrivalMatrix::zeros(2, l);
    for &(i, j, s) in passengers {
        arrivals.add(i, j, s, 1);
    }
    Scenario {
        initial: FleetState::parked(2, &[0], params.gamma_init),
        network: Arc::new(net),
        params,
        outages: OutageSchedule::none(),
        arrivals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::oracle::branching_product;

    #[test]
    fn mid_scale_shape() {
        let m = mid_scale();
        assert_eq!(m.network.len(), MID_NODES);
        let total = m.rates.expected_total(MID_STEPS);
        assert!((total - MID_PASSENGERS).abs() < 1e-6);
        let far = (0..MID_NODES).max_by_key(|&j| m.network.steps(m.hub, j)).unwrap();
        assert_eq!(far, m.remote);
        for i in 0..MID_NODES {
            for j in 0..MID_NODES {
                assert!((m.network.steps(i, j) as usize) < m.params.horizon_t);
            }
        }
        let a = m.arrivals(1);
        assert!((60..=140).contains(&a.total()), "{}", a.total());
        assert_eq!(a, m.arrivals(1));
    }

    #[test]
    fn oracle_fixtures_stay_small() {
        for seed in 0..50 {
            let p = oracle_scale(seed);
            assert!(branching_product(&p) <= 1e12, "seed {seed}");
        }
    }
}
