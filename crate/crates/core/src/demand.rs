//! Time-of-day Poisson demand: rate estimation, seeded sampling and exact replay.
//!
//! Sampling uses `ChaCha8Rng::seed_from_u64(seed)` and draws exactly one
//! uniform per cell, visiting cells in `(origin, destination, step)` row-major
//! order (diagonal cells included, always zero). The uniform `u` in `[0, 1)` is
//! turned into a Poisson count by inversion of the CDF:
//! `p = e^{-λ}; F = p; k = 0; while u > F { k += 1; p *= λ / k; F += p }`.
//! Rates above [`INVERSION_CHUNK`] are split into equal chunks, each taking one
//! further uniform from the same stream.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{ModelParams, NodeId, TripRecord};

/// Largest λ inverted in a single draw; `e^{-λ}` stays far from underflow.
pub const INVERSION_CHUNK: f64 = 500.0;

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("bucket of {bucket_minutes} min is not a whole number of {tau} min steps")]
    BucketNotMultipleOfStep { bucket_minutes: u32, tau: f64 },
    #[error("no trips to estimate rates from")]
    NoTrips,
    #[error("{count} trip(s) depart beyond the horizon of {steps} steps: {listing}")]
    BeyondHorizon { count: usize, steps: usize, listing: String },
    #[error("requested {requested} steps but rates only cover {covered}")]
    CoverageExceeded { requested: usize, covered: usize },
    #[error("trip references node {node} outside [0, {nodes})")]
    NodeOutOfRange { node: NodeId, nodes: usize },
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Mean arrivals per model step, indexed `(origin, destination, bucket)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    pub nodes: usize,
    pub buckets: usize,
    pub bucket_minutes: u32,
    pub tau_minutes: f64,
    lambda: Vec<f64>,
}

impl RateMatrix {
    pub fn zeros(nodes: usize, buckets: usize, bucket_minutes: u32, tau_minutes: f64) -> Self {
        Self { nodes, buckets, bucket_minutes, tau_minutes, lambda: vec![0.0; nodes * nodes * buckets] }
    }

    fn idx(&self, i: NodeId, j: NodeId, b: usize) -> usize {
        (i * self.nodes + j) * self.buckets + b
    }

    pub fn get(&self, i: NodeId, j: NodeId, bucket: usize) -> f64 {
        self.lambda[self.idx(i, j, bucket)]
    }

    pub fn set(&mut self, i: NodeId, j: NodeId, bucket: usize, value: f64) {
        let k = self.idx(i, j, bucket);
        self.lambda[k] = value;
    }

    pub fn steps_per_bucket(&self) -> f64 {
        self.bucket_minutes as f64 / self.tau_minutes
    }

    /// Number of model steps the rate table covers.
    pub fn covered_steps(&self) -> usize {
        (self.buckets as f64 * self.steps_per_bucket()).round() as usize
    }

    pub fn bucket_of_step(&self, step: usize) -> usize {
        ((step as f64 * self.tau_minutes) / self.bucket_minutes as f64 + 1e-9).floor() as usize
    }

    /// λ at an absolute model step.
    pub fn rate_at(&self, i: NodeId, j: NodeId, step: usize) -> f64 {
        let b = self.bucket_of_step(step);
        if b >= self.buckets {
            0.0
        } else {
            self.get(i, j, b)
        }
    }

    /// Expected arrivals over the first `steps` steps.
    pub fn expected_total(&self, steps: usize) -> f64 {
        let mut total = 0.0;
        for s in 0..steps {
            for i in 0..self.nodes {
                for j in 0..self.nodes {
                    total += self.rate_at(i, j, s);
                }
            }
        }
        total
    }

    /// Rescales every rate so the expected number of arrivals over `steps` equals `target`.
    pub fn scaled_to_total(&self, target: f64, steps: usize) -> Self {
        let current = self.expected_total(steps);
        let factor = if current > 0.0 { target / current } else { 0.0 };
        let mut out = self.clone();
        out.lambda.iter_mut().for_each(|l| *l *= factor);
        out
    }

    /// Total λ leaving each origin, summed over destinations and buckets.
    pub fn origin_weights(&self) -> Vec<f64> {
        (0..self.nodes)
            .map(|i| {
                (0..self.nodes)
                    .flat_map(|j| (0..self.buckets).map(move |b| (j, b)))
                    .map(|(j, b)| self.get(i, j, b))
                    .sum()
            })
            .collect()
    }
}

/// Fits λ(i, j, bucket) = trips departing in the bucket / steps per bucket.
pub fn estimate_rates(
    trips: &[TripRecord],
    params: &ModelParams,
    nodes: usize,
    bucket_minutes: u32,
) -> Result<RateMatrix, DemandError> {
    if trips.is_empty() {
        return Err(DemandError::NoTrips);
    }
    let per_bucket = bucket_minutes as f64 / params.tau_minutes;
    if bucket_minutes == 0 || (per_bucket - per_bucket.round()).abs() > 1e-9 {
        return Err(DemandError::BucketNotMultipleOfStep { bucket_minutes, tau: params.tau_minutes });
    }
    let bucket_secs = bucket_minutes as u64 * 60;
    let last = trips.iter().map(|t| t.departure_seconds as u64 / bucket_secs).max().unwrap_or(0);
    let buckets = ((24 * 60) / bucket_minutes as usize).max(last as usize + 1);
    let mut rates = RateMatrix::zeros(nodes, buckets, bucket_minutes, params.tau_minutes);
    for trip in trips {
        check_node(trip.origin, nodes)?;
        check_node(trip.destination, nodes)?;
        let b = (trip.departure_seconds as u64 / bucket_secs) as usize;
        let k = rates.idx(trip.origin, trip.destination, b);
        rates.lambda[k] += 1.0;
    }
    rates.lambda.iter_mut().for_each(|l| *l /= per_bucket);
    Ok(rates)
}

fn check_node(node: NodeId, nodes: usize) -> Result<(), DemandError> {
    if node >= nodes {
        Err(DemandError::NodeOutOfRange { node, nodes })
    } else {
        Ok(())
    }
}

/// Exogenous arrivals `P[origin][destination][step]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalMatrix {
    pub nodes: usize,
    pub steps: usize,
    counts: Vec<u32>,
}

impl ArrivalMatrix {
    pub fn zeros(nodes: usize, steps: usize) -> Self {
        Self { nodes, steps, counts: vec![0; nodes * nodes * steps] }
    }

    fn idx(&self, i: NodeId, j: NodeId, step: usize) -> usize {
        (i * self.nodes + j) * self.steps + step
    }

    /// Arrivals at `step`; zero beyond the matrix (horizon padding).
    pub fn get(&self, i: NodeId, j: NodeId, step: usize) -> u32 {
        if step >= self.steps {
            0
        } else {
            self.counts[self.idx(i, j, step)]
        }
    }

    /// Panics on diagonal cells, which must stay zero.
    pub fn add(&mut self, i: NodeId, j: NodeId, step: usize, count: u32) {
        assert_ne!(i, j, "diagonal arrivals are not representable");
        let k = self.idx(i, j, step);
        self.counts[k] += count;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Total arrivals per origin node.
    pub fn origin_totals(&self) -> Vec<u64> {
        (0..self.nodes)
            .map(|i| {
                (0..self.nodes)
                    .flat_map(|j| (0..self.steps).map(move |s| (j, s)))
                    .map(|(j, s)| self.get(i, j, s) as u64)
                    .sum()
            })
            .collect()
    }

    /// Non-zero cells as `(origin, destination, step, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (NodeId, NodeId, usize, u32)> + '_ {
        (0..self.nodes).flat_map(move |i| {
            (0..self.nodes).flat_map(move |j| {
                (0..self.steps).filter_map(move |s| {
                    let c = self.get(i, j, s);
                    (c > 0).then_some((i, j, s, c))
                })
            })
        })
    }

    /// Keeps only the first `steps` steps (or pads with zeros).
    pub fn resized(&self, steps: usize) -> Self {
        let mut out = Self::zeros(self.nodes, steps);
        for (i, j, s, c) in self.nonzero() {
            if s < steps {
                out.add(i, j, s, c);
            }
        }
        out
    }

    /// Writes `origin,destination,step,count` rows for every non-zero cell.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DemandError> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
        w.write_record(["origin", "destination", "step", "count"]).map_err(csv_io)?;
        for (i, j, s, c) in self.nonzero() {
            w.write_record([i.to_string(), j.to_string(), s.to_string(), c.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, nodes: usize, steps: usize) -> Result<Self, DemandError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_io)?;
        let mut out = Self::zeros(nodes, steps);
        for (row_no, rec) in r.deserialize::<(usize, usize, usize, u32)>().enumerate() {
            let line = row_no as u64 + 2;
            let (i, j, s, c) = rec.map_err(|e| DemandError::Parse {
                path: shown.clone(),
                line,
                msg: e.to_string(),
            })?;
            if i >= nodes || j >= nodes || s >= steps || i == j {
                return Err(DemandError::Parse {
                    path: shown,
                    line,
                    msg: format!("cell ({i},{j},{s}) outside {nodes} nodes x {steps} steps or diagonal"),
                });
            }
            out.add(i, j, s, c);
        }
        Ok(out)
    }
}

fn csv_io(e: csv::Error) -> DemandError {
    DemandError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

/// Poisson count from one or more uniforms drawn from `rng`.
pub fn poisson_inversion<R: Rng>(lambda: f64, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        let _: f64 = rng.gen();
        return 0;
    }
    let chunks = (lambda / INVERSION_CHUNK).ceil().max(1.0) as u32;
    let part = lambda / chunks as f64;
    let mut total = 0;
    for _ in 0..chunks {
        let u: f64 = rng.gen();
        let mut p = (-part).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= part / k as f64;
            cdf += p;
        }
        total += k;
    }
    total
}

/// Draws every cell independently from Poisson(λ of its bucket).
pub fn sample_arrivals(rates: &RateMatrix, seed: u64, steps: usize) -> Result<ArrivalMatrix, DemandError> {
    let covered = rates.covered_steps();
    if steps > covered {
        return Err(DemandError::CoverageExceeded { requested: steps, covered });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ArrivalMatrix::zeros(rates.nodes, steps);
    for i in 0..rates.nodes {
        for j in 0..rates.nodes {
            for s in 0..steps {
                let count = poisson_inversion(rates.rate_at(i, j, s), &mut rng);
                if i != j && count > 0 {
                    out.add(i, j, s, count);
                }
            }
        }
    }
    Ok(out)
}

/// Each trip becomes one arrival at `floor(departure / τ)`.
pub fn replay_arrivals(
    trips: &[TripRecord],
    params: &ModelParams,
    nodes: usize,
) -> Result<ArrivalMatrix, DemandError> {
    let steps = params.horizon_l;
    let step_secs = params.tau_minutes * 60.0;
    let mut out = ArrivalMatrix::zeros(nodes, steps);
    let mut offenders = Vec::new();
    for (idx, trip) in trips.iter().enumerate() {
        check_node(trip.origin, nodes)?;
        check_node(trip.destination, nodes)?;
        let step = (trip.departure_seconds as f64 / step_secs + 1e-9).floor() as usize;
        if step >= steps {
            offenders.push(format!("#{idx} at {}s (step {step})", trip.departure_seconds));
            continue;
        }
        out.add(trip.origin, trip.destination, step, 1);
    }
    if !offenders.is_empty() {
        return Err(DemandError::BeyondHorizon {
            count: offenders.len(),
            steps,
            listing: offenders.join(", "),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trip(o: NodeId, d: NodeId, hh: u32, mm: u32) -> TripRecord {
        TripRecord { origin: o, destination: d, departure_seconds: hh * 3600 + mm * 60 }
    }

    #[test]
    fn five_trips_in_one_bucket_give_unit_rate() {
        let trips: Vec<_> = (0..5).map(|m| trip(1, 2, 8, m * 5)).collect();
        let rates = estimate_rates(&trips, &ModelParams::default(), 3, 30).unwrap();
        assert!((rates.get(1, 2, 16) - 1.0).abs() < 1e-12);
        assert_eq!(rates.get(2, 1, 16), 0.0);
        assert_eq!(rates.get(1, 2, 17), 0.0);
    }

    #[test]
    fn one_trip_per_bucket_gives_one_fifth() {
        let trips = vec![trip(0, 1, 8, 10), trip(0, 1, 9, 10)];
        let rates = estimate_rates(&trips, &ModelParams::default(), 2, 30).unwrap();
        assert!((rates.get(0, 1, 16) - 0.2).abs() < 1e-12);
        assert!((rates.get(0, 1, 18) - 0.2).abs() < 1e-12);
        assert_eq!(rates.buckets, 48);
        assert_eq!(rates.covered_steps(), 240);
    }

    #[test]
    fn bucket_must_be_whole_steps() {
        let trips = vec![trip(0, 1, 8, 10)];
        let err = estimate_rates(&trips, &ModelParams::default(), 2, 25).unwrap_err();
        assert!(matches!(err, DemandError::BucketNotMultipleOfStep { .. }));
    }

    #[test]
    fn zero_rates_sample_zero() {
        let rates = RateMatrix::zeros(3, 48, 30, 6.0);
        let p = sample_arrivals(&rates, 7, 240).unwrap();
        assert_eq!(p.total(), 0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let trips: Vec<_> = (0..40).map(|m| trip(m % 3, (m + 1) % 3, 8 + m as u32 / 10, m as u32)).collect();
        let rates = estimate_rates(&trips, &ModelParams::default(), 3, 30).unwrap();
        let a = sample_arrivals(&rates, 99, 240).unwrap();
        let b = sample_arrivals(&rates, 99, 240).unwrap();
        assert_eq!(a, b);
        let c = sample_arrivals(&rates, 100, 240).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unit_rate_moments() {
        // 2 nodes -> one off-diagonal pair; 10000 steps of λ = 1
        let mut rates = RateMatrix::zeros(2, 10000 / 5, 30, 6.0);
        for b in 0..rates.buckets {
            rates.set(0, 1, b, 1.0);
        }
        let p = sample_arrivals(&rates, 2024, 10000).unwrap();
        let xs: Vec<f64> = (0..10000).map(|s| p.get(0, 1, s) as f64).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 1.0).abs() <= 0.05, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.1, "variance {var}");
    }

    #[test]
    fn large_rate_is_chunked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let mean = (0..n).map(|_| poisson_inversion(1200.0, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1200.0).abs() < 15.0, "{mean}");
    }

    #[test]
    fn replay_maps_departure_to_step() {
        let params = ModelParams::default();
        let p = replay_arrivals(&[trip(0, 1, 7, 3)], &params, 2).unwrap();
        assert_eq!(p.get(0, 1, 70), 1);
        assert_eq!(p.total(), 1);
    }

    #[test]
    fn replay_of_nothing_is_zero() {
        let p = replay_arrivals(&[], &ModelParams::default(), 3).unwrap();
        assert_eq!(p.total(), 0);
        assert_eq!(p.steps, 240);
    }

    #[test]
    fn replay_adds_up_same_cell() {
        let p = replay_arrivals(&[trip(2, 0, 9, 0), trip(2, 0, 9, 1)], &ModelParams::default(), 3)
            .unwrap();
        assert_eq!(p.get(2, 0, 90), 2);
    }

    #[test]
    fn replay_rejects_trips_beyond_horizon() {
        let params = ModelParams { horizon_l: 10, ..Default::default() };
        let err = replay_arrivals(&[trip(0, 1, 0, 0), trip(0, 1, 1, 0)], &params, 2).unwrap_err();
        match err {
            DemandError::BeyondHorizon { count, listing, .. } => {
                assert_eq!(count, 1);
                assert!(listing.contains("#1"), "{listing}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut p = ArrivalMatrix::zeros(3, 12);
        p.add(0, 2, 5, 3);
        p.add(1, 0, 11, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(ArrivalMatrix::read_csv(&path, 3, 12).unwrap(), p);
    }

    proptest! {
        #[test]
        fn replay_conserves_trip_count(
            raw in proptest::collection::vec((0usize..4, 1usize..4, 0u32..86_400), 0..60)
        ) {
            let trips: Vec<TripRecord> = raw
                .iter()
                .map(|&(o, off, dep)| TripRecord { origin: o, destination: (o + off) % 4, departure_seconds: dep })
                .collect();
            let params = ModelParams::default();
            let p = replay_arrivals(&trips, &params, 4).unwrap();
            prop_assert_eq!(p.total(), trips.len() as u64);
            if !trips.is_empty() {
                let rates = estimate_rates(&trips, &params, 4, 30).unwrap();
                let per_bucket = rates.steps_per_bucket();
                for b in 0..rates.buckets {
                    let from_rates: f64 = (0..4)
                        .flat_map(|i| (0..4).map(move |j| (i, j)))
                        .map(|(i, j)| rates.get(i, j, b) * per_bucket)
                        .sum();
                    let from_replay: u64 = (0..4)
                        .flat_map(|i| (0..4).map(move |j| (i, j)))
                        .flat_map(|(i, j)| (b * 5..(b + 1) * 5).map(move |s| (i, j, s)))
                        .map(|(i, j, s)| p.get(i, j, s) as u64)
                        .sum();
                    prop_assert!((from_rates - from_replay as f64).abs() < 1e-9);
                }
            }
        }
    }
}
