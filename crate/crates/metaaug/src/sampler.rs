//! The transformation sampler: a rolling buffer of raw policy outputs keyed by
//! function pair, per-pair averages `v[j][k]`, and the epsilon-mixed sampling
//! distribution `p[j][k]` they induce.
//!
//! `p` starts uniform (1/K^2 per pair) and is refreshed every `s` iterations
//! from the outputs recorded over the last `r` iterations. The mix keeps
//! `p[j][k] >= epsilon / K^2` for every pair, so no transformation is ever
//! starved of observations.
//!
//! The buffer holds *raw* sigmoid outputs, not batch-normalized weights:
//! normalization is relative to one mini-batch and would contaminate averages
//! taken across batches.

use std::collections::VecDeque;

use rand::Rng;

use crate::augment::{function_names, TransformSpec, NUM_FUNCTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SamplerState {
    buffer: VecDeque<(usize, usize, f64)>,
    capacity: usize,
    /// Per-pair average of buffered outputs as of the last refresh, row-major
    /// `[j][k]` with zero-based indices.
    v: Vec<f64>,
    /// Per-pair observation counts as of the last refresh.
    counts: Vec<u64>,
    p: Vec<f64>,
    epsilon: f64,
    window_iterations: u64,
    refresh_period: u64,
}

const CELLS: usize = NUM_FUNCTIONS * NUM_FUNCTIONS;

impl SamplerState {
    /// `window_iterations` is `r`, `refresh_period` is `s`, and
    /// `records_per_iteration` is the augmented batch size; the buffer holds at
    /// most `r * records_per_iteration` entries.
    pub fn new(
        epsilon: f64,
        window_iterations: u64,
        refresh_period: u64,
        records_per_iteration: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::domain(format!("epsilon {} outside [0, 1]", epsilon)));
        }
        if window_iterations == 0 || refresh_period == 0 || records_per_iteration == 0 {
            return Err(Error::domain("sampler window, period, and batch must be positive"));
        }
        Ok(SamplerState {
            buffer: VecDeque::new(),
            capacity: (window_iterations as usize).saturating_mul(records_per_iteration),
            v: vec![0.0; CELLS],
            counts: vec![0; CELLS],
            p: vec![1.0 / CELLS as f64; CELLS],
            epsilon,
            window_iterations,
            refresh_period,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn window_iterations(&self) -> u64 {
        self.window_iterations
    }

    pub fn refresh_period(&self) -> u64 {
        self.refresh_period
    }

    /// Whether iteration `t` (zero-based) ends a refresh period.
    pub fn due(&self, t: u64) -> bool {
        (t + 1) % self.refresh_period == 0
    }

    /// Probabilities, row-major over (j, k) pairs.
    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Per-pair averages from the last refresh.
    pub fn averages(&self) -> &[f64] {
        &self.v
    }

    pub fn probability(&self, j: usize, k: usize) -> f64 {
        self.p[(j - 1) * NUM_FUNCTIONS + (k - 1)]
    }

    /// Row + column mass of one function: `sum_k p[f][k] + sum_j p[j][f]`
    /// (the diagonal cell contributes to both terms). Uniform share is
    /// `2 * K / K^2`.
    pub fn row_plus_col_mass(&self, func_index: usize) -> f64 {
        let f = func_index - 1;
        let mut mass = 0.0;
        for other in 0..NUM_FUNCTIONS {
            mass += self.p[f * NUM_FUNCTIONS + other];
            mass += self.p[other * NUM_FUNCTIONS + f];
        }
        mass
    }

    /// Append one observation, evicting the oldest beyond capacity.
    /// Indices are one-based catalog indices.
    pub fn record(&mut self, j: usize, k: usize, weight: f64) -> Result<()> {
        if !(1..=NUM_FUNCTIONS).contains(&j) || !(1..=NUM_FUNCTIONS).contains(&k) {
            return Err(Error::domain(format!("record: bad function pair ({}, {})", j, k)));
        }
        if !weight.is_finite() {
            return Err(Error::domain("record: weight must be finite"));
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back((j, k, weight));
        Ok(())
    }

    /// Recompute `v` from the buffer and re-derive `p`:
    /// `p = (1 - eps) * v / sum(v) + eps / K^2`.
    ///
    /// Pairs with no observations take the global mean of all buffered
    /// outputs, which is neutral under the mix. An empty buffer (or an
    /// all-zero one) resets `p` to uniform. Rereading the same buffer is
    /// idempotent.
    pub fn refresh(&mut self) {
        let mut sums = vec![0.0; CELLS];
        let mut counts = vec![0u64; CELLS];
        for &(j, k, w) in &self.buffer {
            let cell = (j - 1) * NUM_FUNCTIONS + (k - 1);
            sums[cell] += w;
            counts[cell] += 1;
        }
        let total_count: u64 = counts.iter().sum();
        if total_count == 0 {
            self.v = vec![0.0; CELLS];
            self.counts = counts;
            self.p = vec![1.0 / CELLS as f64; CELLS];
            return;
        }
        let global_mean = sums.iter().sum::<f64>() / total_count as f64;
        for cell in 0..CELLS {
            self.v[cell] = if counts[cell] > 0 {
                sums[cell] / counts[cell] as f64
            } else {
                global_mean
            };
        }
        self.counts = counts;
        let sum_v: f64 = self.v.iter().sum();
        if sum_v <= 0.0 {
            self.p = vec![1.0 / CELLS as f64; CELLS];
            return;
        }
        let uniform = self.epsilon / CELLS as f64;
        for cell in 0..CELLS {
            self.p[cell] = (1.0 - self.epsilon) * self.v[cell] / sum_v + uniform;
        }
    }

    /// Draw `(j, k) ~ categorical(p)` and both magnitudes uniformly from
    /// [0, 10). Draw order is fixed: pair, then m1, then m2.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> TransformSpec {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut cell = CELLS - 1;
        for (i, p) in self.p.iter().enumerate() {
            acc += p;
            if u < acc {
                cell = i;
                break;
            }
        }
        let j = cell / NUM_FUNCTIONS + 1;
        let k = cell % NUM_FUNCTIONS + 1;
        let m1 = rng.gen_range(0.0..10.0);
        let m2 = rng.gen_range(0.0..10.0);
        TransformSpec { j, k, m1, m2 }
    }

    /// The distribution as CSV; see [`dist_csv`].
    pub fn dist_csv(&self) -> String {
        dist_csv(&self.p)
    }

    /// Replace `p` wholesale (used when loading a frozen distribution from a
    /// checkpoint). The vector must be a valid distribution over K^2 cells.
    pub fn set_probabilities(&mut self, p: Vec<f64>) -> Result<()> {
        if p.len() != CELLS {
            return Err(Error::dimension(format!("expected {} cells, got {}", CELLS, p.len())));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain("probabilities must be nonnegative and sum to 1"));
        }
        self.p = p;
        Ok(())
    }
}

/// Render a K x K pair distribution as CSV: one header row of function names,
/// then K rows of K probabilities (row = first function j, column = second
/// function k, both in catalog order).
pub fn dist_csv(p: &[f64]) -> String {
    debug_assert_eq!(p.len(), CELLS);
    let mut out = String::new();
    out.push_str(&function_names().join(","));
    out.push('\n');
    for j in 0..NUM_FUNCTIONS {
        let row: Vec<String> = (0..NUM_FUNCTIONS)
            .map(|k| format!("{}", p[j * NUM_FUNCTIONS + k]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn uniform_cell() -> f64 {
        1.0 / CELLS as f64
    }

    #[test]
    fn starts_uniform_before_first_refresh() {
        let s = SamplerState::new(0.1, 5, 3, 4).unwrap();
        assert!(s.probabilities().iter().all(|&p| p == uniform_cell()));
        let total: f64 = s.probabilities().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_observation_sets_its_average() {
        let mut s = SamplerState::new(0.1, 5, 3, 4).unwrap();
        s.record(3, 7, 0.42).unwrap();
        s.refresh();
        assert_eq!(s.averages()[(3 - 1) * NUM_FUNCTIONS + (7 - 1)], 0.42);
    }

    #[test]
    fn two_observations_average() {
        let mut s = SamplerState::new(0.1, 5, 3, 4).unwrap();
        s.record(2, 2, 0.2).unwrap();
        s.record(2, 2, 0.6).unwrap();
        s.refresh();
        assert!((s.averages()[(2 - 1) * NUM_FUNCTIONS + 1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        // capacity = r * per_iteration = 1 * 2.
        let mut s = SamplerState::new(0.1, 1, 1, 2).unwrap();
        s.record(1, 1, 0.9).unwrap();
        s.record(1, 1, 0.1).unwrap();
        s.record(1, 1, 0.5).unwrap();
        s.refresh();
        // 0.9 evicted; mean of (0.1, 0.5).
        assert!((s.averages()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn uniform_averages_give_uniform_p() {
        let mut s = SamplerState::new(0.1, 10, 1, CELLS).unwrap();
        for j in 1..=NUM_FUNCTIONS {
            for k in 1..=NUM_FUNCTIONS {
                s.record(j, k, 0.37).unwrap();
            }
        }
        s.refresh();
        for &p in s.probabilities() {
            assert!((p - uniform_cell()).abs() <= 1e-15);
        }
    }

    #[test]
    fn epsilon_one_forces_uniform() {
        let mut s = SamplerState::new(1.0, 10, 1, 8).unwrap();
        s.record(5, 5, 0.99).unwrap();
        s.record(1, 2, 0.01).unwrap();
        s.refresh();
        assert!(s.probabilities().iter().all(|&p| p == uniform_cell()));
    }

    #[test]
    fn skewed_averages_match_scalar_oracle() {
        let mut s = SamplerState::new(0.1, 10, 1, CELLS).unwrap();
        for j in 1..=NUM_FUNCTIONS {
            for k in 1..=NUM_FUNCTIONS {
                let w = if j == 4 && k == 9 { 0.9 } else { 0.1 };
                s.record(j, k, w).unwrap();
            }
        }
        s.refresh();
        // Direct evaluation of the mix, cell by cell.
        let sum_v = 0.9 + 195.0 * 0.1;
        for j in 1..=NUM_FUNCTIONS {
            for k in 1..=NUM_FUNCTIONS {
                let v = if j == 4 && k == 9 { 0.9 } else { 0.1 };
                let expect = 0.9 * v / sum_v + 0.1 / CELLS as f64;
                assert!((s.probability(j, k) - expect).abs() <= 1e-15);
            }
        }
        let total: f64 = s.probabilities().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        let floor = s.epsilon() / CELLS as f64;
        assert!(s.probabilities().iter().all(|&p| p >= floor));
    }

    #[test]
    fn degenerate_distribution_always_draws_its_cell() {
        let mut s = SamplerState::new(0.0, 10, 1, CELLS).unwrap();
        for j in 1..=NUM_FUNCTIONS {
            for k in 1..=NUM_FUNCTIONS {
                s.record(j, k, if j == 6 && k == 11 { 1.0 } else { 0.0 }).unwrap();
            }
        }
        s.refresh();
        assert_eq!(s.probability(6, 11), 1.0);
        let mut rng = stream(9, StreamId::Sampler);
        for _ in 0..200 {
            let spec = s.sample(&mut rng);
            assert_eq!((spec.j, spec.k), (6, 11));
            assert!((0.0..10.0).contains(&spec.m1));
            assert!((0.0..10.0).contains(&spec.m2));
        }
    }

    #[test]
    fn refresh_is_idempotent_on_a_frozen_buffer() {
        let mut s = SamplerState::new(0.2, 10, 1, 16).unwrap();
        let mut rng = stream(10, StreamId::Aux);
        for _ in 0..50 {
            use rand::Rng;
            let j = rng.gen_range(1..=NUM_FUNCTIONS);
            let k = rng.gen_range(1..=NUM_FUNCTIONS);
            s.record(j, k, rng.gen_range(0.01..0.99)).unwrap();
        }
        s.refresh();
        let p1 = s.probabilities().to_vec();
        s.refresh();
        assert_eq!(p1, s.probabilities());
    }

    #[test]
    fn empty_buffer_refresh_resets_uniform() {
        let mut s = SamplerState::new(0.3, 10, 1, 4).unwrap();
        s.refresh();
        assert!(s.probabilities().iter().all(|&p| p == uniform_cell()));
    }

    #[test]
    fn magnitude_draws_center_on_five() {
        let s = SamplerState::new(1.0, 1, 1, 1).unwrap();
        let mut rng = stream(11, StreamId::Sampler);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let spec = s.sample(&mut rng);
            sum += spec.m1 + spec.m2;
        }
        let mean = sum / (2 * n) as f64;
        assert!((mean - 5.0).abs() < 0.05, "mean {}", mean);
    }

    #[test]
    fn dist_csv_shape() {
        let s = SamplerState::new(0.1, 1, 1, 1).unwrap();
        let csv = s.dist_csv();
        let lines: Vec<&str> = csv.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 1 + NUM_FUNCTIONS);
        assert!(lines[0].starts_with("AutoContrast,Equalize,Rotate,"));
        assert_eq!(lines[1].split(',').count(), NUM_FUNCTIONS);
    }

    #[test]
    fn rejects_bad_construction_and_records() {
        assert!(SamplerState::new(-0.1, 1, 1, 1).is_err());
        assert!(SamplerState::new(1.1, 1, 1, 1).is_err());
        assert!(SamplerState::new(0.1, 0, 1, 1).is_err());
        let mut s = SamplerState::new(0.1, 1, 1, 1).unwrap();
        assert!(s.record(0, 3, 0.5).is_err());
        assert!(s.record(3, 15, 0.5).is_err());
        assert!(s.record(3, 3, f64::NAN).is_err());
    }
}
