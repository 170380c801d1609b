//! The Bag of Indexes: weighted multi-probe voting over `L` hash tables,
//! adaptive probe schedules, a top-ε shortlist and exact Euclidean re-rank.
//!
//! For every query a fresh accumulator of `n` weights starts at zero. In each
//! table the query bucket votes `1` for all its records and every probed
//! neighbor bucket at Hamming distance `H` votes `2^-H`. The ε records with
//! the largest totals are then ranked by true distance.
//!
//! Per table `i` the query probes its own bucket plus
//! `Σ_{j=1..l} C(γ_i, j)` neighbor buckets taken in shell order (all
//! distance-1 codes, then distance-2, ...), shuffled within each shell. For
//! the default `l = 1` that is exactly `γ_i` neighbors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{
    ball_size, binomial, insert_all, make_tables, NeighborEnumerator, ProjectionTable,
};
use crate::types::{check_dim, l2_squared, BoiParams, RankedResult, ScheduleKind, VectorSet};

/// Vote of a bucket at Hamming distance `hamming` from the query bucket.
pub fn weight(hamming: u32, radius: u32) -> f64 {
    if hamming <= radius {
        unbounded_weight(hamming)
    } else {
        0.0
    }
}

fn unbounded_weight(hamming: u32) -> f64 {
    (-(hamming as f64)).exp2()
}

/// Number of neighbor buckets probed at each table (query bucket excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    gammas: Vec<u32>,
}

impl ProbeSchedule {
    pub fn gammas(&self) -> &[u32] {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Counts boundaries `first + k·step` (k ≥ 0) that fall in `[1, i]`.
fn reductions_before(i: usize, first: usize, step: usize) -> usize {
    let first = if first == 0 { step } else { first };
    if i < first {
        0
    } else {
        1 + (i - first) / step
    }
}

/// Per-table neighbor budgets for `params.num_tables` tables.
///
/// Tables are numbered from 1. `linear` subtracts 2 at tables Δ₁, 2Δ₁, ...;
/// `sublinear` keeps γ₀ before table L/2 and subtracts 2 at L/2, L/2+Δ₂, ...
/// Values are clamped at 0.
pub fn build_schedule(kind: ScheduleKind, params: &BoiParams) -> ProbeSchedule {
    let gamma0 = params.initial_probe_count as usize;
    let gammas = (1..=params.num_tables)
        .map(|i| {
            let drops = match kind {
                ScheduleKind::Fixed => 0,
                ScheduleKind::Linear => {
                    reductions_before(i, params.linear_step, params.linear_step)
                }
                ScheduleKind::Sublinear => {
                    reductions_before(i, params.num_tables / 2, params.sublinear_step)
                }
            };
            gamma0.saturating_sub(2 * drops) as u32
        })
        .collect();
    ProbeSchedule { gammas }
}

/// Buckets touched per query according to the probe-count formula:
/// `Σ_i Σ_{j=0..l} C(γ_i, j)`.
pub fn expected_probes(schedule: &ProbeSchedule, radius: u32) -> u64 {
    schedule
        .gammas
        .iter()
        .map(|&g| {
            (0..=radius as u64)
                .map(|j| binomial(g as u64, j))
                .fold(0u64, u64::saturating_add)
        })
        .fold(0u64, u64::saturating_add)
}

/// Per-query vote totals, one per database record.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAccumulator {
    weights: Vec<f32>,
}

impl WeightAccumulator {
    pub fn new(n: usize) -> Self {
        WeightAccumulator {
            weights: vec![0.0; n],
        }
    }

    /// Wraps precomputed weights. All must be finite and non-negative.
    pub fn from_weights(weights: Vec<f32>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        Ok(WeightAccumulator { weights })
    }

    #[inline]
    fn vote(&mut self, ids: &[u32], w: f32) {
        for &id in ids {
            self.weights[id as usize] += w;
        }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Number of records with nonzero weight.
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Heap entry ordered so that the *worst* kept record is the maximum:
/// lower weight is worse, and on equal weight the larger id is worse.
#[derive(Clone, Copy, PartialEq)]
struct Ranked {
    weight: f32,
    id: u32,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Ids of the `size` highest-weighted records, weight descending then id
/// ascending. Records never voted for are not returned.
pub fn shortlist(acc: &WeightAccumulator, size: usize) -> Vec<usize> {
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(size + 1);
    for (id, &weight) in acc.weights.iter().enumerate() {
        if weight <= 0.0 {
            continue;
        }
        // ids arrive ascending, so an equal weight never beats a kept one
        if heap.len() == size && heap.peek().is_some_and(|worst| weight <= worst.weight) {
            continue;
        }
        heap.push(Ranked {
            weight,
            id: id as u32,
        });
        if heap.len() > size {
            heap.pop();
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|r| r.id as usize)
        .collect()
}

/// Result of one query plus its instrumentation counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub result: RankedResult,
    /// Buckets inspected across all tables, query buckets included.
    pub probes: u64,
    /// Records with nonzero weight.
    pub candidates: usize,
    pub shortlist_len: usize,
}

/// A populated Bag of Indexes over an owned dataset.
#[derive(Debug, Clone)]
pub struct BoiIndex {
    params: BoiParams,
    tables: Vec<ProjectionTable>,
    dataset: VectorSet,
    schedule: ProbeSchedule,
    enumerator: NeighborEnumerator,
}

impl BoiIndex {
    /// Samples the tables and hashes every record of `dataset`.
    pub fn build(params: BoiParams, dataset: VectorSet) -> Result<Self> {
        params.validate()?;
        if dataset.dim() == 0 {
            return Err(Error::invalid(
                "dataset dimension is unknown (empty set of dim 0)",
            ));
        }
        let mut tables = make_tables(&params, dataset.dim())?;
        insert_all(&mut tables, &dataset)?;
        Self::from_parts(params, tables, dataset)
    }

    /// Assembles an index from already populated tables.
    pub fn from_parts(
        params: BoiParams,
        tables: Vec<ProjectionTable>,
        dataset: VectorSet,
    ) -> Result<Self> {
        params.validate()?;
        if tables.len() != params.num_tables {
            return Err(Error::invalid(format!(
                "expected {} tables, got {}",
                params.num_tables,
                tables.len()
            )));
        }
        for (i, t) in tables.iter().enumerate() {
            if t.bits() != params.hash_bits || t.table_index() != i {
                return Err(Error::invalid(format!(
                    "table {i} does not match parameters"
                )));
            }
            check_dim(dataset.dim(), t.dim())?;
            if t.occupancy() != dataset.len() {
                return Err(Error::invalid(format!(
                    "table {i} holds {} ids for {} records",
                    t.occupancy(),
                    dataset.len()
                )));
            }
            if t.buckets()
                .iter()
                .flatten()
                .any(|&id| id as usize >= dataset.len())
            {
                return Err(Error::invalid(format!(
                    "table {i} references a missing record"
                )));
            }
        }
        Ok(BoiIndex {
            schedule: build_schedule(params.schedule, &params),
            enumerator: NeighborEnumerator::new(params.hash_bits),
            params,
            tables,
            dataset,
        })
    }

    /// Replaces the query-time parameters. Table-shaping parameters
    /// (tables, bits, seed) must be unchanged.
    pub fn set_query_params(&mut self, params: BoiParams) -> Result<()> {
        params.validate()?;
        if params.num_tables != self.params.num_tables
            || params.hash_bits != self.params.hash_bits
            || params.seed != self.params.seed
        {
            return Err(Error::invalid(
                "tables, bits and seed are fixed once an index is built",
            ));
        }
        self.schedule = build_schedule(params.schedule, &params);
        self.params = params;
        Ok(())
    }

    pub fn params(&self) -> &BoiParams {
        &self.params
    }

    pub fn tables(&self) -> &[ProjectionTable] {
        &self.tables
    }

    pub fn dataset(&self) -> &VectorSet {
        &self.dataset
    }

    pub fn schedule(&self) -> &ProbeSchedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Neighbor buckets probed at a table whose schedule value is `gamma`.
    pub fn neighbor_budget(&self, gamma: u32) -> usize {
        let l = self.params.probe_radius;
        let mut budget = (1..=l as u64)
            .map(|j| binomial(gamma as u64, j))
            .fold(0u64, u64::saturating_add)
            .min(self.enumerator.capacity());
        if self.params.strict_radius {
            budget = budget.min(ball_size(self.params.hash_bits, l));
        }
        budget as usize
    }

    /// Probe count every query of this index performs.
    pub fn probes_per_query(&self) -> u64 {
        self.schedule
            .gammas()
            .iter()
            .map(|&g| 1 + self.neighbor_budget(g) as u64)
            .sum()
    }

    // Neighbor order is reshuffled per query per table; the stream is keyed
    // on the index seed and the query's bit pattern so results do not depend
    // on batch order or worker count.
    fn query_rng(&self, q: &[f32]) -> ChaCha8Rng {
        let mut h = splitmix64(self.params.seed ^ 0x426f_4951_7565_7279);
        for x in q {
            h = splitmix64(h ^ x.to_bits() as u64);
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn vote_weight(&self, hamming: u32) -> f32 {
        if self.params.strict_radius {
            weight(hamming, self.params.probe_radius) as f32
        } else {
            unbounded_weight(hamming) as f32
        }
    }

    /// Fills a weight accumulator for `q`, returning it with the number of
    /// buckets inspected.
    pub fn accumulate(&self, q: &[f32]) -> Result<(WeightAccumulator, u64)> {
        check_dim(self.dim(), q.len())?;
        let mut acc = WeightAccumulator::new(self.len());
        let mut rng = self.query_rng(q);
        let mut codes = Vec::new();
        let mut probes = 0u64;
        for (table, &gamma) in self.tables.iter().zip(self.schedule.gammas()) {
            let center = table.hash_unchecked(q);
            acc.vote(table.bucket(center), 1.0);
            codes.clear();
            self.enumerator
                .fill(center, self.neighbor_budget(gamma), &mut rng, &mut codes)?;
            for &code in &codes {
                let w = self.vote_weight((code ^ center).count_ones());
                if w > 0.0 {
                    acc.vote(table.bucket(code), w);
                }
            }
            probes += 1 + codes.len() as u64;
        }
        Ok((acc, probes))
    }

    /// Top-`k` neighbors of `q` after accumulate, shortlist and re-rank.
    pub fn query(&self, q: &[f32], k: usize) -> Result<QueryOutcome> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let (acc, probes) = self.accumulate(q)?;
        let ids = shortlist(&acc, self.params.shortlist_size);
        let scored = ids
            .iter()
            .map(|&id| (id, l2_squared(q, self.dataset.get(id))))
            .collect();
        Ok(QueryOutcome {
            result: RankedResult::from_squared(scored, k),
            probes,
            candidates: acc.nonzero(),
            shortlist_len: ids.len(),
        })
    }

    /// Runs `query` over every row of `queries` in parallel.
    pub fn query_batch(&self, queries: &VectorSet, k: usize) -> Result<Vec<QueryOutcome>> {
        queries
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|q| self.query(q, k))
            .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
