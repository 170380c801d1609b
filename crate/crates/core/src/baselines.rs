//! Comparison methods: exhaustive search, plain LSH and multi-probe LSH.
//!
//! Both LSH variants gather a duplicate-free candidate list across all tables
//! and rank it by exact distance; BoI replaces that list with vote counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{hamming_ball, ProjectionTable};
use crate::index::QueryOutcome;
use crate::types::{check_dim, l2_squared, RankedResult, VectorSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    BruteForce,
    Lsh,
    MultiprobeLsh,
}

/// Exact `k` nearest neighbors by Euclidean distance, ties by ascending id.
pub fn brute_force_query(dataset: &VectorSet, q: &[f32], k: usize) -> Result<RankedResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !dataset.is_empty() {
        check_dim(dataset.dim(), q.len())?;
    }
    let scored = dataset
        .iter()
        .enumerate()
        .map(|(id, v)| (id, l2_squared(q, v)))
        .collect();
    Ok(RankedResult::from_squared(scored, k))
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Visited(vec![0; n.div_ceil(64)])
    }

    fn insert(&mut self, id: u32) -> bool {
        let (word, bit) = (id as usize / 64, id % 64);
        let fresh = self.0[word] & (1 << bit) == 0;
        self.0[word] |= 1 << bit;
        fresh
    }
}

/// Distinct records found in every bucket within Hamming distance `radius` of
/// the query bucket, over all tables, in first-seen order and capped at
/// `cap`. Also returns the number of buckets inspected.
pub fn candidate_set(
    tables: &[ProjectionTable],
    n: usize,
    q: &[f32],
    radius: u32,
    cap: usize,
) -> Result<(Vec<u32>, u64)> {
    let mut seen = Visited::new(n);
    let mut out = Vec::new();
    let mut probes = 0u64;
    'tables: for table in tables {
        let center = table.hash(q)?;
        for code in hamming_ball(center, table.bits(), radius) {
            probes += 1;
            for &id in table.bucket(code) {
                if (id as usize) < n && seen.insert(id) {
                    out.push(id);
                    if out.len() >= cap {
                        break 'tables;
                    }
                }
            }
        }
    }
    Ok((out, probes))
}

fn rerank(dataset: &VectorSet, q: &[f32], ids: &[u32], k: usize) -> RankedResult {
    let scored = ids
        .iter()
        .map(|&id| (id as usize, l2_squared(q, dataset.get(id as usize))))
        .collect();
    RankedResult::from_squared(scored, k)
}

/// Multi-probe LSH over the full Hamming ball of `radius`, with counters.
pub fn multiprobe_lsh_search(
    tables: &[ProjectionTable],
    dataset: &VectorSet,
    q: &[f32],
    radius: u32,
    shortlist_size: usize,
    k: usize,
) -> Result<QueryOutcome> {
    if k == 0 || shortlist_size == 0 {
        return Err(Error::invalid("k and shortlist size must be at least 1"));
    }
    let (ids, probes) = candidate_set(tables, dataset.len(), q, radius, shortlist_size)?;
    Ok(QueryOutcome {
        result: rerank(dataset, q, &ids, k),
        probes,
        candidates: ids.len(),
        shortlist_len: ids.len(),
    })
}

/// Plain LSH: only the query's own bucket in each table.
pub fn lsh_query(
    tables: &[ProjectionTable],
    dataset: &VectorSet,
    q: &[f32],
    shortlist_size: usize,
    k: usize,
) -> Result<RankedResult> {
    multiprobe_lsh_search(tables, dataset, q, 0, shortlist_size, k).map(|o| o.result)
}

pub fn multiprobe_lsh_query(
    tables: &[ProjectionTable],
    dataset: &VectorSet,
    q: &[f32],
    radius: u32,
    shortlist_size: usize,
    k: usize,
) -> Result<RankedResult> {
    multiprobe_lsh_search(tables, dataset, q, radius, shortlist_size, k).map(|o| o.result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{insert_all, make_tables};
    use crate::types::BoiParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_set(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        VectorSet::from_flat(dim, data).unwrap()
    }

    fn tables_for(data: &VectorSet, num_tables: usize, bits: u32) -> Vec<ProjectionTable> {
        let params = BoiParams {
            num_tables,
            hash_bits: bits,
            initial_probe_count: 0,
            seed: 21,
            ..Default::default()
        };
        let mut t = make_tables(&params, data.dim()).unwrap();
        insert_all(&mut t, data).unwrap();
        t
    }

    #[test]
    fn brute_force_examples() {
        let data = VectorSet::from_rows(2, [[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]).unwrap();
        let r = brute_force_query(&data, &[0.9, 0.0], 2).unwrap();
        assert_eq!(r.ids(), vec![1, 0]);
        assert!((r.entries[0].distance - 0.1).abs() < 1e-6);
        assert!((r.entries[1].distance - 0.9).abs() < 1e-6);

        let all = brute_force_query(&data, &[0.9, 0.0], 10).unwrap();
        assert_eq!(all.ids(), vec![1, 0, 2]);

        let big = random_set(10, 3, 1);
        let r = brute_force_query(&big, big.get(3), 1).unwrap();
        assert_eq!((r.entries[0].id, r.entries[0].distance), (3, 0.0));

        assert!(brute_force_query(&data, &[1.0], 1).is_err());
        assert!(brute_force_query(&data, &[1.0, 1.0], 0).is_err());
    }

    #[test]
    fn single_bucket_lsh_is_exhaustive() {
        // one 1-bit table with every point on the non-negative side
        let data = VectorSet::from_rows(1, [[1.0], [2.0], [0.5], [3.0]]).unwrap();
        let table = ProjectionTable::from_parts(0, 1, 1, vec![1.0], vec![vec![], vec![]]).unwrap();
        let mut tables = vec![table];
        insert_all(&mut tables, &data).unwrap();
        let q = [1.9];
        assert_eq!(
            lsh_query(&tables, &data, &q, 10, 4).unwrap(),
            brute_force_query(&data, &q, 4).unwrap()
        );
        // the other side is empty
        assert!(lsh_query(&tables, &data, &[-1.0], 10, 4)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn candidate_union_matches_direct_scan() {
        let data = random_set(500, 12, 3);
        let tables = tables_for(&data, 10, 6);
        for q in random_set(20, 12, 4).iter() {
            let (got, _) = candidate_set(&tables, data.len(), q, 0, usize::MAX).unwrap();
            let got: BTreeSet<u32> = got.into_iter().collect();
            let mut want = BTreeSet::new();
            for t in &tables {
                let code = t.hash(q).unwrap() as usize;
                for (c, bucket) in t.buckets().iter().enumerate() {
                    if c == code {
                        want.extend(bucket.iter().copied());
                    }
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn radius_zero_equals_plain_lsh() {
        let data = random_set(400, 8, 5);
        let tables = tables_for(&data, 6, 5);
        for q in random_set(15, 8, 6).iter() {
            assert_eq!(
                multiprobe_lsh_query(&tables, &data, q, 0, 50, 5).unwrap(),
                lsh_query(&tables, &data, q, 50, 5).unwrap()
            );
        }
    }

    #[test]
    fn full_radius_equals_brute_force() {
        let data = random_set(300, 8, 7);
        let tables = tables_for(&data, 3, 4);
        for q in random_set(15, 8, 8).iter() {
            assert_eq!(
                multiprobe_lsh_query(&tables, &data, q, 4, 300, 10).unwrap(),
                brute_force_query(&data, q, 10).unwrap()
            );
        }
    }

    #[test]
    fn candidates_grow_with_radius() {
        let data = random_set(1000, 10, 9);
        let tables = tables_for(&data, 8, 8);
        for q in random_set(100, 10, 10).iter() {
            let (c0, p0) = candidate_set(&tables, data.len(), q, 0, usize::MAX).unwrap();
            let (c1, p1) = candidate_set(&tables, data.len(), q, 1, usize::MAX).unwrap();
            let s1: BTreeSet<u32> = c1.into_iter().collect();
            assert!(c0.iter().all(|id| s1.contains(id)));
            assert_eq!((p0, p1), (8, 8 * 9));
        }
    }

    #[test]
    fn shortlist_cap_keeps_first_seen() {
        let data = random_set(500, 8, 11);
        let tables = tables_for(&data, 10, 3);
        let q = data.get(0);
        let (all, _) = candidate_set(&tables, data.len(), q, 1, usize::MAX).unwrap();
        let (capped, _) = candidate_set(&tables, data.len(), q, 1, 17).unwrap();
        assert_eq!(&all[..17], &capped[..]);
    }
}
