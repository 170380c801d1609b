//! Seeded Gaussian-mixture datasets with exact nearest-neighbor ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::brute_force_query;
use crate::error::{Error, Result};
use crate::types::VectorSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub num_clusters: usize,
    /// Per-component standard deviation around each cluster center.
    pub cluster_std: f64,
    pub num_queries: usize,
    /// Ground-truth neighbors stored per query.
    pub gt_k: usize,
    /// Query jitter as a fraction of `cluster_std`.
    pub query_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 10_000,
            dim: 128,
            num_clusters: 100,
            cluster_std: 0.5,
            num_queries: 100,
            gt_k: 10,
            query_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if self.num_clusters == 0 || self.n < self.num_clusters {
            return Err(Error::invalid("need n >= num_clusters >= 1"));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::invalid("cluster_std must be positive"));
        }
        if !(self.query_jitter >= 0.0 && self.query_jitter.is_finite()) {
            return Err(Error::invalid("query_jitter must be non-negative"));
        }
        if self.gt_k == 0 {
            return Err(Error::invalid("gt_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub base: VectorSet,
    pub queries: VectorSet,
    /// Exact `min(gt_k, n)` nearest database ids per query, nearest first.
    pub neighbors: Vec<Vec<usize>>,
}

/// Cluster centers are standard normal; records are spread around a
/// uniformly chosen center; each query is a jittered copy of a random record.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<f32> = (0..spec.num_clusters * spec.dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let spread = Normal::new(0.0, spec.cluster_std).expect("validated std");
    let mut base = Vec::with_capacity(spec.n * spec.dim);
    for i in 0..spec.n {
        // every cluster gets at least one record
        let c = if i < spec.num_clusters {
            i
        } else {
            rng.random_range(0..spec.num_clusters)
        };
        let center = &centers[c * spec.dim..(c + 1) * spec.dim];
        base.extend(
            center
                .iter()
                .map(|&m| (m as f64 + spread.sample(&mut rng)) as f32),
        );
    }
    let base = VectorSet::from_flat(spec.dim, base)?;

    let jitter = spec.cluster_std * spec.query_jitter;
    let mut queries = Vec::with_capacity(spec.num_queries * spec.dim);
    for _ in 0..spec.num_queries {
        let src = base.get(rng.random_range(0..spec.n));
        queries.extend(
            src.iter()
                .map(|&x| (x as f64 + jitter * rng.sample::<f64, _>(StandardNormal)) as f32),
        );
    }
    let queries = VectorSet::from_flat(spec.dim, queries)?;
    let neighbors = exact_neighbors(&base, &queries, spec.gt_k)?;
    Ok(SynthData {
        base,
        queries,
        neighbors,
    })
}

/// Exact top-`k` ids for every query by exhaustive search.
pub fn exact_neighbors(base: &VectorSet, queries: &VectorSet, k: usize) -> Result<Vec<Vec<usize>>> {
    queries
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|q| brute_force_query(base, q, k).map(|r| r.ids()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n: 500,
            dim: 16,
            num_clusters: 5,
            num_queries: 20,
            gt_k: 5,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&SynthSpec { seed: 4, ..small() }).unwrap();
        assert_ne!(generate(&small()).unwrap().base, other.base);
    }

    #[test]
    fn shapes() {
        let d = generate(&small()).unwrap();
        assert_eq!((d.base.len(), d.base.dim()), (500, 16));
        assert_eq!((d.queries.len(), d.queries.dim()), (20, 16));
        assert!(d.neighbors.iter().all(|r| r.len() == 5));
    }

    #[test]
    fn ground_truth_matches_exhaustive_scan() {
        let d = generate(&small()).unwrap();
        for (q, row) in d.queries.iter().zip(&d.neighbors) {
            let mut scored: Vec<(f64, usize)> = d
                .base
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let s: f64 = v.iter().zip(q).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                    (s, i)
                })
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = scored.iter().take(5).map(|s| s.1).collect();
            assert_eq!(row, &want);
        }
    }

    #[test]
    fn collapsed_cluster() {
        let spec = SynthSpec {
            n: 50,
            dim: 4,
            num_clusters: 1,
            cluster_std: 1e-30,
            num_queries: 5,
            gt_k: 1,
            ..Default::default()
        };
        let d = generate(&spec).unwrap();
        let first = d.base.get(0).to_vec();
        assert!(d.base.iter().all(|v| v == first.as_slice()));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec {
            num_clusters: 0,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthSpec { n: 3, ..small() }).is_err());
        assert!(generate(&SynthSpec {
            cluster_std: 0.0,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthSpec { gt_k: 0, ..small() }).is_err());
    }
}
