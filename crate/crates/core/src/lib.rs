//! Bag of Indexes (BoI): multi-index hashing for approximate nearest-neighbor
//! search.
//!
//! A database is hashed into `L` tables of sign-of-Gaussian-projection codes.
//! At query time each table votes for the records in the query bucket and in
//! a shrinking number of nearby buckets, weighted by `2^-H` for Hamming
//! distance `H`. Only the best-voted records are ranked by exact Euclidean
//! distance.
//!
//! ```
//! use boi_core::{BoiIndex, BoiParams, VectorSet};
//!
//! let data = VectorSet::from_rows(2, [[0.0, 1.0], [1.0, 0.0], [0.7, 0.7]]).unwrap();
//! let params = BoiParams { num_tables: 8, ..Default::default() };
//! let index = BoiIndex::build(params, data).unwrap();
//! let hit = index.query(&[0.6, 0.8], 1).unwrap();
//! assert_eq!(hit.result.entries[0].id, 2);
//! ```

pub mod baselines;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod index;
pub mod io;
pub mod synth;
pub mod types;

pub use baselines::{brute_force_query, lsh_query, multiprobe_lsh_query, BaselineKind};
pub use error::{Error, Result};
pub use eval::{EvalReport, GroundTruth, IdAccounting, Method, Searcher};
pub use hashing::{
    hash_vector, insert_all, make_tables, neighbor_codes, BucketCode, ProjectionTable,
};
pub use index::{
    build_schedule, expected_probes, shortlist, weight, BoiIndex, ProbeSchedule, QueryOutcome,
    WeightAccumulator,
};
pub use types::{
    l2_distance, BoiParams, DenseVector, Neighbor, RankedResult, ScheduleKind, VectorSet,
};
