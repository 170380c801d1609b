//! Sign-of-Gaussian-projection hash tables and Hamming-shell neighbor
//! enumeration.
//!
//! Projection matrices are drawn from a standard normal distribution using
//! `ChaCha8Rng` seeded with the index seed, with the table index selecting
//! the ChaCha stream. Normal variates come from `rand_distr::StandardNormal`
//! (ziggurat). Each table is therefore independent yet reproducible.

use std::collections::HashSet;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{check_dim, BoiParams, VectorSet, MAX_BITS};

/// A bucket address in `[0, 2^bits)`.
pub type BucketCode = u32;

/// Shells larger than this are sampled rather than enumerated when only part
/// of them is needed.
const MATERIALIZE_LIMIT: u64 = 1 << 16;

/// One hash table: `bits` Gaussian projection rows and `2^bits` buckets of
/// record ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    table_index: usize,
    bits: u32,
    dim: usize,
    projections: Vec<f32>,
    buckets: Vec<Vec<u32>>,
}

impl ProjectionTable {
    /// Samples a fresh table with empty buckets.
    pub fn sample(seed: u64, table_index: usize, bits: u32, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::invalid(format!(
                "hash bits must be in [1, {MAX_BITS}]"
            )));
        }
        let mut rng = table_rng(seed, table_index);
        let projections = (0..bits as usize * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        Ok(ProjectionTable {
            table_index,
            bits,
            dim,
            projections,
            buckets: vec![Vec::new(); 1 << bits],
        })
    }

    /// Reassembles a table from stored parts, checking shape.
    pub fn from_parts(
        table_index: usize,
        bits: u32,
        dim: usize,
        projections: Vec<f32>,
        buckets: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if bits == 0 || bits > MAX_BITS || dim == 0 {
            return Err(Error::invalid("invalid table shape"));
        }
        if projections.len() != bits as usize * dim {
            return Err(Error::invalid(format!(
                "projection matrix has {} entries, expected {}",
                projections.len(),
                bits as usize * dim
            )));
        }
        if buckets.len() != 1 << bits {
            return Err(Error::invalid(format!(
                "table has {} buckets, expected {}",
                buckets.len(),
                1u64 << bits
            )));
        }
        Ok(ProjectionTable {
            table_index,
            bits,
            dim,
            projections,
            buckets,
        })
    }

    pub fn table_index(&self) -> usize {
        self.table_index
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `bits × dim` projection matrix.
    pub fn projections(&self) -> &[f32] {
        &self.projections
    }

    pub fn projection_row(&self, row: usize) -> &[f32] {
        &self.projections[row * self.dim..(row + 1) * self.dim]
    }

    pub fn buckets(&self) -> &[Vec<u32>] {
        &self.buckets
    }

    pub fn bucket(&self, code: BucketCode) -> &[u32] {
        &self.buckets[code as usize]
    }

    /// Total number of stored ids.
    pub fn occupancy(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    /// Bucket code of `v`: bit `j` is set iff the dot product with projection
    /// row `j` is non-negative.
    pub fn hash(&self, v: &[f32]) -> Result<BucketCode> {
        check_dim(self.dim, v.len())?;
        Ok(self.hash_unchecked(v))
    }

    #[inline]
    pub(crate) fn hash_unchecked(&self, v: &[f32]) -> BucketCode {
        let mut code = 0;
        for (j, row) in self.projections.chunks_exact(self.dim).enumerate() {
            let dot: f64 = row.iter().zip(v).map(|(&p, &x)| p as f64 * x as f64).sum();
            if dot >= 0.0 {
                code |= 1 << j;
            }
        }
        code
    }

    fn clear(&mut self) {
        self.buckets.iter_mut().for_each(Vec::clear);
    }
}

fn table_rng(seed: u64, table_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(table_index as u64);
    rng
}

/// Builds `params.num_tables` tables with empty buckets for vectors of `dim`.
pub fn make_tables(params: &BoiParams, dim: usize) -> Result<Vec<ProjectionTable>> {
    params.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    (0..params.num_tables)
        .into_par_iter()
        .map(|i| ProjectionTable::sample(params.seed, i, params.hash_bits, dim))
        .collect()
}

/// Hashes `v` with one table.
pub fn hash_vector(table: &ProjectionTable, v: &[f32]) -> Result<BucketCode> {
    table.hash(v)
}

/// Places every record of `dataset` in exactly one bucket of every table.
/// Existing bucket contents are replaced. Ids within a bucket are ascending.
pub fn insert_all(tables: &mut [ProjectionTable], dataset: &VectorSet) -> Result<()> {
    if dataset.len() > u32::MAX as usize {
        return Err(Error::invalid("dataset too large for 32-bit record ids"));
    }
    for t in tables.iter() {
        if !dataset.is_empty() {
            check_dim(t.dim, dataset.dim())?;
        }
    }
    tables.par_iter_mut().for_each(|table| {
        table.clear();
        for (id, v) in dataset.iter().enumerate() {
            let code = table.hash_unchecked(v);
            table.buckets[code as usize].push(id as u32);
        }
    });
    Ok(())
}

/// `C(n, k)` saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Number of codes within Hamming distance `radius` of a code, excluding the
/// code itself.
pub fn ball_size(bits: u32, radius: u32) -> u64 {
    (1..=radius.min(bits) as u64)
        .map(|j| binomial(bits as u64, j))
        .fold(0u64, u64::saturating_add)
}

/// Iterates all `bits`-wide masks with exactly `weight` bits set, ascending.
pub(crate) fn masks_with_weight(bits: u32, weight: u32) -> impl Iterator<Item = u32> {
    let limit = 1u64 << bits;
    let start = if weight == 0 {
        0
    } else if weight > bits {
        limit
    } else {
        (1u64 << weight) - 1
    };
    let mut next = Some(start).filter(|&x| x < limit);
    std::iter::from_fn(move || {
        let x = next?;
        next = if x == 0 {
            None
        } else {
            // Gosper's hack
            let c = x & x.wrapping_neg();
            let r = x + c;
            let y = (((r ^ x) >> 2) / c) | r;
            Some(y).filter(|&y| y < limit)
        };
        Some(x as u32)
    })
}

/// Produces shuffled Hamming-shell neighbor lists for one code width,
/// caching the masks of small shells.
#[derive(Debug, Clone)]
pub struct NeighborEnumerator {
    bits: u32,
    // shells[j] holds every mask of weight j, for the shells small enough to keep
    shells: Vec<Option<Vec<u32>>>,
}

impl NeighborEnumerator {
    pub fn new(bits: u32) -> Self {
        assert!((1..=MAX_BITS).contains(&bits), "bits out of range");
        let shells = (0..=bits)
            .map(|j| {
                (j > 0 && binomial(bits as u64, j as u64) <= MATERIALIZE_LIMIT)
                    .then(|| masks_with_weight(bits, j).collect())
            })
            .collect();
        NeighborEnumerator { bits, shells }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Largest neighbor count that can be requested.
    pub fn capacity(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Appends to `out` the first `count` codes of the sequence: all codes at
    /// Hamming distance 1 from `center` in random order, then distance 2, and
    /// so on. `center` is never produced.
    pub fn fill<R: Rng + ?Sized>(
        &self,
        center: BucketCode,
        count: usize,
        rng: &mut R,
        out: &mut Vec<BucketCode>,
    ) -> Result<()> {
        if count as u64 > self.capacity() {
            return Err(Error::invalid(format!(
                "requested {count} neighbors but only {} exist for {} bits",
                self.capacity(),
                self.bits
            )));
        }
        let mut remaining = count;
        let mut scratch: Vec<u32> = Vec::new();
        for weight in 1..=self.bits {
            if remaining == 0 {
                break;
            }
            let shell_size = binomial(self.bits as u64, weight as u64);
            let take = remaining.min(shell_size as usize);
            scratch.clear();
            match &self.shells[weight as usize] {
                Some(masks) => {
                    scratch.extend_from_slice(masks);
                    let (picked, _) = scratch.partial_shuffle(rng, take);
                    out.extend(picked.iter().map(|m| center ^ m));
                }
                None if take as u64 == shell_size => {
                    scratch.extend(masks_with_weight(self.bits, weight));
                    scratch.shuffle(rng);
                    out.extend(scratch.iter().map(|m| center ^ m));
                }
                None => {
                    let mut seen = HashSet::with_capacity(take);
                    while seen.len() < take {
                        let mask = index::sample(rng, self.bits as usize, weight as usize)
                            .iter()
                            .fold(0u32, |m, b| m | (1 << b));
                        if seen.insert(mask) {
                            out.push(center ^ mask);
                        }
                    }
                }
            }
            remaining -= take;
        }
        Ok(())
    }
}

/// The first `max_count` neighbor codes of `center`, ordered by Hamming shell
/// and shuffled within each shell.
pub fn neighbor_codes<R: Rng + ?Sized>(
    center: BucketCode,
    max_count: usize,
    bits: u32,
    rng: &mut R,
) -> Result<Vec<BucketCode>> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!(
            "hash bits must be in [1, {MAX_BITS}]"
        )));
    }
    if center as u64 >= 1u64 << bits {
        return Err(Error::invalid("center code out of range"));
    }
    let mut out = Vec::with_capacity(max_count);
    NeighborEnumerator::new(bits).fill(center, max_count, rng, &mut out)?;
    Ok(out)
}

/// All codes within Hamming distance `radius` of `center`, including it,
/// ordered by distance then ascending mask.
pub fn hamming_ball(center: BucketCode, bits: u32, radius: u32) -> Vec<BucketCode> {
    (0..=radius.min(bits))
        .flat_map(|w| masks_with_weight(bits, w))
        .map(|m| center ^ m)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_table() -> ProjectionTable {
        ProjectionTable::from_parts(0, 2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![Vec::new(); 4]).unwrap()
    }

    #[test]
    fn make_tables_shapes() {
        let params = BoiParams::default();
        let tables = make_tables(&params, 128).unwrap();
        assert_eq!(tables.len(), 100);
        for (i, t) in tables.iter().enumerate() {
            assert_eq!(t.table_index(), i);
            assert_eq!(t.projections().len(), 8 * 128);
            assert_eq!(t.buckets().len(), 256);
            assert_eq!(t.occupancy(), 0);
        }
        assert_ne!(tables[0].projections(), tables[1].projections());
    }

    #[test]
    fn make_tables_is_seeded() {
        let params = BoiParams {
            num_tables: 5,
            seed: 42,
            ..Default::default()
        };
        let a = make_tables(&params, 16).unwrap();
        let b = make_tables(&params, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u32> = x.projections().iter().map(|f| f.to_bits()).collect();
            let yb: Vec<u32> = y.projections().iter().map(|f| f.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let c = make_tables(&BoiParams { seed: 43, ..params }, 16).unwrap();
        assert_ne!(a[0].projections(), c[0].projections());
    }

    #[test]
    fn make_tables_minimal() {
        let params = BoiParams {
            num_tables: 1,
            hash_bits: 1,
            initial_probe_count: 1,
            ..Default::default()
        };
        let tables = make_tables(&params, 1).unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].projections().len(), 1);
        assert_eq!(tables[0].buckets().len(), 2);
    }

    #[test]
    fn hash_sign_rule() {
        let t = identity_table();
        assert_eq!(t.hash(&[1.0, -1.0]).unwrap(), 1);
        assert_eq!(t.hash(&[-1.0, 1.0]).unwrap(), 2);
        assert_eq!(t.hash(&[0.0, 0.0]).unwrap(), 3);
        assert!(t.hash(&[1.0]).is_err());
    }

    #[test]
    fn hash_negation_complements() {
        let params = BoiParams {
            num_tables: 4,
            seed: 9,
            ..Default::default()
        };
        let tables = make_tables(&params, 32).unwrap();
        let v: Vec<f32> = (0..32).map(|i| (i as f32 * 0.37).sin() + 0.1).collect();
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        for t in &tables {
            assert_eq!(t.hash(&v).unwrap() ^ t.hash(&neg).unwrap(), 0xff);
        }
    }

    #[test]
    fn insert_all_partitions() {
        let params = BoiParams {
            num_tables: 3,
            seed: 1,
            ..Default::default()
        };
        let mut tables = make_tables(&params, 4).unwrap();
        insert_all(&mut tables, &VectorSet::empty(4)).unwrap();
        assert!(tables.iter().all(|t| t.occupancy() == 0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<f32> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        data[4..8].copy_from_slice(&[0.5, -0.2, 0.1, 0.9]);
        data[40..44].copy_from_slice(&[0.5, -0.2, 0.1, 0.9]);
        let set = VectorSet::from_flat(4, data).unwrap();
        insert_all(&mut tables, &set).unwrap();
        for t in &tables {
            assert_eq!(t.occupancy(), 1000);
            let mut ids: Vec<u32> = t.buckets().iter().flatten().copied().collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..1000).collect::<Vec<u32>>());
            for (code, bucket) in t.buckets().iter().enumerate() {
                for &id in bucket {
                    assert_eq!(t.hash(set.get(id as usize)).unwrap() as usize, code);
                }
            }
            let c = t.hash(set.get(1)).unwrap();
            assert!(t.bucket(c).contains(&1) && t.bucket(c).contains(&10));
        }
        let wrong = VectorSet::from_flat(3, vec![0.0; 3]).unwrap();
        assert!(insert_all(&mut tables, &wrong).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 0), 1);
        assert_eq!(binomial(8, 1), 8);
        assert_eq!(binomial(8, 2), 28);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(ball_size(8, 1), 8);
        assert_eq!(ball_size(8, 8), 255);
    }

    #[test]
    fn gosper_enumeration_matches_popcount_filter() {
        for bits in 1..=10u32 {
            for w in 0..=bits + 1 {
                let got: Vec<u32> = masks_with_weight(bits, w).collect();
                let want: Vec<u32> = (0..1u32 << bits).filter(|m| m.count_ones() == w).collect();
                assert_eq!(got, want, "bits={bits} w={w}");
            }
        }
    }

    // Counts how many codes of each Hamming distance fill a prefix of length
    // `count`, by walking all codes grouped by popcount.
    fn shell_histogram_oracle(bits: u32, count: usize) -> Vec<usize> {
        let mut hist = vec![0; bits as usize + 1];
        let mut left = count;
        for w in 1..=bits {
            let size = (0..1u32 << bits).filter(|m| m.count_ones() == w).count();
            let take = left.min(size);
            hist[w as usize] = take;
            left -= take;
        }
        hist
    }

    #[test]
    fn neighbor_codes_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let center = 0b1011_0010;
        let eight = neighbor_codes(center, 8, 8, &mut rng).unwrap();
        let mut sorted = eight.clone();
        sorted.sort_unstable();
        let mut want: Vec<u32> = (0..8).map(|j| center ^ (1 << j)).collect();
        want.sort_unstable();
        assert_eq!(sorted, want);

        let ten = neighbor_codes(center, 10, 8, &mut rng).unwrap();
        let mut hist = vec![0; 9];
        for c in &ten {
            hist[(c ^ center).count_ones() as usize] += 1;
        }
        assert_eq!(hist, shell_histogram_oracle(8, 10));
        assert_eq!(&hist[1..3], &[8, 2]);

        assert!(neighbor_codes(center, 0, 8, &mut rng).unwrap().is_empty());
        assert!(neighbor_codes(center, 256, 8, &mut rng).is_err());
    }

    #[test]
    fn neighbor_codes_large_shell_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // 30 + 435 + 4060 + 27405 + 142506 (sampled, not materialized)
        let want = 30 + 435 + 4060 + 27405 + 100;
        let codes = neighbor_codes(7, want, 30, &mut rng).unwrap();
        assert_eq!(codes.len(), want);
        let distinct: HashSet<u32> = codes.iter().copied().collect();
        assert_eq!(distinct.len(), want);
        assert!(codes
            .windows(2)
            .all(|w| (w[0] ^ 7).count_ones() <= (w[1] ^ 7).count_ones()));
    }

    #[test]
    fn hamming_ball_covers_everything_at_full_radius() {
        let mut ball = hamming_ball(5, 4, 4);
        assert_eq!(ball[0], 5);
        ball.sort_unstable();
        assert_eq!(ball, (0..16).collect::<Vec<u32>>());
        assert_eq!(hamming_ball(5, 4, 0), vec![5]);
        assert_eq!(hamming_ball(0, 4, 1).len(), 5);
    }

    #[test]
    fn collision_rate_decreases_with_angle() {
        // 1-bit tables, one fresh table per sampled pair
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dim = 16;
        let (mut near_hits, mut far_hits) = (0, 0);
        let trials = 2000;
        for t in 0..trials {
            let table = ProjectionTable::sample(11, t, 1, dim).unwrap();
            let base: Vec<f32> = (0..dim)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect();
            let mut ortho: Vec<f32> = (0..dim)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect();
            let bb: f32 = base.iter().map(|x| x * x).sum();
            let ob: f32 = ortho.iter().zip(&base).map(|(x, y)| x * y).sum();
            ortho
                .iter_mut()
                .zip(&base)
                .for_each(|(o, b)| *o -= ob / bb * b);
            let (bn, on) = (bb.sqrt(), ortho.iter().map(|x| x * x).sum::<f32>().sqrt());
            let rotate = |deg: f32| -> Vec<f32> {
                let r = deg.to_radians();
                base.iter()
                    .zip(&ortho)
                    .map(|(b, o)| r.cos() * b / bn + r.sin() * o / on)
                    .collect()
            };
            let h = table.hash(&base).unwrap();
            near_hits += (table.hash(&rotate(20.0)).unwrap() == h) as usize;
            far_hits += (table.hash(&rotate(75.0)).unwrap() == h) as usize;
        }
        assert!(near_hits > far_hits, "near {near_hits} far {far_hits}");
    }
}
