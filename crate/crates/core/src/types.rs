//! Value types shared across the crate: descriptors, vector sets, index
//! parameters and ranked results.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported code width. Buckets are addressed with `u32` codes and
/// a table holds `2^bits` of them.
pub const MAX_BITS: u32 = 30;

/// A finite, non-empty real descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("vector must have at least one component"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("component {pos} is not finite")));
        }
        Ok(DenseVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl TryFrom<Vec<f32>> for DenseVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        DenseVector::new(values)
    }
}

/// An ordered collection of vectors sharing one dimensionality, stored
/// row-major in a single buffer. Record ids are row positions.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
}

impl VectorSet {
    /// An empty set of the given dimensionality.
    pub fn empty(dim: usize) -> Self {
        VectorSet {
            dim,
            data: Vec::new(),
        }
    }

    /// Wraps a row-major buffer. `data.len()` must be a multiple of `dim` and
    /// every component finite.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            if data.is_empty() {
                return Ok(VectorSet::empty(0));
            }
            return Err(Error::invalid("dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer of length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "record {} component {} is not finite",
                pos / dim,
                pos % dim
            )));
        }
        Ok(VectorSet { dim, data })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut data = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has dim {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        VectorSet::from_flat(dim, data)
    }

    pub fn push(&mut self, v: &[f32]) -> Result<()> {
        if self.dim == 0 && self.data.is_empty() {
            self.dim = v.len();
        }
        check_dim(self.dim, v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("vector has non-finite components"));
        }
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on zero, and an empty set yields nothing anyway
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Squared Euclidean distance accumulated in `f64`. Callers check dims.
#[inline]
pub(crate) fn l2_squared(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(l2_squared(a, b).sqrt())
}

/// How the neighbor-probe budget shrinks as the table index grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Fixed,
    Linear,
    Sublinear,
}

impl ScheduleKind {
    pub fn code(self) -> u8 {
        match self {
            ScheduleKind::Fixed => 0,
            ScheduleKind::Linear => 1,
            ScheduleKind::Sublinear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScheduleKind::Fixed),
            1 => Some(ScheduleKind::Linear),
            2 => Some(ScheduleKind::Sublinear),
            _ => None,
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ScheduleKind::Fixed),
            "linear" => Ok(ScheduleKind::Linear),
            "sublinear" => Ok(ScheduleKind::Sublinear),
            other => Err(Error::invalid(format!("unknown schedule '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Sublinear => "sublinear",
        })
    }
}

/// Parameters of a Bag of Indexes.
///
/// `num_tables`, `hash_bits` and `seed` determine the hash tables. The rest
/// only affect querying and may be changed on a built index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoiParams {
    pub num_tables: usize,
    pub hash_bits: u32,
    /// Hamming radius `l` of the weighting function.
    pub probe_radius: u32,
    /// Number of top-weighted records re-ranked by exact distance.
    pub shortlist_size: usize,
    /// Neighbor budget `γ₀` of the first table.
    pub initial_probe_count: u32,
    pub schedule: ScheduleKind,
    pub linear_step: usize,
    pub sublinear_step: usize,
    /// Zero weight beyond `probe_radius` and never probe past that ball.
    pub strict_radius: bool,
    pub seed: u64,
}

impl Default for BoiParams {
    fn default() -> Self {
        BoiParams {
            num_tables: 100,
            hash_bits: 8,
            probe_radius: 1,
            shortlist_size: 250,
            initial_probe_count: 10,
            schedule: ScheduleKind::Sublinear,
            linear_step: 40,
            sublinear_step: 25,
            strict_radius: false,
            seed: 0,
        }
    }
}

impl BoiParams {
    pub fn num_buckets(&self) -> usize {
        1usize << self.hash_bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tables == 0 {
            return Err(Error::invalid("number of tables must be at least 1"));
        }
        if self.hash_bits == 0 || self.hash_bits > MAX_BITS {
            return Err(Error::invalid(format!(
                "hash bits must be in [1, {MAX_BITS}], got {}",
                self.hash_bits
            )));
        }
        if self.shortlist_size == 0 {
            return Err(Error::invalid("shortlist size must be at least 1"));
        }
        let max_gamma = (1u64 << self.hash_bits) - 1;
        if self.initial_probe_count as u64 > max_gamma {
            return Err(Error::invalid(format!(
                "initial probe count {} exceeds 2^bits - 1 = {max_gamma}",
                self.initial_probe_count
            )));
        }
        if self.linear_step == 0 || self.sublinear_step == 0 {
            return Err(Error::invalid("schedule steps must be at least 1"));
        }
        Ok(())
    }
}

/// One entry of a ranked result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Records ordered by ascending distance, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<Neighbor>,
}

impl RankedResult {
    /// Ranks `(id, squared distance)` pairs and keeps the best `k`.
    pub(crate) fn from_squared(mut scored: Vec<(usize, f64)>, k: usize) -> Self {
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        RankedResult {
            entries: scored
                .into_iter()
                .map(|(id, d2)| Neighbor {
                    id,
                    distance: d2.sqrt(),
                })
                .collect(),
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l2_examples() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(
            l2_distance(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0]).unwrap(),
            5.0
        );
    }

    #[test]
    fn l2_dimension_mismatch() {
        assert!(matches!(
            l2_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                actual: 2
            })
        ));
    }

    #[test]
    fn dense_vector_rejects_non_finite() {
        assert!(DenseVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(DenseVector::new(vec![f32::INFINITY]).is_err());
        assert!(DenseVector::new(vec![]).is_err());
        assert_eq!(DenseVector::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn vector_set_rows() {
        let set = VectorSet::from_rows(2, [[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.get(1), &[3.0, 4.0]);
        assert_eq!(set.iter().count(), 2);
        assert!(VectorSet::from_rows(2, [vec![1.0]]).is_err());
        assert!(VectorSet::from_flat(2, vec![1.0, 2.0, 3.0]).is_err());
        assert_eq!(VectorSet::empty(4).iter().count(), 0);
    }

    #[test]
    fn default_params() {
        let p = BoiParams::default();
        assert_eq!(p.num_tables, 100);
        assert_eq!(p.num_buckets(), 256);
        assert_eq!(p.probe_radius, 1);
        assert_eq!(p.shortlist_size, 250);
        assert_eq!(p.initial_probe_count, 10);
        assert_eq!(p.schedule, ScheduleKind::Sublinear);
        assert_eq!((p.linear_step, p.sublinear_step), (40, 25));
        p.validate().unwrap();
    }

    #[test]
    fn params_validation() {
        let bad = [
            BoiParams {
                hash_bits: 31,
                ..Default::default()
            },
            BoiParams {
                hash_bits: 0,
                ..Default::default()
            },
            BoiParams {
                shortlist_size: 0,
                ..Default::default()
            },
            BoiParams {
                num_tables: 0,
                ..Default::default()
            },
            BoiParams {
                hash_bits: 3,
                initial_probe_count: 8,
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        BoiParams {
            hash_bits: 3,
            initial_probe_count: 7,
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let r = RankedResult::from_squared(vec![(4, 1.0), (2, 1.0), (7, 0.0)], 2);
        assert_eq!(r.ids(), vec![7, 2]);
    }

    proptest! {
        #[test]
        fn l2_triangle_inequality(
            a in prop::collection::vec(-100.0f32..100.0, 8),
            b in prop::collection::vec(-100.0f32..100.0, 8),
            c in prop::collection::vec(-100.0f32..100.0, 8),
        ) {
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-12);
            prop_assert_eq!(ab, l2_distance(&b, &a).unwrap());
        }
    }
}
