//! Binary formats: `fvecs` / `ivecs` vector files and index snapshots.
//!
//! `fvecs`: per record a little-endian `i32` dimension followed by that many
//! little-endian `f32`. `ivecs` has the same layout with `i32` payload.
//!
//! Snapshot layout, all little-endian:
//!
//! | field              | type      |
//! |--------------------|-----------|
//! | magic `BOIX`       | 4 bytes   |
//! | version (= 1)      | u32       |
//! | num_tables         | u32       |
//! | hash_bits          | u32       |
//! | dim                | u32       |
//! | n                  | u64       |
//! | seed               | u64       |
//! | schedule (0/1/2)   | u8        |
//! | strict_radius      | u8        |
//! | reserved (0)       | u16       |
//! | linear_step        | u32       |
//! | sublinear_step     | u32       |
//! | initial_probe_count| u32       |
//! | probe_radius       | u32       |
//! | shortlist_size     | u64       |
//!
//! followed by `num_tables` projection matrices (`hash_bits × dim` f32,
//! row-major) and then, for each table, each of its `2^hash_bits` buckets as
//! a u32 count and that many u32 record ids.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::hashing::ProjectionTable;
use crate::index::BoiIndex;
use crate::types::{BoiParams, ScheduleKind, VectorSet, MAX_BITS};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"BOIX";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Reader that remembers how many bytes it has handed out.
struct Tracked<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for Tracked<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let got = self.inner.read(buf)?;
        self.offset += got as u64;
        Ok(got)
    }
}

impl<R: Read> Tracked<R> {
    fn new(inner: R) -> Self {
        Tracked { inner, offset: 0 }
    }

    /// Reads a record header, returning `None` on a clean end of input.
    fn header_or_eof(&mut self) -> Result<Option<i32>> {
        let start = self.offset;
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.read(&mut buf[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(Error::format(start, "truncated record header")),
                Ok(k) => filled += k,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Some(i32::from_le_bytes(buf)))
    }

    fn fill<T>(&mut self, what: &str, f: impl FnOnce(&mut Self) -> io::Result<T>) -> Result<T> {
        let start = self.offset;
        f(self).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                Error::format(start, format!("truncated {what}"))
            } else {
                Error::Io(e)
            }
        })
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(
                self.offset,
                "trailing bytes after end of data",
            )),
        }
    }
}

fn record_dim(dim: i32, offset: u64, expected: Option<usize>) -> Result<usize> {
    if dim <= 0 {
        return Err(Error::format(
            offset,
            format!("invalid record dimension {dim}"),
        ));
    }
    let dim = dim as usize;
    match expected {
        Some(e) if e != dim => Err(Error::format(
            offset,
            format!("inconsistent dimension {dim}, expected {e}"),
        )),
        _ => Ok(dim),
    }
}

/// Parses `fvecs` data from a reader.
pub fn parse_fvecs<R: Read>(reader: R) -> Result<VectorSet> {
    let mut r = Tracked::new(reader);
    let mut dim = None;
    let mut data = Vec::new();
    let mut row = Vec::new();
    loop {
        let start = r.offset;
        let Some(d) = r.header_or_eof()? else { break };
        let d = record_dim(d, start, dim)?;
        dim = Some(d);
        row.resize(d, 0.0);
        let payload = r.offset;
        r.fill("vector payload", |r| {
            r.read_f32_into::<LittleEndian>(&mut row)
        })?;
        if let Some(pos) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                payload + 4 * pos as u64,
                "non-finite component",
            ));
        }
        data.extend_from_slice(&row);
    }
    VectorSet::from_flat(dim.unwrap_or(0), data)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<VectorSet> {
    parse_fvecs(BufReader::new(File::open(path)?))
}

pub fn encode_fvecs<W: Write>(mut w: W, set: &VectorSet) -> Result<()> {
    for v in set.iter() {
        w.write_i32::<LittleEndian>(v.len() as i32)?;
        for &x in v {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, set: &VectorSet) -> Result<()> {
    encode_fvecs(BufWriter::new(File::create(path)?), set)
}

/// Parses `ivecs` data; every row must share one width.
pub fn parse_ivecs<R: Read>(reader: R) -> Result<Vec<Vec<i32>>> {
    let mut r = Tracked::new(reader);
    let mut dim = None;
    let mut rows = Vec::new();
    loop {
        let start = r.offset;
        let Some(d) = r.header_or_eof()? else { break };
        let d = record_dim(d, start, dim)?;
        dim = Some(d);
        let mut row = vec![0i32; d];
        r.fill("id payload", |r| r.read_i32_into::<LittleEndian>(&mut row))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(BufReader::new(File::open(path)?))
}

pub fn encode_ivecs<W: Write>(mut w: W, rows: &[Vec<i32>]) -> Result<()> {
    if let Some(first) = rows.first() {
        if first.is_empty() || rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::invalid(
                "ivecs rows must be non-empty and share one width",
            ));
        }
    }
    for row in rows {
        w.write_i32::<LittleEndian>(row.len() as i32)?;
        for &x in row {
            w.write_i32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    encode_ivecs(BufWriter::new(File::create(path)?), rows)
}

/// Ground-truth rows as record ids, checked against a database of `n`.
pub fn ids_from_ivecs(rows: &[Vec<i32>], n: usize) -> Result<Vec<Vec<usize>>> {
    rows.iter()
        .enumerate()
        .map(|(q, row)| {
            row.iter()
                .map(|&id| {
                    if id < 0 || id as usize >= n {
                        Err(Error::invalid(format!(
                            "ground truth row {q} references id {id} outside [0, {n})"
                        )))
                    } else {
                        Ok(id as usize)
                    }
                })
                .collect()
        })
        .collect()
}

/// Tables and parameters decoded from a snapshot, not yet bound to data.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: BoiParams,
    pub dim: usize,
    pub n: usize,
    pub tables: Vec<ProjectionTable>,
}

impl Snapshot {
    /// Binds the snapshot to the dataset it was built from.
    pub fn into_index(self, dataset: VectorSet) -> Result<BoiIndex> {
        if dataset.len() != self.n || dataset.dim() != self.dim {
            return Err(Error::invalid(format!(
                "snapshot was built for {} vectors of dim {}, dataset has {} of dim {}",
                self.n,
                self.dim,
                dataset.len(),
                dataset.dim()
            )));
        }
        BoiIndex::from_parts(self.params, self.tables, dataset)
    }
}

pub fn encode_snapshot<W: Write>(mut w: W, index: &BoiIndex) -> Result<()> {
    let p = index.params();
    w.write_all(&SNAPSHOT_MAGIC)?;
    w.write_u32::<LittleEndian>(SNAPSHOT_VERSION)?;
    w.write_u32::<LittleEndian>(p.num_tables as u32)?;
    w.write_u32::<LittleEndian>(p.hash_bits)?;
    w.write_u32::<LittleEndian>(index.dim() as u32)?;
    w.write_u64::<LittleEndian>(index.len() as u64)?;
    w.write_u64::<LittleEndian>(p.seed)?;
    w.write_u8(p.schedule.code())?;
    w.write_u8(p.strict_radius as u8)?;
    w.write_u16::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(p.linear_step as u32)?;
    w.write_u32::<LittleEndian>(p.sublinear_step as u32)?;
    w.write_u32::<LittleEndian>(p.initial_probe_count)?;
    w.write_u32::<LittleEndian>(p.probe_radius)?;
    w.write_u64::<LittleEndian>(p.shortlist_size as u64)?;
    for t in index.tables() {
        for &x in t.projections() {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    for t in index.tables() {
        for bucket in t.buckets() {
            w.write_u32::<LittleEndian>(bucket.len() as u32)?;
            for &id in bucket {
                w.write_u32::<LittleEndian>(id)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_index(path: impl AsRef<Path>, index: &BoiIndex) -> Result<()> {
    encode_snapshot(BufWriter::new(File::create(path)?), index)
}

pub fn decode_snapshot<R: Read>(reader: R) -> Result<Snapshot> {
    let mut r = Tracked::new(reader);
    let mut magic = [0u8; 4];
    r.fill("magic", |r| r.read_exact(&mut magic))?;
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::format(0, "not an index snapshot (bad magic)"));
    }
    let version = r.fill("header", |r| r.read_u32::<LittleEndian>())?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported snapshot version {version}"),
        ));
    }
    let header_err = |r: &mut Tracked<R>| -> Result<(BoiParams, usize, usize)> {
        let num_tables = r.fill("header", |r| r.read_u32::<LittleEndian>())? as usize;
        let hash_bits = r.fill("header", |r| r.read_u32::<LittleEndian>())?;
        let dim = r.fill("header", |r| r.read_u32::<LittleEndian>())? as usize;
        let n = r.fill("header", |r| r.read_u64::<LittleEndian>())? as usize;
        let seed = r.fill("header", |r| r.read_u64::<LittleEndian>())?;
        let at = r.offset;
        let schedule = ScheduleKind::from_code(r.fill("header", |r| r.read_u8())?)
            .ok_or_else(|| Error::format(at, "unknown schedule code"))?;
        let strict_radius = r.fill("header", |r| r.read_u8())? != 0;
        r.fill("header", |r| r.read_u16::<LittleEndian>())?;
        let params = BoiParams {
            num_tables,
            hash_bits,
            seed,
            schedule,
            strict_radius,
            linear_step: r.fill("header", |r| r.read_u32::<LittleEndian>())? as usize,
            sublinear_step: r.fill("header", |r| r.read_u32::<LittleEndian>())? as usize,
            initial_probe_count: r.fill("header", |r| r.read_u32::<LittleEndian>())?,
            probe_radius: r.fill("header", |r| r.read_u32::<LittleEndian>())?,
            shortlist_size: r.fill("header", |r| r.read_u64::<LittleEndian>())? as usize,
        };
        Ok((params, dim, n))
    };
    let (params, dim, n) = header_err(&mut r)?;
    let header_end = r.offset;
    if params.hash_bits == 0 || params.hash_bits > MAX_BITS || dim == 0 {
        return Err(Error::format(8, "invalid table shape in header"));
    }
    params
        .validate()
        .map_err(|e| Error::format(8, format!("invalid parameters in header: {e}")))?;

    let mut projections = Vec::with_capacity(params.num_tables);
    for _ in 0..params.num_tables {
        let mut m = vec![0f32; params.hash_bits as usize * dim];
        r.fill("projection matrix", |r| {
            r.read_f32_into::<LittleEndian>(&mut m)
        })?;
        projections.push(m);
    }
    let mut tables = Vec::with_capacity(params.num_tables);
    for (i, proj) in projections.into_iter().enumerate() {
        let mut buckets = Vec::with_capacity(1 << params.hash_bits);
        let mut total = 0usize;
        for _ in 0..1usize << params.hash_bits {
            let at = r.offset;
            let count = r.fill("bucket count", |r| r.read_u32::<LittleEndian>())? as usize;
            total += count;
            if total > n {
                return Err(Error::format(
                    at,
                    format!("table {i} holds more than {n} ids"),
                ));
            }
            let mut ids = vec![0u32; count];
            let at = r.offset;
            r.fill("bucket ids", |r| r.read_u32_into::<LittleEndian>(&mut ids))?;
            if ids.iter().any(|&id| id as usize >= n) {
                return Err(Error::format(
                    at,
                    format!("table {i} has an id outside [0, {n})"),
                ));
            }
            buckets.push(ids);
        }
        if total != n {
            return Err(Error::format(
                r.offset,
                format!("table {i} holds {total} of {n} ids"),
            ));
        }
        tables.push(
            ProjectionTable::from_parts(i, params.hash_bits, dim, proj, buckets)
                .map_err(|e| Error::format(header_end, e.to_string()))?,
        );
    }
    r.expect_eof()?;
    Ok(Snapshot {
        params,
        dim,
        n,
        tables,
    })
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    decode_snapshot(BufReader::new(File::open(path)?))
}

/// Loads a snapshot and binds it to `dataset` without rehashing.
pub fn load_index(path: impl AsRef<Path>, dataset: VectorSet) -> Result<BoiIndex> {
    read_snapshot(path)?.into_index(dataset)
}
