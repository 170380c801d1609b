//! Accuracy, latency, probe and memory measurement over query batches.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{brute_force_query, multiprobe_lsh_search};
use crate::error::{Error, Result};
use crate::index::{BoiIndex, QueryOutcome};
use crate::types::VectorSet;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Relevant record ids per query. The first id of each row is taken as the
/// query's true nearest neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    relevant: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(relevant: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(q) = relevant.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("query {q} has no relevant records")));
        }
        Ok(GroundTruth { relevant })
    }

    /// Keeps only the first `k` ids of every row.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        GroundTruth::new(
            self.relevant
                .iter()
                .map(|r| r.iter().take(k).copied().collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn relevant(&self, query: usize) -> Option<&[usize]> {
        self.relevant.get(query).map(Vec::as_slice)
    }

    pub fn true_nn(&self, query: usize) -> Option<usize> {
        self.relevant.get(query).map(|r| r[0])
    }
}

/// Average precision with 1-based ranks; relevant records never retrieved
/// count as zero precision.
pub fn average_precision(ranking: &[usize], relevant: &[usize]) -> Result<f64> {
    let relevant: HashSet<usize> = relevant.iter().copied().collect();
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set is empty"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut seen = HashSet::new();
    for (rank, id) in ranking.iter().enumerate() {
        if relevant.contains(id) && seen.insert(*id) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn mean_average_precision(rankings: &[Vec<usize>], truth: &GroundTruth) -> Result<f64> {
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (q, ranking) in rankings.iter().enumerate() {
        let relevant = truth
            .relevant(q)
            .ok_or_else(|| Error::invalid(format!("no ground truth for query {q}")))?;
        total += average_precision(ranking, relevant)?;
    }
    Ok(total / rankings.len() as f64)
}

/// Whether `true_nn` appears among the first `k` entries.
pub fn recall_at(ranking: &[usize], true_nn: usize, k: usize) -> bool {
    ranking.iter().take(k).any(|&id| id == true_nn)
}

/// Fraction of queries whose true neighbor is in their top `k`.
pub fn recall_rate(rankings: &[Vec<usize>], truth: &GroundTruth, k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (q, ranking) in rankings.iter().enumerate() {
        let nn = truth
            .true_nn(q)
            .ok_or_else(|| Error::invalid(format!("no ground truth for query {q}")))?;
        hits += recall_at(ranking, nn, k) as usize;
    }
    Ok(hits as f64 / rankings.len() as f64)
}

/// Bytes per stored record id in the index estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdAccounting {
    /// 4-byte ids, as actually stored.
    FourByte,
    /// 1 byte per id, the accounting used in the original memory figures.
    OneByte,
}

impl IdAccounting {
    pub fn width(self) -> u64 {
        match self {
            IdAccounting::FourByte => 4,
            IdAccounting::OneByte => 1,
        }
    }
}

pub const WEIGHT_WIDTH: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub vectors: u64,
    pub index: u64,
    pub accumulator: u64,
}

impl MemoryEstimate {
    pub fn total(&self) -> u64 {
        self.vectors + self.index + self.accumulator
    }
}

/// `vectors = n·d·4`, `index = n·L·id_width`, `accumulator = n·4`.
pub fn estimate_memory(n: u64, dim: u64, num_tables: u64, ids: IdAccounting) -> MemoryEstimate {
    MemoryEstimate {
        vectors: n * dim * 4,
        index: n * num_tables * ids.width(),
        accumulator: n * WEIGHT_WIDTH,
    }
}

/// Search method selectable by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Boi,
    BoiStrict,
    Lsh,
    Multiprobe,
    Brute,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boi" => Ok(Method::Boi),
            "boi_strict" => Ok(Method::BoiStrict),
            "lsh" => Ok(Method::Lsh),
            "multiprobe" => Ok(Method::Multiprobe),
            "brute" => Ok(Method::Brute),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Boi => "boi",
            Method::BoiStrict => "boi_strict",
            Method::Lsh => "lsh",
            Method::Multiprobe => "multiprobe",
            Method::Brute => "brute",
        })
    }
}

/// Runs one method against an index. BoI variants use the index's
/// parameters; LSH baselines reuse its tables with `probe_radius` and
/// `shortlist_size` from the same parameters, optionally on a prefix of the
/// tables.
pub struct Searcher<'a> {
    method: Method,
    index: &'a BoiIndex,
    tables: usize,
}

impl<'a> Searcher<'a> {
    /// `index` must already carry the query parameters; `BoiStrict` requires
    /// `strict_radius` to be set on it.
    pub fn new(method: Method, index: &'a BoiIndex) -> Result<Self> {
        let strict = index.params().strict_radius;
        match method {
            Method::Boi if strict => Err(Error::invalid("index is in strict-radius mode")),
            Method::BoiStrict if !strict => Err(Error::invalid(
                "boi_strict needs an index in strict-radius mode",
            )),
            _ => Ok(Searcher {
                method,
                index,
                tables: index.tables().len(),
            }),
        }
    }

    /// Restricts an LSH baseline to the first `tables` tables of the index.
    pub fn with_tables(mut self, tables: usize) -> Result<Self> {
        if !matches!(self.method, Method::Lsh | Method::Multiprobe) {
            return Err(Error::invalid(
                "only LSH baselines take a separate table count",
            ));
        }
        if tables == 0 || tables > self.index.tables().len() {
            return Err(Error::invalid(format!(
                "table count must be in [1, {}]",
                self.index.tables().len()
            )));
        }
        self.tables = tables;
        Ok(self)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn search(&self, q: &[f32], k: usize) -> Result<QueryOutcome> {
        let p = self.index.params();
        let (tables, data) = (&self.index.tables()[..self.tables], self.index.dataset());
        match self.method {
            Method::Boi | Method::BoiStrict => self.index.query(q, k),
            Method::Lsh => multiprobe_lsh_search(tables, data, q, 0, p.shortlist_size, k),
            Method::Multiprobe => {
                multiprobe_lsh_search(tables, data, q, p.probe_radius, p.shortlist_size, k)
            }
            Method::Brute => Ok(QueryOutcome {
                result: brute_force_query(data, q, k)?,
                probes: 0,
                candidates: data.len(),
                shortlist_len: data.len(),
            }),
        }
    }

    pub fn memory(&self, ids: IdAccounting) -> MemoryEstimate {
        let full = estimate_memory(
            self.index.len() as u64,
            self.index.dim() as u64,
            self.tables as u64,
            ids,
        );
        match self.method {
            Method::Boi | Method::BoiStrict => full,
            Method::Lsh | Method::Multiprobe => MemoryEstimate {
                accumulator: 0,
                ..full
            },
            Method::Brute => MemoryEstimate {
                index: 0,
                accumulator: 0,
                ..full
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedQuery {
    pub outcome: QueryOutcome,
    /// Median wall-clock milliseconds over the timed repetitions.
    pub time_ms: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Times every query end to end. Each query first runs once untimed, then
/// `repetitions` timed runs whose median is reported. Queries are spread
/// over `workers` threads.
pub fn time_queries(
    searcher: &Searcher<'_>,
    queries: &VectorSet,
    k: usize,
    repetitions: usize,
    workers: usize,
) -> Result<Vec<TimedQuery>> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<&[f32]> = queries.iter().collect();
    pool.install(|| {
        rows.par_iter()
            .map(|q| {
                let outcome = searcher.search(q, k)?;
                let mut times = Vec::with_capacity(repetitions);
                for _ in 0..repetitions {
                    let start = Instant::now();
                    let again = searcher.search(q, k)?;
                    times.push(start.elapsed().as_secs_f64() * 1e3);
                    debug_assert_eq!(again, outcome);
                }
                Ok(TimedQuery {
                    outcome,
                    time_ms: median(&mut times),
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub method: Method,
    pub num_queries: usize,
    pub k: usize,
    pub map: f64,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mean_query_time_ms: f64,
    pub per_query_times_ms: Vec<f64>,
    pub mean_probe_count: f64,
    pub mean_shortlist_len: f64,
    pub memory: MemoryEstimate,
    pub memory_total: u64,
}

/// Per-query row of the CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub query: usize,
    pub time_ms: f64,
    pub probes: u64,
    pub candidates: usize,
    pub shortlist_len: usize,
    pub average_precision: f64,
    pub hit_at_1: bool,
    pub hit_at_k: bool,
}

pub const CSV_HEADER: &str =
    "query,time_ms,probes,candidates,shortlist_len,average_precision,hit_at_1,hit_at_k";

pub fn write_csv<W: Write>(mut w: W, rows: &[QueryRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{},{},{},{:.6},{},{}",
            r.query,
            r.time_ms,
            r.probes,
            r.candidates,
            r.shortlist_len,
            r.average_precision,
            r.hit_at_1 as u8,
            r.hit_at_k as u8
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Settings of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub k: usize,
    pub repetitions: usize,
    pub workers: usize,
    pub ids: IdAccounting,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            repetitions: 1,
            // the reference experiments ran on four threads
            workers: 4,
            ids: IdAccounting::FourByte,
        }
    }
}

/// Times and scores `searcher` on `queries` against `truth`.
pub fn evaluate(
    searcher: &Searcher<'_>,
    queries: &VectorSet,
    truth: &GroundTruth,
    config: EvalConfig,
) -> Result<(EvalReport, Vec<QueryRow>)> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if truth.len() < queries.len() {
        return Err(Error::invalid(format!(
            "ground truth covers {} queries, {} given",
            truth.len(),
            queries.len()
        )));
    }
    let timed = time_queries(
        searcher,
        queries,
        config.k,
        config.repetitions,
        config.workers,
    )?;
    let rankings: Vec<Vec<usize>> = timed.iter().map(|t| t.outcome.result.ids()).collect();
    let mut rows = Vec::with_capacity(timed.len());
    for (q, (t, ranking)) in timed.iter().zip(&rankings).enumerate() {
        let nn = truth.true_nn(q).expect("length checked");
        rows.push(QueryRow {
            query: q,
            time_ms: t.time_ms,
            probes: t.outcome.probes,
            candidates: t.outcome.candidates,
            shortlist_len: t.outcome.shortlist_len,
            average_precision: average_precision(
                ranking,
                truth.relevant(q).expect("length checked"),
            )?,
            hit_at_1: recall_at(ranking, nn, 1),
            hit_at_k: recall_at(ranking, nn, config.k),
        });
    }
    let mean = |f: &dyn Fn(&QueryRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    let mut recall_at_k = BTreeMap::new();
    for cut in [1, 10, 100, config.k] {
        if cut <= config.k {
            recall_at_k.insert(cut, recall_rate(&rankings, truth, cut)?);
        }
    }
    let memory = searcher.memory(config.ids);
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: searcher.method(),
        num_queries: rows.len(),
        k: config.k,
        map: mean(&|r| r.average_precision),
        recall_at_k,
        mean_query_time_ms: mean(&|r| r.time_ms),
        per_query_times_ms: rows.iter().map(|r| r.time_ms).collect(),
        mean_probe_count: mean(&|r| r.probes as f64),
        mean_shortlist_len: mean(&|r| r.shortlist_len as f64),
        memory_total: memory.total(),
        memory,
    };
    Ok((report, rows))
}
