use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use boi_core::eval::{self, EvalConfig, GroundTruth, IdAccounting, Searcher};
use boi_core::io::{self as bio, Snapshot};
use boi_core::synth::{self, SynthSpec};
use boi_core::{BoiIndex, BoiParams, Method};
use log::info;
use serde::{Deserialize, Serialize};

use crate::{BenchArgs, BuildArgs, EvalArgs, GenArgs, QueryArgs, SearchArgs};

pub const BASE_FILE: &str = "base.fvecs";
pub const QUERY_FILE: &str = "query.fvecs";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.ivecs";

pub fn gen(args: GenArgs) -> Result<()> {
    let spec = SynthSpec {
        n: args.n,
        dim: args.dim,
        num_clusters: args.clusters,
        cluster_std: args.cluster_std,
        num_queries: args.nq,
        gt_k: args.gt_k,
        seed: args.seed,
        ..Default::default()
    };
    spec.validate()?;
    ensure!(
        args.out.is_dir(),
        "output directory {} does not exist",
        args.out.display()
    );
    let data = synth::generate(&spec)?;
    bio::write_fvecs(args.out.join(BASE_FILE), &data.base)?;
    bio::write_fvecs(args.out.join(QUERY_FILE), &data.queries)?;
    let gt: Vec<Vec<i32>> = data
        .neighbors
        .iter()
        .map(|row| row.iter().map(|&id| id as i32).collect())
        .collect();
    bio::write_ivecs(args.out.join(GROUNDTRUTH_FILE), &gt)?;
    info!(
        "wrote {} base and {} query vectors of dim {} to {}",
        data.base.len(),
        data.queries.len(),
        spec.dim,
        args.out.display()
    );
    Ok(())
}

fn occupancy_summary(index: &BoiIndex) {
    // log2-spaced histogram of bucket sizes over all tables
    let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
    let (mut empty, mut largest) = (0usize, 0usize);
    for table in index.tables() {
        for bucket in table.buckets() {
            let len = bucket.len();
            if len == 0 {
                empty += 1;
            } else {
                *hist.entry(usize::BITS - len.leading_zeros()).or_default() += 1;
            }
            largest = largest.max(len);
        }
    }
    let total = index.tables().len() * index.params().num_buckets();
    info!(
        "tables={} buckets/table={} empty={empty}/{total} largest={largest}",
        index.tables().len(),
        index.params().num_buckets()
    );
    for (bits, count) in hist {
        let lo = 1usize << (bits - 1);
        info!("  bucket size [{lo}, {}): {count}", lo * 2);
    }
}

pub fn build(args: BuildArgs) -> Result<()> {
    let params = args.params.apply(BoiParams::default());
    params.validate()?;
    let data = bio::read_fvecs(&args.dataset)
        .with_context(|| format!("reading {}", args.dataset.display()))?;
    ensure!(
        !data.is_empty(),
        "dataset {} is empty",
        args.dataset.display()
    );
    let index = BoiIndex::build(params, data)?;
    occupancy_summary(&index);
    bio::save_index(&args.index, &index)
        .with_context(|| format!("writing {}", args.index.display()))?;
    info!("saved index to {}", args.index.display());
    Ok(())
}

fn check_search_flags(args: &SearchArgs) -> Result<()> {
    ensure!(args.k >= 1, "--k must be at least 1");
    ensure!(args.workers >= 1, "--workers must be at least 1");
    args.params.apply(BoiParams::default()).validate()?;
    Ok(())
}

/// Loads snapshot and data, applies query-time overrides, and returns the
/// index plus how many tables the method should use.
fn open_index(args: &SearchArgs) -> Result<(BoiIndex, usize)> {
    let snapshot: Snapshot = bio::read_snapshot(&args.index)
        .with_context(|| format!("reading {}", args.index.display()))?;
    let built = snapshot.params;
    let p = &args.params;
    let baseline = matches!(args.method, Method::Lsh | Method::Multiprobe);
    let mut tables = built.num_tables;
    if let Some(l) = p.tables {
        if baseline {
            ensure!(
                (1..=built.num_tables).contains(&l),
                "--L {l} exceeds the {} tables in the index",
                built.num_tables
            );
            tables = l;
        } else {
            ensure!(
                l == built.num_tables,
                "--L {l} does not match the index ({} tables)",
                built.num_tables
            );
        }
    }
    if let Some(b) = p.bits {
        ensure!(
            b == built.hash_bits,
            "--bits {b} does not match the index ({})",
            built.hash_bits
        );
    }
    if let Some(s) = p.seed {
        ensure!(
            s == built.seed,
            "--seed {s} does not match the index ({})",
            built.seed
        );
    }
    let data = bio::read_fvecs(&args.dataset)
        .with_context(|| format!("reading {}", args.dataset.display()))?;
    let mut index = snapshot.into_index(data)?;
    let mut params = query_params(p, built);
    params.strict_radius = args.method == Method::BoiStrict;
    index.set_query_params(params)?;
    Ok((index, tables))
}

// table shape always comes from the snapshot
fn query_params(flags: &crate::ParamArgs, built: BoiParams) -> BoiParams {
    BoiParams {
        num_tables: built.num_tables,
        hash_bits: built.hash_bits,
        seed: built.seed,
        ..flags.apply(built)
    }
}

fn searcher<'a>(method: Method, index: &'a BoiIndex, tables: usize) -> Result<Searcher<'a>> {
    let s = Searcher::new(method, index)?;
    Ok(if matches!(method, Method::Lsh | Method::Multiprobe) {
        s.with_tables(tables)?
    } else {
        s
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: usize,
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
    pub probes: u64,
    pub candidates: usize,
    pub shortlist_len: usize,
    pub time_ms: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn query(args: QueryArgs) -> Result<()> {
    check_search_flags(&args.search)?;
    let (index, tables) = open_index(&args.search)?;
    let queries = bio::read_fvecs(&args.search.queries)
        .with_context(|| format!("reading {}", args.search.queries.display()))?;
    let s = searcher(args.search.method, &index, tables)?;
    let timed = eval::time_queries(&s, &queries, args.search.k, 1, args.search.workers)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for (q, t) in timed.into_iter().enumerate() {
        let record = QueryRecord {
            query: q,
            ids: t.outcome.result.ids(),
            distances: t
                .outcome
                .result
                .entries
                .iter()
                .map(|e| e.distance)
                .collect(),
            probes: t.outcome.probes,
            candidates: t.outcome.candidates,
            shortlist_len: t.outcome.shortlist_len,
            time_ms: t.time_ms,
        };
        serde_json::to_writer(&mut out, &record)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn read_ground_truth(path: &PathBuf, n: usize) -> Result<GroundTruth> {
    let rows = bio::read_ivecs(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GroundTruth::new(bio::ids_from_ivecs(&rows, n)?)?)
}

pub fn bench(args: BenchArgs) -> Result<()> {
    check_search_flags(&args.search)?;
    ensure!(args.repetitions >= 1, "--repetitions must be at least 1");
    let (index, tables) = open_index(&args.search)?;
    let queries = bio::read_fvecs(&args.search.queries)
        .with_context(|| format!("reading {}", args.search.queries.display()))?;
    let truth = read_ground_truth(&args.groundtruth, index.len())?;
    let s = searcher(args.search.method, &index, tables)?;
    let config = EvalConfig {
        k: args.search.k,
        repetitions: args.repetitions,
        workers: args.search.workers,
        ids: if args.compat_memory {
            IdAccounting::OneByte
        } else {
            IdAccounting::FourByte
        },
    };
    let (report, rows) = eval::evaluate(&s, &queries, &truth, config)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(prefix) = &args.out {
        let mut f = create(&prefix.with_extension("json"))?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        eval::write_csv(create(&prefix.with_extension("csv"))?, &rows)?;
    }
    println!("{json}");
    info!(
        "{}: mAP {:.4}, recall@1 {:.4}, {:.3} ms/query, {:.1} probes/query",
        report.method,
        report.map,
        report.recall_at_k.get(&1).copied().unwrap_or(0.0),
        report.mean_query_time_ms,
        report.mean_probe_count
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    num_queries: usize,
    k: usize,
    map: f64,
    recall_at_k: BTreeMap<usize, f64>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    ensure!(args.k >= 1, "--k must be at least 1");
    let file =
        File::open(&args.results).with_context(|| format!("opening {}", args.results.display()))?;
    let mut rankings: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", args.results.display(), lineno + 1))?;
        if rec.query != rankings.len() {
            bail!("results out of order at query {}", rec.query);
        }
        rankings.push(rec.ids.into_iter().take(args.k).collect());
    }
    let truth = read_ground_truth(&args.groundtruth, usize::MAX)?;
    let mut recall_at_k = BTreeMap::new();
    for cut in [1, 10, 100, args.k] {
        if cut <= args.k {
            recall_at_k.insert(cut, eval::recall_rate(&rankings, &truth, cut)?);
        }
    }
    let summary = EvalSummary {
        num_queries: rankings.len(),
        k: args.k,
        map: eval::mean_average_precision(&rankings, &truth)?,
        recall_at_k,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
