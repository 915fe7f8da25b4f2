use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InferenceEngine;
use crate::compiler::FlatEnsemble;
use crate::{Error, Result, ADC_MAX};

/// Smallest inference count for which a figure is reported.
pub const MIN_INFERENCES: usize = 1000;

/// Distinct input rows per run, unless one batch is larger.
const POOL_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub n_inferences: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Untimed passes over the whole input set before measuring.
    pub warmup_passes: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n_inferences: 10_000,
            batch_size: 64,
            seed: 7,
            warmup_passes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub n_workers: usize,
    pub batch_size: usize,
    /// Batched wall time divided by inferences.
    pub mean_latency_ns: u64,
    /// Nearest-rank percentiles of per-batch time per inference.
    pub p50: u64,
    pub p99: u64,
    /// Mean of one-row dispatches over the first `MIN_INFERENCES` inputs.
    pub single_shot_ns: u64,
    pub speedup_vs_single: f64,
    pub inferences_run: usize,
}

fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Uniform ADC counts, row-major. A longer run with the same seed extends a
/// shorter one.
pub fn random_features(n_rows: usize, n_features: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_rows * n_features)
        .map(|_| f64::from(rng.random_range(0..=ADC_MAX)))
        .collect()
}

#[derive(Clone, Copy)]
struct Timing {
    mean_ns: f64,
    p50: u64,
    p99: u64,
    single_ns: f64,
}

fn time_engine(engine: &mut InferenceEngine, batches: &[(Arc<[f64]>, usize)], opts: &BenchOptions) -> Result<Timing> {
    for _ in 0..opts.warmup_passes {
        for (rows, n) in batches {
            engine.margins_shared(Arc::clone(rows), *n)?;
        }
    }
    let mut per_inference = Vec::with_capacity(batches.len());
    let mut total_ns = 0u128;
    for (rows, n) in batches {
        let start = Instant::now();
        let out = engine.margins_shared(Arc::clone(rows), *n)?;
        let ns = start.elapsed().as_nanos();
        std::hint::black_box(out);
        total_ns += ns;
        per_inference.push((ns / *n as u128) as u64);
    }
    per_inference.sort_unstable();

    let nf = engine.n_features();
    let singles: Vec<Arc<[f64]>> = batches
        .iter()
        .flat_map(|(rows, _)| rows.chunks_exact(nf).map(Arc::from).collect::<Vec<_>>())
        .take(MIN_INFERENCES)
        .collect();
    let start = Instant::now();
    for row in &singles {
        std::hint::black_box(engine.margins_shared(Arc::clone(row), 1)?);
    }
    let single_ns = start.elapsed().as_nanos() as f64 / singles.len() as f64;

    Ok(Timing {
        mean_ns: total_ns as f64 / opts.n_inferences as f64,
        p50: nearest_rank(&per_inference, 50.0),
        p99: nearest_rank(&per_inference, 99.0),
        single_ns,
    })
}

/// Times batched inference for each worker count on one fixed random input
/// pool. A W=1 baseline is always measured for the speedup column.
pub fn bench(flat: &FlatEnsemble, worker_counts: &[usize], opts: &BenchOptions) -> Result<Vec<BenchReport>> {
    if opts.n_inferences < MIN_INFERENCES {
        return Err(Error::invalid(format!(
            "n_inferences {} below the minimum of {MIN_INFERENCES}",
            opts.n_inferences
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(Error::invalid("worker counts must be positive"));
    }
    let nf = flat.n_features();
    // A fixed pool of distinct rows keeps the working set independent of
    // the inference count; batches cycle over it.
    let pool_rows = opts.n_inferences.min(POOL_ROWS.max(opts.batch_size));
    let pool = random_features(pool_rows, nf, opts.seed);
    let pool: Vec<Arc<[f64]>> = pool.chunks(opts.batch_size * nf).map(Arc::from).collect();
    let mut batches: Vec<(Arc<[f64]>, usize)> = Vec::new();
    let mut remaining = opts.n_inferences;
    while remaining > 0 {
        let rows = &pool[batches.len() % pool.len()];
        let n = remaining.min(rows.len() / nf);
        let rows = if n * nf == rows.len() { Arc::clone(rows) } else { Arc::from(&rows[..n * nf]) };
        batches.push((rows, n));
        remaining -= n;
    }

    let run = |w: usize| -> Result<Timing> {
        let mut engine = InferenceEngine::with_workers(flat, w)?;
        time_engine(&mut engine, &batches, opts)
    };
    let baseline = run(1)?;
    let mut timings = Vec::with_capacity(worker_counts.len());
    for &w in worker_counts {
        timings.push((w, if w == 1 { baseline } else { run(w)? }));
    }
    let base_mean = baseline.mean_ns;
    Ok(timings
        .into_iter()
        .map(|(w, t)| BenchReport {
            n_workers: w,
            batch_size: opts.batch_size,
            mean_latency_ns: t.mean_ns.round() as u64,
            p50: t.p50,
            p99: t.p99,
            single_shot_ns: t.single_ns.round() as u64,
            speedup_vs_single: if w == 1 { 1.0 } else { base_mean / t.mean_ns },
            inferences_run: opts.n_inferences,
        })
        .collect())
}

/// `workers,mean_ns,p50_ns,p99_ns,speedup`, one row per report.
pub fn write_bench_csv(reports: &[BenchReport], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["workers", "mean_ns", "p50_ns", "p99_ns", "speedup"])?;
    for r in reports {
        w.write_record([
            r.n_workers.to_string(),
            r.mean_latency_ns.to_string(),
            r.p50.to_string(),
            r.p99.to_string(),
            format!("{:.3}", r.speedup_vs_single),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::flatten;
    use crate::gbt::{Tree, TreeEnsemble, TreeNode};

    fn small() -> FlatEnsemble {
        let trees = (0..27)
            .map(|i| Tree {
                class: i % 3,
                root: TreeNode::split(i % 150, 2000.5, TreeNode::leaf(0.1), TreeNode::leaf(-0.1)),
            })
            .collect();
        flatten(&TreeEnsemble::new(150, 0.0, 0.3, trees).unwrap())
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 50.0), 50);
        assert_eq!(nearest_rank(&v, 99.0), 99);
        assert_eq!(nearest_rank(&[5], 99.0), 5);
    }

    #[test]
    fn features_extend_with_same_seed() {
        let a = random_features(10, 150, 3);
        let b = random_features(20, 150, 3);
        assert_eq!(a[..], b[..a.len()]);
        assert!(a.iter().all(|v| (0.0..=4095.0).contains(v) && v.fract() == 0.0));
    }

    #[test]
    fn reports_and_csv() {
        let opts = BenchOptions { n_inferences: 1000, ..Default::default() };
        let reports = bench(&small(), &[1, 2, 4], &opts).unwrap();
        assert_eq!(reports.iter().map(|r| r.n_workers).collect::<Vec<_>>(), [1, 2, 4]);
        assert_eq!(reports[0].speedup_vs_single, 1.0);
        assert!(reports.iter().all(|r| r.inferences_run == 1000 && r.p50 <= r.p99));
        let mut out = Vec::new();
        write_bench_csv(&reports, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "workers,mean_ns,p50_ns,p99_ns,speedup");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,") && lines[1].ends_with(",1.000"));
    }

    #[test]
    fn baseline_only_reported_when_requested() {
        let opts = BenchOptions { n_inferences: 1000, ..Default::default() };
        let reports = bench(&small(), &[3], &opts).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].n_workers, 3);
    }

    #[test]
    fn rejects_too_few_inferences() {
        let opts = BenchOptions { n_inferences: 999, ..Default::default() };
        assert!(bench(&small(), &[1], &opts).is_err());
    }
}
