//! Partitioned inference over a [`FlatEnsemble`].
//!
//! Every worker sums the leaves of its own contiguous run of trees into three
//! per-class partial margins. The coordinator adds the partials to the base
//! score in ascending worker order, so the result depends on the plan only
//! through that fixed association, never on thread timing.

mod bench;

use std::ops::Range;
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::compiler::{FlatEnsemble, PartitionPlan};
use crate::gbt::Prediction;
use crate::{Error, Label, Result, N_CLASSES};

pub use bench::{bench, write_bench_csv, BenchOptions, BenchReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceResult {
    pub label: Label,
    pub probabilities: [f64; N_CLASSES],
    pub margins: [f64; N_CLASSES],
    /// Wall time of the call, set only by timed paths.
    pub latency_ns: Option<u64>,
}

impl InferenceResult {
    fn from_margins(margins: [f64; N_CLASSES]) -> Self {
        let p = Prediction::from_margins(margins);
        Self {
            label: p.label,
            probabilities: p.probabilities,
            margins,
            latency_ns: None,
        }
    }
}

fn check_plan(flat: &FlatEnsemble, plan: &PartitionPlan) -> Result<()> {
    let n = flat.n_trees();
    if n != plan.source_tree_count && n != plan.padded_tree_count {
        return Err(Error::Config(format!(
            "plan was built for {} trees, model has {n}",
            plan.source_tree_count
        )));
    }
    if plan.n_workers == 0 || plan.padded_tree_count % plan.n_workers != 0 || plan.padded_tree_count < n {
        return Err(Error::Config(format!(
            "plan pads to {} trees over {} workers",
            plan.padded_tree_count, plan.n_workers
        )));
    }
    Ok(())
}

fn check_features(flat: &FlatEnsemble, rows: &[f64]) -> Result<usize> {
    let nf = flat.n_features();
    if nf == 0 || rows.len() % nf != 0 {
        return Err(Error::invalid(format!("{} values is not a whole number of {nf}-feature rows", rows.len())));
    }
    if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { sample: i / nf, feature: i % nf });
    }
    Ok(rows.len() / nf)
}

fn partials_for(flat: &FlatEnsemble, trees: Range<usize>, rows: &[f64]) -> Vec<[f64; N_CLASSES]> {
    rows.chunks_exact(flat.n_features())
        .map(|x| flat.partial_margins(trees.clone(), x))
        .collect()
}

fn reduce(base: f32, partials: &[Vec<[f64; N_CLASSES]>], row: usize) -> [f64; N_CLASSES] {
    let mut m = [f64::from(base); N_CLASSES];
    for worker in partials {
        for (acc, p) in m.iter_mut().zip(worker[row]) {
            *acc += p;
        }
    }
    m
}

/// Single inference without a thread pool, evaluating each worker's share in
/// turn. Produces exactly what [`InferenceEngine::infer`] produces.
pub fn infer(flat: &FlatEnsemble, plan: &PartitionPlan, features: &[f64]) -> Result<InferenceResult> {
    check_plan(flat, plan)?;
    if features.len() != flat.n_features() {
        return Err(Error::invalid(format!("expected {} features, got {}", flat.n_features(), features.len())));
    }
    check_features(flat, features)?;
    let padded = flat.with_padding(plan.padded_tree_count);
    let partials: Vec<_> = (0..plan.n_workers)
        .map(|w| partials_for(&padded, plan.range(w), features))
        .collect();
    Ok(InferenceResult::from_margins(reduce(padded.base_score(), &partials, 0)))
}

struct Job {
    rows: Arc<[f64]>,
}

struct Worker {
    jobs: Sender<Job>,
    handle: Option<JoinHandle<()>>,
}

/// Persistent pool of `n_workers - 1` threads; the calling thread acts as
/// worker 0. Calls are externally synchronized through `&mut self`.
pub struct InferenceEngine {
    model: Arc<FlatEnsemble>,
    plan: PartitionPlan,
    workers: Vec<Worker>,
    results: Receiver<(usize, Vec<[f64; N_CLASSES]>)>,
}

impl InferenceEngine {
    pub fn new(flat: &FlatEnsemble, plan: &PartitionPlan) -> Result<Self> {
        check_plan(flat, plan)?;
        let model = Arc::new(flat.with_padding(plan.padded_tree_count));
        let (result_tx, results) = bounded(plan.n_workers);
        let mut workers = Vec::with_capacity(plan.n_workers.saturating_sub(1));
        for w in 1..plan.n_workers {
            let (jobs, job_rx) = bounded::<Job>(1);
            let model = Arc::clone(&model);
            let trees = plan.range(w);
            let tx = result_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("skilog-infer-{w}"))
                .spawn(move || {
                    for job in job_rx {
                        if tx.send((w, partials_for(&model, trees.clone(), &job.rows))).is_err() {
                            break;
                        }
                    }
                })?;
            workers.push(Worker {
                jobs,
                handle: Some(handle),
            });
        }
        Ok(Self {
            model,
            plan: plan.clone(),
            workers,
            results,
        })
    }

    /// Convenience constructor that partitions `flat` over `n_workers`.
    pub fn with_workers(flat: &FlatEnsemble, n_workers: usize) -> Result<Self> {
        Self::new(flat, &crate::compiler::partition(flat, n_workers)?)
    }

    pub fn n_workers(&self) -> usize {
        self.plan.n_workers
    }

    pub fn n_features(&self) -> usize {
        self.model.n_features()
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn infer(&mut self, features: &[f64]) -> Result<InferenceResult> {
        if features.len() != self.model.n_features() {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.model.n_features(),
                features.len()
            )));
        }
        Ok(self.infer_batch(features)?.remove(0))
    }

    /// Classifies row-major `rows` (`n × n_features`).
    pub fn infer_batch(&mut self, rows: &[f64]) -> Result<Vec<InferenceResult>> {
        self.infer_shared(Arc::from(rows))
    }

    /// As [`Self::infer_batch`] without copying the rows.
    pub fn infer_shared(&mut self, rows: Arc<[f64]>) -> Result<Vec<InferenceResult>> {
        let n = check_features(&self.model, &rows)?;
        Ok(self.margins_shared(rows, n)?.into_iter().map(InferenceResult::from_margins).collect())
    }

    /// Unchecked dispatch used by the benchmark; rows already validated.
    fn margins_shared(&mut self, rows: Arc<[f64]>, n: usize) -> Result<Vec<[f64; N_CLASSES]>> {
        for worker in &self.workers {
            worker
                .jobs
                .send(Job { rows: Arc::clone(&rows) })
                .map_err(|_| Error::Config("inference worker stopped".into()))?;
        }
        let mut partials = vec![Vec::new(); self.plan.n_workers];
        partials[0] = partials_for(&self.model, self.plan.range(0), &rows);
        for _ in &self.workers {
            let (w, p) = self
                .results
                .recv()
                .map_err(|_| Error::Config("inference worker stopped".into()))?;
            partials[w] = p;
        }
        let base = self.model.base_score();
        Ok((0..n).map(|row| reduce(base, &partials, row)).collect())
    }
}

impl Drop for InferenceEngine {
    fn drop(&mut self) {
        for w in &mut self.workers {
            // Closing the job channel ends the worker loop.
            let (dead, _) = bounded(0);
            drop(std::mem::replace(&mut w.jobs, dead));
            if let Some(h) = w.handle.take() {
                let _ = h.join();
            }
        }
    }
}
