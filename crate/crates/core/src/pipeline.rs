//! End-to-end run: synthetic sessions, auto-labelling, training,
//! compilation, offline evaluation, streaming replay and benchmarking.
//!
//! Every input that shapes the result is a field of [`E2eConfig`], which is
//! echoed into the manifest; fields under `timing.` are the only ones that
//! differ between two runs of the same config.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::compiler::{flatten, partition, write_model, FlatEnsemble, Footprint, PartitionPlan};
use crate::config::KvConfig;
use crate::dataset::{class_counts, split, supersamples, synth_frames, rotating_schedule, SuperSample, SynthParams};
use crate::gbt::{ensemble_to_json, predict_class, train_with_history, MarginModel, TrainParams, TrainingHistory, TreeEnsemble};
use crate::infer::{bench, write_bench_csv, BenchOptions, BenchReport};
use crate::signal::{auto_label, ContactGeometry, LabelerParams, PressureFrame};
use crate::stream::{self, classify_stream, decode_frame, encode_session, FeedbackEvent, IngestReport, Pacing, StreamConfig, FRAME_BYTES};
use crate::{dataset, Error, Label, Result, BLOCK_LEN, N_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct E2eConfig {
    /// Session `i` uses seed `synth.seed + i`.
    pub synth: SynthParams,
    /// First hold of each session; holds then rotate through the classes.
    pub session_starts: Vec<Label>,
    pub geometry: ContactGeometry,
    pub labeler: LabelerParams,
    pub train: TrainParams,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub n_workers: usize,
    pub bench_workers: Vec<usize>,
    pub bench: BenchOptions,
    pub min_accuracy: f64,
    pub max_model_bytes: usize,
    pub max_latency_ns: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            synth: SynthParams { seed: 1, ..SynthParams::default() },
            session_starts: vec![Label::Neutral, Label::Ventral, Label::Dorsal],
            geometry: ContactGeometry::default(),
            labeler: LabelerParams::default(),
            train: TrainParams::default(),
            test_fraction: 0.2,
            split_seed: 1,
            n_workers: 9,
            bench_workers: vec![1, 2, 4, 9],
            bench: BenchOptions::default(),
            min_accuracy: 0.90,
            max_model_bytes: 64 * 1024,
            max_latency_ns: 100_000,
        }
    }
}

impl E2eConfig {
    const KEYS: [&'static str; 12] = [
        "sessions",
        "test_fraction",
        "split_seed",
        "workers",
        "bench.workers",
        "bench.n_inferences",
        "bench.batch_size",
        "bench.seed",
        "bench.warmup_passes",
        "threshold.min_accuracy",
        "threshold.max_model_bytes",
        "threshold.max_latency_ns",
    ];
    const SECTIONS: [&'static str; 4] = ["synth", "geometry", "labeler", "train"];

    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.merge_prefixed("synth", &self.synth.to_config());
        c.merge_prefixed("geometry", &self.geometry.to_config());
        c.merge_prefixed("labeler", &self.labeler.to_config());
        c.merge_prefixed("train", &self.train.to_config());
        c.set("sessions", join(&self.session_starts));
        c.set("test_fraction", self.test_fraction);
        c.set("split_seed", self.split_seed);
        c.set("workers", self.n_workers);
        c.set("bench.workers", join(&self.bench_workers));
        c.set("bench.n_inferences", self.bench.n_inferences);
        c.set("bench.batch_size", self.bench.batch_size);
        c.set("bench.seed", self.bench.seed);
        c.set("bench.warmup_passes", self.bench.warmup_passes);
        c.set("threshold.min_accuracy", self.min_accuracy);
        c.set("threshold.max_model_bytes", self.max_model_bytes);
        c.set("threshold.max_latency_ns", self.max_latency_ns);
        c
    }

    /// Defaults overridden by whatever `cfg` sets; unknown keys are errors.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let unknown = cfg.keys().find(|k| {
            !Self::KEYS.contains(k) && !Self::SECTIONS.iter().any(|s| k.starts_with(&format!("{s}.")))
        });
        if let Some(k) = unknown {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let mut c = Self::default();
        let mut synth_cfg = c.synth.to_config();
        for k in cfg.subset("synth").keys() {
            synth_cfg.set(k, cfg.raw(&format!("synth.{k}")).expect("key listed"));
        }
        c.synth = SynthParams::from_config(&synth_cfg)?;
        c.geometry = ContactGeometry::from_config(&cfg.subset("geometry"))?;
        c.labeler = LabelerParams::from_config(&cfg.subset("labeler"))?;
        c.train = TrainParams::from_config(&cfg.subset("train"))?;
        if let Some(v) = cfg.get_list("sessions")? {
            c.session_starts = v;
        }
        cfg.update("test_fraction", &mut c.test_fraction)?;
        cfg.update("split_seed", &mut c.split_seed)?;
        cfg.update("workers", &mut c.n_workers)?;
        if let Some(v) = cfg.get_list("bench.workers")? {
            c.bench_workers = v;
        }
        cfg.update("bench.n_inferences", &mut c.bench.n_inferences)?;
        cfg.update("bench.batch_size", &mut c.bench.batch_size)?;
        cfg.update("bench.seed", &mut c.bench.seed)?;
        cfg.update("bench.warmup_passes", &mut c.bench.warmup_passes)?;
        cfg.update("threshold.min_accuracy", &mut c.min_accuracy)?;
        cfg.update("threshold.max_model_bytes", &mut c.max_model_bytes)?;
        cfg.update("threshold.max_latency_ns", &mut c.max_latency_ns)?;
        if c.session_starts.is_empty() {
            return Err(Error::Config("sessions must list at least one start label".into()));
        }
        Ok(c)
    }

    /// Per-session synthesis parameters and hold schedules.
    pub fn sessions(&self) -> Vec<(SynthParams, Vec<Label>)> {
        let holds = (self.synth.session_s / self.synth.hold_s).round() as usize;
        self.session_starts
            .iter()
            .enumerate()
            .map(|(i, &first)| {
                let params = SynthParams {
                    seed: self.synth.seed.wrapping_add(i as u64),
                    ..self.synth.clone()
                };
                (params, rotating_schedule(holds, first))
            })
            .collect()
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Rows are true classes, columns predicted, both in label order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// One `a,b,c` row per true class.
    pub fn rows(&self) -> [String; N_CLASSES] {
        self.counts.map(|r| join(&r))
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>16}", "true \\ predicted")?;
        for l in Label::ALL {
            write!(f, "{:>9}", l.as_str())?;
        }
        for (l, row) in Label::ALL.iter().zip(&self.counts) {
            write!(f, "\n{:>16}", l.as_str())?;
            for c in row {
                write!(f, "{c:>9}")?;
            }
        }
        Ok(())
    }
}

pub fn evaluate<M: MarginModel + ?Sized>(model: &M, samples: &[SuperSample]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for s in samples {
        cm.add(s.label, predict_class(model, s.features()).label);
    }
    cm
}

/// Offline reference for the streaming path: consecutive non-overlapping
/// 50-frame blocks from the start of the log.
pub fn offline_block_labels<M: MarginModel + ?Sized>(model: &M, frames: &[PressureFrame]) -> Vec<Label> {
    frames
        .chunks_exact(BLOCK_LEN)
        .map(|b| predict_class(model, &dataset::block_features(b)).label)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCheck {
    pub frames: usize,
    pub events: Vec<FeedbackEvent>,
    pub offline: Vec<Label>,
    pub report: IngestReport,
}

impl ReplayCheck {
    pub fn expected_events(&self) -> usize {
        self.frames / BLOCK_LEN
    }

    pub fn labels_match(&self) -> bool {
        self.events.len() == self.offline.len() && self.events.iter().zip(&self.offline).all(|(e, l)| e.label == *l)
    }
}

/// Replays a log through the in-process transport and the streaming
/// classifier, alongside the offline block classification of the same log.
pub fn replay_check(flat: &FlatEnsemble, plan: &PartitionPlan, log: &[[u8; FRAME_BYTES]]) -> Result<ReplayCheck> {
    let frames = log
        .iter()
        .map(|b| Ok(decode_frame(b)?.frame()))
        .collect::<Result<Vec<_>>>()?;
    let offline = offline_block_labels(flat, &frames);
    let (mut tx, rx) = stream::channel(stream::MIN_QUEUE_FRAMES);
    let mut events = Vec::new();
    let report = std::thread::scope(|s| {
        let producer = s.spawn(move || stream::serve(log, &mut tx, Pacing::Unpaced));
        let report = classify_stream(rx, flat, plan, &StreamConfig::default(), |e| {
            events.push(*e);
            Ok(())
        });
        producer.join().expect("replay thread panicked")?;
        report
    })?;
    Ok(ReplayCheck {
        frames: frames.len(),
        events,
        offline,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct E2eReport {
    pub config: E2eConfig,
    pub n_frames: usize,
    pub n_segments: usize,
    pub class_counts: [usize; N_CLASSES],
    pub n_train: usize,
    pub n_test: usize,
    pub ensemble: TreeEnsemble,
    pub history: TrainingHistory,
    pub confusion: ConfusionMatrix,
    pub n_trees: usize,
    pub plan: PartitionPlan,
    pub footprint: Footprint,
    pub replay: ReplayCheck,
    pub bench: Vec<BenchReport>,
    pub stage_seconds: Vec<(&'static str, f64)>,
    pub checks: Vec<Check>,
}

impl E2eReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn manifest(&self) -> String {
        let mut m = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(m, "{k} = {v}");
        };
        let [d, n, v] = self.class_counts;
        kv("result.frames", &self.n_frames);
        kv("result.segments", &self.n_segments);
        kv("result.supersamples", &format!("dorsal={d} neutral={n} ventral={v}"));
        kv("result.train_samples", &self.n_train);
        kv("result.test_samples", &self.n_test);
        let final_loss = self.history.logloss.last().copied().unwrap_or(f64::NAN);
        kv("result.final_train_logloss", &format!("{final_loss:.9}"));
        kv("result.accuracy", &format!("{:.4}", self.confusion.accuracy()));
        for (l, row) in Label::ALL.iter().zip(self.confusion.rows()) {
            kv(&format!("result.confusion.{l}"), &row);
        }
        kv("result.trees", &self.n_trees);
        kv("result.partition", &format!(
            "{} workers x {} trees (padded {} -> {})",
            self.plan.n_workers,
            self.plan.trees_per_worker(),
            self.plan.source_tree_count,
            self.plan.padded_tree_count
        ));
        let fp = &self.footprint;
        kv("result.model_bytes", &fp.total());
        kv("result.model_bytes.header", &fp.header);
        kv("result.model_bytes.feature", &fp.feature);
        kv("result.model_bytes.threshold", &fp.threshold);
        kv("result.model_bytes.children", &fp.children);
        kv("result.model_bytes.roots", &fp.roots);
        kv("result.model_bytes.classes", &fp.classes);
        kv("result.stream.frames", &self.replay.frames);
        kv("result.stream.events", &self.replay.events.len());
        kv("result.stream.gaps", &self.replay.report.gaps);
        kv("result.stream.labels_match_offline", &self.replay.labels_match());
        for r in &self.bench {
            kv(
                &format!("timing.bench.w{}", r.n_workers),
                &format!(
                    "mean_ns={} p50_ns={} p99_ns={} single_shot_ns={} speedup={:.3} n={} batch={}",
                    r.mean_latency_ns, r.p50, r.p99, r.single_shot_ns, r.speedup_vs_single, r.inferences_run, r.batch_size
                ),
            );
        }
        for (stage, s) in &self.stage_seconds {
            kv(&format!("timing.stage.{stage}_s"), &format!("{s:.3}"));
        }
        for c in &self.checks {
            kv(&format!("check.{}", c.name), &format!("{} ({})", if c.passed { "pass" } else { "FAIL" }, c.detail));
        }
        kv("check.all", &if self.passed() { "pass" } else { "FAIL" });
        let mut out = String::from("# skilog e2e manifest\n");
        out.push_str(&self.config.to_config().to_string().lines().map(|l| format!("config.{l}\n")).collect::<String>());
        out.push_str(&m);
        out
    }
}

/// `base/run-<unix seconds>-seed<seed>`.
pub fn run_dir(base: &Path, seed: u64) -> PathBuf {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    base.join(format!("run-{ts}-seed{seed}"))
}

/// Runs every stage; artifacts and `manifest.txt` go to `out_dir` if given.
pub fn run_e2e(cfg: &E2eConfig, out_dir: Option<&Path>) -> Result<E2eReport> {
    let mut stage_seconds = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, stage_seconds: &mut Vec<(&'static str, f64)>| {
        stage_seconds.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_stage("setup"))?;
    }

    let sessions = cfg
        .sessions()
        .iter()
        .map(|(p, schedule)| synth_frames(p, schedule).map(|s| s.frames))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("synth"))?;
    lap("synth", &mut stage_seconds);

    let mut samples = Vec::new();
    let mut n_segments = 0;
    for frames in &sessions {
        let segments = auto_label(frames, &cfg.geometry, &cfg.labeler).map_err(|e| e.at_stage("label"))?;
        n_segments += segments.len();
        samples.extend(supersamples(frames, &segments).map_err(|e| e.at_stage("dataset"))?);
    }
    let data = split(&samples, cfg.test_fraction, cfg.split_seed).map_err(|e| e.at_stage("dataset"))?;
    lap("label_dataset", &mut stage_seconds);

    let (ensemble, history) = train_with_history(&data.train, &cfg.train).map_err(|e| e.at_stage("train"))?;
    lap("train", &mut stage_seconds);

    let flat = flatten(&ensemble);
    let plan = partition(&flat, cfg.n_workers).map_err(|e| e.at_stage("compile"))?;
    let footprint = Footprint::of(&flat);
    let mut model_bytes = Vec::new();
    write_model(&flat, &mut model_bytes).map_err(|e| e.at_stage("compile"))?;
    lap("compile", &mut stage_seconds);

    let confusion = evaluate(&flat, &data.test);
    lap("evaluate", &mut stage_seconds);

    let log = encode_session(&sessions[0]).map_err(|e| e.at_stage("stream"))?;
    let replay = replay_check(&flat, &plan, &log).map_err(|e| e.at_stage("stream"))?;
    lap("stream", &mut stage_seconds);

    let bench_reports = bench(&flat, &cfg.bench_workers, &cfg.bench).map_err(|e| e.at_stage("bench"))?;
    lap("bench", &mut stage_seconds);

    let single = bench_reports.iter().find(|r| r.n_workers == 1);
    let checks = vec![
        Check {
            name: "accuracy",
            passed: confusion.accuracy() >= cfg.min_accuracy,
            detail: format!("{:.4} >= {}", confusion.accuracy(), cfg.min_accuracy),
        },
        Check {
            name: "model_bytes",
            passed: footprint.total() <= cfg.max_model_bytes && model_bytes.len() == footprint.total(),
            detail: format!("{} <= {}", model_bytes.len(), cfg.max_model_bytes),
        },
        Check {
            name: "stream_equivalence",
            passed: replay.labels_match() && replay.events.len() == replay.expected_events(),
            detail: format!("{} events, {} expected", replay.events.len(), replay.expected_events()),
        },
        Check {
            name: "latency_w1",
            passed: single.is_some_and(|r| r.mean_latency_ns < cfg.max_latency_ns),
            detail: match single {
                Some(r) => format!("{} ns < {}", r.mean_latency_ns, cfg.max_latency_ns),
                None => "W=1 not benchmarked".into(),
            },
        },
    ];

    let report = E2eReport {
        config: cfg.clone(),
        n_frames: sessions.iter().map(Vec::len).sum(),
        n_segments,
        class_counts: class_counts(&samples),
        n_train: data.train.len(),
        n_test: data.test.len(),
        ensemble,
        history,
        confusion,
        n_trees: flat.n_trees(),
        plan,
        footprint,
        replay,
        bench: bench_reports,
        stage_seconds,
        checks,
    };

    if let Some(dir) = out_dir {
        let write = || -> Result<()> {
            fs::write(dir.join("model.json"), ensemble_to_json(&report.ensemble)?)?;
            fs::write(dir.join("model.skgb"), &model_bytes)?;
            let mut csv = Vec::new();
            write_bench_csv(&report.bench, &mut csv)?;
            fs::write(dir.join("bench.csv"), csv)?;
            let events: String = report.replay.events.iter().map(|e| format!("{e}\n")).collect();
            fs::write(dir.join("events.txt"), events)?;
            fs::write(dir.join("manifest.txt"), report.manifest())?;
            Ok(())
        };
        write().map_err(|e| e.at_stage("write"))?;
    }
    Ok(report)
}
