//! `skilog`: command-line front end for the sensing, training, compilation
//! and streaming pipeline.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use skilog::compiler::{flatten, partition, read_model, write_model, FlatEnsemble, Footprint};
use skilog::config::KvConfig;
use skilog::dataset::{self, class_counts, split, supersamples, synth_frames, synth_session, SuperSample, SynthParams};
use skilog::energy::PowerBudget;
use skilog::gbt::{ensemble_from_json, ensemble_to_json, train_with_history, TrainParams};
use skilog::infer::{bench, write_bench_csv, BenchOptions, InferenceEngine};
use skilog::pipeline::{self, ConfusionMatrix, E2eConfig};
use skilog::signal::{
    self, auto_label, ContactGeometry, LabelerParams, PressureFrame, CUTOFF_HZ, FRAME_RATE_HZ,
};
use skilog::stream::{
    self, classify_stream, encode_session, read_log, serve, write_log, GapPolicy, Pacing, StreamConfig, UdpReceiver,
    UdpSink,
};
use skilog::Label;

#[derive(Parser)]
#[command(name = "skilog", version, about = "Foot-pressure posture classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session: 100 Hz frames, ground truth and a frame log.
    Synth(SynthArgs),
    /// Segment frames into posture holds.
    Label(LabelArgs),
    /// Build 150-feature super-samples and a stratified train/test split.
    Dataset(DatasetArgs),
    /// Train the boosted-tree classifier.
    Train(TrainArgs),
    /// Flatten a trained model into the compact binary format.
    Compile(CompileArgs),
    /// Classify a dataset with a compiled or JSON model.
    Infer(InferArgs),
    /// Time batched inference across worker counts; writes CSV.
    Bench(BenchArgs),
    /// Send frames from a log or the synthetic generator over UDP.
    ServeSource(ServeArgs),
    /// Receive frames and emit one feedback event per 50-frame block.
    ClassifyStream(ClassifyArgs),
    /// Battery lifetime from a constant power budget.
    Energy(EnergyArgs),
    /// Run every stage and write a manifest; exits non-zero if a check fails.
    E2e(E2eArgs),
}

#[derive(Args)]
struct SynthSource {
    /// Synthesis parameters (key = value).
    #[arg(long)]
    synth_config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// First hold; later holds rotate dorsal, neutral, ventral.
    #[arg(long, default_value = "neutral")]
    start: Label,
}

impl SynthSource {
    fn params(&self) -> Result<(SynthParams, Vec<Label>)> {
        let mut p = match &self.synth_config {
            Some(path) => SynthParams::from_config(&KvConfig::load(path)?)?,
            None => SynthParams::default(),
        };
        if let Some(seed) = self.seed {
            p.seed = seed;
        }
        let holds = (p.session_s / p.hold_s).round() as usize;
        Ok((p, dataset::rotating_schedule(holds, self.start)))
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    source: SynthSource,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write the acquisition-rate trace (large: 400 000 rows per second).
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct LabelArgs {
    /// 100 Hz frames CSV.
    #[arg(long, conflicts_with = "raw", required_unless_present = "raw")]
    frames: Option<PathBuf>,
    /// Acquisition-rate CSV; filtered and decimated first.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Labeler thresholds (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sensor positions (key = value).
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Segments CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Frames CSV; repeat together with --segments for several sessions.
    #[arg(long, required = true)]
    frames: Vec<PathBuf>,
    #[arg(long, required = true)]
    segments: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for train and test sets.
    #[arg(long)]
    out: PathBuf,
    /// Write the binary dataset format instead of CSV.
    #[arg(long)]
    binary: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training set (.csv or .bin).
    #[arg(long)]
    train: PathBuf,
    /// Training parameters (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Per-round training logloss CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    /// Model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Binary model output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    workers: usize,
    /// Human-readable node listing.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Compiled (.skgb) or JSON model.
    #[arg(long)]
    model: PathBuf,
    /// Dataset (.csv or .bin).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Predictions CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,9")]
    workers: Vec<usize>,
    #[arg(long = "n", default_value_t = 10_000)]
    n_inferences: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// CSV output; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Replay this frame log verbatim.
    #[arg(long, conflicts_with = "synth")]
    log: Option<PathBuf>,
    /// Generate a synthetic session instead.
    #[arg(long)]
    synth: bool,
    #[command(flatten)]
    source: SynthSource,
    /// Destination address, e.g. 127.0.0.1:9750.
    #[arg(long, required_unless_present = "record")]
    udp: Option<String>,
    /// Write the frames to a log instead of sending them.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    /// Send as fast as possible.
    #[arg(long)]
    unpaced: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Compiled (.skgb) or JSON model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 9)]
    workers: usize,
    /// Listen address, e.g. 127.0.0.1:9750.
    #[arg(long, conflicts_with = "log", required_unless_present = "log")]
    udp: Option<String>,
    /// Replay a frame log through the in-process transport.
    #[arg(long)]
    log: Option<PathBuf>,
    /// discard | fill-forward
    #[arg(long, default_value = "discard")]
    gap_policy: GapPolicy,
    /// Milliseconds to wait for a datagram before giving up; 0 waits forever.
    #[arg(long, default_value_t = 5000)]
    idle_timeout_ms: u64,
    /// Event lines; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, default_value_t = 0.848)]
    acquisition_mw: f64,
    #[arg(long, default_value_t = 1.672)]
    radio_mw: f64,
    #[arg(long, default_value_t = 0.0)]
    other_mw: f64,
    #[arg(long, default_value_t = 240.0)]
    battery_mah: f64,
    #[arg(long, default_value_t = 3.7)]
    battery_v: f64,
}

#[derive(Args)]
struct E2eArgs {
    /// Run configuration (key = value), e.g. a previous run's config lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides synth.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_config(path: Option<&Path>) -> Result<KvConfig> {
    Ok(match path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::new(),
    })
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_dataset(path: &Path) -> Result<Vec<SuperSample>> {
    let r = open(path)?;
    let samples = if is_binary(path) { dataset::read_binary(r)? } else { dataset::read_csv(r)? };
    Ok(samples)
}

fn load_model(path: &Path) -> Result<FlatEnsemble> {
    let model = if path.extension().is_some_and(|e| e == "json") {
        flatten(&ensemble_from_json(&fs::read_to_string(path)?)?)
    } else {
        read_model(open(path)?)?
    };
    Ok(model)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let (params, schedule) = a.source.params()?;
    fs::create_dir_all(&a.out)?;
    let s = synth_frames(&params, &schedule)?;
    signal::write_frames_csv(&s.frames, create(&a.out.join("frames.csv"))?)?;
    signal::write_segments_csv(&s.truth, create(&a.out.join("truth.csv"))?)?;
    write_log(&encode_session(&s.frames)?, create(&a.out.join("session.skl"))?)?;
    if a.raw {
        let session = synth_session(&params, &schedule)?;
        signal::write_raw_csv(&session.trace, create(&a.out.join("raw.csv"))?)?;
    }
    let mut cfg = params.to_config();
    cfg.set("start", a.source.start);
    fs::write(a.out.join("synth.txt"), cfg.to_string())?;
    eprintln!("{} frames, {} truth segments -> {}", s.frames.len(), s.truth.len(), a.out.display());
    Ok(())
}

fn run_label(a: &LabelArgs) -> Result<()> {
    let frames: Vec<PressureFrame> = match (&a.frames, &a.raw) {
        (Some(p), _) => signal::read_frames_csv(open(p)?)?,
        (None, Some(p)) => {
            let trace = signal::read_raw_csv(open(p)?, None)?;
            let coeffs = signal::design_lowpass(trace.sample_rate_hz(), CUTOFF_HZ)?;
            signal::decimate(&signal::filter_trace(&trace, coeffs)?, FRAME_RATE_HZ)?
        }
        (None, None) => bail!("one of --frames or --raw is required"),
    };
    let params = LabelerParams::from_config(&load_config(a.config.as_deref())?)?;
    let geometry = ContactGeometry::from_config(&load_config(a.geometry.as_deref())?)?;
    let segments = auto_label(&frames, &geometry, &params)?;
    signal::write_segments_csv(&segments, output(a.out.as_deref())?)?;
    eprintln!("{} frames -> {} segments", frames.len(), segments.len());
    Ok(())
}

fn run_dataset(a: &DatasetArgs) -> Result<()> {
    if a.frames.len() != a.segments.len() {
        bail!("--frames and --segments must be given the same number of times");
    }
    let mut samples = Vec::new();
    for (f, s) in a.frames.iter().zip(&a.segments) {
        let frames = signal::read_frames_csv(open(f)?)?;
        let segments = signal::read_segments_csv(open(s)?)?;
        samples.extend(supersamples(&frames, &segments).with_context(|| format!("session {}", f.display()))?);
    }
    let data = split(&samples, a.test_fraction, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let ext = if a.binary { "bin" } else { "csv" };
    for (name, set) in [("train", &data.train), ("test", &data.test)] {
        let w = create(&a.out.join(format!("{name}.{ext}")))?;
        if a.binary {
            dataset::write_binary(set, w)?;
        } else {
            dataset::write_csv(set, w)?;
        }
    }
    let [d, n, v] = class_counts(&samples);
    eprintln!(
        "{} super-samples (dorsal {d}, neutral {n}, ventral {v}) -> train {}, test {}",
        samples.len(),
        data.train.len(),
        data.test.len()
    );
    for c in &data.skipped_classes {
        eprintln!("warning: no {c} samples");
    }
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let params = TrainParams::from_config(&load_config(a.config.as_deref())?)?;
    let samples = read_dataset(&a.train)?;
    let (ensemble, history) = train_with_history(&samples, &params)?;
    fs::write(&a.out, ensemble_to_json(&ensemble)?)?;
    if let Some(p) = &a.history {
        let mut w = create(p)?;
        writeln!(w, "round,logloss")?;
        for (i, l) in history.logloss.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
    }
    eprintln!(
        "{} trees, final training logloss {:.6}",
        ensemble.trees().len(),
        history.logloss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_compile(a: &CompileArgs) -> Result<()> {
    let flat = flatten(&ensemble_from_json(&fs::read_to_string(&a.model)?)?);
    let plan = partition(&flat, a.workers)?;
    let mut w = create(&a.out)?;
    write_model(&flat, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.dump {
        let mut text = String::new();
        flat.dump(&mut text)?;
        fs::write(p, text)?;
    }
    println!("{}", Footprint::of(&flat));
    println!(
        "partition    {} workers x {} trees ({} padding)",
        plan.n_workers,
        plan.trees_per_worker(),
        plan.padded_tree_count - plan.source_tree_count
    );
    Ok(())
}

fn run_infer(a: &InferArgs) -> Result<()> {
    let flat = load_model(&a.model)?;
    let samples = read_dataset(&a.input)?;
    let mut engine = InferenceEngine::with_workers(&flat, a.workers)?;
    let rows: Vec<f64> = samples.iter().flat_map(|s| s.features().iter().copied()).collect();
    let results = engine.infer_batch(&rows)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "index,label,p_dorsal,p_neutral,p_ventral,truth")?;
    let mut cm = ConfusionMatrix::default();
    for (i, (r, s)) in results.iter().zip(&samples).enumerate() {
        let [p0, p1, p2] = r.probabilities;
        writeln!(out, "{i},{},{p0:.6},{p1:.6},{p2:.6},{}", r.label, s.label)?;
        cm.add(s.label, r.label);
    }
    out.flush()?;
    eprintln!("accuracy {:.4} ({}/{})\n{cm}", cm.accuracy(), cm.correct(), cm.total());
    Ok(())
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let flat = load_model(&a.model)?;
    let opts = BenchOptions {
        n_inferences: a.n_inferences,
        batch_size: a.batch,
        seed: a.seed,
        ..BenchOptions::default()
    };
    let reports = bench(&flat, &a.workers, &opts)?;
    write_bench_csv(&reports, output(a.out.as_deref())?)?;
    for r in &reports {
        eprintln!("W={} single-shot {} ns/inference", r.n_workers, r.single_shot_ns);
    }
    Ok(())
}

fn run_serve(a: &ServeArgs) -> Result<()> {
    let frames = match (&a.log, a.synth) {
        (Some(p), _) => read_log(open(p)?).with_context(|| format!("reading {}", p.display()))?,
        (None, true) => {
            let (params, schedule) = a.source.params()?;
            encode_session(&synth_frames(&params, &schedule)?.frames)?
        }
        (None, false) => bail!("one of --log or --synth is required"),
    };
    if let Some(p) = &a.record {
        write_log(&frames, create(p)?)?;
        eprintln!("{} frames -> {}", frames.len(), p.display());
        return Ok(());
    }
    let addr = a.udp.as_deref().context("--udp is required when not recording")?;
    let pacing = if a.unpaced { Pacing::Unpaced } else { Pacing::RealTime { rate_hz: a.rate } };
    let mut sink = UdpSink::connect(addr)?;
    let report = serve(&frames, &mut sink, pacing)?;
    eprintln!("sent {} frames, worst lateness {} us", report.frames_sent, report.max_lateness_us);
    Ok(())
}

fn run_classify(a: &ClassifyArgs) -> Result<()> {
    let flat = load_model(&a.model)?;
    let plan = partition(&flat, a.workers)?;
    let config = StreamConfig { gap_policy: a.gap_policy, ..StreamConfig::default() };
    let mut out = output(a.out.as_deref())?;
    let mut emit = |e: &stream::FeedbackEvent| -> skilog::Result<()> {
        writeln!(out, "{e}")?;
        Ok(())
    };
    let report = match (&a.udp, &a.log) {
        (Some(addr), _) => {
            let timeout = (a.idle_timeout_ms > 0).then(|| Duration::from_millis(a.idle_timeout_ms));
            let rx = UdpReceiver::bind(addr.as_str(), timeout)?;
            eprintln!("listening on {}", rx.local_addr()?);
            classify_stream(rx, &flat, &plan, &config, &mut emit)?
        }
        (None, Some(p)) => {
            let log = read_log(open(p)?).with_context(|| format!("reading {}", p.display()))?;
            let (mut tx, rx) = stream::channel(stream::MIN_QUEUE_FRAMES);
            std::thread::scope(|s| -> Result<_> {
                let producer = s.spawn(move || serve(&log, &mut tx, Pacing::Unpaced));
                let report = classify_stream(rx, &flat, &plan, &config, &mut emit);
                producer.join().expect("replay thread panicked")?;
                Ok(report?)
            })?
        }
        (None, None) => bail!("one of --udp or --log is required"),
    };
    out.flush()?;
    eprintln!("{report}");
    if let Some(e) = &report.transport_error {
        bail!("transport failed: {e}");
    }
    Ok(())
}

fn run_energy(a: &EnergyArgs) -> Result<()> {
    let budget = PowerBudget {
        acquisition_mw: a.acquisition_mw,
        radio_mw: a.radio_mw,
        other_mw: a.other_mw,
        battery_mah: a.battery_mah,
        battery_v: a.battery_v,
    };
    budget.lifetime_hours()?;
    println!("{budget}");
    Ok(())
}

fn run_e2e(a: &E2eArgs) -> Result<bool> {
    let mut cfg = E2eConfig::from_config(&load_config(a.config.as_deref())?)?;
    if let Some(seed) = a.seed {
        cfg.synth.seed = seed;
    }
    let dir = pipeline::run_dir(&a.out, cfg.synth.seed);
    let report = pipeline::run_e2e(&cfg, Some(&dir))?;
    println!("run directory {}", dir.display());
    println!(
        "accuracy {:.4} on {} test super-samples\n{}",
        report.confusion.accuracy(),
        report.n_test,
        report.confusion
    );
    for c in &report.checks {
        println!("{:<20} {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => run_synth(a).context("synth"),
        Command::Label(a) => run_label(a).context("label"),
        Command::Dataset(a) => run_dataset(a).context("dataset"),
        Command::Train(a) => run_train(a).context("train"),
        Command::Compile(a) => run_compile(a).context("compile"),
        Command::Infer(a) => run_infer(a).context("infer"),
        Command::Bench(a) => run_bench(a).context("bench"),
        Command::ServeSource(a) => run_serve(a).context("serve-source"),
        Command::ClassifyStream(a) => run_classify(a).context("classify-stream"),
        Command::Energy(a) => run_energy(a).context("energy"),
        Command::E2e(a) => match run_e2e(a).context("e2e") {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
