//! Synthetic lab sessions, fixed-length super-samples and the stratified
//! train/test split.
//!
//! A super-sample concatenates one block of `block_len` consecutive frames
//! channel-major: all hallux values, then pinky, then heel. Compiled models
//! record this layout, so it must not change.

mod io;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::signal::{LabeledSegment, PressureFrame};
use crate::{Error, Label, Result, ADC_MAX, BLOCK_LEN, N_CHANNELS, N_CLASSES};

pub use io::{read_binary, read_csv, write_binary, write_csv};
pub use synth::{rotating_schedule, synth_frames, synth_session, SynthFrames, SynthParams, SynthSession};

#[derive(Debug, Clone, PartialEq)]
pub struct SuperSample {
    features: Vec<f64>,
    pub label: Label,
}

impl SuperSample {
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self> {
        if features.is_empty() || features.len() % N_CHANNELS != 0 {
            return Err(Error::invalid(format!(
                "{} features is not a whole number of channel blocks",
                features.len()
            )));
        }
        if let Some(i) = features
            .iter()
            .position(|v| !(0.0..=f64::from(ADC_MAX)).contains(v))
        {
            return Err(Error::invalid(format!("feature {i} = {} outside ADC range", features[i])));
        }
        Ok(Self { features, label })
    }

    /// Channel-major feature vector from one block of frames.
    pub fn from_block(block: &[PressureFrame], label: Label) -> Self {
        Self {
            features: block_features(block),
            label,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Samples per channel.
    pub fn block_len(&self) -> usize {
        self.features.len() / N_CHANNELS
    }
}

/// Channel-major concatenation of a block of frames.
pub fn block_features(block: &[PressureFrame]) -> Vec<f64> {
    let mut features = Vec::with_capacity(block.len() * N_CHANNELS);
    for c in 0..N_CHANNELS {
        features.extend(block.iter().map(|f| f64::from(f.channels()[c])));
    }
    features
}

/// Chops each segment independently into non-overlapping blocks of
/// `block_len` frames; trailing partial blocks are dropped.
pub fn make_supersamples(
    frames: &[PressureFrame],
    segments: &[LabeledSegment],
    block_len: usize,
) -> Result<Vec<SuperSample>> {
    if block_len == 0 {
        return Err(Error::invalid("block_len must be positive"));
    }
    let mut out = Vec::new();
    for seg in segments {
        if seg.start_index > seg.end_index || seg.end_index > frames.len() {
            return Err(Error::invalid(format!(
                "segment [{}, {}) outside {} frames",
                seg.start_index,
                seg.end_index,
                frames.len()
            )));
        }
        out.extend(
            frames[seg.start_index..seg.end_index]
                .chunks_exact(block_len)
                .map(|block| SuperSample::from_block(block, seg.label)),
        );
    }
    Ok(out)
}

/// [`make_supersamples`] with the 50-frame block length.
pub fn supersamples(frames: &[PressureFrame], segments: &[LabeledSegment]) -> Result<Vec<SuperSample>> {
    make_supersamples(frames, segments, BLOCK_LEN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<SuperSample>,
    pub test: Vec<SuperSample>,
    pub seed: u64,
    /// Classes absent from the input, left out of stratification.
    pub skipped_classes: Vec<Label>,
}

/// Per-class test counts: the total is `ceil(f·N)`, apportioned by largest
/// remainder so each class gets `floor` or `ceil` of its own quota.
fn test_quotas(class_sizes: [usize; N_CLASSES], test_fraction: f64) -> [usize; N_CLASSES] {
    const EPS: f64 = 1e-9;
    let total_n: usize = class_sizes.iter().sum();
    let target = (test_fraction * total_n as f64 - EPS).ceil().max(0.0) as usize;
    let quotas = class_sizes.map(|n| test_fraction * n as f64);
    let mut counts = quotas.map(|q| (q + EPS).floor() as usize);
    let mut order: Vec<usize> = (0..N_CLASSES).filter(|&c| class_sizes[c] > 0).collect();
    // Largest fractional remainder first; lower class index wins ties.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(order.len() * 2) {
        if assigned >= target {
            break;
        }
        if counts[c] < class_sizes[c] {
            counts[c] += 1;
            assigned += 1;
        }
    }
    counts
}

/// Stratified random split; each class is shuffled with one seeded stream
/// (classes in index order) and its first quota goes to the test set.
pub fn split(samples: &[SuperSample], test_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if samples.len() < 5 {
        return Err(Error::invalid(format!("need at least 5 samples, got {}", samples.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    let quotas = test_quotas(by_class.each_ref().map(Vec::len), test_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; samples.len()];
    let mut skipped_classes = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            skipped_classes.push(Label::ALL[c]);
            continue;
        }
        members.shuffle(&mut rng);
        for &i in &members[..quotas[c]] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.iter().zip(in_test) {
        if t { test.push(s.clone()) } else { train.push(s.clone()) }
    }
    Ok(SplitDataset {
        train,
        test,
        seed,
        skipped_classes,
    })
}

pub fn class_counts(samples: &[SuperSample]) -> [usize; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts
}
