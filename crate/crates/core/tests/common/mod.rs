#![allow(dead_code)]

use skilog::dataset::{split, supersamples, synth_frames, SplitDataset};
use skilog::gbt::{train, TreeEnsemble};
use skilog::pipeline::E2eConfig;
use skilog::signal::auto_label;

/// Labelled and split super-samples from the default three sessions.
pub fn default_split() -> SplitDataset {
    let cfg = E2eConfig::default();
    let mut samples = Vec::new();
    for (params, schedule) in cfg.sessions() {
        let frames = synth_frames(&params, &schedule).unwrap().frames;
        let segments = auto_label(&frames, &cfg.geometry, &cfg.labeler).unwrap();
        samples.extend(supersamples(&frames, &segments).unwrap());
    }
    split(&samples, cfg.test_fraction, cfg.split_seed).unwrap()
}

pub fn default_model() -> TreeEnsemble {
    train(&default_split().train, &E2eConfig::default().train).unwrap()
}
