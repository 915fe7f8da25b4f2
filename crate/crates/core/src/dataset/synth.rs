use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{fmt_tuple, KvConfig};
use crate::signal::{
    FrontEnd, LabeledSegment, PressureFrame, RawTrace, ACQUISITION_RATE_HZ, CUTOFF_HZ,
    FRAME_RATE_HZ,
};
use crate::{Error, Label, Result, ADC_MAX, N_CHANNELS, N_CLASSES};

/// Parameters of the synthetic lab-session generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub session_s: f64,
    pub hold_s: f64,
    /// Width of the logistic cross-fade between holds; 99% of the change
    /// happens within ±`transition_s / 2` of the hold boundary.
    pub transition_s: f64,
    /// Per-sample Gaussian noise at the acquisition rate, in ADC counts.
    pub noise_sd: f64,
    /// Mean (hallux, pinky, heel) ADC counts per class, indexed by
    /// [`Label::index`].
    pub class_pressures: [[f64; N_CHANNELS]; N_CLASSES],
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            session_s: 80.0,
            hold_s: 10.0,
            transition_s: 0.5,
            noise_sd: 40.0,
            class_pressures: [
                [600.0, 550.0, 2400.0],
                [1200.0, 1100.0, 1400.0],
                [1800.0, 1600.0, 700.0],
            ],
            sample_rate_hz: ACQUISITION_RATE_HZ,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be positive")))
            }
        };
        positive("session_s", self.session_s)?;
        positive("hold_s", self.hold_s)?;
        positive("transition_s", self.transition_s)?;
        positive("sample_rate_hz", self.sample_rate_hz)?;
        if self.transition_s >= self.hold_s {
            return Err(Error::invalid("transition_s must be shorter than hold_s"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid(format!("noise_sd = {}", self.noise_sd)));
        }
        if self
            .class_pressures
            .iter()
            .flatten()
            .any(|p| !(0.0..=f64::from(ADC_MAX)).contains(p))
        {
            return Err(Error::invalid("class pressures must lie in the ADC range"));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut p = Self::default();
        cfg.update("session_s", &mut p.session_s)?;
        cfg.update("hold_s", &mut p.hold_s)?;
        cfg.update("transition_s", &mut p.transition_s)?;
        cfg.update("noise_sd", &mut p.noise_sd)?;
        cfg.update("sample_rate_hz", &mut p.sample_rate_hz)?;
        cfg.update("seed", &mut p.seed)?;
        for label in Label::ALL {
            if let Some(t) = cfg.get_tuple::<3>(&format!("pressure.{label}"))? {
                p.class_pressures[label.index()] = t;
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("session_s", self.session_s);
        cfg.set("hold_s", self.hold_s);
        cfg.set("transition_s", self.transition_s);
        cfg.set("noise_sd", self.noise_sd);
        cfg.set("sample_rate_hz", self.sample_rate_hz);
        cfg.set("seed", self.seed);
        for label in Label::ALL {
            cfg.set(
                format!("pressure.{label}"),
                fmt_tuple(&self.class_pressures[label.index()]),
            );
        }
        cfg
    }
}

/// Acquisition-rate trace plus the posture plateaus it was built from.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub trace: RawTrace,
    pub truth: Vec<LabeledSegment>,
}

/// 100 Hz frames plus ground truth, produced without materialising the
/// acquisition-rate trace.
#[derive(Debug, Clone)]
pub struct SynthFrames {
    pub frames: Vec<PressureFrame>,
    pub truth: Vec<LabeledSegment>,
}

/// Sample-by-sample generator shared by the batch and streaming paths.
struct SampleGenerator<'a> {
    params: &'a SynthParams,
    schedule: &'a [Label],
    n_samples: usize,
    hold_samples: f64,
    tau_samples: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    next: usize,
}

impl<'a> SampleGenerator<'a> {
    fn new(params: &'a SynthParams, schedule: &'a [Label]) -> Result<Self> {
        params.validate()?;
        if schedule.is_empty() {
            return Err(Error::invalid("empty schedule"));
        }
        let scheduled = schedule.len() as f64 * params.hold_s;
        if (scheduled - params.session_s).abs() > 1e-9 * params.session_s {
            return Err(Error::invalid(format!(
                "{} holds of {} s do not fill a {} s session",
                schedule.len(),
                params.hold_s,
                params.session_s
            )));
        }
        let fs = params.sample_rate_hz;
        let noise = (params.noise_sd > 0.0)
            .then(|| Normal::new(0.0, params.noise_sd))
            .transpose()
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            params,
            schedule,
            n_samples: (params.session_s * fs).round() as usize,
            hold_samples: params.hold_s * fs,
            tau_samples: params.transition_s * fs / 10.0,
            noise,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            next: 0,
        })
    }

    fn mean_at(&self, i: usize) -> [f64; N_CHANNELS] {
        let pressures = &self.params.class_pressures;
        let t = i as f64;
        // Only the nearest hold boundary contributes; the others are
        // saturated to within 1e-20.
        if self.schedule.len() == 1 {
            return pressures[self.schedule[0].index()];
        }
        let boundary = (t / self.hold_samples).round() as usize;
        let boundary = boundary.clamp(1, self.schedule.len() - 1);
        let before = pressures[self.schedule[boundary - 1].index()];
        let after = pressures[self.schedule[boundary].index()];
        let z = (t - boundary as f64 * self.hold_samples) / self.tau_samples;
        let w = if z < -50.0 {
            0.0
        } else if z > 50.0 {
            1.0
        } else {
            1.0 / (1.0 + (-z).exp())
        };
        std::array::from_fn(|c| before[c] + (after[c] - before[c]) * w)
    }

    fn truth(&self) -> Vec<LabeledSegment> {
        let hold_frames = self.params.hold_s * FRAME_RATE_HZ;
        let margin = (self.params.transition_s / 2.0 * FRAME_RATE_HZ).round() as usize;
        let n = self.schedule.len();
        let mut out = Vec::new();
        let mut run = 0;
        for i in 1..=n {
            if i < n && self.schedule[i] == self.schedule[run] {
                continue;
            }
            let start = (run as f64 * hold_frames).round() as usize + if run > 0 { margin } else { 0 };
            let end = (i as f64 * hold_frames).round() as usize - if i < n { margin } else { 0 };
            out.push(LabeledSegment {
                start_index: start,
                end_index: end,
                label: self.schedule[run],
            });
            run = i;
        }
        out
    }
}

impl Iterator for SampleGenerator<'_> {
    type Item = [f64; N_CHANNELS];

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.n_samples {
            return None;
        }
        let mut sample = self.mean_at(self.next);
        if let Some(noise) = &self.noise {
            for v in &mut sample {
                *v = (*v + noise.sample(&mut self.rng)).clamp(0.0, f64::from(ADC_MAX));
            }
        }
        self.next += 1;
        Some(sample)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.n_samples - self.next;
        (left, Some(left))
    }
}

/// Synthetic acquisition-rate session following `schedule`, one label per
/// hold. Adjacent equal labels merge into one ground-truth segment.
pub fn synth_session(params: &SynthParams, schedule: &[Label]) -> Result<SynthSession> {
    let gen = SampleGenerator::new(params, schedule)?;
    let truth = gen.truth();
    let mut channels: [Vec<f64>; N_CHANNELS] = Default::default();
    for ch in &mut channels {
        ch.reserve(gen.n_samples);
    }
    for sample in gen {
        for (ch, v) in channels.iter_mut().zip(sample) {
            ch.push(v);
        }
    }
    Ok(SynthSession {
        trace: RawTrace::new(params.sample_rate_hz, channels)?,
        truth,
    })
}

/// Same session as [`synth_session`], pushed through the 50 Hz low-pass and
/// decimated to 100 Hz on the fly.
pub fn synth_frames(params: &SynthParams, schedule: &[Label]) -> Result<SynthFrames> {
    let gen = SampleGenerator::new(params, schedule)?;
    let truth = gen.truth();
    let mut front = FrontEnd::new(params.sample_rate_hz, CUTOFF_HZ, FRAME_RATE_HZ)?;
    let mut frames = Vec::with_capacity(gen.n_samples / front.decimation_factor() + 1);
    for sample in gen {
        if let Some(frame) = front.push(sample)? {
            frames.push(frame);
        }
    }
    Ok(SynthFrames { frames, truth })
}

/// Cycles dorsal/neutral/ventral so no two adjacent holds share a label.
pub fn rotating_schedule(holds: usize, first: Label) -> Vec<Label> {
    (0..holds)
        .map(|i| Label::ALL[(first.index() + i) % N_CLASSES])
        .collect()
}
