use super::{center_of_pressure, ContactGeometry, LabeledSegment, PressureFrame};
use crate::config::KvConfig;
use crate::{Error, Label, Result};

/// Thresholds for [`auto_label`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelerParams {
    /// Fraction of the peak rectified derivative above which a frame belongs
    /// to a transition.
    pub transition_threshold: f64,
    /// Shortest run kept as a segment (100 frames = 1 s at 100 Hz).
    pub min_segment_frames: usize,
    /// Longitudinal offset from the neutral point still counted as neutral.
    pub dead_zone_m: f64,
}

impl Default for LabelerParams {
    fn default() -> Self {
        Self {
            transition_threshold: 0.2,
            min_segment_frames: 100,
            dead_zone_m: 0.01,
        }
    }
}

impl LabelerParams {
    pub const CONFIG_KEYS: [&'static str; 3] =
        ["transition_threshold", "min_segment_frames", "dead_zone_m"];

    pub fn validate(&self) -> Result<()> {
        if !(self.transition_threshold > 0.0 && self.transition_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "transition_threshold {} outside (0, 1]",
                self.transition_threshold
            )));
        }
        if self.min_segment_frames == 0 {
            return Err(Error::invalid("min_segment_frames must be positive"));
        }
        if !(self.dead_zone_m >= 0.0 && self.dead_zone_m.is_finite()) {
            return Err(Error::invalid(format!("dead_zone_m {}", self.dead_zone_m)));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut p = Self::default();
        cfg.update("transition_threshold", &mut p.transition_threshold)?;
        cfg.update("min_segment_frames", &mut p.min_segment_frames)?;
        cfg.update("dead_zone_m", &mut p.dead_zone_m)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("transition_threshold", self.transition_threshold);
        cfg.set("min_segment_frames", self.min_segment_frames);
        cfg.set("dead_zone_m", self.dead_zone_m);
        cfg
    }
}

/// Segments frames into posture holds from the rectified derivative of the
/// longitudinal centre of pressure.
///
/// Unloaded frames repeat the previous centre of pressure (the neutral point
/// if the trace starts unloaded).
pub fn auto_label(
    frames: &[PressureFrame],
    geometry: &ContactGeometry,
    params: &LabelerParams,
) -> Result<Vec<LabeledSegment>> {
    let neutral = geometry.neutral_point().y;
    let mut last = neutral;
    let longitudinal: Vec<f64> = frames
        .iter()
        .map(|f| {
            if let Ok(cop) = center_of_pressure(f, geometry) {
                last = cop.y;
            }
            last
        })
        .collect();
    label_longitudinal(&longitudinal, neutral, params)
}

/// Core of [`auto_label`] on an already-projected longitudinal CoP series.
pub fn label_longitudinal(
    cop_y: &[f64],
    neutral_y: f64,
    params: &LabelerParams,
) -> Result<Vec<LabeledSegment>> {
    params.validate()?;
    let n = cop_y.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 frames, got {n}")));
    }
    if n < params.min_segment_frames {
        return Ok(Vec::new());
    }

    let rectified: Vec<f64> = cop_y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let peak = rectified.iter().copied().fold(0.0, f64::max);

    // Frame i (i >= 1) carries the derivative between frames i-1 and i.
    let in_transition = |i: usize| {
        peak > 0.0 && i > 0 && rectified[i - 1] / peak > params.transition_threshold
    };

    let mut segments = Vec::new();
    let mut run_start = None;
    for i in 0..=n {
        let quiet = i < n && !in_transition(i);
        match (quiet, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(start)) => {
                if i - start >= params.min_segment_frames {
                    let label = classify_offset(mean(&cop_y[start..i]) - neutral_y, params.dead_zone_m);
                    segments.push(LabeledSegment {
                        start_index: start,
                        end_index: i,
                        label,
                    });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(segments)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn classify_offset(offset: f64, dead_zone: f64) -> Label {
    if offset > dead_zone {
        Label::Ventral
    } else if offset < -dead_zone {
        Label::Dorsal
    } else {
        Label::Neutral
    }
}
