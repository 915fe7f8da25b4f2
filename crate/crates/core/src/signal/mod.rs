//! Pressure-signal conditioning: low-pass filtering at the acquisition rate,
//! decimation to 100 Hz frames, centre-of-pressure and automatic
//! posture labelling.

mod filter;
mod io;
mod labeler;

use serde::{Deserialize, Serialize};

use crate::config::{fmt_tuple, KvConfig};
use crate::{Error, Result, ADC_MAX, N_CHANNELS};

pub use filter::{
    decimate, design_lowpass, filter_trace, quantize_adc, Biquad, BiquadCoefficients, FrontEnd,
};
pub use io::{
    read_frames_csv, read_raw_csv, read_segments_csv, write_frames_csv, write_raw_csv, write_segments_csv,
};
pub use labeler::{auto_label, label_longitudinal, LabelerParams};

/// Nominal acquisition rate of the lab DAQ.
pub const ACQUISITION_RATE_HZ: f64 = 400_000.0;
/// Frame rate after decimation.
pub const FRAME_RATE_HZ: f64 = 100.0;
/// Low-pass cutoff applied before decimation.
pub const CUTOFF_HZ: f64 = 50.0;

/// Acquisition-rate samples for the three pressure channels
/// (hallux, pinky, heel).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    sample_rate_hz: f64,
    channels: [Vec<f64>; N_CHANNELS],
}

impl RawTrace {
    /// Builds a trace from ADC readings, checking equal lengths and the
    /// 12-bit range.
    pub fn new(sample_rate_hz: f64, channels: [Vec<f64>; N_CHANNELS]) -> Result<Self> {
        let trace = Self::unchecked(sample_rate_hz, channels)?;
        for (c, ch) in trace.channels.iter().enumerate() {
            if let Some(i) = ch
                .iter()
                .position(|v| !(0.0..=f64::from(ADC_MAX)).contains(v))
            {
                return Err(Error::invalid(format!(
                    "channel {c} sample {i} = {} outside ADC range",
                    ch[i]
                )));
            }
        }
        Ok(trace)
    }

    /// Filtered traces may ring slightly past the ADC rails, so only shape
    /// and rate are checked here.
    pub(crate) fn unchecked(sample_rate_hz: f64, channels: [Vec<f64>; N_CHANNELS]) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!("sample rate {sample_rate_hz}")));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channel lengths differ"));
        }
        Ok(Self {
            sample_rate_hz,
            channels,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>; N_CHANNELS] {
        &self.channels
    }

    pub fn into_channels(self) -> [Vec<f64>; N_CHANNELS] {
        self.channels
    }
}

/// One 100 Hz reading of the three 12-bit pressure channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PressureFrame {
    pub timestamp_ms: u32,
    pub hallux: u16,
    pub pinky: u16,
    pub heel: u16,
}

impl PressureFrame {
    pub fn new(timestamp_ms: u32, [hallux, pinky, heel]: [u16; N_CHANNELS]) -> Self {
        Self {
            timestamp_ms,
            hallux,
            pinky,
            heel,
        }
    }

    /// Channel values in feature order.
    pub fn channels(&self) -> [u16; N_CHANNELS] {
        [self.hallux, self.pinky, self.heel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Planar sensor positions in metres. `y` is the longitudinal axis, positive
/// toward the toes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactGeometry {
    positions: [Point2; N_CHANNELS],
}

impl Default for ContactGeometry {
    fn default() -> Self {
        Self::new([
            Point2::new(0.00, 0.22),
            Point2::new(-0.05, 0.18),
            Point2::new(0.00, 0.00),
        ])
    }
}

impl ContactGeometry {
    pub const CONFIG_KEYS: [&'static str; 3] = ["hallux", "pinky", "heel"];

    pub fn new(positions: [Point2; N_CHANNELS]) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[Point2; N_CHANNELS] {
        &self.positions
    }

    /// Centroid of the three contact points.
    pub fn neutral_point(&self) -> Point2 {
        let [a, b, c] = self.positions;
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Reads `hallux`, `pinky`, `heel` as `x,y` pairs; missing keys keep the
    /// defaults.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut geometry = Self::default();
        for (slot, key) in geometry.positions.iter_mut().zip(Self::CONFIG_KEYS) {
            if let Some([x, y]) = cfg.get_tuple::<2>(key)? {
                *slot = Point2::new(x, y);
            }
        }
        Ok(geometry)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        for (p, key) in self.positions.iter().zip(Self::CONFIG_KEYS) {
            cfg.set(key, fmt_tuple(&[p.x, p.y]));
        }
        cfg
    }
}

/// Pressure-weighted average of the contact positions.
pub fn center_of_pressure(frame: &PressureFrame, geometry: &ContactGeometry) -> Result<Point2> {
    let weights = frame.channels().map(f64::from);
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoLoad);
    }
    let (mut x, mut y) = (0.0, 0.0);
    for (w, p) in weights.iter().zip(geometry.positions()) {
        x += w * p.x;
        y += w * p.y;
    }
    Ok(Point2::new(x / total, y / total))
}

/// Contiguous run of frames `[start_index, end_index)` with one posture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub label: crate::Label,
}

impl LabeledSegment {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.end_index <= self.start_index
    }
}
