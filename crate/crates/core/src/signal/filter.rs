use std::f64::consts::{PI, SQRT_2};

use super::{PressureFrame, RawTrace};
use crate::{Error, Result, ADC_MAX, N_CHANNELS};

/// Second-order section `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoefficients {
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// |H(e^{jω})| at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = self.b1 * s1 + self.b2 * s2;
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = self.a1 * s1 + self.a2 * s2;
        num_re.hypot(num_im) / den_re.hypot(den_im)
    }
}

/// Second-order Butterworth low-pass via the pre-warped bilinear transform.
///
/// The numerator is rescaled so the DC gain is 1 up to rounding.
pub fn design_lowpass(sample_rate_hz: f64, cutoff_hz: f64) -> Result<BiquadCoefficients> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::invalid(format!("sample rate {sample_rate_hz} Hz")));
    }
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
            sample_rate_hz / 2.0
        )));
    }
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    let norm = 1.0 / (1.0 + SQRT_2 * k + k2);
    let a1 = 2.0 * (k2 - 1.0) * norm;
    let a2 = (1.0 - SQRT_2 * k + k2) * norm;
    let b0 = k2 * norm;
    let mut c = BiquadCoefficients {
        b0,
        b1: 2.0 * b0,
        b2: b0,
        a1,
        a2,
    };
    let g = c.dc_gain();
    c.b0 /= g;
    c.b1 /= g;
    c.b2 /= g;
    Ok(c)
}

/// Direct-form II transposed section.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    c: BiquadCoefficients,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(c: BiquadCoefficients) -> Self {
        Self { c, s1: 0.0, s2: 0.0 }
    }

    /// State as if `x0` had been applied forever, so a constant input passes
    /// through unchanged from the first sample.
    pub fn steady_state(c: BiquadCoefficients, x0: f64) -> Self {
        let s2 = (c.b2 - c.a2) * x0;
        let s1 = (c.b1 - c.a1) * x0 + s2;
        Self { c, s1, s2 }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let c = &self.c;
        let y = c.b0 * x + self.s1;
        self.s1 = c.b1 * x - c.a1 * y + self.s2;
        self.s2 = c.b2 * x - c.a2 * y;
        y
    }
}

fn filter_channel(samples: &[f64], c: BiquadCoefficients) -> Vec<f64> {
    let Some(&x0) = samples.first() else {
        return Vec::new();
    };
    let mut bq = Biquad::steady_state(c, x0);
    samples.iter().map(|&x| bq.process(x)).collect()
}

/// Filters each channel independently, state initialised to the steady
/// state of the first sample.
pub fn filter_trace(trace: &RawTrace, coeffs: BiquadCoefficients) -> Result<RawTrace> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot filter an empty trace"));
    }
    let channels = trace.channels().each_ref().map(|ch| filter_channel(ch, coeffs));
    RawTrace::unchecked(trace.sample_rate_hz(), channels)
}

/// Rounds to the nearest count and clamps into the 12-bit range.
#[inline]
pub fn quantize_adc(value: f64) -> u16 {
    value.round().clamp(0.0, f64::from(ADC_MAX)) as u16
}

/// Integer decimation factor and output period in whole milliseconds.
fn decimation_plan(sample_rate_hz: f64, target_rate_hz: f64) -> Result<(usize, u32)> {
    if !(target_rate_hz.is_finite() && target_rate_hz > 0.0) {
        return Err(Error::invalid(format!("target rate {target_rate_hz} Hz")));
    }
    let ratio = sample_rate_hz / target_rate_hz;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(Error::invalid(format!(
            "{sample_rate_hz} Hz is not an integer multiple of {target_rate_hz} Hz"
        )));
    }
    let period = 1000.0 / target_rate_hz;
    if (period - period.round()).abs() > 1e-9 || period.round() < 1.0 {
        return Err(Error::invalid(format!(
            "{target_rate_hz} Hz has no whole-millisecond period"
        )));
    }
    Ok((k as usize, period.round() as u32))
}

fn timestamp(index: usize, period_ms: u32) -> Result<u32> {
    u32::try_from(index)
        .ok()
        .and_then(|i| i.checked_mul(period_ms))
        .ok_or_else(|| Error::invalid("timestamp overflows 32 bits"))
}

/// Keeps every k-th sample (`k = sample_rate / target_rate`), starting at
/// sample 0.
pub fn decimate(trace: &RawTrace, target_rate_hz: f64) -> Result<Vec<PressureFrame>> {
    let (k, period_ms) = decimation_plan(trace.sample_rate_hz(), target_rate_hz)?;
    let [h, p, heel] = trace.channels();
    (0..trace.len())
        .step_by(k)
        .enumerate()
        .map(|(i, s)| {
            Ok(PressureFrame::new(
                timestamp(i, period_ms)?,
                [quantize_adc(h[s]), quantize_adc(p[s]), quantize_adc(heel[s])],
            ))
        })
        .collect()
}

/// Streaming low-pass + decimation, equivalent to [`filter_trace`] followed
/// by [`decimate`] without holding the acquisition-rate trace in memory.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    coeffs: BiquadCoefficients,
    filters: Option<[Biquad; N_CHANNELS]>,
    factor: usize,
    period_ms: u32,
    consumed: usize,
    emitted: usize,
}

impl FrontEnd {
    pub fn new(sample_rate_hz: f64, cutoff_hz: f64, frame_rate_hz: f64) -> Result<Self> {
        let coeffs = design_lowpass(sample_rate_hz, cutoff_hz)?;
        let (factor, period_ms) = decimation_plan(sample_rate_hz, frame_rate_hz)?;
        Ok(Self {
            coeffs,
            filters: None,
            factor,
            period_ms,
            consumed: 0,
            emitted: 0,
        })
    }

    pub fn decimation_factor(&self) -> usize {
        self.factor
    }

    #[inline]
    pub fn push(&mut self, sample: [f64; N_CHANNELS]) -> Result<Option<PressureFrame>> {
        let coeffs = self.coeffs;
        let filters = self
            .filters
            .get_or_insert_with(|| sample.map(|x0| Biquad::steady_state(coeffs, x0)));
        let mut y = [0.0; N_CHANNELS];
        for ((out, f), x) in y.iter_mut().zip(filters.iter_mut()).zip(sample) {
            *out = f.process(x);
        }
        let keep = self.consumed % self.factor == 0;
        self.consumed += 1;
        if !keep {
            return Ok(None);
        }
        let frame = PressureFrame::new(timestamp(self.emitted, self.period_ms)?, y.map(quantize_adc));
        self.emitted += 1;
        Ok(Some(frame))
    }
}
