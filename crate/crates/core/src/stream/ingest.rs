use std::fmt;
use std::str::FromStr;

use super::ring::RingBuffer50;
use super::wire::{decode_frame, WireFrame};
use crate::infer::InferenceEngine;
use crate::{Error, Label, Result, BLOCK_LEN, N_CLASSES};

/// What to do with the partial block when a sequence gap is seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    /// Drop the partial block and restart at the next frame.
    #[default]
    Discard,
    /// Repeat the last good frame for up to `max_frames` missing frames;
    /// longer gaps fall back to discarding.
    FillForward { max_frames: usize },
}

impl FromStr for GapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discard" => Ok(Self::Discard),
            "fill-forward" => Ok(Self::FillForward { max_frames: BLOCK_LEN }),
            _ => Err(Error::invalid(format!("gap policy {s:?} (discard | fill-forward)"))),
        }
    }
}

/// Motor policy: vibrate on any non-neutral posture.
pub fn should_vibrate(label: Label) -> bool {
    label != Label::Neutral
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackEvent {
    /// Timestamp of the block's last frame.
    pub timestamp_ms: u32,
    pub label: Label,
    pub probabilities: [f64; N_CLASSES],
    pub vibrate: bool,
}

impl fmt::Display for FeedbackEvent {
    /// `timestamp_ms,label,p0,p1,p2,vibrate`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [p0, p1, p2] = self.probabilities;
        write!(f, "{},{},{p0:.6},{p1:.6},{p2:.6},{}", self.timestamp_ms, self.label, self.vibrate)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub frames_received: u64,
    pub decode_errors: u64,
    pub gaps: u64,
    pub frames_missing: u64,
    pub frames_filled: u64,
    pub blocks_discarded: u64,
    pub events_emitted: u64,
    /// Set when the transport failed and ingestion stopped early.
    pub transport_error: Option<String>,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frames={} decode_errors={} gaps={} missing={} filled={} blocks_discarded={} events={}",
            self.frames_received,
            self.decode_errors,
            self.gaps,
            self.frames_missing,
            self.frames_filled,
            self.blocks_discarded,
            self.events_emitted
        )?;
        if let Some(e) = &self.transport_error {
            write!(f, " transport_error={e:?}")?;
        }
        Ok(())
    }
}

/// Single-threaded core of the streaming classifier: frames in, events out.
pub struct Ingestor {
    engine: InferenceEngine,
    buffer: RingBuffer50,
    policy: GapPolicy,
    expected_seq: Option<u16>,
    last: Option<WireFrame>,
    report: IngestReport,
}

impl Ingestor {
    pub fn new(engine: InferenceEngine, policy: GapPolicy) -> Self {
        Self {
            engine,
            buffer: RingBuffer50::new(),
            policy,
            expected_seq: None,
            last: None,
            report: IngestReport::default(),
        }
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }

    /// Decodes one datagram. Malformed input is counted and skipped.
    pub fn push_bytes(&mut self, bytes: &[u8], events: &mut Vec<FeedbackEvent>) -> Result<()> {
        match decode_frame(bytes) {
            Ok(wf) => self.push(wf, events),
            Err(_) => {
                self.report.decode_errors += 1;
                Ok(())
            }
        }
    }

    pub fn push(&mut self, wf: WireFrame, events: &mut Vec<FeedbackEvent>) -> Result<()> {
        self.report.frames_received += 1;
        if let Some(expected) = self.expected_seq {
            if wf.seq != expected {
                self.on_gap(wf.seq.wrapping_sub(expected), events)?;
            }
        }
        self.expected_seq = Some(wf.seq.wrapping_add(1));
        self.append(wf, events)
    }

    fn on_gap(&mut self, missing: u16, events: &mut Vec<FeedbackEvent>) -> Result<()> {
        self.report.gaps += 1;
        self.report.frames_missing += u64::from(missing);
        match (self.policy, self.last) {
            (GapPolicy::FillForward { max_frames }, Some(last)) if usize::from(missing) <= max_frames => {
                for _ in 0..missing {
                    self.report.frames_filled += 1;
                    self.append(last, events)?;
                }
            }
            _ => {
                if !self.buffer.is_empty() {
                    self.report.blocks_discarded += 1;
                }
                self.buffer.clear();
            }
        }
        Ok(())
    }

    fn append(&mut self, wf: WireFrame, events: &mut Vec<FeedbackEvent>) -> Result<()> {
        self.buffer.push([wf.hallux, wf.pinky, wf.heel]);
        self.last = Some(wf);
        if let Some(features) = self.buffer.features() {
            self.buffer.clear();
            let r = self.engine.infer(&features)?;
            self.report.events_emitted += 1;
            events.push(FeedbackEvent {
                timestamp_ms: wf.timestamp_ms,
                label: r.label,
                probabilities: r.probabilities,
                vibrate: should_vibrate(r.label),
            });
        }
        Ok(())
    }
}
