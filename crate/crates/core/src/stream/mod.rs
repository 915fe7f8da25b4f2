//! Sensor link emulation and live classification.
//!
//! A source sends 14-byte frames at 100 Hz over a datagram socket or an
//! in-process channel. The classifier side fills a [`RingBuffer50`], scores
//! each complete non-overlapping block and emits one [`FeedbackEvent`] per
//! block. A sequence gap empties the partial block so no event ever mixes
//! frames from both sides of a drop.

mod ingest;
mod ring;
mod transport;
mod wire;

use std::thread;

use crossbeam_channel::bounded;

use crate::compiler::{FlatEnsemble, PartitionPlan};
use crate::infer::InferenceEngine;
use crate::Result;

pub use ingest::{should_vibrate, FeedbackEvent, GapPolicy, IngestReport, Ingestor};
pub use ring::RingBuffer50;
pub use transport::{
    channel, encode_session, read_log, serve, write_log, ChannelReceiver, ChannelSink, Datagram, FrameReceiver,
    FrameSink, Pacing, ServeReport, UdpReceiver, UdpSink, MIN_QUEUE_FRAMES,
};
pub use wire::{decode_frame, encode_frame, ProtocolError, WireFrame, FRAME_BYTES, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    pub gap_policy: GapPolicy,
    /// Frames buffered between the transport reader and the classifier.
    pub queue_frames: usize,
    /// Events buffered between the classifier and the consumer.
    pub queue_events: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            gap_policy: GapPolicy::Discard,
            queue_frames: 1024,
            queue_events: 64,
        }
    }
}

/// Reads `receiver` to end of stream on one thread, classifies on a second,
/// and hands each event to `on_event` on the calling thread.
///
/// Queues are bounded and block when full, so frames are only lost if the
/// transport itself overflows. A transport error ends the run and is recorded
/// in the returned report.
pub fn classify_stream<R, F>(
    receiver: R,
    flat: &FlatEnsemble,
    plan: &PartitionPlan,
    config: &StreamConfig,
    mut on_event: F,
) -> Result<IngestReport>
where
    R: FrameReceiver + Send,
    F: FnMut(&FeedbackEvent) -> Result<()>,
{
    let engine = InferenceEngine::new(flat, plan)?;
    let (frame_tx, frame_rx) = bounded::<Datagram>(config.queue_frames.max(MIN_QUEUE_FRAMES));
    let (event_tx, event_rx) = bounded::<FeedbackEvent>(config.queue_events.max(1));
    let policy = config.gap_policy;

    thread::scope(|s| {
        let reader = s.spawn(move || -> Option<String> {
            let mut receiver = receiver;
            loop {
                match receiver.recv() {
                    Ok(Some(d)) => {
                        if frame_tx.send(d).is_err() {
                            return None;
                        }
                    }
                    Ok(None) => return None,
                    Err(e) => return Some(e.to_string()),
                }
            }
        });
        let classifier = s.spawn(move || -> Result<IngestReport> {
            let mut ingestor = Ingestor::new(engine, policy);
            let mut events = Vec::new();
            for d in frame_rx {
                ingestor.push_bytes(&d, &mut events)?;
                for e in events.drain(..) {
                    if event_tx.send(e).is_err() {
                        return Ok(ingestor.into_report());
                    }
                }
            }
            Ok(ingestor.into_report())
        });

        let mut consumer_result = Ok(());
        for e in &event_rx {
            if let Err(err) = on_event(&e) {
                consumer_result = Err(err);
                break;
            }
        }
        // Unblocks the classifier if the consumer stopped early.
        drop(event_rx);
        let report = classifier.join().expect("classifier thread panicked");
        let transport_error = reader.join().expect("reader thread panicked");
        consumer_result?;
        let mut report = report?;
        report.transport_error = transport_error;
        Ok(report)
    })
}
