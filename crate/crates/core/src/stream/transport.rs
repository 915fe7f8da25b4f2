use std::io::{self, Read, Write};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};

use super::wire::{encode_frame, FRAME_BYTES};
use crate::signal::PressureFrame;
use crate::{Error, Result};

/// Smallest allowed queue between transport and classifier, in frames.
pub const MIN_QUEUE_FRAMES: usize = 256;

pub type Datagram = Vec<u8>;

/// Outbound side of a frame link.
pub trait FrameSink {
    fn send(&mut self, datagram: &[u8]) -> Result<()>;
    /// Signals end of stream.
    fn finish(&mut self) -> Result<()>;
}

/// Inbound side of a frame link. `Ok(None)` is end of stream.
pub trait FrameReceiver {
    fn recv(&mut self) -> Result<Option<Datagram>>;
}

/// Bounded in-process link; a full queue blocks the sender.
pub fn channel(capacity: usize) -> (ChannelSink, ChannelReceiver) {
    let (tx, rx) = bounded(capacity.max(MIN_QUEUE_FRAMES));
    (ChannelSink { tx: Some(tx) }, ChannelReceiver { rx })
}

pub struct ChannelSink {
    tx: Option<Sender<Datagram>>,
}

impl FrameSink for ChannelSink {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        let tx = self.tx.as_ref().ok_or_else(|| Error::Config("sink already finished".into()))?;
        tx.send(datagram.to_vec())
            .map_err(|_| Error::Io(io::Error::new(io::ErrorKind::BrokenPipe, "receiver closed")))
    }

    fn finish(&mut self) -> Result<()> {
        self.tx = None;
        Ok(())
    }
}

pub struct ChannelReceiver {
    rx: Receiver<Datagram>,
}

impl FrameReceiver for ChannelReceiver {
    fn recv(&mut self) -> Result<Option<Datagram>> {
        Ok(self.rx.recv().ok())
    }
}

/// Datagram sender; an empty datagram marks end of stream.
pub struct UdpSink {
    socket: UdpSocket,
    peer: SocketAddr,
}

impl UdpSink {
    pub fn connect(peer: impl ToSocketAddrs) -> Result<Self> {
        let peer = peer
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::invalid("destination resolves to no address"))?;
        let local: SocketAddr = if peer.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
        Ok(Self { socket: UdpSocket::bind(local)?, peer })
    }
}

impl FrameSink for UdpSink {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        self.socket.send_to(datagram, self.peer)?;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.socket.send_to(&[], self.peer)?;
        Ok(())
    }
}

pub struct UdpReceiver {
    socket: UdpSocket,
}

impl UdpReceiver {
    /// `idle_timeout` bounds the wait for each datagram; `None` waits forever.
    pub fn bind(addr: impl ToSocketAddrs, idle_timeout: Option<Duration>) -> Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(idle_timeout)?;
        Ok(Self { socket })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }
}

impl FrameReceiver for UdpReceiver {
    fn recv(&mut self) -> Result<Option<Datagram>> {
        // Oversized datagrams arrive truncated to this buffer and are then
        // rejected by length.
        let mut buf = [0u8; 64];
        let (n, _) = self.socket.recv_from(&mut buf)?;
        Ok((n > 0).then(|| buf[..n].to_vec()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// One frame per period on absolute deadlines, so jitter never
    /// accumulates.
    RealTime { rate_hz: f64 },
    Unpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeReport {
    pub frames_sent: u64,
    /// Worst delay past a frame's deadline (zero when unpaced).
    pub max_lateness_us: u64,
}

/// Sends every datagram, then signals end of stream.
pub fn serve<I, D>(datagrams: I, sink: &mut impl FrameSink, pacing: Pacing) -> Result<ServeReport>
where
    I: IntoIterator<Item = D>,
    D: AsRef<[u8]>,
{
    let period = match pacing {
        Pacing::RealTime { rate_hz } if rate_hz > 0.0 && rate_hz.is_finite() => Some(Duration::from_secs_f64(1.0 / rate_hz)),
        Pacing::RealTime { rate_hz } => return Err(Error::invalid(format!("rate {rate_hz} Hz"))),
        Pacing::Unpaced => None,
    };
    let start = Instant::now();
    let mut report = ServeReport::default();
    for (i, d) in datagrams.into_iter().enumerate() {
        if let Some(period) = period {
            let deadline = start + period.mul_f64(i as f64);
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            let late = Instant::now().saturating_duration_since(deadline).as_micros() as u64;
            report.max_lateness_us = report.max_lateness_us.max(late);
        }
        sink.send(d.as_ref())?;
        report.frames_sent += 1;
    }
    sink.finish()?;
    Ok(report)
}

/// Encodes frames with `seq` counting up from 0 and wrapping at 2^16.
pub fn encode_session(frames: &[PressureFrame]) -> Result<Vec<[u8; FRAME_BYTES]>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| Ok(encode_frame(f, i as u16)?))
        .collect()
}

/// Splits a `.skl` log into frames without decoding them.
pub fn read_log(mut reader: impl Read) -> Result<Vec<[u8; FRAME_BYTES]>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % FRAME_BYTES != 0 {
        return Err(Error::invalid(format!(
            "log length {} is not a multiple of {FRAME_BYTES}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(FRAME_BYTES)
        .map(|c| c.try_into().expect("exact chunk"))
        .collect())
}

pub fn write_log(frames: &[[u8; FRAME_BYTES]], mut writer: impl Write) -> Result<()> {
    for f in frames {
        writer.write_all(f)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::decode_frame;

    fn session(n: usize) -> Vec<PressureFrame> {
        (0..n).map(|i| PressureFrame::new((i * 10) as u32, [(i % 4096) as u16, 7, 9])).collect()
    }

    #[test]
    fn seq_wraps() {
        let enc = encode_session(&session(70_000)).unwrap();
        assert_eq!(decode_frame(&enc[65_535]).unwrap().seq, 65_535);
        assert_eq!(decode_frame(&enc[65_536]).unwrap().seq, 0);
        assert_eq!(decode_frame(&enc[69_999]).unwrap().seq, 4_463);
    }

    #[test]
    fn log_round_trip() {
        let enc = encode_session(&session(100)).unwrap();
        let mut buf = Vec::new();
        write_log(&enc, &mut buf).unwrap();
        assert_eq!(buf.len(), 1400);
        assert_eq!(read_log(buf.as_slice()).unwrap(), enc);
        assert!(read_log(&buf[..1399]).is_err());
    }

    #[test]
    fn channel_replay_is_verbatim() {
        let enc = encode_session(&session(300)).unwrap();
        // Large enough to hold the whole session without a consumer.
        let (mut tx, mut rx) = channel(512);
        let sent = serve(&enc, &mut tx, Pacing::Unpaced).unwrap();
        assert_eq!(sent.frames_sent, 300);
        let mut got = Vec::new();
        while let Some(d) = rx.recv().unwrap() {
            got.push(d);
        }
        assert_eq!(got.len(), 300);
        assert!(got.iter().zip(&enc).all(|(a, b)| a[..] == b[..]));
    }

    #[test]
    fn udp_round_trip() {
        let mut rx = UdpReceiver::bind("127.0.0.1:0", Some(Duration::from_secs(5))).unwrap();
        let mut tx = UdpSink::connect(rx.local_addr().unwrap()).unwrap();
        let enc = encode_session(&session(20)).unwrap();
        let handle = std::thread::spawn(move || serve(enc, &mut tx, Pacing::RealTime { rate_hz: 1000.0 }));
        let mut n = 0;
        while let Some(d) = rx.recv().unwrap() {
            assert_eq!(decode_frame(&d).unwrap().seq, n);
            n += 1;
        }
        assert_eq!(n, 20);
        handle.join().unwrap().unwrap();
    }

    #[test]
    fn real_time_pacing_holds_deadlines() {
        let enc = encode_session(&session(30)).unwrap();
        let (mut tx, rx) = channel(MIN_QUEUE_FRAMES);
        let start = Instant::now();
        let report = serve(&enc, &mut tx, Pacing::RealTime { rate_hz: 100.0 }).unwrap();
        let elapsed = start.elapsed();
        drop(rx);
        assert!(elapsed >= Duration::from_millis(290), "{elapsed:?}");
        assert!(elapsed < Duration::from_millis(400), "{elapsed:?}");
        assert_eq!(report.frames_sent, 30);
    }
}
