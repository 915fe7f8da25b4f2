//! 14-byte little-endian sensor frame.
//!
//! ```text
//! 0..2   magic "SK"
//! 2..4   seq           u16, +1 per frame, wrapping
//! 4..8   timestamp_ms  u32
//! 8..10  hallux        u16 <= 4095
//! 10..12 pinky         u16 <= 4095
//! 12..14 heel          u16 <= 4095
//! ```

use crate::signal::PressureFrame;
use crate::ADC_MAX;

pub const FRAME_BYTES: usize = 14;
pub const MAGIC: [u8; 2] = *b"SK";
const CHANNEL_OFFSET: usize = 8;

/// Decode failure; `offset` is the first byte that could not be accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("frame truncated at byte {offset}: got {len} of {FRAME_BYTES} bytes")]
    Short { offset: usize, len: usize },
    #[error("{len}-byte datagram: unexpected data from byte {offset}")]
    Trailing { offset: usize, len: usize },
    #[error("bad magic {found:02x?} at byte {offset}")]
    BadMagic { offset: usize, found: [u8; 2] },
    #[error("channel value {value} exceeds {ADC_MAX} at byte {offset}")]
    OutOfRange { offset: usize, value: u16 },
}

impl ProtocolError {
    pub fn offset(&self) -> usize {
        match *self {
            Self::Short { offset, .. }
            | Self::Trailing { offset, .. }
            | Self::BadMagic { offset, .. }
            | Self::OutOfRange { offset, .. } => offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireFrame {
    pub seq: u16,
    pub timestamp_ms: u32,
    pub hallux: u16,
    pub pinky: u16,
    pub heel: u16,
}

impl WireFrame {
    pub fn new(frame: &PressureFrame, seq: u16) -> Self {
        Self {
            seq,
            timestamp_ms: frame.timestamp_ms,
            hallux: frame.hallux,
            pinky: frame.pinky,
            heel: frame.heel,
        }
    }

    pub fn frame(&self) -> PressureFrame {
        PressureFrame::new(self.timestamp_ms, [self.hallux, self.pinky, self.heel])
    }

    pub fn encode(&self) -> Result<[u8; FRAME_BYTES], ProtocolError> {
        let mut b = [0u8; FRAME_BYTES];
        b[..2].copy_from_slice(&MAGIC);
        b[2..4].copy_from_slice(&self.seq.to_le_bytes());
        b[4..8].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        for (i, v) in [self.hallux, self.pinky, self.heel].into_iter().enumerate() {
            let offset = CHANNEL_OFFSET + 2 * i;
            if v > ADC_MAX {
                return Err(ProtocolError::OutOfRange { offset, value: v });
            }
            b[offset..offset + 2].copy_from_slice(&v.to_le_bytes());
        }
        Ok(b)
    }
}

pub fn encode_frame(frame: &PressureFrame, seq: u16) -> Result<[u8; FRAME_BYTES], ProtocolError> {
    WireFrame::new(frame, seq).encode()
}

/// Accepts exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, ProtocolError> {
    let len = bytes.len();
    if len >= 2 && bytes[..2] != MAGIC {
        return Err(ProtocolError::BadMagic { offset: 0, found: [bytes[0], bytes[1]] });
    }
    if len == 1 && bytes[0] != MAGIC[0] {
        return Err(ProtocolError::BadMagic { offset: 0, found: [bytes[0], 0] });
    }
    if len < FRAME_BYTES {
        return Err(ProtocolError::Short { offset: len, len });
    }
    if len > FRAME_BYTES {
        return Err(ProtocolError::Trailing { offset: FRAME_BYTES, len });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let mut ch = [0u16; 3];
    for (i, slot) in ch.iter_mut().enumerate() {
        let offset = CHANNEL_OFFSET + 2 * i;
        *slot = u16_at(offset);
        if *slot > ADC_MAX {
            return Err(ProtocolError::OutOfRange { offset, value: *slot });
        }
    }
    Ok(WireFrame {
        seq: u16_at(2),
        timestamp_ms: u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")),
        hallux: ch[0],
        pinky: ch[1],
        heel: ch[2],
    })
}
