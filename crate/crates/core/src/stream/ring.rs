use crate::{BLOCK_LEN, N_CHANNELS};

/// Three 50-slot circular buffers sharing one write position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingBuffer50 {
    slots: [[u16; BLOCK_LEN]; N_CHANNELS],
    head: usize,
    fill: usize,
}

impl Default for RingBuffer50 {
    fn default() -> Self {
        Self::new()
    }
}

impl RingBuffer50 {
    pub const CAPACITY: usize = BLOCK_LEN;

    pub fn new() -> Self {
        Self {
            slots: [[0; BLOCK_LEN]; N_CHANNELS],
            head: 0,
            fill: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    pub fn is_full(&self) -> bool {
        self.fill == BLOCK_LEN
    }

    /// Appends one sample per channel; when full the oldest is overwritten.
    pub fn push(&mut self, values: [u16; N_CHANNELS]) {
        let pos = (self.head + self.fill) % BLOCK_LEN;
        for (ch, v) in self.slots.iter_mut().zip(values) {
            ch[pos] = v;
        }
        if self.is_full() {
            self.head = (self.head + 1) % BLOCK_LEN;
        } else {
            self.fill += 1;
        }
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.fill = 0;
    }

    /// Channel-major oldest-first features, `None` until every slot is filled.
    pub fn features(&self) -> Option<Vec<f64>> {
        if !self.is_full() {
            return None;
        }
        Some(
            self.slots
                .iter()
                .flat_map(|ch| (0..BLOCK_LEN).map(move |i| f64::from(ch[(self.head + i) % BLOCK_LEN])))
                .collect(),
        )
    }
}
