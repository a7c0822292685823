//! Counter-based keyed random number streams.
//!
//! Every random draw in this crate is made from an [`RngStream`] keyed by a
//! master seed and a [`StreamKey`] naming the logical entity being updated
//! (chain, iteration, entity index). Two streams with the same key produce
//! the same sequence no matter how work is scheduled across threads, which
//! is what makes parallel sweeps bit-reproducible.

use rand::RngCore;

/// Logical address of a random stream: which chain, which iteration, which
/// entity (observation row, person, component, ...) is being updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub chain: u64,
    pub iteration: u64,
    pub entity: u64,
}

impl StreamKey {
    pub fn new(chain: u64, iteration: u64, entity: u64) -> Self {
        StreamKey { chain, iteration, entity }
    }
}

/// A splittable counter-based generator. The stream id is a hash of the
/// seed and key; output block `n` is a bijective mix of (id, n), so distinct
/// keys give statistically independent sequences.
#[derive(Clone, Debug)]
pub struct RngStream {
    id: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[inline]
fn mix64(mut x: u64) -> u64 {
    // SplitMix64 finalizer.
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

#[inline]
fn combine(h: u64, word: u64) -> u64 {
    // Injective in `word` for fixed `h`, then fully mixed.
    mix64(h.rotate_left(23) ^ word.wrapping_mul(0xff51afd7ed558ccd).wrapping_add(GOLDEN))
}

impl RngStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        let mut h = mix64(seed ^ 0x6a09e667f3bcc909);
        h = combine(h, key.chain);
        h = combine(h, key.iteration);
        h = combine(h, key.entity);
        RngStream { id: h, counter: 0 }
    }

    /// Derive an independent child stream; used when one keyed entity needs
    /// several logically separate draw sequences.
    pub fn substream(&self, label: u64) -> Self {
        RngStream { id: combine(self.id, label), counter: 0 }
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn next_unit_open(&mut self) -> f64 {
        (((self.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9007199254740992.0)
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.id ^ self.counter.wrapping_mul(GOLDEN))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
