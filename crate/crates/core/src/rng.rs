//! Reproducible random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the
//! scenario seed, the realization index and a purpose tag, so results do not
//! depend on the order in which realizations or schemes are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for independent streams within one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    Incumbents = 2,
    Links = 3,
    Samples = 4,
    Devices = 5,
    Scheduling = 6,
    Clustering = 7,
    ReferencePower = 8,
    Calibration = 9,
    Misc = 10,
}

/// Stream for `(seed, realization, purpose)`.
pub fn stream(seed: u64, realization: u64, purpose: Purpose) -> ChaCha8Rng {
    sub_stream(seed, realization, purpose, 0)
}

/// Stream for `(seed, realization, purpose, index)`; `index` separates e.g.
/// schemes or Monte Carlo chains that need their own stream.
pub fn sub_stream(seed: u64, realization: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, purpose as u64));
    rng.set_stream(mix(realization, index));
    rng
}

/// Counter-based generator for one energy sample: the draws for
/// `(key, k, m, i)` do not depend on which other samples were generated, so
/// every scheme observes the same fading and noise realizations.
#[derive(Debug, Clone)]
pub struct SampleRng {
    state: u64,
}

impl SampleRng {
    pub fn new(key: u64, bs: usize, channel: usize, iteration: usize) -> Self {
        let s = mix(mix(key, bs as u64), mix(channel as u64, iteration as u64));
        SampleRng { state: s }
    }
}

impl rand::RngCore for SampleRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        // splitmix64
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Key for counter-based sample streams of one realization.
pub fn sample_key(seed: u64, realization: u64) -> u64 {
    mix(mix(seed, Purpose::Samples as u64), realization)
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
