//! Seed derivation and random streams.
//!
//! Every random draw in a simulation comes from a ChaCha8 stream whose seed is
//! derived from `(master seed, purpose tag, round, client id)` with the
//! SplitMix64 finalizer. Streams never depend on execution order, so client
//! work can run concurrently and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator behind every stream.
pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags keep streams for different subsystems independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Split = 2,
    Partition = 3,
    Init = 4,
    Select = 5,
    Energy = 6,
    Train = 7,
    Noise = 8,
    MaskPair = 9,
    Fleet = 10,
    Support = 11,
}

/// `h = mix(master ^ φ); h = mix(h ^ tag); h = mix(h ^ round); mix(h ^ client)`
pub fn derive_seed(master: u64, purpose: Purpose, round: u64, client: u64) -> u64 {
    let mut h = mix64(master ^ GOLDEN);
    h = mix64(h ^ purpose as u64);
    h = mix64(h ^ round);
    mix64(h ^ client)
}

pub fn stream(master: u64, purpose: Purpose, round: u64, client: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(master, purpose, round, client))
}

/// Counter-based PRG: word `i` is `mix64(seed + (i + 1)·φ)`, i.e. the
/// SplitMix64 sequence started at `seed`. Random access, no state.
#[derive(Debug, Clone, Copy)]
pub struct CounterPrg {
    seed: u64,
}

impl CounterPrg {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    #[inline]
    pub fn word(&self, index: u64) -> u64 {
        mix64(self.seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn words(&self, len: usize) -> impl Iterator<Item = u64> + '_ {
        (0..len as u64).map(move |i| self.word(i))
    }
}
