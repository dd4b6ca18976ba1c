//! Seeded random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the run
//! seed plus a stream id, so scans can be generated in any order (or in
//! parallel) and still reproduce bit-for-bit.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Which physical measurement a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Measurement = 0,
    Reference = 1,
}

/// What a draw is used for within one scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Scrambler = 0,
    Perturbation = 1,
    Detector = 2,
    Oracle = 3,
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, index: u64, role: Role, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 4) | ((role as u64) << 2) | purpose as u64);
    rng
}
