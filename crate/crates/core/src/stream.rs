//! Counter-keyed random streams.
//!
//! Every stochastic draw in the solver comes from a ChaCha stream selected by
//! `(master seed, domain, index)`. The index is the sample or seed position in
//! a batch, so a batch produces the same numbers however it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the stream families so that stages sharing one master seed never
/// reuse each other's numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    CcdSample = 1,
    PolishSeed = 2,
    Replicate = 3,
    Reference = 4,
}

pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
