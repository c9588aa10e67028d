//! Deterministic fan-out of one master seed into independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    GeneratorInit = 2,
    DiscriminatorInit = 3,
    Latent = 4,
    DiscriminatorNoise = 5,
    GeneratorNoise = 6,
    Batches = 7,
    Domain = 8,
    Probes = 9,
    DomainTest = 10,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for run `index` of a multi-run experiment.
pub fn run_seed(master: u64, index: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
