//! Keyed random streams.
//!
//! Every random draw in a run comes from a stream identified by
//! `(master_seed, role, node, iteration)`. The ChaCha key for a stream is a
//! SplitMix64 hash of that tuple, so a stream can be opened on any thread, in
//! any order, and always yields the same values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamRole {
    /// ξ_t, shared by every node at iteration t.
    SharedMomentum = 1,
    /// ξ_t^(c), private to node c.
    PrivateMomentum = 2,
    /// Gradient noise seeds ξ_k, ξ_{k+1/2} of node c at iteration t.
    GradientNoise = 3,
    /// Initial-state draws.
    Initialization = 4,
    /// Free-form streams for experiments and tests.
    Auxiliary = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream `(master_seed, role, node, iteration)`.
pub fn stream(master_seed: u64, role: StreamRole, node: u64, iteration: u64) -> Stream {
    let mut h = splitmix64(master_seed);
    for word in [role as u64, node, iteration] {
        h = splitmix64(h ^ word.wrapping_mul(GOLDEN));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Seed of replicate `r` in a seed ladder rooted at `base`.
pub fn replicate_seed(base: u64, replicate: u64) -> u64 {
    splitmix64(base ^ splitmix64(replicate.wrapping_add(0xA5A5_A5A5)))
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    fill_standard_normal(rng, &mut v);
    v
}
