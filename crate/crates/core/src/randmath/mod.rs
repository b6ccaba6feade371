//! Seedable sampling for the distributions the model needs, plus the Bessel
//! and GIG moment formulas used by the deterministic solvers.

mod dist;
mod special;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dist::{
    gig_mean, gig_mean_reciprocal, gig_mode, sample_dirichlet, sample_gamma, sample_gig,
    sample_inverse_gamma, sample_ln_gamma_unit, sample_normal, GigParams,
};
pub use special::{
    bessel_k, bessel_k_ratio, ln_bessel_k, ln_gamma, ln_gamma1p_coefficients, LN_GAMMA1P_TERMS,
};

/// A seeded ChaCha8 stream. Identical `(seed, stream)` pairs reproduce
/// identical draws; different stream ids give independent sequences.
#[derive(Clone, Debug)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh handle on another stream of the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
