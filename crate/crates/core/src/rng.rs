//! Counter-based Brownian increment streams.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, stream_id)`. The
//! generator is a block cipher in counter mode, so the increment drawn for a
//! given `(seed, stream_id, step)` never depends on which worker produced it
//! or in which order paths were scheduled. Each fine step consumes exactly
//! `noise_dim` standard normals in component order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer, used to expand a 64-bit seed into a cipher key.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Gaussian source for one path.
#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
        rng.set_stream(stream_id);
        Self { rng }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Writes the Brownian increment over a coarse step of length `dt` built
    /// from `substeps` fine increments of length `dt / substeps`.
    ///
    /// With `substeps = 1` this is `sqrt(dt) * Z`. Grids that nest (dt and
    /// 2·dt with 1 and 2 substeps) see the same underlying normals, which is
    /// what makes dt-refinement comparisons pathwise coupled.
    pub fn increment(&mut self, dt: f64, substeps: u32, out: &mut [f64]) {
        let scale = (dt / f64::from(substeps)).sqrt();
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..substeps {
            for v in out.iter_mut() {
                *v += scale * self.standard_normal();
            }
        }
    }
}
