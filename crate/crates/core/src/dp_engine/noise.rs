//! Gaussian noising of clipped gradients.
//!
//! Every draw comes from a ChaCha8 stream keyed by `(seed, step, slot)`, where
//! `slot` is the example's position inside the effective batch (or
//! [`BATCH_SLOT`] for batch-level noise). Standard normals use
//! `rand_distr::StandardNormal` (ziggurat) over that stream. Scheduling and
//! worker count therefore cannot change which noise an example receives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::DpConfig;
use super::gradient::FlatGradient;
use crate::tensor::Scalar;

/// Stream slot reserved for noise added once to the accumulated sum.
pub const BATCH_SLOT: u64 = u64::MAX;

const NOISE_DOMAIN: u64 = 0x6e6f_6973_6500_0001;

/// Counter-keyed generator for one `(step, slot)` pair.
pub fn noise_rng(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&slot.to_le_bytes());
    key[24..].copy_from_slice(&NOISE_DOMAIN.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `dim` i.i.d. draws from N(0, std²).
pub fn gaussian_vector<T: Scalar>(dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect()
}

/// Adds N(0, σ²C²/|B|) to every coordinate of an already clipped
/// per-example gradient. Returns the noised gradient and the noise that was
/// added; with σ = 0 the input is returned untouched and no noise is drawn.
pub fn noise_per_example<T: Scalar>(
    mut clipped: FlatGradient<T>,
    cfg: &DpConfig,
    rng: &mut ChaCha8Rng,
) -> (FlatGradient<T>, Option<Vec<T>>) {
    if cfg.noise_multiplier == 0.0 {
        return (clipped, None);
    }
    let noise = gaussian_vector::<T>(clipped.dim(), cfg.per_example_noise_std(), rng);
    for (v, &n) in clipped.values.iter_mut().zip(&noise) {
        *v = *v + n;
    }
    (clipped, Some(noise))
}
