//! Seeded randomness. All stochastic inputs in the crate flow through
//! [`seeded`] so that a single integer reproduces a run bit for bit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per trial.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = seeded(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.next_u64()
}

/// Circularly-symmetric complex normal sample with `E|z|² = 1`.
pub fn complex_normal<R: RngCore>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * core::f64::consts::FRAC_1_SQRT_2
}

pub fn real_normal<R: RngCore>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn complex_normal_vector<R: RngCore>(rng: &mut R, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| complex_normal(rng))
}

/// Row-major fill, so the first `m` rows of a larger draw equal a smaller draw
/// from the same seed.
pub fn complex_normal_matrix<R: RngCore>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = complex_normal(rng);
        }
    }
    m
}
