//! Seeded randomness helpers shared by heuristics and tests.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmat::CMat;

/// Deterministic generator used everywhere randomness is needed. All
/// published quantities are reproducible from the seed alone.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal complex scalar.
pub fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    // Box-Muller; two uniforms per component.
    let mut gauss = || {
        let u1: f64 = rng.random::<f64>().max(1e-16);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    C64::new(gauss(), gauss())
}

pub fn random_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = random_c64(rng);
        }
    }
    m
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    let g = random_cmat(rng, n, n);
    g.add(&g.adjoint()).scale(crate::cmat::cr(0.5))
}

pub fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n).map(|_| random_c64(rng)).collect();
    crate::cmat::vec_normalize(&mut v);
    v
}
