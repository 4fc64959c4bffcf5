#![allow(dead_code)]

use mtlb::dispersion::xi_threshold;
use mtlb::{spectral_data, BeamParams, MtlParams, Strictness};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(n, n) * (0.3 * n as f64);
    s * rng.random_range(0.3..3.0)
}

/// A strict system with `n ≤ max_n` lines and a beam inside the region
/// where one growing pair is guaranteed: either `u₀ ≤ v₁`, or `ξ` below
/// the threshold for the chosen `u₀`.
pub fn random_guaranteed_system<R: Rng>(rng: &mut R, max_n: usize) -> (MtlParams, BeamParams) {
    let n = rng.random_range(1..=max_n);
    let mtl = MtlParams::new(random_spd(rng, n), random_spd(rng, n), None, Strictness::Strict).unwrap();
    let spec = spectral_data(&mtl);
    let v1 = spec.v1().unwrap();
    let u0 = v1 * rng.random_range(0.3..3.0);
    let t = xi_threshold(&spec, u0).unwrap();
    let xi = if t.xi0.is_finite() {
        t.xi0 * rng.random_range(0.05..0.9)
    } else {
        rng.random_range(0.01..10.0)
    };
    (mtl, BeamParams::new(u0, xi).unwrap())
}

pub fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}
