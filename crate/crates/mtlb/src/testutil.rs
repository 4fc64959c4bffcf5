use nalgebra::DMatrix;
use rand::Rng;

/// Random well-conditioned symmetric positive definite matrix.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(n, n) * (0.3 * n as f64);
    s * rng.random_range(0.3..3.0)
}

pub fn random_spd_pair<R: Rng>(rng: &mut R, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (random_spd(rng, n), random_spd(rng, n))
}
