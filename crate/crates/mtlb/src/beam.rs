//! The isolated beam: its double-root dispersion `(ω − u₀k)² = 0`, the
//! one-parameter perturbation `ω² − 2αu₀ωk + u₀²k² = 0`, and the resulting
//! stability and PDE-type classification.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `|α² − 1|` below this counts as the degenerate (double-root) case.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPerturbation {
    pub alpha_g: f64,
    pub u0: f64,
    pub omega: f64,
}

impl BeamPerturbation {
    pub fn new(alpha_g: f64, u0: f64, omega: f64) -> Result<Self> {
        if !(alpha_g.is_finite() && u0.is_finite() && omega.is_finite()) {
            return Err(Error::NonFinite("beam perturbation".into()));
        }
        if u0 <= 0.0 || omega <= 0.0 {
            return Err(Error::InvalidParameter("u0 and omega must be positive".into()));
        }
        Ok(BeamPerturbation { alpha_g, u0, omega })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamRoots {
    pub k_plus: Complex64,
    pub k_minus: Complex64,
    pub degenerate: bool,
}

/// `k± = (ω/u₀)(α ± √(α² − 1))`.
pub fn beam_dispersion_roots(p: &BeamPerturbation) -> BeamRoots {
    let a = p.alpha_g;
    let disc = a * a - 1.0;
    let scale = p.omega / p.u0;
    let degenerate = disc.abs() < DEGENERACY_TOL;
    let s = if degenerate {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(disc, 0.0).sqrt()
    };
    BeamRoots {
        k_plus: scale * (a + s),
        k_minus: scale * (a - s),
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloquetClass {
    Stable,
    Unstable,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetResult {
    pub class: FloquetClass,
    pub rho_plus: Complex64,
    pub rho_minus: Complex64,
}

/// Multipliers `ρ± = exp(i k± T)` over one period `T`.
pub fn floquet_classify(p: &BeamPerturbation, period: f64) -> Result<FloquetResult> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidParameter("period must be positive".into()));
    }
    let r = beam_dispersion_roots(p);
    let rho = |k: Complex64| (Complex64::i() * k * period).exp();
    let class = if r.degenerate {
        FloquetClass::Degenerate
    } else if p.alpha_g * p.alpha_g < 1.0 {
        FloquetClass::Unstable
    } else {
        FloquetClass::Stable
    };
    Ok(FloquetResult { class, rho_plus: rho(r.k_plus), rho_minus: rho(r.k_minus) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeClass {
    Hyperbolic,
    Parabolic,
    Elliptic,
}

/// Type of `(∂ₜ² + 2αu₀∂ₜ∂_z + u₀²∂_z²)q = 0`. Only the elliptic case admits
/// time-harmonic solutions growing exponentially in space.
pub fn pde_class(alpha_g: f64) -> PdeClass {
    let disc = alpha_g * alpha_g - 1.0;
    if disc.abs() < DEGENERACY_TOL {
        PdeClass::Parabolic
    } else if disc > 0.0 {
        PdeClass::Hyperbolic
    } else {
        PdeClass::Elliptic
    }
}

/// Time-averaged beam energy density and flux at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEnergyFlux {
    pub h_b: f64,
    pub s_b: f64,
}

/// Averages of `H_b = ½q_t² − ½u₀²q_z²` and `S_b = u₀q_t(q_t + u₀q_z)` from
/// the complex amplitudes of `q_t` and `q_z`.
pub fn beam_energy_flux_from_amplitudes(qt: Complex64, qz: Complex64, u0: f64) -> BeamEnergyFlux {
    let avg = |a: Complex64, b: Complex64| 0.5 * (a.conj() * b).re;
    BeamEnergyFlux {
        h_b: 0.5 * avg(qt, qt) - 0.5 * u0 * u0 * avg(qz, qz),
        s_b: u0 * avg(qt, qt + u0 * qz),
    }
}

/// For `q = Re{q̂ e^{i(kz − ωt)}}` at position `z`.
pub fn beam_energy_flux(q_hat: Complex64, omega: f64, u0: f64, k: Complex64, z: f64) -> BeamEnergyFlux {
    let phase = (Complex64::i() * k * z).exp();
    let qt = -Complex64::i() * omega * q_hat * phase;
    let qz = Complex64::i() * k * q_hat * phase;
    beam_energy_flux_from_amplitudes(qt, qz, u0)
}

/// For the secular mode `q = Re{q̂ z e^{i(kz − ωt)}}` with `k = ω/u₀`.
pub fn secular_beam_energy_flux(q_hat: Complex64, omega: f64, u0: f64, z: f64) -> BeamEnergyFlux {
    let k = omega / u0;
    let phase = Complex64::new(0.0, k * z).exp();
    let qt = -Complex64::i() * omega * z * q_hat * phase;
    let qz = (1.0 + Complex64::i() * k * z) * q_hat * phase;
    beam_energy_flux_from_amplitudes(qt, qz, u0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pert(a: f64) -> BeamPerturbation {
        BeamPerturbation::new(a, 1.0, 1.0).unwrap()
    }

    #[test]
    fn root_examples() {
        let r = beam_dispersion_roots(&pert(1.0));
        assert!(r.degenerate);
        assert_eq!(r.k_plus, Complex64::new(1.0, 0.0));
        assert_eq!(r.k_minus, Complex64::new(1.0, 0.0));
        let r = beam_dispersion_roots(&pert(0.0));
        assert_relative_eq!((r.k_plus - Complex64::i()).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((r.k_minus + Complex64::i()).norm(), 0.0, epsilon = 1e-15);
        let r = beam_dispersion_roots(&pert(2.0));
        assert_relative_eq!(r.k_plus.re, 2.0 + 3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(r.k_minus.re, 2.0 - 3f64.sqrt(), epsilon = 1e-14);
        assert_eq!(r.k_plus.im, 0.0);
    }

    #[test]
    fn floquet_examples() {
        assert_eq!(floquet_classify(&pert(1.0), 1.0).unwrap().class, FloquetClass::Degenerate);
        let f = floquet_classify(&pert(0.5), 1.0).unwrap();
        assert_eq!(f.class, FloquetClass::Unstable);
        assert_relative_eq!(f.rho_plus.norm() * f.rho_minus.norm(), 1.0, epsilon = 1e-12);
        assert!(f.rho_plus.norm() < 1.0 && f.rho_minus.norm() > 1.0);
        let f = floquet_classify(&pert(2.0), 1.0).unwrap();
        assert_eq!(f.class, FloquetClass::Stable);
        assert_relative_eq!(f.rho_plus.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.rho_minus.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pde_examples() {
        assert_eq!(pde_class(1.0), PdeClass::Parabolic);
        assert_eq!(pde_class(-1.0), PdeClass::Parabolic);
        assert_eq!(pde_class(3.0), PdeClass::Hyperbolic);
        assert_eq!(pde_class(0.0), PdeClass::Elliptic);
    }

    #[test]
    fn flux_examples() {
        let f = beam_energy_flux(Complex64::new(1.0, 0.0), 1.3, 0.7, Complex64::new(1.3 / 0.7, 0.0), 2.5);
        assert!(f.s_b.abs() < 1e-15);
        for z in [0.0, 0.3, 5.0, 40.0] {
            assert!(secular_beam_energy_flux(Complex64::new(0.4, -1.1), 2.0, 0.5, z).s_b.abs() < 1e-12 * (1.0 + z));
        }
        let f = beam_energy_flux(Complex64::new(0.0, 0.0), 1.0, 1.0, Complex64::new(0.3, -0.2), 1.0);
        assert_eq!((f.h_b, f.s_b), (0.0, 0.0));
    }

    /// `q = f(z − u₀t) + t·g(z − u₀t)` solves `(∂ₜ + u₀∂_z)²q = 0`; the
    /// centered-difference residual of `∂ₜH_b + ∂_zS_b` should fall as `h²`.
    #[test]
    fn discrete_conservation_is_second_order() {
        let u0 = 0.8;
        let f = |s: f64| (1.3 * s).sin() + 0.2 * s * s;
        let g = |s: f64| (0.7 * s).cos();
        let q = |z: f64, t: f64| f(z - u0 * t) + t * g(z - u0 * t);
        let residual = |h: f64| {
            let (z0, t0) = (0.4, 0.9);
            let d = 1e-4;
            let qt = |z: f64, t: f64| (q(z, t + d) - q(z, t - d)) / (2.0 * d);
            let qz = |z: f64, t: f64| (q(z + d, t) - q(z - d, t)) / (2.0 * d);
            let hb = |z: f64, t: f64| 0.5 * qt(z, t).powi(2) - 0.5 * u0 * u0 * qz(z, t).powi(2);
            let sb = |z: f64, t: f64| u0 * qt(z, t) * (qt(z, t) + u0 * qz(z, t));
            (hb(z0, t0 + h) - hb(z0, t0 - h)) / (2.0 * h) + (sb(z0 + h, t0) - sb(z0 - h, t0)) / (2.0 * h)
        };
        let (r1, r2) = (residual(0.04).abs(), residual(0.02).abs());
        let order = (r1 / r2).log2();
        assert!(order > 1.8, "order {order}, residuals {r1:e} {r2:e}");
    }

    proptest! {
        #[test]
        fn root_product_is_constant(a in -5.0f64..5.0, u0 in 0.1f64..10.0, w in 0.1f64..10.0) {
            let r = beam_dispersion_roots(&BeamPerturbation::new(a, u0, w).unwrap());
            let prod = r.k_plus * r.k_minus;
            let want = w * w / (u0 * u0);
            prop_assert!((prod - want).norm() <= 1e-12 * want.max(1.0) * (1.0 + a * a));
        }

        #[test]
        fn unstable_iff_elliptic(a in -3.0f64..3.0) {
            let f = floquet_classify(&pert(a), 1.0).unwrap();
            prop_assert_eq!(f.class == FloquetClass::Unstable, pde_class(a) == PdeClass::Elliptic);
        }
    }
}
