//! The single-line case in wavenumber form, its cubic small-δ approximation,
//! and reductions of multi-line systems to an equivalent single line.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dispersion::{solve_dispersion, RootKind};
use crate::error::{Error, Result};
use crate::mtl::{spectral_data, BeamParams, MtlParams, Strictness};
use crate::poly::Poly;
use crate::sweep::linear_fit;

/// Relative tolerance on `‖LC − v₁⁻²I‖` for the equivalent-line reduction.
pub const REDUCTION_RTOL: f64 = 1e-10;

/// Wavenumber form of the single-line dispersion relation, highest power
/// of `k` first:
/// `u₀²k⁴ − 2u₀ωk³ + (1 + L/ξ − LCu₀²)ω²k² + 2LCu₀ω³k − LCω⁴`.
pub fn pierce_quartic(l: f64, c: f64, u0: f64, xi: f64, omega: f64) -> [f64; 5] {
    let w2 = omega * omega;
    [
        u0 * u0,
        -2.0 * u0 * omega,
        (1.0 + l / xi - l * c * u0 * u0) * w2,
        2.0 * l * c * u0 * w2 * omega,
        -l * c * w2 * w2,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PierceApprox {
    /// `ω/u₀`.
    pub k_b: f64,
    /// `ω_p/u₀`, when the beam carries plasma data.
    pub k_p: Option<f64>,
    /// `(Lk_b²/(2ξ))^{1/3}`.
    pub c: f64,
    /// `ci`, `c(−√3 − i)/2`, `c(√3 − i)/2`: the fast unattenuated, the
    /// increasing and the decreasing wave, with `k = k_b + iδ`.
    pub deltas: [Complex64; 3],
    /// Roots of the quartic, when computed.
    pub exact_roots_k: Vec<Complex64>,
    /// `|iδ/k_b| = c/k_b`, the term dropped by the cubic.
    pub smallness: f64,
}

impl PierceApprox {
    /// Index of the increasing wave in `deltas`.
    pub const INCREASING: usize = 1;

    pub fn k_roots(&self) -> [Complex64; 3] {
        self.deltas.map(|d| self.k_b + Complex64::i() * d)
    }

    /// `−Im k` of the increasing wave, i.e. `c√3/2`.
    pub fn gain(&self) -> f64 {
        -self.k_roots()[Self::INCREASING].im
    }
}

/// Roots of `δ³ = −(Lk_b²/(2ξ))i`.
pub fn pierce_cubic(l: f64, xi: f64, k_b: f64) -> PierceApprox {
    let c = (l * k_b * k_b / (2.0 * xi)).cbrt();
    let s3 = 3f64.sqrt();
    PierceApprox {
        k_b,
        k_p: None,
        c,
        deltas: [
            Complex64::new(0.0, c),
            Complex64::new(-s3 * c / 2.0, -c / 2.0),
            Complex64::new(s3 * c / 2.0, -c / 2.0),
        ],
        exact_roots_k: Vec::new(),
        smallness: c / k_b,
    }
}

/// [`pierce_cubic`] for a single line `(L, C)` and beam at `omega`, with the
/// plasma wavenumber and the exact quartic roots filled in.
pub fn pierce_approx(l: f64, c: f64, beam: &BeamParams, omega: f64) -> PierceApprox {
    let mut p = pierce_cubic(l, beam.xi, omega / beam.u0);
    p.k_p = beam.plasma.map(|pl| pl.omega_p_sq().sqrt() / beam.u0);
    p.exact_roots_k = Poly::from_descending(&pierce_quartic(l, c, beam.u0, beam.xi, omega)).roots();
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicComparison {
    pub xi: f64,
    /// `max |k_exact − (k_b + iδ)| / k_b` over the three matched roots.
    pub max_mismatch: f64,
    /// `2 Re v₀ + v₁⁺ + v₁⁻ − 2u₀`.
    pub vieta_residual: f64,
    /// The negative real velocity root.
    pub backward_velocity: f64,
    pub smallness: f64,
    pub approx: PierceApprox,
}

/// Pairs each cubic root with the nearest remaining quartic root, rejecting
/// pairings where the runner-up is within twice the nearest distance.
fn match_roots(predicted: &[Complex64], exact: &[Complex64]) -> Result<f64> {
    let mut pool: Vec<Complex64> = exact.to_vec();
    let mut worst: f64 = 0.0;
    for p in predicted {
        let mut d: Vec<(usize, f64)> = pool.iter().enumerate().map(|(i, e)| (i, (e - p).norm())).collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1));
        if d.len() > 1 && d[1].1 < 2.0 * d[0].1 {
            return Err(Error::MatchingAmbiguous);
        }
        worst = worst.max(d[0].1);
        pool.remove(d[0].0);
    }
    Ok(worst)
}

/// For a synchronous beam `u₀ = 1/√(LC)`, compares the cubic roots with the
/// three quartic roots near `k_b` at each `ξ`.
pub fn compare_cubic_vs_exact(l: f64, c: f64, xi_list: &[f64], omega: f64) -> Result<Vec<CubicComparison>> {
    let u0 = 1.0 / (l * c).sqrt();
    let spec = spectral_data(&MtlParams::single(l, c)?);
    xi_list
        .iter()
        .map(|&xi| {
            let beam = BeamParams::new(u0, xi)?;
            let approx = pierce_approx(l, c, &beam, omega);
            let k_b = approx.k_b;
            // the backward wave sits near −k_b and is left out of the cubic
            let mut exact = approx.exact_roots_k.clone();
            let back = exact
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1.re).total_cmp(&b.1.re))
                .map(|(i, _)| i)
                .expect("quartic has roots");
            exact.remove(back);
            let max_mismatch = match_roots(&approx.k_roots(), &exact)? / k_b;

            let sol = solve_dispersion(&spec, &beam, omega)?;
            let v0 = sol.v0.ok_or(Error::NoComplexPair)?;
            let reals = sol.real_roots();
            let (neg, pos): (Vec<f64>, Vec<f64>) = reals.iter().partition(|v| **v < 0.0);
            if neg.len() != 1 || pos.len() != 1 {
                return Err(Error::InvalidParameter(format!(
                    "expected one forward and one backward real root, found {reals:?}"
                )));
            }
            Ok(CubicComparison {
                xi,
                max_mismatch,
                vieta_residual: 2.0 * v0.re + pos[0] + neg[0] - 2.0 * u0,
                backward_velocity: neg[0],
                smallness: approx.smallness,
                approx,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalentLine {
    pub l: f64,
    pub c: f64,
    pub v1: f64,
}

/// When `LC = v₁⁻²I`, the single line with `C̃⁻¹ = BᵀC⁻¹B` and
/// `L̃ = v₁⁻²C̃⁻¹` has the same canonical dispersion relation with the same
/// beam. For `B = 1` this is `C̃⁻¹ = Σᵢⱼ(C⁻¹)ᵢⱼ`.
pub fn reduce_equivalent_line(mtl: &MtlParams) -> Result<EquivalentLine> {
    if mtl.strictness != Strictness::Strict {
        return Err(Error::InvalidParameter("reduction needs a strict-mode line".into()));
    }
    let spec = spectral_data(mtl);
    spec.require_real()?;
    let v1 = spec.v1().expect("real spectrum");
    let lc = &mtl.l * &mtl.c;
    let deviation = (&lc - DMatrix::identity(mtl.n, mtl.n) / (v1 * v1)).norm();
    if deviation >= REDUCTION_RTOL * lc.norm() {
        return Err(Error::NotReducible { deviation: deviation / lc.norm() });
    }
    let c_inv = spec.d;
    Ok(EquivalentLine { l: c_inv / (v1 * v1), c: 1.0 / c_inv, v1 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainScalingRow {
    pub n: usize,
    /// `n` identical uncoupled lines with the beam `(u₀, ξ)`.
    pub gain: f64,
    /// One line with the beam `(u₀, ξ/n)`.
    pub gain_reduced_beam: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainScaling {
    pub rows: Vec<GainScalingRow>,
    /// Slope of `log gain` against `log n`.
    pub exponent: Option<f64>,
}

/// Gains of `n` identical lines `(L̂, Ĉ)` sharing one beam.
pub fn gain_scaling_identical_lines(
    l_hat: f64,
    c_hat: f64,
    beam: &BeamParams,
    omega: f64,
    n_list: &[usize],
) -> Result<GainScaling> {
    let single = spectral_data(&MtlParams::single(l_hat, c_hat)?);
    let rows = crate::par::map(n_list, |&n| {
        let id = DMatrix::<f64>::identity(n, n);
        let mtl = MtlParams::new(id.clone() * l_hat, id * c_hat, Some(DVector::from_element(n, 1.0)), Strictness::Strict)?;
        let gain = solve_dispersion(&spectral_data(&mtl), beam, omega)?.gain.ok_or(Error::NoComplexPair)?;
        let reduced = BeamParams::new(beam.u0, beam.xi / n as f64)?;
        let gain_reduced_beam = solve_dispersion(&single, &reduced, omega)?.gain.ok_or(Error::NoComplexPair)?;
        Ok(GainScalingRow { n, gain, gain_reduced_beam })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let exponent = (rows.len() >= 2).then(|| {
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.gain.ln()).collect();
        linear_fit(&x, &y).0
    });
    Ok(GainScaling { rows, exponent })
}

/// Characteristic roots left out of the reduced line: `±v₁` with the
/// multiplicity they carry in the full system.
pub fn roots_absent_from_reduction(mtl: &MtlParams, beam: &BeamParams, omega: f64) -> Result<Vec<(f64, usize)>> {
    let sol = solve_dispersion(&spectral_data(mtl), beam, omega)?;
    Ok(sol
        .roots
        .iter()
        .filter(|r| r.kind == RootKind::CharacteristicCoincident)
        .map(|r| (r.value.re, r.multiplicity))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::dispersion_polynomial;
    use proptest::prelude::*;

    #[test]
    fn quartic_examples() {
        assert_eq!(pierce_quartic(1.0, 1.0, 1.0, 1.0, 1.0), [1.0, -2.0, 1.0, 2.0, -1.0]);
        assert_eq!(pierce_quartic(1.3, 0.7, 2.0, 0.4, 0.0), [4.0, 0.0, 0.0, 0.0, 0.0]);
        let a = pierce_quartic(1.3, 0.7, 2.0, 0.4, 1.0);
        let b = pierce_quartic(1.3, 0.7, 2.0, 0.4, 2.0);
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            assert!((y - x * 2f64.powi(i as i32)).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    /// `k = ω/v` reverses the coefficient order of the velocity polynomial.
    #[test]
    fn quartic_is_reversed_velocity_polynomial() {
        let (l, c, u0, xi) = (1.3, 0.7, 1.6, 0.45);
        let spec = spectral_data(&MtlParams::single(l, c).unwrap());
        let dv = dispersion_polynomial(&spec, &BeamParams::new(u0, xi).unwrap());
        let q = pierce_quartic(l, c, u0, xi, 1.0);
        let scale = q[0] / dv[4];
        for i in 0..5 {
            assert!((q[i] - scale * dv[4 - i]).abs() < 1e-12, "{q:?} {dv:?}");
        }
    }

    #[test]
    fn cubic_examples() {
        let p = pierce_cubic(1.0, 2.0, 1.0);
        assert!((p.c - 0.25f64.cbrt()).abs() < 1e-15);
        assert_eq!(p.deltas[0], Complex64::new(0.0, p.c));
        let want = Complex64::new(0.0, -0.25);
        for d in p.deltas {
            assert!((d * d * d - want).norm() < 1e-12 * want.norm());
            assert!((d.norm() - p.c).abs() < 1e-15);
        }
        let sum: Complex64 = p.deltas.iter().sum();
        assert!(sum.norm() < 1e-14);
        let angles: Vec<f64> = p.deltas.iter().map(|d| d.arg().to_degrees().rem_euclid(360.0)).collect();
        for (a, want) in angles.iter().zip([90.0, 210.0, 330.0]) {
            assert!((a - want).abs() < 1e-12);
        }
        assert!((p.gain() - 3f64.sqrt() / 2.0 * p.c).abs() < 1e-15);
        assert!(p.gain() > 0.0);
    }

    #[test]
    fn plasma_wavenumber_is_reported() {
        let plasma = crate::mtl::Plasma { sigma: 2.0, rho0: 0.5, charge_mass_ratio: 1.0 };
        let beam = BeamParams::from_plasma(1.5, plasma).unwrap();
        let p = pierce_approx(1.0, 1.0, &beam, 1.0);
        assert!((p.k_p.unwrap() - plasma.omega_p_sq().sqrt() / 1.5).abs() < 1e-15);
        assert_eq!(p.exact_roots_k.len(), 4);
    }

    #[test]
    fn cubic_converges_to_quartic_at_large_xi() {
        let rows = compare_cubic_vs_exact(1.0, 1.0, &[1e2, 1e4, 1e6], 1.0).unwrap();
        let last = rows.last().unwrap();
        assert!(last.max_mismatch < 1e-2, "{}", last.max_mismatch);
        assert!(rows.windows(2).all(|w| w[1].max_mismatch < w[0].max_mismatch));
        assert!((last.backward_velocity + 1.0).abs() < 0.05);
        for r in &rows {
            assert!(r.vieta_residual.abs() < 1e-9, "{}", r.vieta_residual);
            assert!((r.smallness - r.approx.c).abs() < 1e-15);
        }
        // the growing exact root is the one matched to the increasing wave
        let k0 = last.approx.exact_roots_k.iter().min_by(|a, b| a.im.total_cmp(&b.im)).unwrap();
        let pred = last.approx.k_roots()[PierceApprox::INCREASING];
        assert!((k0 - pred).norm() < 1e-2);
    }

    #[test]
    fn cubic_at_small_xi_is_poor_or_ambiguous() {
        match compare_cubic_vs_exact(1.0, 1.0, &[1.0], 1.0) {
            Ok(rows) => assert!(rows[0].max_mismatch > 0.05),
            Err(e) => assert!(matches!(e, Error::MatchingAmbiguous)),
        }
    }

    #[test]
    fn identical_lines_reduce() {
        let n = 3;
        let id = DMatrix::<f64>::identity(n, n);
        let mtl = MtlParams::new(id.clone() * 0.8, id * 1.5, None, Strictness::Strict).unwrap();
        let r = reduce_equivalent_line(&mtl).unwrap();
        assert!((r.c - 1.5 / 3.0).abs() < 1e-12 && (r.l - 0.8 * 3.0).abs() < 1e-12);
        let one = MtlParams::single(0.8, 1.5).unwrap();
        let r1 = reduce_equivalent_line(&one).unwrap();
        assert!((r1.l - 0.8).abs() < 1e-14 && (r1.c - 1.5).abs() < 1e-14);

        let beam = BeamParams::new(1.1, 0.6).unwrap();
        let full = solve_dispersion(&spectral_data(&mtl), &beam, 1.0).unwrap();
        let red = solve_dispersion(&spectral_data(&MtlParams::single(r.l, r.c).unwrap()), &beam, 1.0).unwrap();
        assert!((full.v0.unwrap() - red.v0.unwrap()).norm() < 1e-9);
        let absent = roots_absent_from_reduction(&mtl, &beam, 1.0).unwrap();
        let v1 = 1.0 / (0.8f64 * 1.5).sqrt();
        assert_eq!(absent.len(), 2);
        assert!(absent.iter().all(|(v, m)| (v.abs() - v1).abs() < 1e-12 && *m == n - 1));
    }

    #[test]
    fn coupled_lines_with_scalar_lc_reduce() {
        // L = v₁⁻² C⁻¹ for any SPD C
        let c = DMatrix::from_row_slice(3, 3, &[2.0, -0.4, 0.1, -0.4, 1.5, -0.3, 0.1, -0.3, 1.2]);
        let v1: f64 = 0.9;
        let l = c.clone().try_inverse().unwrap() / (v1 * v1);
        let mtl = MtlParams::new(l, c.clone(), None, Strictness::Strict).unwrap();
        let r = reduce_equivalent_line(&mtl).unwrap();
        assert!((r.v1 - v1).abs() < 1e-12);
        let sum: f64 = c.try_inverse().unwrap().iter().sum();
        assert!((1.0 / r.c - sum).abs() < 1e-12);
        for (u0, xi) in [(1.2, 0.5), (0.7, 2.0), (2.5, 0.05)] {
            let beam = BeamParams::new(u0, xi).unwrap();
            let full = solve_dispersion(&spectral_data(&mtl), &beam, 1.0).unwrap();
            let red = solve_dispersion(&spectral_data(&MtlParams::single(r.l, r.c).unwrap()), &beam, 1.0).unwrap();
            match (full.v0, red.v0) {
                (Some(a), Some(b)) => assert!((a - b).norm() < 1e-9, "{a} {b}"),
                (a, b) => assert_eq!(a.is_some(), b.is_some()),
            }
        }
    }

    #[test]
    fn generic_lines_do_not_reduce() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.3]);
        let c = DMatrix::from_row_slice(2, 2, &[0.9, -0.1, -0.1, 1.1]);
        let mtl = MtlParams::new(l, c, None, Strictness::Strict).unwrap();
        assert!(matches!(reduce_equivalent_line(&mtl), Err(Error::NotReducible { .. })));
    }

    #[test]
    fn identical_line_gain_scaling() {
        let beam = BeamParams::new(1.0, 1e-4).unwrap();
        let s = gain_scaling_identical_lines(1.0, 1.0, &beam, 1.0, &[1, 4, 16, 64]).unwrap();
        for r in &s.rows {
            assert!((r.gain - r.gain_reduced_beam).abs() < 1e-10 * r.gain, "{r:?}");
        }
        let e = s.exponent.unwrap();
        assert!((e - 0.5).abs() < 0.05, "{e}");
        let s1 = gain_scaling_identical_lines(1.0, 1.0, &beam, 1.0, &[1]).unwrap();
        assert_eq!(s1.rows[0].gain, s.rows[0].gain);
        assert!(s1.exponent.is_none());
    }

    proptest! {
        #[test]
        fn quartic_roots_are_inverse_velocities(
            l in 0.2f64..3.0, c in 0.2f64..3.0, u0 in 0.3f64..3.0, xi in 0.05f64..20.0, w in 0.3f64..3.0
        ) {
            let beam = BeamParams::new(u0, xi).unwrap();
            let spec = spectral_data(&MtlParams::single(l, c).unwrap());
            let sol = solve_dispersion(&spec, &beam, w).unwrap();
            let mut ks = Poly::from_descending(&pierce_quartic(l, c, u0, xi, w)).roots();
            for v in sol.all_roots() {
                let k = w / v;
                let (i, d) = ks.iter().enumerate().map(|(i, x)| (i, (x - k).norm()))
                    .min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
                prop_assert!(d < 1e-9 * k.norm().max(1.0), "k {} off by {}", k, d);
                ks.remove(i);
            }
        }
    }
}
