//! Plane-wave eigenmodes `(Q, q) = Re{(Q̂, q̂) e^{i(kz − ωt)}}` and the
//! energy bookkeeping on them: averaged flux, beam-to-line power, the
//! Poincaré invariant and the split into line and beam subsystems.
//!
//! Flux and energy built from the Lagrangian blocks are in scaled units
//! (`ε = 1/ξ` times the physical values); power and the subsystem
//! quantities are physical.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::dispersion::{delta_poly, mode_matrix, RESIDUAL_RTOL};
use crate::dw::{symplectic_square, QuadBlocks};
use crate::error::{Error, Result};
use crate::mtl::{BeamParams, MtlParams, MtlSpectralData};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone)]
pub struct Eigenmode {
    pub omega: f64,
    pub v: Complex64,
    pub k: Complex64,
    /// Line charge amplitudes `Q̂`.
    pub q_lines: DVector<Complex64>,
    /// Beam charge amplitude `q̂`; 1 whenever the beam takes part.
    pub q_beam: Complex64,
    /// `‖Ã(v)x‖ / (‖Ã(v)‖‖x‖)`.
    pub residual: f64,
}

/// Real field values at one point: `∂ₜ(Q, q)`, `∂_z(Q, q)` and `∂ₜ∂_z q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPoint {
    pub qt: DVector<f64>,
    pub qz: DVector<f64>,
    pub q_tz: f64,
}

impl Eigenmode {
    pub fn n(&self) -> usize {
        self.q_lines.len()
    }

    /// `(Q̂, q̂)·e^{ikz}`.
    pub fn amplitude(&self, z: f64) -> DVector<Complex64> {
        let ph = (I * self.k * z).exp();
        let n = self.n();
        DVector::from_fn(n + 1, |i, _| if i < n { self.q_lines[i] * ph } else { self.q_beam * ph })
    }

    /// `V̂(z) = (p̂_z, −iωq̂)` with `p̂_z = −iωθq̂ − ikηq̂`.
    pub fn dw_state(&self, blocks: &QuadBlocks, z: f64) -> DVector<Complex64> {
        let a = self.amplitude(z);
        let qt = &a * (-I * self.omega);
        let qz = &a * (I * self.k);
        let th = blocks.theta.map(|x| Complex64::new(x, 0.0));
        let et = blocks.eta.map(|x| Complex64::new(x, 0.0));
        let pz = &th * &qt - &et * &qz;
        let m = a.len();
        DVector::from_fn(2 * m, |i, _| if i < m { pz[i] } else { qt[i - m] })
    }

    fn real_at(&self, amp: &DVector<Complex64>, t: f64) -> DVector<f64> {
        let ph = Complex64::new(0.0, -self.omega * t).exp();
        amp.map(|a| (a * ph).re)
    }

    pub fn field_point(&self, z: f64, t: f64) -> FieldPoint {
        let a = self.amplitude(z);
        let qt = self.real_at(&(&a * (-I * self.omega)), t);
        let qz = self.real_at(&(&a * (I * self.k)), t);
        let n = self.n();
        let qtz = (a[n] * self.omega * self.k * Complex64::new(0.0, -self.omega * t).exp()).re;
        FieldPoint { qt, qz, q_tz: qtz }
    }

    /// Physical voltages `V = −C⁻¹(∂_zQ + B∂_zq)` and currents `I = ∂ₜQ`.
    pub fn voltage_current(&self, mtl: &MtlParams, z: f64, t: f64) -> (DVector<f64>, DVector<f64>) {
        let p = self.field_point(z, t);
        let n = self.n();
        let qz_semi = p.qz.rows(0, n) + &mtl.b * p.qz[n];
        (-(&mtl.c_inv * qz_semi), p.qt.rows(0, n).into_owned())
    }
}

fn relative_delta_residual(spec: &MtlSpectralData, beam: &BeamParams, v: Complex64) -> f64 {
    let p = delta_poly(spec, beam);
    let n = spec.n() as i32;
    p.eval_c(v).norm() / (p.max_abs_coeff() * v.norm().max(1.0).powi(2 * n + 2))
}

/// Amplitudes of the mode with phase velocity `v`.
///
/// If `A(v) = C⁻¹ − v²L` is invertible, `q̂ = 1` and `Q̂ = −A(v)⁻¹D`. On a
/// characteristic velocity the null space of the full mode matrix is taken
/// from its SVD instead.
pub fn eigenmode_solve(
    spec: &MtlSpectralData,
    beam: &BeamParams,
    omega: f64,
    v: Complex64,
) -> Result<Eigenmode> {
    let res = relative_delta_residual(spec, beam, v);
    if res.is_nan() || res >= RESIDUAL_RTOL {
        return Err(Error::NotARoot { v, residual: res });
    }
    let n = spec.n();
    let full = mode_matrix(spec, beam, v);
    let a = spec.a_matrix(v);
    let sv = a.clone().svd(false, false).singular_values;
    let a_ok = sv.min() > 1e-10 * sv.max();

    let x: DVector<Complex64> = if a_ok {
        let rhs = spec.d_vec.map(|d| Complex64::new(-d, 0.0));
        let q = a.lu().solve(&rhs).ok_or(Error::NearCharacteristicVelocity { v })?;
        DVector::from_fn(n + 1, |i, _| if i < n { q[i] } else { Complex64::new(1.0, 0.0) })
    } else {
        let svd = full.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let null: Vec<DVector<Complex64>> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= 1e-8 * smax)
            .map(|(i, _)| v_t.row(i).adjoint())
            .collect();
        match null.len() {
            0 => return Err(Error::NotARoot { v, residual: res }),
            1 => normalize(null.into_iter().next().unwrap()),
            _ => return Err(Error::RankDeficiencyAmbiguous { basis: null }),
        }
    };
    let residual = (&full * &x).norm() / (full.norm() * x.norm());
    Ok(Eigenmode {
        omega,
        v,
        k: Complex64::new(omega, 0.0) / v,
        q_lines: x.rows(0, n).into_owned(),
        q_beam: x[n],
        residual,
    })
}

fn normalize(x: DVector<Complex64>) -> DVector<Complex64> {
    let n = x.len() - 1;
    if x[n].norm() > 1e-10 * x.norm() {
        let s = x[n];
        x.map(|e| e / s)
    } else {
        let nrm = x.rows(0, n).norm();
        let mut y = x.map(|e| e / nrm);
        y[n] = Complex64::new(0.0, 0.0);
        y
    }
}

/// `⟨S⟩(z) = ½Re{(−iωq̂)*·p̂_z}` on each grid point.
pub fn avg_flux(mode: &Eigenmode, blocks: &QuadBlocks, z_grid: &[f64]) -> Vec<f64> {
    let m = mode.n() + 1;
    z_grid
        .iter()
        .map(|&z| {
            let v = mode.dw_state(blocks, z);
            (0..m).map(|i| 0.5 * (v[m + i].conj() * v[i]).re).sum()
        })
        .collect()
}

/// Natural size of the averaged flux: `max_z ½‖p̂_z‖‖ωq̂‖`. For a growing
/// mode the averaged flux itself is zero, so relative checks use this.
pub fn flux_scale(mode: &Eigenmode, blocks: &QuadBlocks, z_grid: &[f64]) -> f64 {
    let m = mode.n() + 1;
    z_grid
        .iter()
        .map(|&z| {
            let v = mode.dw_state(blocks, z);
            0.5 * v.rows(0, m).norm() * v.rows(m, m).norm()
        })
        .fold(0.0, f64::max)
}

/// `V̂*J̃V̂` on each grid point.
pub fn poincare_invariant(mode: &Eigenmode, blocks: &QuadBlocks, z_grid: &[f64]) -> Vec<Complex64> {
    z_grid.iter().map(|&z| symplectic_square(&mode.dw_state(blocks, z))).collect()
}

/// Closed-form averaged beam-to-line power
/// `−ωξ|k|²|q̂|²(Re v − u₀)·Im v·e^{−2 Im k z}`.
pub fn power_avg(mode: &Eigenmode, beam: &BeamParams, z_grid: &[f64]) -> Result<Vec<f64>> {
    if mode.k.im >= 0.0 {
        return Err(Error::NonGrowingMode { im_k: mode.k.im });
    }
    let pre = -mode.omega * beam.xi * mode.k.norm_sqr() * mode.q_beam.norm_sqr() * (mode.v.re - beam.u0) * mode.v.im;
    Ok(z_grid.iter().map(|&z| pre * (-2.0 * mode.k.im * z).exp()).collect())
}

/// The same average from the amplitudes:
/// `(ω/2)|k|² e^{−2 Im k z} Im{(Q̂ + Bq̂)*ᵀC⁻¹Bq̂}`.
pub fn power_avg_from_amplitudes(mode: &Eigenmode, mtl: &MtlParams, z_grid: &[f64]) -> Vec<f64> {
    let semi = &mode.q_lines + mtl.b.map(|x| Complex64::new(x, 0.0)) * mode.q_beam;
    let dq = (&mtl.c_inv * &mtl.b).map(|x| Complex64::new(x, 0.0)) * mode.q_beam;
    let inner = semi.dotc(&dq);
    let base = 0.5 * mode.omega * mode.k.norm_sqr() * inner.im;
    z_grid.iter().map(|&z| base * (-2.0 * mode.k.im * z).exp()).collect()
}

/// Stored energy `½(CV,V) + ½(LI,I)` and flux `(I,V)`.
pub fn line_energy_flux(mtl: &MtlParams, v: &DVector<f64>, i: &DVector<f64>) -> (f64, f64) {
    (0.5 * v.dot(&(&mtl.c * v)) + 0.5 * i.dot(&(&mtl.l * i)), i.dot(v))
}

/// Instantaneous power `∂ₜH + ∂_zS` by centered differences of sampled
/// voltages and currents.
pub fn power_instant<F>(fields: F, mtl: &MtlParams, z: f64, t: f64, dz: f64, dt: f64) -> f64
where
    F: Fn(f64, f64) -> (DVector<f64>, DVector<f64>),
{
    let h = |z: f64, t: f64| {
        let (v, i) = fields(z, t);
        line_energy_flux(mtl, &v, &i)
    };
    let dh = (h(z, t + dt).0 - h(z, t - dt).0) / (2.0 * dt);
    let ds = (h(z + dz, t).1 - h(z - dz, t).1) / (2.0 * dz);
    dh + ds
}

/// `½q_tᵀαq_t + ½q_zᵀηq_z`.
pub fn block_energy(blocks: &QuadBlocks, p: &FieldPoint) -> f64 {
    0.5 * p.qt.dot(&(&blocks.alpha * &p.qt)) + 0.5 * p.qz.dot(&(&blocks.eta * &p.qz))
}

/// `q_tᵀ(θq_t − ηq_z)`.
pub fn block_flux(blocks: &QuadBlocks, p: &FieldPoint) -> f64 {
    p.qt.dot(&(&blocks.theta * &p.qt - &blocks.eta * &p.qz))
}

/// Line (`1`) and beam (`2`) energies and fluxes, and the coupling power
/// `(∂_zQ + B∂_zq)ᵀC⁻¹B ∂ₜ∂_zq`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsystemDensities {
    pub h1: f64,
    pub h2: f64,
    pub s1: f64,
    pub s2: f64,
    pub power: f64,
}

pub fn subsystem_densities(mtl: &MtlParams, beam: &BeamParams, p: &FieldPoint) -> SubsystemDensities {
    let n = mtl.n;
    let qt_l = p.qt.rows(0, n);
    let semi = p.qz.rows(0, n) + &mtl.b * p.qz[n];
    let cs = &mtl.c_inv * &semi;
    let (qt_b, qz_b) = (p.qt[n], p.qz[n]);
    let coupling = cs.dot(&mtl.b);
    SubsystemDensities {
        h1: 0.5 * qt_l.dot(&(&mtl.l * qt_l)) + 0.5 * semi.dot(&cs),
        h2: 0.5 * beam.xi * (qt_b * qt_b - beam.u0 * beam.u0 * qz_b * qz_b),
        s1: -cs.dot(&qt_l),
        s2: (beam.xi * beam.u0 * (qt_b + beam.u0 * qz_b) - coupling) * qt_b,
        power: coupling * p.q_tz,
    }
}

/// Local balances `∂ₜH₁ + ∂_zS₁` and `∂ₜH₂ + ∂_zS₂` on an exact mode, by
/// centered differences with step `h`, together with the coupling power.
pub fn subsystem_balance(
    mode: &Eigenmode,
    mtl: &MtlParams,
    beam: &BeamParams,
    z: f64,
    t: f64,
    h: f64,
) -> (f64, f64, f64) {
    let d = |z: f64, t: f64| subsystem_densities(mtl, beam, &mode.field_point(z, t));
    let (tp, tm, zp, zm) = (d(z, t + h), d(z, t - h), d(z + h, t), d(z - h, t));
    let r1 = (tp.h1 - tm.h1) / (2.0 * h) + (zp.s1 - zm.s1) / (2.0 * h);
    let r2 = (tp.h2 - tm.h2) / (2.0 * h) + (zp.s2 - zm.s2) / (2.0 * h);
    (r1, r2, d(z, t).power)
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub z_grid: Vec<f64>,
    pub avg_flux_total: Vec<f64>,
    pub flux_scale: f64,
    /// Present only for the growing mode.
    pub avg_power_beam_to_mtl: Option<Vec<f64>>,
    pub poincare: Vec<Complex64>,
    pub positivity: bool,
}

pub fn energy_report(
    mode: &Eigenmode,
    beam: &BeamParams,
    blocks: &QuadBlocks,
    z_grid: &[f64],
) -> EnergyReport {
    let power = power_avg(mode, beam, z_grid).ok();
    let positivity = power.as_ref().map(|p| p.iter().all(|&x| x > 0.0)).unwrap_or(false);
    EnergyReport {
        z_grid: z_grid.to_vec(),
        avg_flux_total: avg_flux(mode, blocks, z_grid),
        flux_scale: flux_scale(mode, blocks, z_grid),
        avg_power_beam_to_mtl: power,
        poincare: poincare_invariant(mode, blocks, z_grid),
        positivity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::solve_dispersion;
    use crate::dw::assemble_blocks;
    use crate::mtl::{spectral_data, Strictness};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn reference() -> (MtlSpectralData, BeamParams) {
        (spectral_data(&MtlParams::single(1.0, 1.0).unwrap()), BeamParams::new(1.0, 1.0).unwrap())
    }

    fn growing(spec: &MtlSpectralData, beam: &BeamParams) -> Eigenmode {
        let sol = solve_dispersion(spec, beam, 1.0).unwrap();
        eigenmode_solve(spec, beam, 1.0, sol.v0.unwrap()).unwrap()
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
    }

    #[test]
    fn growing_mode_of_reference() {
        let (s, b) = reference();
        let m = growing(&s, &b);
        assert_eq!(m.q_beam, Complex64::new(1.0, 0.0));
        let a = 1.0 - m.v * m.v;
        assert!((m.q_lines[0] + 1.0 / a).norm() < 1e-12);
        assert!(m.residual < 1e-10);
        assert!(m.k.im < 0.0);
    }

    #[test]
    fn not_a_root_is_rejected() {
        let (s, b) = reference();
        assert!(matches!(
            eigenmode_solve(&s, &b, 1.0, Complex64::new(0.3, 0.0)),
            Err(Error::NotARoot { .. })
        ));
    }

    #[test]
    fn decoupled_line_mode_has_no_beam_part() {
        let mtl = MtlParams::new(
            DMatrix::identity(2, 2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
            Some(DVector::from_vec(vec![1.0, 0.0])),
            Strictness::Strict,
        )
        .unwrap();
        let s = spectral_data(&mtl);
        let m = eigenmode_solve(&s, &BeamParams::new(1.0, 1.0).unwrap(), 1.0, Complex64::new(0.5, 0.0)).unwrap();
        assert_eq!(m.q_beam, Complex64::new(0.0, 0.0));
        assert!(m.q_lines[0].norm() < 1e-12);
        assert_relative_eq!(m.q_lines[1].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn repeated_lines_are_ambiguous() {
        let mtl = MtlParams::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3), None, Strictness::Strict).unwrap();
        let s = spectral_data(&mtl);
        match eigenmode_solve(&s, &BeamParams::new(1.0, 1.0).unwrap(), 1.0, Complex64::new(1.0, 0.0)) {
            Err(Error::RankDeficiencyAmbiguous { basis }) => assert_eq!(basis.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn growing_mode_flux_is_constant_and_matches_invariant() {
        let (s, b) = reference();
        let m = growing(&s, &b);
        let blocks = assemble_blocks(&s.mtl, &b).unwrap();
        let z = grid(0.0, 10.0, 50);
        let f = avg_flux(&m, &blocks, &z);
        let scale = flux_scale(&m, &blocks, &z);
        assert!(f.iter().all(|x| (x - f[0]).abs() < 1e-9 * scale));
        for (p, s) in poincare_invariant(&m, &blocks, &z).iter().zip(f.iter()) {
            assert!((p - 4.0 * I * s).norm() < 1e-9 * 4.0 * scale);
        }
    }

    #[test]
    fn oscillatory_mode_flux_is_constant() {
        let (s, b) = reference();
        let sol = solve_dispersion(&s, &b, 1.0).unwrap();
        let blocks = assemble_blocks(&s.mtl, &b).unwrap();
        for r in sol.real_roots() {
            let m = eigenmode_solve(&s, &b, 1.0, Complex64::new(r, 0.0)).unwrap();
            let f = avg_flux(&m, &blocks, &grid(0.0, 10.0, 20));
            let v = m.dw_state(&blocks, 0.0);
            let direct = 0.5 * (v[2].conj() * v[0] + v[3].conj() * v[1]).re;
            assert!(f.iter().all(|x| (x - direct).abs() < 1e-12 * direct.abs()));
            assert!(direct.abs() > 0.0);
        }
    }

    #[test]
    fn power_formulas_agree_and_are_positive() {
        let (s, b) = reference();
        let m = growing(&s, &b);
        let z = grid(0.0, 5.0, 10);
        let p = power_avg(&m, &b, &z).unwrap();
        let p2 = power_avg_from_amplitudes(&m, &s.mtl, &z);
        for (x, y) in p.iter().zip(p2.iter()) {
            assert!(*x > 0.0);
            assert_relative_eq!(x, y, max_relative = 1e-10);
        }
        assert_relative_eq!(p[10] / p[0], (-2.0 * m.k.im * 5.0).exp(), max_relative = 1e-12);
        let conj = Eigenmode { v: m.v.conj(), k: m.k.conj(), ..m.clone() };
        assert!(matches!(power_avg(&conj, &b, &z), Err(Error::NonGrowingMode { .. })));
        let zero = Eigenmode { q_beam: Complex64::new(0.0, 0.0), ..m };
        assert!(power_avg(&zero, &b, &z).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn instantaneous_power_averages_to_closed_form() {
        let (s, b) = reference();
        let m = growing(&s, &b);
        let period = 2.0 * std::f64::consts::PI;
        let steps = 256;
        let dt = period / steps as f64;
        let z = 1.3;
        let avg: f64 = (0..steps)
            .map(|i| power_instant(|z, t| m.voltage_current(&s.mtl, z, t), &s.mtl, z, i as f64 * dt, 1e-4, dt))
            .sum::<f64>()
            / steps as f64;
        let want = power_avg(&m, &b, &[z]).unwrap()[0];
        assert!((avg - want).abs() < 1e-2 * want, "{avg} vs {want}");
    }

    #[test]
    fn static_fields_carry_no_power() {
        let mtl = MtlParams::single(2.0, 0.5).unwrap();
        let p = power_instant(
            |_, _| (DVector::from_element(1, 3.0), DVector::from_element(1, -1.0)),
            &mtl,
            0.0,
            0.0,
            0.1,
            0.1,
        );
        assert_eq!(p, 0.0);
    }

    #[test]
    fn block_energy_splits_into_subsystems() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..4);
            let (l, c) = crate::testutil::random_spd_pair(&mut rng, n);
            let mtl = MtlParams::new(l, c, None, Strictness::Strict).unwrap();
            let beam = BeamParams::new(rng.random_range(0.2..2.0), rng.random_range(0.1..5.0)).unwrap();
            let blocks = assemble_blocks(&mtl, &beam).unwrap();
            let p = FieldPoint {
                qt: DVector::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0)),
                qz: DVector::from_fn(n + 1, |_, _| rng.random_range(-1.0..1.0)),
                q_tz: 0.0,
            };
            let sd = subsystem_densities(&mtl, &beam, &p);
            let e = block_energy(&blocks, &p) / blocks.epsilon;
            assert!((e - sd.h1 - sd.h2).abs() < 1e-12 * (1.0 + e.abs()));
            let s = block_flux(&blocks, &p) / blocks.epsilon;
            assert!((s - sd.s1 - sd.s2).abs() < 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn subsystem_balances_are_opposite() {
        let (s, b) = reference();
        let m = growing(&s, &b);
        let (r1, r2, p) = subsystem_balance(&m, &s.mtl, &b, 0.7, 0.3, 1e-4);
        let scale = p.abs().max(1e-3);
        assert!((r1 - p).abs() < 1e-6 * scale.max(1.0), "{r1} {p}");
        assert!((r2 + p).abs() < 1e-6 * scale.max(1.0), "{r2} {p}");
    }
}
