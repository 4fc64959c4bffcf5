//! Time-domain integration of the coupled line–beam field equations on a
//! uniform grid.
//!
//! The second-order system is integrated in first-order form with
//! `U = (∂_zQ, ∂ₜQ, ∂_zq, ∂ₜq)` per grid point:
//!
//! ```text
//! ∂ₜ∂_zQ = ∂_z ∂ₜQ
//! ∂ₜ∂ₜQ = L⁻¹C⁻¹ ∂_z(∂_zQ + B∂_zq)
//! ∂ₜ∂_zq = ∂_z ∂ₜq
//! ∂ₜ∂ₜq = BᵀC⁻¹ ∂_z(∂_zQ + B∂_zq)/ξ − u₀² ∂_z∂_zq − 2u₀ ∂_z∂ₜq
//! ```
//!
//! i.e. `∂ₜU + A∂_zU = 0`, where the eigenvalues of `A` are the dispersion
//! roots `v`. With a growing pair, every wavelength grows at the rate
//! `k·Im v₀`, so the discrete problem needs dissipation at the grid scale.
//! The drive/absorb runs therefore split `A` by its matrix sign into right-
//! and left-going parts and difference each upwind; first order for systems
//! with complex roots, third-order upwind-biased when all roots are real.
//! Closed periodic runs use centered differences and leapfrog.
//!
//! The charges themselves are recovered by trapezoidal time integration of
//! `∂ₜQ` and `∂ₜq`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mtl::{spectral_data, BeamParams, MtlParams};
use crate::sweep::linear_fit;

/// Field magnitude, relative to the drive amplitude, treated as blowup.
pub const BLOWUP_FACTOR: f64 = 1e12;
/// Allowed period-to-period change of the harmonic projection.
pub const CONVERGENCE_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Drive at `z = 0`, damping layer at the far end.
    DriveAbsorb,
    /// Closed system on a ring.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveTarget {
    /// Space-charge wave `q = f(t − z/u₀)` entering with the beam.
    Beam,
    /// Slowest line mode `Q = p₁ f(t − z/v₁)`.
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveShape {
    /// `sin(ωt)` under a smooth ramp lasting `ramp_periods` periods.
    Harmonic,
    /// `exp(−((t − center)/width)²)`.
    Pulse { center: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub omega: f64,
    pub amplitude: f64,
    pub ramp_periods: f64,
    pub target: DriveTarget,
    pub shape: DriveShape,
}

impl Drive {
    pub fn harmonic(omega: f64, amplitude: f64, ramp_periods: f64) -> Self {
        Drive { omega, amplitude, ramp_periods, target: DriveTarget::Beam, shape: DriveShape::Harmonic }
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }

    /// `f'(t)` of the drive signal.
    fn derivative(&self, t: f64) -> f64 {
        match self.shape {
            DriveShape::Harmonic => {
                if t <= 0.0 {
                    return 0.0;
                }
                let tr = self.ramp_periods * self.period();
                let (r, dr) = if tr <= 0.0 || t >= tr {
                    (1.0, 0.0)
                } else {
                    let x = t / tr;
                    (x * x * x * (10.0 - 15.0 * x + 6.0 * x * x), 30.0 * x * x * (1.0 - x) * (1.0 - x) / tr)
                };
                let w = self.omega;
                self.amplitude * (dr * (w * t).sin() + r * w * (w * t).cos())
            }
            DriveShape::Pulse { center, width } => {
                let s = (t - center) / width;
                -2.0 * s / width * self.amplitude * (-s * s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Third order unless grid-scale noise would be amplified by more than
    /// `e^30` over one transit of the domain, first order otherwise.
    Auto,
    FirstOrderUpwind,
    ThirdOrderUpwind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nz: usize,
    pub dz: f64,
    pub dt: f64,
    pub steps: usize,
    pub drive: Drive,
    pub boundary: Boundary,
    pub cfl_safety: f64,
    pub scheme: Scheme,
    /// Fraction of the domain occupied by the damping layer.
    pub layer_fraction: f64,
    pub sigma_max: f64,
    pub snapshot_every: usize,
    pub snapshot_from: usize,
}

impl SimConfig {
    /// Driven run over `[0, length]` for `duration`, with `dt` chosen from
    /// the CFL limit and rounded so that a period is a whole number of
    /// steps. Snapshots cover every step of the last two periods.
    pub fn drive_absorb(
        mtl: &MtlParams,
        beam: &BeamParams,
        drive: Drive,
        length: f64,
        dz: f64,
        duration: f64,
        cfl_safety: f64,
    ) -> Result<Self> {
        let speed = FirstOrderSystem::new(mtl, beam)?.max_speed;
        let nz = (length / dz).round() as usize + 1;
        let period = drive.period();
        let per = (period / (cfl_safety * dz / speed)).ceil() as usize;
        let dt = period / per as f64;
        let steps = (duration / dt).round() as usize;
        Ok(SimConfig {
            nz,
            dz,
            dt,
            steps,
            drive,
            boundary: Boundary::DriveAbsorb,
            cfl_safety,
            scheme: Scheme::Auto,
            layer_fraction: 0.1,
            sigma_max: 5.0,
            snapshot_every: 1,
            snapshot_from: steps.saturating_sub(2 * per),
        })
    }

    /// Closed ring of `nz` points and circumference `length`, run for a
    /// whole number of drive periods. One snapshot per `snapshot_every`.
    pub fn periodic(
        mtl: &MtlParams,
        beam: &BeamParams,
        omega: f64,
        nz: usize,
        length: f64,
        periods: usize,
        cfl_safety: f64,
    ) -> Result<Self> {
        let speed = FirstOrderSystem::new(mtl, beam)?.max_speed;
        let dz = length / nz as f64;
        let total = periods as f64 * 2.0 * std::f64::consts::PI / omega;
        let steps = (total / (cfl_safety * dz / speed)).ceil() as usize;
        Ok(SimConfig {
            nz,
            dz,
            dt: total / steps as f64,
            steps,
            drive: Drive::harmonic(omega, 0.0, 0.0),
            boundary: Boundary::Periodic,
            cfl_safety,
            scheme: Scheme::Auto,
            layer_fraction: 0.0,
            sigma_max: 0.0,
            snapshot_every: 1,
            snapshot_from: 0,
        })
    }
}

/// Grid fields at one instant. Line quantities are `n × nz`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub q_lines: DMatrix<f64>,
    pub q_beam: DVector<f64>,
    pub q_lines_dot: DMatrix<f64>,
    pub q_beam_dot: DVector<f64>,
    pub q_lines_z: DMatrix<f64>,
    pub q_beam_z: DVector<f64>,
}

impl FieldState {
    pub fn zeros(n: usize, nz: usize) -> Self {
        FieldState {
            t: 0.0,
            q_lines: DMatrix::zeros(n, nz),
            q_beam: DVector::zeros(nz),
            q_lines_dot: DMatrix::zeros(n, nz),
            q_beam_dot: DVector::zeros(nz),
            q_lines_z: DMatrix::zeros(n, nz),
            q_beam_z: DVector::zeros(nz),
        }
    }

    pub fn nz(&self) -> usize {
        self.q_beam.len()
    }

    /// `V = −C⁻¹(∂_zQ + B∂_zq)`.
    pub fn voltage(&self, mtl: &MtlParams) -> DMatrix<f64> {
        let mut semi = self.q_lines_z.clone();
        for j in 0..self.nz() {
            for i in 0..mtl.n {
                semi[(i, j)] += mtl.b[i] * self.q_beam_z[j];
            }
        }
        -(&mtl.c_inv * semi)
    }

    /// `I = ∂ₜQ`.
    pub fn current(&self) -> &DMatrix<f64> {
        &self.q_lines_dot
    }

    /// `E = −∂_zV` by centered differences, one-sided at the ends.
    pub fn field(&self, mtl: &MtlParams, dz: f64) -> DMatrix<f64> {
        let v = self.voltage(mtl);
        let nz = self.nz();
        DMatrix::from_fn(mtl.n, nz, |i, j| {
            let (a, b, h) = match j {
                0 => (0, 1.min(nz - 1), dz),
                j if j == nz - 1 => (j - 1, j, dz),
                j => (j - 1, j + 1, 2.0 * dz),
            };
            -(v[(i, b)] - v[(i, a)]) / h
        })
    }

    fn max_abs(&self) -> f64 {
        [&self.q_lines_dot, &self.q_lines_z]
            .iter()
            .map(|m| m.amax())
            .chain([self.q_beam_dot.amax(), self.q_beam_z.amax()])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SimHistory {
    pub z: Vec<f64>,
    pub dz: f64,
    pub dt: f64,
    pub omega: f64,
    pub snapshots: Vec<FieldState>,
    pub scheme: Scheme,
}

/// `∂ₜU + A∂_zU = 0` for the per-point state `U`, with its upwind split and
/// the energy matrix `S`, `H = ½UᵀSU`.
#[derive(Debug, Clone)]
pub struct FirstOrderSystem {
    pub n: usize,
    pub a: DMatrix<f64>,
    pub a_plus: DMatrix<f64>,
    pub a_minus: DMatrix<f64>,
    pub energy: DMatrix<f64>,
    pub max_speed: f64,
    pub has_complex_roots: bool,
}

impl FirstOrderSystem {
    pub fn new(mtl: &MtlParams, beam: &BeamParams) -> Result<Self> {
        let n = mtl.n;
        let m = 2 * n + 2;
        let (ia, ib, ic, ie) = (0, n, 2 * n, 2 * n + 1);
        let li = mtl.l.clone().cholesky().ok_or(Error::NotPositiveDefinite { which: "L" })?.inverse();
        let lc = &li * &mtl.c_inv;
        let dvec = &mtl.c_inv * &mtl.b;
        let d = mtl.b.dot(&dvec);
        let (u0, xi) = (beam.u0, beam.xi);

        // M with ∂ₜU = M∂_zU
        let mut mm = DMatrix::zeros(m, m);
        for i in 0..n {
            mm[(ia + i, ib + i)] = 1.0;
            for j in 0..n {
                mm[(ib + i, ia + j)] = lc[(i, j)];
            }
            mm[(ib + i, ic)] = (&lc * &mtl.b)[i];
            mm[(ie, ia + i)] = dvec[i] / xi;
        }
        mm[(ic, ie)] = 1.0;
        mm[(ie, ic)] = d / xi - u0 * u0;
        mm[(ie, ie)] = -2.0 * u0;
        let a = -mm;

        let mut s = DMatrix::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                s[(ia + i, ia + j)] = mtl.c_inv[(i, j)];
                s[(ib + i, ib + j)] = mtl.l[(i, j)];
            }
            s[(ia + i, ic)] = dvec[i];
            s[(ic, ia + i)] = dvec[i];
        }
        s[(ic, ic)] = d - xi * u0 * u0;
        s[(ie, ie)] = xi;

        let eig = a.clone().complex_eigenvalues();
        let max_speed = eig.iter().map(|e| e.norm()).fold(0.0, f64::max);
        let has_complex_roots = eig.iter().any(|e| e.im.abs() > 1e-9 * e.norm().max(1.0));
        let sign = matrix_sign(&a)?;
        let abs = &a * &sign;
        Ok(FirstOrderSystem {
            n,
            a_plus: (&a + &abs) * 0.5,
            a_minus: (&a - &abs) * 0.5,
            a,
            energy: s,
            max_speed,
            has_complex_roots,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 2
    }
}

/// Largest exponent `Auto` accepts for the third-order stencil.
pub const AUTO_NOISE_EXPONENT: f64 = 30.0;

/// Upwind difference symbols `h·D(θ)` applied to `e^{ijθ}`.
fn upwind_symbol(theta: f64, third_order: bool) -> Complex64 {
    let e = |m: f64| Complex64::new(0.0, m * theta).exp();
    if third_order {
        (2.0 * e(1.0) + 3.0 - 6.0 * e(-1.0) + e(-2.0)) / 6.0
    } else {
        1.0 - e(-1.0)
    }
}

/// Log of the amplification that grid-scale noise picks up while crossing
/// `length` under the semi-discrete upwind scheme. With complex roots the
/// continuous problem grows at every wavenumber, so only the stencil's
/// dissipation keeps this finite; it is zero when all roots are real.
pub fn grid_noise_exponent(sys: &FirstOrderSystem, dz: f64, length: f64, third_order: bool) -> f64 {
    let eig = sys.a.clone().complex_eigenvalues();
    let mut worst: f64 = 0.0;
    for lam in eig.iter().filter(|l| l.im.abs() > 1e-9 * l.norm().max(1.0)) {
        // right-going characteristics use D⁻, left-going the mirrored D⁺
        let lam = if lam.re >= 0.0 { *lam } else { -lam.conj() };
        let rate = (0..=2000)
            .map(|i| (-lam * upwind_symbol(std::f64::consts::PI * i as f64 / 2000.0, third_order)).re)
            .fold(0.0, f64::max)
            / dz;
        let speed = lam.re.max(1e-3 * lam.norm());
        worst = worst.max(rate * length / speed);
    }
    worst
}

/// Matrix sign function by the scaled Newton iteration.
pub fn matrix_sign(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let mut x = a.clone();
    for _ in 0..100 {
        let inv = x.clone().try_inverse().ok_or_else(|| {
            Error::InvalidParameter("matrix sign undefined: a dispersion root has zero real part".into())
        })?;
        let det = x.determinant().abs();
        let mu = if det > 0.0 && det.is_finite() { det.powf(-1.0 / m as f64) } else { 1.0 };
        let next = (&x * mu + inv / mu) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-14 * x.norm() {
            // one unscaled step to settle
            let inv = x.clone().try_inverse().expect("sign iterate invertible");
            return Ok((&x + inv) * 0.5);
        }
    }
    Err(Error::InvalidParameter("matrix sign iteration did not converge".into()))
}

struct Stepper<'a> {
    sys: &'a FirstOrderSystem,
    cfg: &'a SimConfig,
    sigma: Vec<f64>,
    third_order: bool,
    /// Inlet mode `(vector, speed)` for the drive ghost points.
    inlet: (DVector<f64>, f64),
}

impl Stepper<'_> {
    fn ghost(&self, t: f64, cells: usize) -> DVector<f64> {
        let (ref vec, speed) = self.inlet;
        vec * self.cfg.drive.derivative(t + cells as f64 * self.cfg.dz / speed)
    }

    /// `−(A⁺D⁻ + A⁻D⁺)U − σU`, with `U` stored point by point.
    fn rhs_upwind(&self, u: &[f64], t: f64, out: &mut [f64]) {
        let m = self.sys.dim();
        let nz = self.cfg.nz;
        let h = self.cfg.dz;
        let g1 = self.ghost(t, 1);
        let g2 = self.ghost(t, 2);
        let at = |j: isize, c: usize| -> f64 {
            if j < 0 {
                if j == -1 { g1[c] } else { g2[c] }
            } else if j as usize >= nz {
                0.0
            } else {
                u[j as usize * m + c]
            }
        };
        let mut dm = vec![0.0; m];
        let mut dp = vec![0.0; m];
        for j in 0..nz {
            let ji = j as isize;
            for c in 0..m {
                if self.third_order {
                    dm[c] = (2.0 * at(ji + 1, c) + 3.0 * at(ji, c) - 6.0 * at(ji - 1, c) + at(ji - 2, c)) / (6.0 * h);
                    dp[c] = (-at(ji + 2, c) + 6.0 * at(ji + 1, c) - 3.0 * at(ji, c) - 2.0 * at(ji - 1, c)) / (6.0 * h);
                } else {
                    dm[c] = (at(ji, c) - at(ji - 1, c)) / h;
                    dp[c] = (at(ji + 1, c) - at(ji, c)) / h;
                }
            }
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    acc += self.sys.a_plus[(r, c)] * dm[c] + self.sys.a_minus[(r, c)] * dp[c];
                }
                out[j * m + r] = -acc - self.sigma[j] * u[j * m + r];
            }
        }
    }

    /// `−A D_c U` on the ring.
    fn rhs_centered(&self, u: &[f64], out: &mut [f64]) {
        let m = self.sys.dim();
        let nz = self.cfg.nz;
        let h2 = 2.0 * self.cfg.dz;
        for j in 0..nz {
            let jp = (j + 1) % nz;
            let jm = (j + nz - 1) % nz;
            for r in 0..m {
                let mut acc = 0.0;
                for c in 0..m {
                    acc += self.sys.a[(r, c)] * (u[jp * m + c] - u[jm * m + c]) / h2;
                }
                out[j * m + r] = -acc;
            }
        }
    }
}

fn pack(state: &FieldState, n: usize) -> Vec<f64> {
    let m = 2 * n + 2;
    let nz = state.nz();
    let mut u = vec![0.0; nz * m];
    for j in 0..nz {
        for i in 0..n {
            u[j * m + i] = state.q_lines_z[(i, j)];
            u[j * m + n + i] = state.q_lines_dot[(i, j)];
        }
        u[j * m + 2 * n] = state.q_beam_z[j];
        u[j * m + 2 * n + 1] = state.q_beam_dot[j];
    }
    u
}

fn unpack(u: &[f64], n: usize, base: &FieldState, t: f64) -> FieldState {
    let m = 2 * n + 2;
    let nz = base.nz();
    FieldState {
        t,
        q_lines: base.q_lines.clone(),
        q_beam: base.q_beam.clone(),
        q_lines_z: DMatrix::from_fn(n, nz, |i, j| u[j * m + i]),
        q_lines_dot: DMatrix::from_fn(n, nz, |i, j| u[j * m + n + i]),
        q_beam_z: DVector::from_fn(nz, |j, _| u[j * m + 2 * n]),
        q_beam_dot: DVector::from_fn(nz, |j, _| u[j * m + 2 * n + 1]),
    }
}

/// Integrates `Q` and `q` with the trapezoid rule between two states.
fn integrate_charges(q: &mut FieldState, old: &[f64], new: &[f64], n: usize, dt: f64) {
    let m = 2 * n + 2;
    for j in 0..q.nz() {
        for i in 0..n {
            q.q_lines[(i, j)] += 0.5 * dt * (old[j * m + n + i] + new[j * m + n + i]);
        }
        q.q_beam[j] += 0.5 * dt * (old[j * m + 2 * n + 1] + new[j * m + 2 * n + 1]);
    }
}

fn check_config(cfg: &SimConfig, sys: &FirstOrderSystem) -> Result<()> {
    if cfg.nz < 64 {
        return Err(Error::InvalidParameter(format!("nz = {} is below the minimum of 64", cfg.nz)));
    }
    if !(cfg.dz > 0.0 && cfg.dt > 0.0) || !(cfg.cfl_safety > 0.0 && cfg.cfl_safety < 1.0) {
        return Err(Error::InvalidParameter("dz, dt must be positive and cfl_safety in (0, 1)".into()));
    }
    let limit = cfg.cfl_safety * cfg.dz / sys.max_speed;
    if cfg.dt > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "dt = {:.4e} exceeds the CFL limit {limit:.4e} (fastest root speed {:.4})",
            cfg.dt, sys.max_speed
        )));
    }
    if cfg.snapshot_every == 0 {
        return Err(Error::InvalidParameter("snapshot_every must be at least 1".into()));
    }
    Ok(())
}

/// Runs from rest. See [`simulate_from`].
pub fn simulate(mtl: &MtlParams, beam: &BeamParams, cfg: &SimConfig) -> Result<SimHistory> {
    simulate_from(mtl, beam, cfg, FieldState::zeros(mtl.n, cfg.nz))
}

/// Integrates `cfg.steps` steps from `init` and records snapshots from
/// step `snapshot_from` on, every `snapshot_every` steps (step 0 is the
/// initial state).
pub fn simulate_from(mtl: &MtlParams, beam: &BeamParams, cfg: &SimConfig, init: FieldState) -> Result<SimHistory> {
    let sys = FirstOrderSystem::new(mtl, beam)?;
    check_config(cfg, &sys)?;
    if init.nz() != cfg.nz || init.q_lines.nrows() != mtl.n {
        return Err(Error::DimensionMismatch("initial state does not match the grid".into()));
    }
    let n = mtl.n;
    let m = sys.dim();
    let nz = cfg.nz;
    let z: Vec<f64> = (0..nz).map(|j| j as f64 * cfg.dz).collect();

    let third_order = match cfg.scheme {
        Scheme::Auto => grid_noise_exponent(&sys, cfg.dz, (nz - 1) as f64 * cfg.dz, true) < AUTO_NOISE_EXPONENT,
        Scheme::FirstOrderUpwind => false,
        Scheme::ThirdOrderUpwind => true,
    };
    let length = (nz - 1) as f64 * cfg.dz;
    let layer_start = (1.0 - cfg.layer_fraction) * length;
    let sigma: Vec<f64> = z
        .iter()
        .map(|&zz| {
            if cfg.boundary == Boundary::DriveAbsorb && cfg.layer_fraction > 0.0 && zz > layer_start {
                let s = (zz - layer_start) / (cfg.layer_fraction * length);
                cfg.sigma_max * s * s
            } else {
                0.0
            }
        })
        .collect();
    let inlet = match cfg.drive.target {
        DriveTarget::Beam => {
            let mut g = DVector::zeros(m);
            g[2 * n + 1] = 1.0;
            g[2 * n] = -1.0 / beam.u0;
            (g, beam.u0)
        }
        DriveTarget::Line => {
            let spec = spectral_data(mtl);
            spec.require_real()?;
            let v1 = spec.v1().expect("real spectrum");
            let mut g = DVector::zeros(m);
            for i in 0..n {
                g[n + i] = spec.p[(i, 0)];
                g[i] = -spec.p[(i, 0)] / v1;
            }
            (g, v1)
        }
    };
    let stepper = Stepper { sys: &sys, cfg, sigma, third_order, inlet };

    let scale = match cfg.boundary {
        Boundary::DriveAbsorb => cfg.drive.amplitude.abs(),
        Boundary::Periodic => init.max_abs(),
    };
    let threshold = BLOWUP_FACTOR * scale.max(f64::MIN_POSITIVE);

    let mut charges = init.clone();
    let mut u = pack(&init, n);
    let mut snapshots = Vec::new();
    if cfg.snapshot_from == 0 {
        snapshots.push(init.clone());
    }
    let dt = cfg.dt;
    let mut k1 = vec![0.0; nz * m];
    let mut k2 = vec![0.0; nz * m];
    let mut k3 = vec![0.0; nz * m];
    let mut prev: Option<Vec<f64>> = None;

    for step in 0..cfg.steps {
        let t = step as f64 * dt;
        let next: Vec<f64> = match cfg.boundary {
            Boundary::Periodic => match prev.take() {
                None => {
                    stepper.rhs_centered(&u, &mut k1);
                    let u1: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
                    stepper.rhs_centered(&u1, &mut k2);
                    u.iter().zip(k1.iter().zip(&k2)).map(|(a, (b, c))| a + 0.5 * dt * (b + c)).collect()
                }
                Some(p) => {
                    stepper.rhs_centered(&u, &mut k1);
                    p.iter().zip(&k1).map(|(a, b)| a + 2.0 * dt * b).collect()
                }
            },
            Boundary::DriveAbsorb if third_order => {
                stepper.rhs_upwind(&u, t, &mut k1);
                let u1: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
                stepper.rhs_upwind(&u1, t + dt, &mut k2);
                let u2: Vec<f64> =
                    u.iter().zip(u1.iter().zip(&k2)).map(|(a, (b, c))| 0.75 * a + 0.25 * (b + dt * c)).collect();
                stepper.rhs_upwind(&u2, t + 0.5 * dt, &mut k3);
                u.iter()
                    .zip(u2.iter().zip(&k3))
                    .map(|(a, (b, c))| a / 3.0 + 2.0 / 3.0 * (b + dt * c))
                    .collect()
            }
            Boundary::DriveAbsorb => {
                stepper.rhs_upwind(&u, t, &mut k1);
                let u1: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
                stepper.rhs_upwind(&u1, t + dt, &mut k2);
                u.iter().zip(u1.iter().zip(&k2)).map(|(a, (b, c))| 0.5 * (a + b + dt * c)).collect()
            }
        };
        integrate_charges(&mut charges, &u, &next, n, dt);
        if cfg.boundary == Boundary::Periodic {
            prev = Some(std::mem::replace(&mut u, next));
        } else {
            u = next;
        }
        let t_new = (step + 1) as f64 * dt;
        let peak = u.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if !peak.is_finite() || peak > threshold {
            return Err(Error::Blowup { step: step + 1, t: t_new });
        }
        let s = step + 1;
        if s >= cfg.snapshot_from && (s - cfg.snapshot_from).is_multiple_of(cfg.snapshot_every) {
            snapshots.push(unpack(&u, n, &charges, t_new));
        }
    }
    Ok(SimHistory {
        z,
        dz: cfg.dz,
        dt: cfg.dt * cfg.snapshot_every as f64,
        omega: cfg.drive.omega,
        snapshots,
        scheme: if third_order { Scheme::ThirdOrderUpwind } else { Scheme::FirstOrderUpwind },
    })
}

/// Which field the growth fit follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthProbe {
    Beam,
    Line(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthFit {
    pub gain_fit: f64,
    pub r_squared: f64,
    /// Largest relative change of the projection between the last two periods.
    pub variation: f64,
}

/// Complex amplitude at `omega` per grid point over the last full period
/// of snapshots, and the one before it.
fn last_two_projections<F>(history: &SimHistory, omega: f64, value: F) -> Result<(Vec<Complex64>, Vec<Complex64>)>
where
    F: Fn(&FieldState, usize) -> f64,
{
    let period = 2.0 * std::f64::consts::PI / omega;
    let per = (period / history.dt).round() as usize;
    if per == 0 || ((per as f64) * history.dt - period).abs() > 1e-9 * period {
        return Err(Error::InvalidParameter("snapshot spacing does not divide the period".into()));
    }
    let snaps = &history.snapshots;
    if snaps.len() < 2 * per {
        return Err(Error::InvalidParameter(format!(
            "need at least two periods of snapshots ({} < {})",
            snaps.len(),
            2 * per
        )));
    }
    let nz = history.z.len();
    let project = |block: &[FieldState]| -> Vec<Complex64> {
        (0..nz)
            .map(|j| {
                block
                    .iter()
                    .map(|s| value(s, j) * Complex64::new(0.0, omega * s.t).exp())
                    .sum::<Complex64>()
                    * (2.0 / per as f64)
            })
            .collect()
    };
    let end = snaps.len();
    Ok((project(&snaps[end - 2 * per..end - per]), project(&snaps[end - per..])))
}

/// Fits `log|amplitude|` against `z` over `fit_window`.
pub fn measure_growth(
    history: &SimHistory,
    omega: f64,
    fit_window: (f64, f64),
    probe: GrowthProbe,
) -> Result<GrowthFit> {
    let value = |s: &FieldState, j: usize| match probe {
        GrowthProbe::Beam => s.q_beam[j],
        GrowthProbe::Line(i) => s.q_lines[(i, j)],
    };
    let (prev, last) = last_two_projections(history, omega, value)?;
    let idx: Vec<usize> = (0..history.z.len())
        .filter(|&j| history.z[j] >= fit_window.0 && history.z[j] <= fit_window.1)
        .collect();
    if idx.len() < 3 {
        return Err(Error::InvalidParameter("fit window holds fewer than three grid points".into()));
    }
    let variation = idx
        .iter()
        .map(|&j| (last[j] - prev[j]).norm() / last[j].norm())
        .fold(0.0, f64::max);
    if variation.is_nan() || variation > CONVERGENCE_TOL {
        return Err(Error::NotConverged { variation });
    }
    let xs: Vec<f64> = idx.iter().map(|&j| history.z[j]).collect();
    let ys: Vec<f64> = idx.iter().map(|&j| last[j].norm().ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    Ok(GrowthFit { gain_fit: slope, r_squared: r2, variation })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    /// `max |H(t) − H(0)| / max |H|`.
    pub max_relative_drift: f64,
    /// `(H(tₖ) − H(0)) / max |H|` per snapshot.
    pub per_step_residual: Vec<f64>,
    /// Slope of a least-squares line through the residuals against elapsed
    /// periods: the secular part of the drift, without the bounded
    /// oscillation of the leapfrog energy.
    pub drift_per_period: f64,
}

/// Total discrete energy `Σ ½UᵀSU·dz`. The beam contributes
/// `½ξ(q_t² − u₀²q_z²)`, which is indefinite, so the drift is measured
/// against the largest `|H|` seen.
pub fn total_energy(state: &FieldState, mtl: &MtlParams, beam: &BeamParams, dz: f64) -> f64 {
    let dvec = &mtl.c_inv * &mtl.b;
    let d = mtl.b.dot(&dvec);
    let mut h = 0.0;
    for j in 0..state.nz() {
        let a = state.q_lines_z.column(j);
        let b = state.q_lines_dot.column(j);
        let (c, e) = (state.q_beam_z[j], state.q_beam_dot[j]);
        let ca = &mtl.c_inv * a;
        let lb = &mtl.l * b;
        let mut s = a.dot(&ca) + b.dot(&lb) + 2.0 * c * a.dot(&dvec);
        s += (d - beam.xi * beam.u0 * beam.u0) * c * c + beam.xi * e * e;
        h += 0.5 * s;
    }
    h * dz
}

pub fn energy_audit(history: &SimHistory, mtl: &MtlParams, beam: &BeamParams) -> EnergyAudit {
    let hs: Vec<f64> = history.snapshots.iter().map(|s| total_energy(s, mtl, beam, history.dz)).collect();
    if hs.is_empty() {
        return EnergyAudit { max_relative_drift: 0.0, per_step_residual: vec![], drift_per_period: 0.0 };
    }
    let scale = hs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let resid: Vec<f64> = hs.iter().map(|h| if scale > 0.0 { (h - hs[0]) / scale } else { 0.0 }).collect();
    let drift = resid.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let periods: Vec<f64> =
        history.snapshots.iter().map(|s| s.t * history.omega / (2.0 * std::f64::consts::PI)).collect();
    let slope = if resid.len() > 2 { linear_fit(&periods, &resid).0.abs() } else { 0.0 };
    EnergyAudit {
        max_relative_drift: drift,
        per_step_residual: resid,
        drift_per_period: if slope.is_finite() { slope } else { 0.0 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxBudget {
    /// `⟨(I,V)⟩(z₂) − ⟨(I,V)⟩(z₁)`.
    pub flux_difference: f64,
    /// `∫ ⟨P⟩ dz` over `[z₁, z₂]`.
    pub power_integral: f64,
    pub relative_mismatch: f64,
}

/// Discrete form of the line balance `∂_z⟨(I,V)⟩ = ⟨P_{B→MTL}⟩`, from the
/// harmonic amplitudes of the last recorded period.
pub fn flux_budget(history: &SimHistory, mtl: &MtlParams, z1: f64, z2: f64) -> Result<FluxBudget> {
    let n = mtl.n;
    let w = history.omega;
    let proj = |f: &dyn Fn(&FieldState, usize) -> f64| last_two_projections(history, w, f).map(|p| p.1);
    let qt: Vec<Vec<Complex64>> =
        (0..n).map(|i| proj(&|s: &FieldState, j| s.q_lines_dot[(i, j)])).collect::<Result<_>>()?;
    let qz: Vec<Vec<Complex64>> =
        (0..n).map(|i| proj(&|s: &FieldState, j| s.q_lines_z[(i, j)])).collect::<Result<_>>()?;
    let cz = proj(&|s: &FieldState, j| s.q_beam_z[j])?;

    let nz = history.z.len();
    let mut flux = vec![0.0; nz];
    let mut power = vec![0.0; nz];
    for j in 0..nz {
        let semi: DVector<Complex64> = DVector::from_fn(n, |i, _| qz[i][j] + mtl.b[i] * cz[j]);
        let cs = mtl.c_inv.map(|x| Complex64::new(x, 0.0)) * &semi;
        let v_hat = -&cs;
        let i_hat = DVector::from_fn(n, |i, _| qt[i][j]);
        flux[j] = 0.5 * i_hat.dotc(&v_hat).re;
        let qtz = -Complex64::i() * w * cz[j];
        let coupling: Complex64 = (0..n).map(|i| cs[i] * mtl.b[i]).sum();
        power[j] = 0.5 * (coupling.conj() * qtz).re;
    }
    let idx = |z: f64| ((z / history.dz).round() as usize).min(nz - 1);
    let (j1, j2) = (idx(z1), idx(z2));
    let flux_difference = flux[j2] - flux[j1];
    let power_integral: f64 = (j1..j2).map(|j| 0.5 * history.dz * (power[j] + power[j + 1])).sum();
    let relative_mismatch = (flux_difference - power_integral).abs() / power_integral.abs().max(f64::MIN_POSITIVE);
    Ok(FluxBudget { flux_difference, power_integral, relative_mismatch })
}
