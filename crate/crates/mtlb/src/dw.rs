//! Quadratic-Lagrangian blocks and the first-order evolution in `z`.
//!
//! With `ε = 1/ξ` and `q = (Q, q)` the scaled Lagrangian density is
//! `½ q_tᵀαq_t + q_tᵀθq_z − ½ q_zᵀηq_z`. The state `V = (p_z, ∂ₜq)` with
//! `p_z = θq_t − ηq_z` satisfies `J̃ ∂_z V̂ = ω M̃ V̂` for time-harmonic fields.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mtl::{BeamParams, MtlParams};

/// Relative invariant drift accepted by [`z_propagate`].
pub const DRIFT_TOL: f64 = 1e-6;
/// Step halvings tried before giving up.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone)]
pub struct QuadBlocks {
    pub alpha: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    /// Closed form through the Schur complement `−u₀²`.
    pub eta_inv: DMatrix<f64>,
    pub epsilon: f64,
}

impl QuadBlocks {
    pub fn dim(&self) -> usize {
        self.alpha.nrows()
    }

    /// `M_L = [[α, θ], [θ, −η]]`.
    pub fn m_l(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        out.view_mut((0, 0), (m, m)).copy_from(&self.alpha);
        out.view_mut((0, m), (m, m)).copy_from(&self.theta);
        out.view_mut((m, 0), (m, m)).copy_from(&self.theta);
        out.view_mut((m, m), (m, m)).copy_from(&(-&self.eta));
        out
    }
}

/// Blocks from line matrices `L`, `C` (and `C⁻¹`), coupling `B` and beam.
pub fn blocks_from_parts(
    l: &DMatrix<f64>,
    c: &DMatrix<f64>,
    c_inv: &DMatrix<f64>,
    b: &DVector<f64>,
    beam: &BeamParams,
) -> Result<QuadBlocks> {
    let n = l.nrows();
    let m = n + 1;
    let eps = 1.0 / beam.xi;
    let u2 = beam.u0 * beam.u0;
    if u2 == 0.0 {
        return Err(Error::SingularEta);
    }
    let dvec = c_inv * b;
    let d = b.dot(&dvec);

    let mut alpha = DMatrix::zeros(m, m);
    alpha.view_mut((0, 0), (n, n)).copy_from(&(l * eps));
    alpha[(n, n)] = 1.0;

    let mut theta = DMatrix::zeros(m, m);
    theta[(n, n)] = beam.u0;

    let mut eta = DMatrix::zeros(m, m);
    eta.view_mut((0, 0), (n, n)).copy_from(&(c_inv * eps));
    for i in 0..n {
        eta[(i, n)] = eps * dvec[i];
        eta[(n, i)] = eps * dvec[i];
    }
    eta[(n, n)] = eps * d - u2;

    let mut eta_inv = DMatrix::zeros(m, m);
    eta_inv.view_mut((0, 0), (n, n)).copy_from(&(c * beam.xi - b * b.transpose() / u2));
    for i in 0..n {
        eta_inv[(i, n)] = b[i] / u2;
        eta_inv[(n, i)] = b[i] / u2;
    }
    eta_inv[(n, n)] = -1.0 / u2;

    if !eta_inv.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularEta);
    }
    Ok(QuadBlocks { alpha, theta, eta, eta_inv, epsilon: eps })
}

pub fn assemble_blocks(mtl: &MtlParams, beam: &BeamParams) -> Result<QuadBlocks> {
    blocks_from_parts(&mtl.l, &mtl.c, &mtl.c_inv, &mtl.b, beam)
}

/// Blocks for the bare beam: `α = 1`, `θ = u₀`, `η = −u₀²`.
pub fn beam_only_blocks(u0: f64) -> QuadBlocks {
    let one = |x: f64| DMatrix::from_element(1, 1, x);
    QuadBlocks {
        alpha: one(1.0),
        theta: one(u0),
        eta: one(-u0 * u0),
        eta_inv: one(-1.0 / (u0 * u0)),
        epsilon: 0.0,
    }
}

fn to_c(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

#[derive(Debug, Clone)]
pub struct DwSystem {
    pub j_tilde: DMatrix<Complex64>,
    pub m_tilde: DMatrix<Complex64>,
}

/// `J̃ = [[0, i], [i, 0]]`.
pub fn j_tilde(m: usize) -> DMatrix<Complex64> {
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        j[(i, m + i)] = Complex64::i();
        j[(m + i, i)] = Complex64::i();
    }
    j
}

pub fn m_tilde(blocks: &QuadBlocks) -> DMatrix<f64> {
    let m = blocks.dim();
    let ei = &blocks.eta_inv;
    let th = &blocks.theta;
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&(-ei));
    out.view_mut((0, m), (m, m)).copy_from(&(ei * th));
    out.view_mut((m, 0), (m, m)).copy_from(&(th * ei));
    out.view_mut((m, m), (m, m)).copy_from(&(-&blocks.alpha - th * ei * th));
    out
}

pub fn dw_system(blocks: &QuadBlocks) -> DwSystem {
    DwSystem { j_tilde: j_tilde(blocks.dim()), m_tilde: to_c(&m_tilde(blocks)) }
}

impl DwSystem {
    pub fn dim(&self) -> usize {
        self.j_tilde.nrows()
    }

    /// `J̃⁻¹` by LU, not by the identity `J̃² = −1`.
    pub fn j_inverse(&self) -> DMatrix<Complex64> {
        self.j_tilde.clone().lu().try_inverse().expect("J is nonsingular")
    }

    /// `ωJ̃⁻¹M̃`; its eigenvalues are the `ik` of the plane-wave modes.
    pub fn generator(&self, omega: f64) -> DMatrix<Complex64> {
        self.j_inverse() * &self.m_tilde * Complex64::new(omega, 0.0)
    }

    /// Largest of `‖J̃* + J̃‖` and `‖M̃* − M̃‖`, relative to the matrix norms.
    pub fn hermiticity_defect(&self) -> f64 {
        let j = (&self.j_tilde.adjoint() + &self.j_tilde).norm() / self.j_tilde.norm();
        let m = (&self.m_tilde.adjoint() - &self.m_tilde).norm() / self.m_tilde.norm().max(f64::MIN_POSITIVE);
        j.max(m)
    }
}

/// `V̂*J̃V̂`.
pub fn symplectic_square(v: &DVector<Complex64>) -> Complex64 {
    let m = v.len() / 2;
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..m {
        s += v[i].conj() * Complex64::i() * v[m + i] + v[m + i].conj() * Complex64::i() * v[i];
    }
    s
}

/// Residuals of the plane-wave factorisations of the `t`- and `z`-form
/// Hamiltonian operators, with `∂_z → ik` and `∂ₜ → τ = −iω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationResiduals {
    pub t_form: f64,
    pub z_form: f64,
    /// `M_Hz = diag(1, −τ) M̃ diag(1, τ)`.
    pub z_form_via_m_tilde: f64,
}

pub fn factorization_residuals(blocks: &QuadBlocks, k: Complex64, omega: f64) -> FactorizationResiduals {
    let m = blocks.dim();
    let a = to_c(&blocks.alpha);
    let th = to_c(&blocks.theta);
    let et = to_c(&blocks.eta);
    let ei = to_c(&blocks.eta_inv);
    let ai = to_c(&blocks.alpha.clone().try_inverse().expect("alpha is invertible"));
    let id = DMatrix::<Complex64>::identity(m, m);
    let z = DMatrix::<Complex64>::zeros(m, m);
    let ik = Complex64::i() * k;
    let tau = -Complex64::i() * omega;
    let blk = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>, c: &DMatrix<Complex64>, d: &DMatrix<Complex64>| {
        let mut o = DMatrix::zeros(2 * m, 2 * m);
        o.view_mut((0, 0), (m, m)).copy_from(a);
        o.view_mut((0, m), (m, m)).copy_from(b);
        o.view_mut((m, 0), (m, m)).copy_from(c);
        o.view_mut((m, m), (m, m)).copy_from(d);
        o
    };
    let rel = |x: &DMatrix<Complex64>, y: &DMatrix<Complex64>| (x - y).norm() / x.norm().max(f64::MIN_POSITIVE);

    let m_ht = blk(
        &ai,
        &(&ai * &th * (-ik)),
        &(&th * &ai * ik),
        &(&th * &ai * &th * (-ik * ik) - &et * (ik * ik)),
    );
    let t_prod = blk(&id, &z, &(&th * ik), &id)
        * blk(&ai, &z, &z, &(-(&et * (ik * ik))))
        * blk(&id, &(&th * (-ik)), &z, &id);

    let m_hz = blk(
        &(-&ei),
        &(&ei * &th * tau),
        &(&th * &ei * (-tau)),
        &((&a + &th * &ei * &th) * (tau * tau)),
    );
    let z_prod = blk(&id, &z, &(&th * tau), &id)
        * blk(&(-&ei), &z, &z, &(&a * (tau * tau)))
        * blk(&id, &(&th * (-tau)), &z, &id);
    let mt = to_c(&m_tilde(blocks));
    let via = blk(&id, &z, &z, &(&id * (-tau))) * mt * blk(&id, &z, &z, &(&id * tau));

    FactorizationResiduals {
        t_form: rel(&m_ht, &t_prod),
        z_form: rel(&m_hz, &z_prod),
        z_form_via_m_tilde: rel(&m_hz, &via),
    }
}

/// `½ uᵀ M_L u`.
pub fn lagrangian_value(blocks: &QuadBlocks, u: &DVector<f64>) -> f64 {
    0.5 * u.dot(&(blocks.m_l() * u))
}

/// `½ pᵀ M_L⁺ p`. The beam part of the Lagrangian is a perfect square, so
/// `M_L` always has a null direction (`q_t = −u₀q_z` with `∂_zQ + B∂_zq = 0`);
/// momenta `p = M_L u` lie in its range, where the pseudo-inverse is exact.
pub fn dw_hamiltonian_value(blocks: &QuadBlocks, p: &DVector<f64>) -> Result<f64> {
    let eig = nalgebra::SymmetricEigen::new(blocks.m_l());
    let scale = eig.eigenvalues.amax();
    let coords = eig.eigenvectors.transpose() * p;
    let mut h = 0.0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > 1e-12 * scale {
            h += coords[i] * coords[i] / lam;
        } else if coords[i].abs() > 1e-9 * p.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter("momentum lies outside the range of M_L".into()));
        }
    }
    Ok(0.5 * h)
}

/// Dimension of the null space of `M_L`.
pub fn m_l_nullity(blocks: &QuadBlocks) -> usize {
    let eig = nalgebra::SymmetricEigen::new(blocks.m_l());
    let scale = eig.eigenvalues.amax();
    eig.eigenvalues.iter().filter(|l| l.abs() <= 1e-12 * scale).count()
}

/// Sampled solution of `J̃ ∂_z V̂ = ω M̃(z) V̂`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub z: Vec<f64>,
    pub v: Vec<DVector<Complex64>>,
    /// `max |V̂*J̃V̂ − V̂(0)*J̃V̂(0)| / max ‖V̂‖²`.
    pub invariant_drift: f64,
    pub steps: usize,
}

fn rk4<F>(m_tilde: &F, jinv: &DMatrix<Complex64>, omega: f64, z0: f64, h: f64, v: &DVector<Complex64>) -> DVector<Complex64>
where
    F: Fn(f64) -> DMatrix<Complex64>,
{
    let w = Complex64::new(omega, 0.0);
    let f = |z: f64, x: &DVector<Complex64>| jinv * (m_tilde(z) * x) * w;
    let hc = Complex64::new(h, 0.0);
    let k1 = f(z0, v);
    let k2 = f(z0 + 0.5 * h, &(v + &k1 * (hc * 0.5)));
    let k3 = f(z0 + 0.5 * h, &(v + &k2 * (hc * 0.5)));
    let k4 = f(z0 + h, &(v + &k3 * hc));
    let two = Complex64::new(2.0, 0.0);
    v + (k1 + k2 * two + k3 * two + k4) * (hc / 6.0)
}

fn integrate<F>(m_tilde: &F, omega: f64, v0: &DVector<Complex64>, z_span: (f64, f64), steps: usize) -> Trajectory
where
    F: Fn(f64) -> DMatrix<Complex64>,
{
    let jinv = -j_tilde(v0.len() / 2);
    let h = (z_span.1 - z_span.0) / steps as f64;
    let mut z = vec![z_span.0];
    let mut v = vec![v0.clone()];
    let inv0 = symplectic_square(v0);
    let mut max_dev = 0.0_f64;
    let mut max_norm = v0.norm_squared();
    for s in 0..steps {
        let zc = z_span.0 + s as f64 * h;
        let next = rk4(m_tilde, &jinv, omega, zc, h, &v[s]);
        max_dev = max_dev.max((symplectic_square(&next) - inv0).norm());
        max_norm = max_norm.max(next.norm_squared());
        z.push(zc + h);
        v.push(next);
    }
    let invariant_drift = if max_norm > 0.0 { max_dev / max_norm } else { 0.0 };
    Trajectory { z, v, invariant_drift, steps }
}

/// Classical fourth-order integration over `z_span`. The step count is
/// doubled while the invariant drift exceeds [`DRIFT_TOL`].
pub fn z_propagate<F>(
    m_tilde: F,
    omega: f64,
    v0: &DVector<Complex64>,
    z_span: (f64, f64),
    steps: usize,
) -> Result<Trajectory>
where
    F: Fn(f64) -> DMatrix<Complex64>,
{
    if !v0.len().is_multiple_of(2) || v0.is_empty() {
        return Err(Error::DimensionMismatch("state length must be even".into()));
    }
    let mut n = steps.max(1);
    let mut last = 0.0;
    for _ in 0..=MAX_HALVINGS {
        let t = integrate(&m_tilde, omega, v0, z_span, n);
        if t.invariant_drift <= DRIFT_TOL {
            return Ok(t);
        }
        last = t.invariant_drift;
        n *= 2;
    }
    Err(Error::StepUnstable { drift: last, halvings: MAX_HALVINGS })
}

/// Fundamental matrix `Z(z)` with `Z(z₀) = 1`, column by column.
pub fn propagator<F>(m_tilde: F, omega: f64, dim: usize, z_span: (f64, f64), steps: usize) -> DMatrix<Complex64>
where
    F: Fn(f64) -> DMatrix<Complex64>,
{
    let mut z = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let mut e = DVector::zeros(dim);
        e[c] = Complex64::new(1.0, 0.0);
        let t = integrate(&m_tilde, omega, &e, z_span, steps);
        z.set_column(c, t.v.last().unwrap());
    }
    z
}

/// `‖Z*J̃Z − J̃‖ / ‖J̃‖`.
pub fn propagator_defect(z: &DMatrix<Complex64>) -> f64 {
    let j = j_tilde(z.nrows() / 2);
    (z.adjoint() * &j * z - &j).norm() / j.norm()
}

/// Line parameters sampled along `z` and extended periodically. Values
/// between samples are interpolated linearly, and `C⁻¹` is recomputed.
#[derive(Debug, Clone)]
pub struct MtlProfile {
    pub period: f64,
    /// `(z, L, C)` sorted by `z` within `[0, period)`.
    pub samples: Vec<(f64, DMatrix<f64>, DMatrix<f64>)>,
    pub b: DVector<f64>,
}

impl MtlProfile {
    pub fn new(period: f64, mut samples: Vec<(f64, DMatrix<f64>, DMatrix<f64>)>, b: DVector<f64>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidParameter("profile period must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidParameter("profile needs at least one sample".into()));
        }
        let n = b.len();
        for (z, l, c) in &samples {
            if !z.is_finite() {
                return Err(Error::NonFinite("profile z".into()));
            }
            if l.shape() != (n, n) || c.shape() != (n, n) {
                return Err(Error::DimensionMismatch("profile matrices must be n x n".into()));
            }
            crate::mtl::validate_mtl(l.clone(), c.clone(), Some(b.clone()), crate::mtl::Strictness::Strict)?;
        }
        samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(MtlProfile { period, samples, b })
    }

    pub fn at(&self, z: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = &self.samples;
        if s.len() == 1 {
            return (s[0].1.clone(), s[0].2.clone());
        }
        let zz = z.rem_euclid(self.period);
        let idx = s.iter().rposition(|x| x.0 <= zz);
        let (a, b, span) = match idx {
            Some(i) if i + 1 < s.len() => (&s[i], &s[i + 1], s[i + 1].0 - s[i].0),
            Some(i) => (&s[i], &s[0], s[0].0 + self.period - s[i].0),
            None => (&s[s.len() - 1], &s[0], s[0].0 + self.period - s[s.len() - 1].0),
        };
        let mut off = zz - a.0;
        if off < 0.0 {
            off += self.period;
        }
        let w = if span > 0.0 { off / span } else { 0.0 };
        (&a.1 * (1.0 - w) + &b.1 * w, &a.2 * (1.0 - w) + &b.2 * w)
    }

    pub fn m_tilde_at(&self, z: f64, beam: &BeamParams) -> Result<DMatrix<Complex64>> {
        let (l, c) = self.at(z);
        let c_inv = c.clone().cholesky().ok_or(Error::NotPositiveDefinite { which: "C" })?.inverse();
        let blocks = blocks_from_parts(&l, &c, &c_inv, &self.b, beam)?;
        Ok(to_c(&m_tilde(&blocks)))
    }
}
