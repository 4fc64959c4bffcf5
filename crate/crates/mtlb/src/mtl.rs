//! Validated line and beam parameters, and the spectral data of the line
//! system (characteristic velocities, the congruence transform `P`, and the
//! coupling reductions `D`, `d`, `D̃`).
//!
//! `P` simultaneously diagonalises the inductance and inverse capacitance:
//! `PᵀLP = I` and `PᵀC⁻¹P = diag(λ)`, where `λᵢ = vᵢ²`. It is built from the
//! Cholesky factor `L = GGᵀ` and the symmetric eigen-decomposition of
//! `G⁻¹C⁻¹G⁻ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance used to merge equal characteristic velocities.
pub const CLUSTER_RTOL: f64 = 1e-9;
const SYMMETRY_RTOL: f64 = 1e-12;
const SINGULAR_C_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Strict,
    Permissive,
}

#[derive(Debug, Clone)]
pub struct MtlParams {
    pub n: usize,
    pub l: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
    pub strictness: Strictness,
    pub c_inv: DMatrix<f64>,
    /// False only in permissive mode, when `C` is invertible but indefinite.
    pub c_positive_definite: bool,
}

impl MtlParams {
    /// Validates and symmetrises the inputs. See [`validate_mtl`].
    pub fn new(
        l: DMatrix<f64>,
        c: DMatrix<f64>,
        b: Option<DVector<f64>>,
        strictness: Strictness,
    ) -> Result<Self> {
        validate_mtl(l, c, b, strictness)
    }

    /// Single line with scalar inductance and capacitance, unit coupling.
    pub fn single(l: f64, c: f64) -> Result<Self> {
        validate_mtl(
            DMatrix::from_element(1, 1, l),
            DMatrix::from_element(1, 1, c),
            None,
            Strictness::Strict,
        )
    }

    /// Warning text for reports, if any.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.c_positive_definite {
            w.push(
                "permissive mode: capacitance matrix is not positive definite; \
                 root-structure guarantees do not apply"
                    .to_string(),
            );
        }
        w
    }
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn check_finite_matrix(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("matrix {name}")))
    }
}

fn symmetrize(m: DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>> {
    let scale = frob(&m).max(f64::MIN_POSITIVE);
    let asym = (&m - m.transpose()).amax() / scale;
    if asym > SYMMETRY_RTOL {
        return Err(Error::AsymmetricMatrix { which, asymmetry: asym });
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Checks shapes, symmetry and definiteness, and precomputes `C⁻¹`.
///
/// `b` defaults to all ones.
pub fn validate_mtl(
    l: DMatrix<f64>,
    c: DMatrix<f64>,
    b: Option<DVector<f64>>,
    strictness: Strictness,
) -> Result<MtlParams> {
    let n = l.nrows();
    if n == 0 || !l.is_square() || c.nrows() != n || !c.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "L is {}x{}, C is {}x{}; both must be n x n with n >= 1",
            l.nrows(),
            l.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let b = b.unwrap_or_else(|| DVector::from_element(n, 1.0));
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!("B has length {}, expected {n}", b.len())));
    }
    check_finite_matrix(&l, "L")?;
    check_finite_matrix(&c, "C")?;
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("vector B".into()));
    }
    let l = symmetrize(l, "L")?;
    let c = symmetrize(c, "C")?;

    if l.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite { which: "L" });
    }
    let c_chol = c.clone().cholesky();
    let (c_inv, c_positive_definite) = match (strictness, c_chol) {
        (_, Some(ch)) => (ch.inverse(), true),
        (Strictness::Strict, None) => return Err(Error::NotPositiveDefinite { which: "C" }),
        (Strictness::Permissive, None) => {
            let det = c.determinant();
            if det.abs() <= SINGULAR_C_RTOL * frob(&c).powi(n as i32) {
                return Err(Error::SingularC { det });
            }
            let inv = c.clone().lu().try_inverse().ok_or(Error::SingularC { det })?;
            (inv, false)
        }
    };
    let c_inv = (&c_inv + c_inv.transpose()) * 0.5;
    Ok(MtlParams { n, l, c, b, strictness, c_inv, c_positive_definite })
}

/// Beam velocity and coupling constant `ξ` (Gaussian units).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamParams {
    pub u0: f64,
    pub xi: f64,
    pub plasma: Option<Plasma>,
}

/// Underlying beam quantities: cross-section, charge density and
/// charge-to-mass ratio `e/m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plasma {
    pub sigma: f64,
    pub rho0: f64,
    pub charge_mass_ratio: f64,
}

impl Plasma {
    /// Squared plasma frequency `4π e ρ₀ / m`.
    pub fn omega_p_sq(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.charge_mass_ratio * self.rho0
    }

    /// `ξ = 4π / (ω_p² σ)`.
    pub fn xi(&self) -> f64 {
        4.0 * std::f64::consts::PI / (self.omega_p_sq() * self.sigma)
    }
}

impl BeamParams {
    pub fn new(u0: f64, xi: f64) -> Result<Self> {
        check_positive("u0", u0)?;
        check_positive("xi", xi)?;
        Ok(BeamParams { u0, xi, plasma: None })
    }

    pub fn from_plasma(u0: f64, plasma: Plasma) -> Result<Self> {
        check_positive("u0", u0)?;
        check_positive("sigma", plasma.sigma)?;
        check_positive("rho0", plasma.rho0)?;
        check_positive("charge_mass_ratio", plasma.charge_mass_ratio)?;
        let xi = plasma.xi();
        check_positive("xi", xi)?;
        Ok(BeamParams { u0, xi, plasma: Some(plasma) })
    }

    /// Both `ξ` and the plasma quantities given: they must agree to `rtol`.
    pub fn with_consistency(u0: f64, xi: f64, plasma: Plasma, rtol: f64) -> Result<Self> {
        let derived = Self::from_plasma(u0, plasma)?;
        check_positive("xi", xi)?;
        let rel = (derived.xi - xi).abs() / xi;
        if rel > rtol {
            return Err(Error::InvalidParameter(format!(
                "xi = {xi} disagrees with 4*pi/(omega_p^2*sigma) = {} (relative {rel:.3e}); \
                 the coupling constant must satisfy the xi/plasma-frequency relation",
                derived.xi
            )));
        }
        Ok(BeamParams { u0, xi, plasma: Some(plasma) })
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(name.to_string()));
    }
    if x <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(())
}

/// Group of equal characteristic velocities.
#[derive(Debug, Clone)]
pub struct VelocityCluster {
    /// Common squared velocity.
    pub lambda: f64,
    pub indices: Vec<usize>,
    /// Euclidean norm of the `D̃` entries belonging to the cluster.
    pub coupling: f64,
}

impl VelocityCluster {
    pub fn multiplicity(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone)]
pub struct MtlSpectralData {
    pub mtl: MtlParams,
    /// Squared velocities: positive ones ascending, then non-positive ones.
    pub lambdas: Vec<f64>,
    /// `√λᵢ`; imaginary for non-positive `λᵢ`.
    pub velocities: Vec<Complex64>,
    pub p: DMatrix<f64>,
    pub d_vec: DVector<f64>,
    pub d: f64,
    pub dtilde: DVector<f64>,
    pub det_l: f64,
    pub det_c: f64,
    pub clusters: Vec<VelocityCluster>,
    pub imaginary_count: usize,
}

/// Characteristic velocities and the diagonalising congruence.
pub fn spectral_data(mtl: &MtlParams) -> MtlSpectralData {
    let n = mtl.n;
    let g = mtl.l.clone().cholesky().expect("validated L").l();
    let g_inv = g
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor is nonsingular");
    let m = &g_inv * &mtl.c_inv * g_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        (x <= 0.0).cmp(&(y <= 0.0)).then(x.partial_cmp(&y).unwrap())
    });
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let p = g_inv.transpose() * u;

    let velocities = lambdas
        .iter()
        .map(|&l| if l > 0.0 { Complex64::new(l.sqrt(), 0.0) } else { Complex64::new(0.0, (-l).sqrt()) })
        .collect();
    let imaginary_count = lambdas.iter().filter(|&&l| l <= 0.0).count();

    let d_vec = &mtl.c_inv * &mtl.b;
    let d = mtl.b.dot(&d_vec);
    let dtilde = p.transpose() * &d_vec;

    let mut clusters: Vec<VelocityCluster> = Vec::new();
    for (i, &l) in lambdas.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| (c.lambda - l).abs() <= CLUSTER_RTOL * c.lambda.abs().max(l.abs()))
        {
            Some(c) => c.indices.push(i),
            None => clusters.push(VelocityCluster { lambda: l, indices: vec![i], coupling: 0.0 }),
        }
    }
    for c in clusters.iter_mut() {
        c.lambda = c.indices.iter().map(|&i| lambdas[i]).sum::<f64>() / c.indices.len() as f64;
        c.coupling = c.indices.iter().map(|&i| dtilde[i] * dtilde[i]).sum::<f64>().sqrt();
    }

    MtlSpectralData {
        mtl: mtl.clone(),
        lambdas,
        velocities,
        p,
        d_vec,
        d,
        dtilde,
        det_l: mtl.l.determinant(),
        det_c: mtl.c.determinant(),
        clusters,
        imaginary_count,
    }
}

impl MtlSpectralData {
    pub fn n(&self) -> usize {
        self.mtl.n
    }

    /// Real characteristic velocities in ascending order.
    pub fn real_velocities(&self) -> Vec<f64> {
        self.lambdas.iter().filter(|&&l| l > 0.0).map(|l| l.sqrt()).collect()
    }

    /// Smallest real characteristic velocity.
    pub fn v1(&self) -> Option<f64> {
        self.real_velocities().first().copied()
    }

    pub fn require_real(&self) -> Result<()> {
        if self.imaginary_count > 0 {
            Err(Error::ComplexVelocities { count: self.imaginary_count })
        } else {
            Ok(())
        }
    }

    /// `A(v) = −v²L + C⁻¹`.
    pub fn a_matrix(&self, v: Complex64) -> DMatrix<Complex64> {
        let v2 = v * v;
        DMatrix::from_fn(self.n(), self.n(), |i, j| {
            -v2 * self.mtl.l[(i, j)] + self.mtl.c_inv[(i, j)]
        })
    }

    /// `D̃` recomputed by solving `(LP) x = D`, which follows from `P⁻¹ = PᵀL`.
    pub fn dtilde_via_congruence(&self) -> DVector<f64> {
        let lp = &self.mtl.l * &self.p;
        lp.lu().solve(&self.d_vec).expect("LP is nonsingular")
    }
}
