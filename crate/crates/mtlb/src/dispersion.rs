//! Dispersion relation of the homogeneous line–beam system in the phase
//! velocity `v = ω/k`, its roots and their classification, the gain of the
//! growing wave, and the coupling threshold in `ξ`.
//!
//! In the congruence frame the determinant reads
//!
//! ```text
//! Δ(v) = |L| · ( Πᵢ(λᵢ − v²)·[d − ξ(v − u₀)²] − Σᵢ D̃ᵢ² Πⱼ≠ᵢ(λⱼ − v²) )
//! ```
//!
//! with `λᵢ = vᵢ²`. The factor `|L|` makes `Δ` equal to the determinant of
//! the full `(n+1)×(n+1)` mode matrix, so the leading coefficient is
//! `(−1)ⁿ⁺¹ξ|L|` and the constant term is `−ξu₀²|C⁻¹|`.
//!
//! Real roots are the intersections of the parabola `−ξ(v − u₀)²` with the
//! characteristic function `R(v) = Σ D̃ᵢ²/(λᵢ − v²) − d`. Equal velocities and
//! vanishing `D̃` entries make `±vᵢ` exact roots; those factors are divided
//! out analytically before the companion-matrix solve.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mtl::{BeamParams, MtlSpectralData, Strictness};
use crate::poly::Poly;

/// Roots with `|Im| ≤ IM_RTOL·max(1,|r|)` are treated as real.
pub const IM_RTOL: f64 = 1e-7;
/// Relative residual bound for every reported root.
pub const RESIDUAL_RTOL: f64 = 1e-8;
/// Cluster couplings below this fraction of `‖D̃‖` count as zero.
pub const COUPLING_ZERO_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootKind {
    RealOscillatory,
    CharacteristicCoincident,
    GrowingPair,
    SpuriousComplex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: Complex64,
    pub multiplicity: usize,
    pub kind: RootKind,
}

#[derive(Debug, Clone)]
pub struct DispersionSolution {
    pub omega: f64,
    /// Coefficients of `Δ(v)`, highest power first.
    pub coeffs_v: Vec<f64>,
    pub roots: Vec<Root>,
    pub v0: Option<Complex64>,
    pub k0: Option<Complex64>,
    pub gain: Option<f64>,
    /// Whether the hypotheses guaranteeing one complex pair hold.
    pub growth_guaranteed: bool,
    /// Raised for every permissive-mode system.
    pub permissive: bool,
    pub warnings: Vec<String>,
}

impl DispersionSolution {
    pub fn degree(&self) -> usize {
        self.coeffs_v.len() - 1
    }

    pub fn real_root_count(&self) -> usize {
        self.roots
            .iter()
            .filter(|r| r.value.im == 0.0)
            .map(|r| r.multiplicity)
            .sum()
    }

    pub fn complex_pair_count(&self) -> usize {
        self.roots.iter().filter(|r| r.value.im > 0.0).map(|r| r.multiplicity).sum()
    }

    /// Every root repeated by multiplicity.
    pub fn all_roots(&self) -> Vec<Complex64> {
        self.roots
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.value, r.multiplicity))
            .collect()
    }

    /// Real roots (with multiplicity), ascending.
    pub fn real_roots(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .all_roots()
            .into_iter()
            .filter(|r| r.im == 0.0)
            .map(|r| r.re)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn polynomial(&self) -> Poly {
        Poly::from_descending(&self.coeffs_v)
    }
}

fn lambda_factor(lambda: f64) -> Poly {
    Poly::new(vec![lambda, 0.0, -1.0])
}

fn beam_factor(spec: &MtlSpectralData, beam: &BeamParams) -> Poly {
    let (u0, xi) = (beam.u0, beam.xi);
    Poly::new(vec![spec.d - xi * u0 * u0, 2.0 * xi * u0, -xi])
}

/// Coefficients of `Δ(v)`, highest power first, length `2n + 3`.
pub fn dispersion_polynomial(spec: &MtlSpectralData, beam: &BeamParams) -> Vec<f64> {
    delta_poly(spec, beam).descending()
}

pub(crate) fn delta_poly(spec: &MtlSpectralData, beam: &BeamParams) -> Poly {
    let n = spec.n();
    let factors: Vec<Poly> = spec.lambdas.iter().map(|&l| lambda_factor(l)).collect();
    let prod_except = |skip: Option<usize>| {
        factors
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .fold(Poly::constant(1.0), |acc, (_, f)| acc.mul(f))
    };
    let mut p = prod_except(None).mul(&beam_factor(spec, beam));
    for i in 0..n {
        let t = spec.dtilde[i] * spec.dtilde[i];
        p = p.add(&prod_except(Some(i)).scale(-t));
    }
    p.scale(spec.det_l)
}

/// Active asymptotes and the analytically deflated polynomial.
#[derive(Debug, Clone)]
pub(crate) struct Deflation {
    /// `(λ, multiplicity)` of exact roots at `v² = λ`.
    pub exact: Vec<(f64, usize)>,
    pub reduced: Poly,
}

pub(crate) fn deflate(spec: &MtlSpectralData, beam: &BeamParams) -> Deflation {
    let norm = spec.dtilde.norm();
    let mut active = Vec::new();
    let mut exact = Vec::new();
    for c in &spec.clusters {
        let m = c.multiplicity();
        if c.coupling > COUPLING_ZERO_RTOL * norm {
            active.push((c.lambda, c.coupling * c.coupling));
            if m > 1 {
                exact.push((c.lambda, m - 1));
            }
        } else {
            exact.push((c.lambda, m));
        }
    }
    let factors: Vec<Poly> = active.iter().map(|&(l, _)| lambda_factor(l)).collect();
    let prod_except = |skip: Option<usize>| {
        factors
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .fold(Poly::constant(1.0), |acc, (_, f)| acc.mul(f))
    };
    let mut reduced = prod_except(None).mul(&beam_factor(spec, beam));
    for (i, &(_, t)) in active.iter().enumerate() {
        reduced = reduced.add(&prod_except(Some(i)).scale(-t));
    }
    Deflation { exact, reduced }
}

/// `R(v) = Σ D̃ᵢ²/(λᵢ − v²) − d`.
pub fn characteristic_function(spec: &MtlSpectralData, v: f64) -> Result<f64> {
    let norm = spec.dtilde.norm();
    let mut r = -spec.d;
    for (i, &l) in spec.lambdas.iter().enumerate() {
        let t = spec.dtilde[i] * spec.dtilde[i];
        if l > 0.0 && spec.dtilde[i].abs() > COUPLING_ZERO_RTOL * norm {
            let vi = l.sqrt();
            if (v.abs() - vi).abs() <= 1e-12 * vi.max(1.0) {
                return Err(Error::AtAsymptote { v });
            }
        }
        if t != 0.0 {
            r += t / (l - v * v);
        }
    }
    Ok(r)
}

/// `R'(v) = Σ 2v D̃ᵢ²/(λᵢ − v²)²`.
pub fn characteristic_derivative(spec: &MtlSpectralData, v: f64) -> f64 {
    spec.lambdas
        .iter()
        .zip(spec.dtilde.iter())
        .map(|(&l, &dt)| 2.0 * v * dt * dt / ((l - v * v) * (l - v * v)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicFunctionSample {
    pub v: f64,
    pub value: f64,
    pub branch_index: usize,
    pub is_asymptote_adjacent: bool,
}

/// Samples `R` on `[v_min, v_max]`, skipping points on asymptotes.
/// Branches are numbered left to right by the active asymptotes they lie
/// between.
pub fn sample_characteristic_function(
    spec: &MtlSpectralData,
    v_min: f64,
    v_max: f64,
    points: usize,
) -> Vec<CharacteristicFunctionSample> {
    let walls = branch_walls(spec);
    let width = (v_max - v_min).abs().max(f64::MIN_POSITIVE);
    (0..points)
        .filter_map(|i| {
            let v = v_min + (v_max - v_min) * i as f64 / (points.max(2) - 1) as f64;
            let value = characteristic_function(spec, v).ok()?;
            let branch_index = walls.iter().filter(|&&w| w < v).count();
            let near = walls.iter().any(|w| (w - v).abs() < 1e-3 * width);
            Some(CharacteristicFunctionSample { v, value, branch_index, is_asymptote_adjacent: near })
        })
        .collect()
}

/// Sorted `±wᵢ` of active real asymptotes.
fn branch_walls(spec: &MtlSpectralData) -> Vec<f64> {
    let norm = spec.dtilde.norm();
    let mut w: Vec<f64> = spec
        .clusters
        .iter()
        .filter(|c| c.lambda > 0.0 && c.coupling > COUPLING_ZERO_RTOL * norm)
        .flat_map(|c| {
            let s = c.lambda.sqrt();
            [-s, s]
        })
        .collect();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    w
}

/// `−Im(ω/v₀) = ω·Im v₀/|v₀|²`.
pub fn amplification_factor(omega: f64, v0: Complex64) -> Result<f64> {
    if v0.im <= 0.0 {
        return Err(Error::NonGrowingInput { im: v0.im });
    }
    Ok(-(Complex64::new(omega, 0.0) / v0).im)
}

fn is_real(r: Complex64) -> bool {
    r.im.abs() <= IM_RTOL * r.norm().max(1.0)
}

/// Finds, classifies and checks all `2n + 2` roots.
///
/// Returns `Ok` with `v0 = None` when every root is real; that is a valid
/// outcome outside the amplification hypotheses and is noted in `warnings`.
pub fn solve_dispersion(
    spec: &MtlSpectralData,
    beam: &BeamParams,
    omega: f64,
) -> Result<DispersionSolution> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidParameter("omega must be positive".into()));
    }
    let n = spec.n();
    let full = delta_poly(spec, beam);
    let defl = deflate(spec, beam);
    let permissive = spec.mtl.strictness == Strictness::Permissive;

    let mut roots: Vec<Root> = Vec::new();
    for &(lambda, m) in &defl.exact {
        let s = if lambda >= 0.0 {
            Complex64::new(lambda.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-lambda).sqrt())
        };
        for v in [s, -s] {
            roots.push(Root { value: v, multiplicity: m, kind: RootKind::CharacteristicCoincident });
        }
    }

    let raw = defl.reduced.roots();
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower = 0usize;
    for r in raw {
        if is_real(r) {
            roots.push(Root {
                value: Complex64::new(r.re, 0.0),
                multiplicity: 1,
                kind: RootKind::RealOscillatory,
            });
        } else if r.im > 0.0 {
            upper.push(r);
        } else {
            lower += 1;
        }
    }
    if upper.len() != lower {
        return Err(Error::RootResidualTooLarge {
            root: upper.first().copied().unwrap_or_default(),
            residual: f64::NAN,
        });
    }

    let growing = pick_growing(spec, &upper, omega, permissive);
    for (i, &r) in upper.iter().enumerate() {
        let kind = if Some(i) == growing { RootKind::GrowingPair } else { RootKind::SpuriousComplex };
        roots.push(Root { value: r, multiplicity: 1, kind });
        roots.push(Root { value: r.conj(), multiplicity: 1, kind });
    }
    roots.sort_by(|a, b| {
        a.value.re.partial_cmp(&b.value.re).unwrap().then(a.value.im.partial_cmp(&b.value.im).unwrap())
    });

    // The reduced polynomial is what was solved; the full one is checked as
    // well unless its powers overflow, as they do for many identical lines.
    for r in &roots {
        if r.kind == RootKind::CharacteristicCoincident {
            continue;
        }
        for (p, deg) in [(&defl.reduced, defl.reduced.degree()), (&full, 2 * n + 2)] {
            let bound = RESIDUAL_RTOL * p.max_abs_coeff() * r.value.norm().max(1.0).powi(deg as i32);
            let res = p.eval_c(r.value).norm();
            if !bound.is_finite() || !res.is_finite() {
                continue;
            }
            if res.is_nan() || res >= bound {
                return Err(Error::RootResidualTooLarge { root: r.value, residual: res / bound * RESIDUAL_RTOL });
            }
        }
    }

    let v0 = growing.map(|i| upper[i]);
    let k0 = v0.map(|v| Complex64::new(omega, 0.0) / v);
    let gain = k0.map(|k| -k.im);

    let growth_guaranteed = !permissive
        && spec.imaginary_count == 0
        && xi_threshold(spec, beam.u0).map(|t| beam.xi < t.xi0).unwrap_or(false);

    let mut sol = DispersionSolution {
        omega,
        coeffs_v: full.descending(),
        roots,
        v0,
        k0,
        gain,
        growth_guaranteed,
        permissive,
        warnings: spec.mtl.warnings(),
    };
    let n_real = sol.real_root_count();
    let n_pairs = sol.complex_pair_count();
    if v0.is_none() {
        sol.warnings.push("no growing complex pair: all physical roots are real".into());
    }
    if permissive && (n_real != 2 * n || n_pairs != 1 || v0.is_none()) {
        sol.warnings.push(format!(
            "permissive-mode discrepancy: {n_real} real roots and {n_pairs} complex pair(s); \
             a positive-definite system would have {} real roots and one growing pair",
            2 * n
        ));
    }
    if growth_guaranteed && (n_real != 2 * n || n_pairs != 1) {
        sol.warnings.push(format!(
            "root structure deviates from the guaranteed count: {n_real} real roots, {n_pairs} pairs"
        ));
    }
    Ok(sol)
}

/// Index of the growing member among upper-half-plane roots.
///
/// With a definite capacitance there is at most one pair. Otherwise the
/// pairs closest to the imaginary characteristic velocities are set aside
/// as spurious and the remaining pair of largest gain is kept.
fn pick_growing(
    spec: &MtlSpectralData,
    upper: &[Complex64],
    omega: f64,
    permissive: bool,
) -> Option<usize> {
    if upper.is_empty() {
        return None;
    }
    let mut candidates: Vec<usize> = (0..upper.len()).collect();
    if permissive {
        for c in spec.clusters.iter().filter(|c| c.lambda < 0.0) {
            let target = Complex64::new(0.0, (-c.lambda).sqrt());
            for _ in 0..c.multiplicity() {
                if let Some(pos) = candidates
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        (upper[*a.1] - target).norm().partial_cmp(&(upper[*b.1] - target).norm()).unwrap()
                    })
                    .map(|(p, _)| p)
                {
                    candidates.remove(pos);
                }
            }
        }
    }
    candidates.into_iter().max_by(|&a, &b| {
        let ga = omega * upper[a].im / upper[a].norm_sqr();
        let gb = omega * upper[b].im / upper[b].norm_sqr();
        ga.partial_cmp(&gb).unwrap()
    })
}

/// Relative residual of the canonical factorization
/// `Δ(v) = |A(v)|·[d − ξ(v − u₀)² − Dᵀ A(v)⁻¹ D]`, evaluated independently
/// on each side.
pub fn canonical_factorization_residual(
    spec: &MtlSpectralData,
    beam: &BeamParams,
    v: Complex64,
) -> Result<f64> {
    let v2 = v * v;
    for &l in &spec.lambdas {
        let scale = l.abs().max(v2.norm()).max(1.0);
        if (Complex64::new(l, 0.0) - v2).norm() <= 1e-10 * scale {
            return Err(Error::NearCharacteristicVelocity { v });
        }
    }
    let full = delta_poly(spec, beam);
    let lhs = full.eval_c(v);
    let a = spec.a_matrix(v);
    let lu = a.clone().lu();
    let det_a = lu.determinant();
    let dc: nalgebra::DVector<Complex64> = spec.d_vec.map(|x| Complex64::new(x, 0.0));
    let sol = lu.solve(&dc).ok_or(Error::NearCharacteristicVelocity { v })?;
    let quad: Complex64 = dc.iter().zip(sol.iter()).map(|(a, b)| a * b).sum();
    let w = v - beam.u0;
    let rhs = det_a * (Complex64::new(spec.d, 0.0) - beam.xi * w * w - quad);
    let denom = if lhs.norm() > 0.0 { lhs.norm() } else { full.magnitude_scale(v) };
    Ok((lhs - rhs).norm() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    /// `u₀ ≤ v₁`: a growing pair exists for every `ξ > 0`.
    Unconditional,
    /// Single line: the exact value where the pair appears.
    Exact,
    /// Several lines: a sufficient (not sharp) bound.
    Sufficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiThreshold {
    pub xi0: f64,
    pub method: ThresholdMethod,
}

/// Coupling below which a growing pair is guaranteed.
///
/// For one line with `γ = v₁/u₀ < 1` the pair disappears exactly at
/// `ξ₀ = b²Lγ²/(1 − γ^{2/3})³`, where the parabola becomes tangent to the
/// outer branch of `R`. For several lines the bound compares the parabola's
/// slope at `v = 0` with the smallest slope of `R` on `(v₁, u₀)`.
pub fn xi_threshold(spec: &MtlSpectralData, u0: f64) -> Result<XiThreshold> {
    spec.require_real()?;
    let v1 = spec.v1().expect("real spectrum has a velocity");
    if u0 <= v1 {
        return Ok(XiThreshold { xi0: f64::INFINITY, method: ThresholdMethod::Unconditional });
    }
    if spec.n() == 1 {
        let gamma = v1 / u0;
        let l = spec.mtl.l[(0, 0)];
        let b = spec.mtl.b[0];
        let xi0 = b * b * l * gamma * gamma / (1.0 - gamma.powf(2.0 / 3.0)).powi(3);
        return Ok(XiThreshold { xi0, method: ThresholdMethod::Exact });
    }
    let min_slope = min_characteristic_slope(spec, v1, u0);
    Ok(XiThreshold { xi0: min_slope / (2.0 * u0), method: ThresholdMethod::Sufficient })
}

/// Minimum of `R'` over `(a, b)`, split at interior active asymptotes.
fn min_characteristic_slope(spec: &MtlSpectralData, a: f64, b: f64) -> f64 {
    let mut cuts: Vec<f64> = vec![a];
    cuts.extend(branch_walls(spec).into_iter().filter(|&w| w > a * (1.0 + 1e-12) && w < b));
    cuts.push(b);
    let f = |v: f64| characteristic_derivative(spec, v);
    let mut best = f64::INFINITY;
    for win in cuts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        let samples = 400;
        let pt = |t: f64| lo + (hi - lo) * 0.5 * (1.0 - (std::f64::consts::PI * t).cos());
        let mut k_best = 1;
        let mut f_best = f64::INFINITY;
        for k in 1..=samples {
            let t = k as f64 / samples as f64;
            let v = if k == samples { hi } else { pt(t) };
            let fv = f(v);
            if fv < f_best {
                f_best = fv;
                k_best = k;
            }
        }
        let t_lo = (k_best as f64 - 1.0) / samples as f64;
        let t_hi = ((k_best as f64 + 1.0) / samples as f64).min(1.0);
        let (v, fv) = golden_min(&f, pt(t_lo).max(lo), pt(t_hi).min(hi));
        let _ = v;
        best = best.min(fv).min(f_best);
    }
    best
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Relative Vieta residuals. `sum` compares the root sum with `2u₀`;
/// `product` compares `|v₀|²·Π(real roots)` with `(−1)ⁿu₀²/(|L||C|)` and is
/// present only when a growing pair exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VietaResiduals {
    pub sum_residual: f64,
    pub product_residual: Option<f64>,
}

pub fn vieta_residuals(
    solution: &DispersionSolution,
    beam: &BeamParams,
    spec: &MtlSpectralData,
) -> VietaResiduals {
    let all = solution.all_roots();
    let sum: Complex64 = all.iter().sum();
    let sum_scale = all.iter().map(|r| r.norm()).sum::<f64>().max(1.0);
    let sum_residual = (sum - Complex64::new(2.0 * beam.u0, 0.0)).norm() / sum_scale;

    let product_residual = solution.v0.map(|v0| {
        let reals: f64 = solution.real_roots().iter().product();
        let spurious: Complex64 = solution
            .roots
            .iter()
            .filter(|r| r.value.im != 0.0 && r.kind != RootKind::GrowingPair)
            .map(|r| r.value.powu(r.multiplicity as u32))
            .product();
        let lhs = spurious * v0.norm_sqr() * reals;
        let sign = if spec.n().is_multiple_of(2) { 1.0 } else { -1.0 };
        let rhs = sign * beam.u0 * beam.u0 / (spec.det_l * spec.det_c);
        (lhs - rhs).norm() / rhs.abs().max(1.0)
    });
    VietaResiduals { sum_residual, product_residual }
}

/// Real roots of `Δ` away from the exact characteristic roots, found by
/// scanning each monotone branch of `R` for sign changes of
/// `R(v) + ξ(v − u₀)²` and refining with Brent's method.
pub fn bracketed_real_roots(spec: &MtlSpectralData, beam: &BeamParams) -> Vec<f64> {
    let (u0, xi) = (beam.u0, beam.xi);
    let g = |v: f64| characteristic_function(spec, v).map(|r| r + xi * (v - u0) * (v - u0));
    let walls = branch_walls(spec);
    let outer = {
        let span = walls.last().copied().unwrap_or(0.0);
        let mut x = u0.abs() + span + (spec.d.abs() / xi).sqrt() + 1.0;
        for _ in 0..200 {
            if g(x).map(|y| y > 0.0).unwrap_or(false) && g(-x).map(|y| y > 0.0).unwrap_or(false) {
                break;
            }
            x *= 2.0;
        }
        x
    };
    let mut edges = vec![-outer];
    edges.extend(walls.iter().copied());
    edges.push(outer);

    let mut roots = Vec::new();
    for win in edges.windows(2) {
        let (a, b) = (win[0], win[1]);
        let pad = |w: f64| 1e-8 * w.abs().max(1.0);
        let lo = if a == -outer { a } else { a + pad(a) };
        let hi = if b == outer { b } else { b - pad(b) };
        if lo >= hi {
            continue;
        }
        let samples = 2000;
        let pt = |k: usize| {
            let t = k as f64 / samples as f64;
            lo + (hi - lo) * 0.5 * (1.0 - (std::f64::consts::PI * t).cos())
        };
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=samples {
            let x = pt(k);
            let Ok(y) = g(x) else { continue };
            if y == 0.0 {
                roots.push(x);
            } else if let Some((px, py)) = prev {
                if py * y < 0.0 {
                    if let Some(r) = brent(&|v| g(v).unwrap_or(f64::NAN), px, x, py, y) {
                        roots.push(r);
                    }
                }
            }
            prev = Some((x, y));
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

fn brent(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> Option<f64> {
    if fa * fb > 0.0 {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 1e-300;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
        if !fb.is_finite() {
            return None;
        }
    }
    Some(b)
}

/// Determinant of the `(n+1)×(n+1)` mode matrix `Ã(v)` by LU; an
/// independent route to `Δ(v)`.
pub fn mode_matrix(spec: &MtlSpectralData, beam: &BeamParams, v: Complex64) -> DMatrix<Complex64> {
    let n = spec.n();
    let a = spec.a_matrix(v);
    let w = v - beam.u0;
    DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => Complex64::new(spec.d_vec[i], 0.0),
        (false, true) => Complex64::new(spec.d_vec[j], 0.0),
        (false, false) => Complex64::new(spec.d, 0.0) - beam.xi * w * w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtl::{spectral_data, validate_mtl, MtlParams};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn reference() -> (MtlSpectralData, BeamParams) {
        (spectral_data(&MtlParams::single(1.0, 1.0).unwrap()), BeamParams::new(1.0, 1.0).unwrap())
    }

    #[test]
    fn reference_polynomial() {
        let (s, b) = reference();
        let c = dispersion_polynomial(&s, &b);
        let want = [1.0, -2.0, -1.0, 2.0, -1.0];
        for (x, y) in c.iter().zip(want.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn single_line_leading_coefficients() {
        let s = spectral_data(&MtlParams::single(2.0, 0.7).unwrap());
        let b = BeamParams::new(0.4, 3.0).unwrap();
        let c = dispersion_polynomial(&s, &b);
        // n = 1: leading ξ|L|, next −2ξu₀|L|, constant −ξu₀²/|C|
        assert_relative_eq!(c[0], 3.0 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], -2.0 * 3.0 * 0.4 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(c[4], -3.0 * 0.16 / 0.7, epsilon = 1e-12);
    }

    #[test]
    fn doubling_xi_is_linear_in_the_beam_part() {
        let s = spectral_data(&MtlParams::single(1.3, 0.9).unwrap());
        let c1 = dispersion_polynomial(&s, &BeamParams::new(0.8, 1.0).unwrap());
        let c2 = dispersion_polynomial(&s, &BeamParams::new(0.8, 2.0).unwrap());
        assert_relative_eq!(c2[0], 2.0 * c1[0], epsilon = 1e-12);
        assert_relative_eq!(c2[1], 2.0 * c1[1], epsilon = 1e-12);
        // v² and constant coefficients mix ξ with the ξ-free product term
        let c0 = dispersion_polynomial(&s, &BeamParams::new(0.8, 1e-300).unwrap());
        for j in 0..5 {
            assert_relative_eq!(c2[j] - c0[j], 2.0 * (c1[j] - c0[j]), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn characteristic_function_values() {
        let (s, _) = reference();
        assert_relative_eq!(characteristic_function(&s, 0.5).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(characteristic_function(&s, 0.0).unwrap(), 0.0);
        let far = characteristic_function(&s, 1e6).unwrap();
        assert_relative_eq!(far, -1.0, max_relative = 1e-4);
        assert!(matches!(characteristic_function(&s, 1.0), Err(Error::AtAsymptote { .. })));
    }

    #[test]
    fn reference_roots() {
        let (s, b) = reference();
        let sol = solve_dispersion(&s, &b, 1.0).unwrap();
        assert_eq!(sol.real_root_count(), 2);
        assert_eq!(sol.complex_pair_count(), 1);
        assert!(sol.growth_guaranteed);
        // oracle: numpy.roots([1,-2,-1,2,-1]) -> 0.5 ± 0.40523273i, 2.13224188, -1.13224188
        let v0 = sol.v0.unwrap();
        assert_relative_eq!(v0.re, 0.5, epsilon = 1e-12);
        assert_relative_eq!(v0.im, 0.405_232_726_187_181_8, epsilon = 1e-12);
        let reals = sol.real_roots();
        assert_relative_eq!(reals[0], -1.132_241_88, epsilon = 1e-8);
        assert_relative_eq!(reals[1], 2.132_241_88, epsilon = 1e-8);
        assert_relative_eq!(sol.gain.unwrap(), 0.978_318_343_478_516_5, epsilon = 1e-12);
        assert!(sol.k0.unwrap().im < 0.0);
    }

    #[test]
    fn determinant_route_matches_polynomial() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, -0.3, -0.3, 1.0]);
        let s = spectral_data(&validate_mtl(l, c, None, Strictness::Strict).unwrap());
        let b = BeamParams::new(0.9, 0.7).unwrap();
        let p = delta_poly(&s, &b);
        for v in [Complex64::new(0.3, 0.1), Complex64::new(-1.7, 0.0), Complex64::new(2.0, -0.5)] {
            let det = mode_matrix(&s, &b, v).lu().determinant();
            assert!((det - p.eval_c(v)).norm() < 1e-12 * p.magnitude_scale(v));
        }
    }

    #[test]
    fn amplification_factor_examples() {
        assert_relative_eq!(amplification_factor(1.0, Complex64::new(0.0, 1.0)).unwrap(), 1.0);
        assert_relative_eq!(amplification_factor(2.0, Complex64::new(0.0, 1.0)).unwrap(), 2.0);
        assert_relative_eq!(amplification_factor(1.0, Complex64::new(1.0, 1.0)).unwrap(), 0.5);
        assert!(amplification_factor(1.0, Complex64::new(1.0, -1.0)).is_err());
    }

    #[test]
    fn canonical_factorization_examples() {
        let (s, b) = reference();
        assert!(canonical_factorization_residual(&s, &b, Complex64::new(2.0, 0.0)).unwrap() < 1e-12);
        assert!(canonical_factorization_residual(&s, &b, Complex64::new(0.0, 0.0)).unwrap() < 1e-12);
        assert!(matches!(
            canonical_factorization_residual(&s, &b, Complex64::new(1.0 + 1e-15, 0.0)),
            Err(Error::NearCharacteristicVelocity { .. })
        ));
    }

    #[test]
    fn threshold_examples() {
        let s = spectral_data(&MtlParams::single(1.0, 1.0).unwrap());
        assert_eq!(xi_threshold(&s, 0.5).unwrap().method, ThresholdMethod::Unconditional);
        assert!(xi_threshold(&s, 1.0).unwrap().xi0.is_infinite());
        let t = xi_threshold(&s, 2.0).unwrap();
        assert_eq!(t.method, ThresholdMethod::Exact);
        // independent oracle: bisection on the numpy root count gave 4.933962451827
        assert_relative_eq!(t.xi0, 4.933_962_451_827, max_relative = 1e-10);
    }

    #[test]
    fn vieta_on_reference() {
        let (s, b) = reference();
        let sol = solve_dispersion(&s, &b, 1.0).unwrap();
        let v = vieta_residuals(&sol, &b, &s);
        assert!(v.sum_residual < 1e-13);
        assert!(v.product_residual.unwrap() < 1e-13);
    }

    #[test]
    fn brackets_agree_with_companion_on_reference() {
        let (s, b) = reference();
        let sol = solve_dispersion(&s, &b, 1.0).unwrap();
        let br = bracketed_real_roots(&s, &b);
        assert_eq!(br.len(), 2);
        for (x, y) in br.iter().zip(sol.real_roots().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn decoupled_line_gives_exact_characteristic_roots() {
        // line 2 carries no coupling: B = (1, 0) with diagonal C
        let m = validate_mtl(
            DMatrix::identity(2, 2),
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0])),
            Some(nalgebra::DVector::from_vec(vec![1.0, 0.0])),
            Strictness::Strict,
        )
        .unwrap();
        let s = spectral_data(&m);
        let sol = solve_dispersion(&s, &BeamParams::new(1.0, 1.0).unwrap(), 1.0).unwrap();
        let coincident: Vec<_> =
            sol.roots.iter().filter(|r| r.kind == RootKind::CharacteristicCoincident).collect();
        assert_eq!(coincident.len(), 2);
        assert_relative_eq!(coincident[1].value.re, 0.5, epsilon = 1e-15);
        assert_eq!(sol.real_root_count(), 4);
        assert_eq!(sol.complex_pair_count(), 1);
    }

    #[test]
    fn identical_lines_have_multiplicity() {
        // three identical uncoupled lines: v = 1 has multiplicity k - 1 = 2
        let m = MtlParams::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3), None, Strictness::Strict)
            .unwrap();
        let s = spectral_data(&m);
        let sol = solve_dispersion(&s, &BeamParams::new(1.0, 1.0).unwrap(), 1.0).unwrap();
        let c: Vec<_> = sol.roots.iter().filter(|r| r.kind == RootKind::CharacteristicCoincident).collect();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|r| r.multiplicity == 2));
        assert_eq!(sol.real_root_count(), 6);
        assert_eq!(sol.all_roots().len(), 8);
    }

    #[test]
    fn permissive_three_line_examples() {
        let l = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 5.0, 2.0, 0.5, 2.0, 2.0]);
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 2.0, 1.0, 4.0, 0.0, 2.0, 0.0, 1.0]);
        let m = validate_mtl(l, c, None, Strictness::Permissive).unwrap();
        let s = spectral_data(&m);
        let a = solve_dispersion(&s, &BeamParams::new(0.18, 2.0).unwrap(), 1.0).unwrap();
        assert_eq!(a.real_root_count(), 4);
        assert!(a.permissive);
        // numpy oracle: growing pair 0.02052 ± 0.05455i, spurious pair near ±0.915i
        let v0 = a.v0.unwrap();
        assert!((v0 - Complex64::new(0.02052, 0.05455)).norm() < 1e-4);
        let b = solve_dispersion(&s, &BeamParams::new(0.8, 18.0).unwrap(), 1.0).unwrap();
        assert_eq!(b.real_root_count(), 6);
        assert!(b.v0.is_none());
        assert!(b.warnings.iter().any(|w| w.contains("discrepancy")));
    }
}
