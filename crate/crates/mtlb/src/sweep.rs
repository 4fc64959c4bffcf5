//! Gain sweeps over one beam or drive parameter, and log–log exponent fits.

use num_complex::Complex64;

use crate::dispersion::solve_dispersion;
use crate::error::{Error, Result};
use crate::mtl::{BeamParams, MtlSpectralData};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Xi,
    U0,
    Omega,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Xi => "xi",
            SweepParam::U0 => "u0",
            SweepParam::Omega => "omega",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xi" => Ok(SweepParam::Xi),
            "u0" => Ok(SweepParam::U0),
            "omega" => Ok(SweepParam::Omega),
            _ => Err(Error::InvalidParameter(format!("unknown sweep parameter '{s}' (xi, u0, omega)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub gain: Option<f64>,
    pub v0: Option<Complex64>,
    pub real_roots: usize,
    pub warnings: Vec<String>,
}

/// `points` values from `from` to `to`, inclusive, linear or geometric.
pub fn sweep_values(from: f64, to: f64, points: usize, log: bool) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::NonFinite("sweep range".into()));
    }
    if log && !(from > 0.0 && to > 0.0) {
        return Err(Error::InvalidParameter("log sweep needs a positive range".into()));
    }
    Ok(match points {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..points)
            .map(|i| {
                let s = i as f64 / (points - 1) as f64;
                if i == 0 {
                    from
                } else if i == points - 1 {
                    to
                } else if log {
                    from * (to / from).powf(s)
                } else {
                    from + s * (to - from)
                }
            })
            .collect(),
    })
}

/// Solves the dispersion relation at each value; rows keep input order and
/// do not depend on the thread count.
pub fn gain_sweep(
    spec: &MtlSpectralData,
    beam: &BeamParams,
    omega: f64,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let rows = par::map(values, |&x| {
        let (mut b, mut w) = (beam.clone(), omega);
        match param {
            SweepParam::Xi => b = BeamParams::new(b.u0, x)?,
            SweepParam::U0 => b = BeamParams::new(x, b.xi)?,
            SweepParam::Omega => w = x,
        }
        let sol = solve_dispersion(spec, &b, w)?;
        Ok(SweepRow {
            value: x,
            gain: sol.gain,
            v0: sol.v0,
            real_roots: sol.real_root_count(),
            warnings: sol.warnings,
        })
    });
    rows.into_iter().collect()
}

/// Least-squares line `y = a·x + b`; returns `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Slope of `log gain` against `log value` over the rows that have a gain.
/// `None` unless those rows span at least `min_decades`.
pub fn asymptotic_exponent(rows: &[SweepRow], min_decades: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.gain.filter(|g| *g > 0.0 && r.value > 0.0).map(|g| (r.value.ln(), g.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if (hi - lo) / std::f64::consts::LN_10 < min_decades - 1e-9 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(linear_fit(&x, &y).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtl::{spectral_data, MtlParams};

    #[test]
    fn linear_fit_recovers_line() {
        let (a, b, r2) = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]);
        assert!((a - 2.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn values_are_inclusive() {
        let v = sweep_values(1e-6, 1e-3, 4, true).unwrap();
        assert_eq!(v.len(), 4);
        assert!((v[1] / 1e-5 - 1.0).abs() < 1e-12 && (v[3] / 1e-3 - 1.0).abs() < 1e-12);
        assert_eq!(sweep_values(0.0, 1.0, 3, false).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(sweep_values(1.0, 2.0, 0, false).unwrap().is_empty());
        assert!(sweep_values(-1.0, 2.0, 3, true).is_err());
    }

    /// Small-ξ gain behaves as ξ^{-1/2} when the beam is synchronous.
    #[test]
    fn small_xi_exponent() {
        let spec = spectral_data(&MtlParams::single(1.0, 1.0).unwrap());
        let beam = BeamParams::new(1.0, 1.0).unwrap();
        let xs = sweep_values(1e-6, 1e-3, 13, true).unwrap();
        let rows = gain_sweep(&spec, &beam, 1.0, SweepParam::Xi, &xs).unwrap();
        let e = asymptotic_exponent(&rows, 3.0).unwrap();
        assert!((e + 0.5).abs() < 0.05, "{e}");
        assert!(asymptotic_exponent(&rows[..4], 3.0).is_none());
    }

    #[test]
    fn sweep_matches_sequential() {
        let spec = spectral_data(&MtlParams::single(1.0, 1.0).unwrap());
        let beam = BeamParams::new(1.0, 1.0).unwrap();
        let xs = sweep_values(0.5, 2.0, 9, false).unwrap();
        let rows = gain_sweep(&spec, &beam, 1.0, SweepParam::Omega, &xs).unwrap();
        for (r, &w) in rows.iter().zip(&xs) {
            let s = solve_dispersion(&spec, &beam, w).unwrap();
            assert_eq!(r.gain, s.gain);
        }
        // gain is linear in ω
        let g1 = rows[2].gain.unwrap() / rows[2].value;
        assert!(rows.iter().all(|r| (r.gain.unwrap() / r.value - g1).abs() < 1e-12));
    }
}
