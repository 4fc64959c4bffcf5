//! The six commands. Each returns its primary output (printed to stdout)
//! and the files written under `--output`.

use mtlb::dispersion::{solve_dispersion, vieta_residuals, xi_threshold, ThresholdMethod};
use mtlb::dw::{assemble_blocks, m_tilde, propagator, propagator_defect, symplectic_square, z_propagate};
use mtlb::modes::{eigenmode_solve, energy_report, Eigenmode};
use mtlb::pierce::{compare_cubic_vs_exact, pierce_approx, reduce_equivalent_line, roots_absent_from_reduction};
use mtlb::sweep::{asymptotic_exponent, gain_sweep, sweep_values, SweepParam};
use mtlb::timedomain::{
    energy_audit, flux_budget, measure_growth, simulate, simulate_from, Drive, DriveShape, DriveTarget, FieldState,
    FirstOrderSystem, GrowthProbe, Scheme, SimConfig, SimHistory,
};
use mtlb::{spectral_data, BeamParams, MtlParams, MtlSpectralData};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use crate::config::{build_profile, DriveName, InitialState, SchemeName, System};
use crate::error::CliError;
use crate::output::{complex, csv_table, field, fmt17, num, nums, opt_complex, opt_num, to_json};

#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    pub stdout: String,
    pub files: Vec<(String, String)>,
}

/// `--param/--from/--to/--points/--log`.
#[derive(Debug, Clone, Default)]
pub struct RangeArgs {
    pub param: Option<String>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub points: Option<usize>,
    pub log: bool,
}

impl RangeArgs {
    fn is_set(&self) -> bool {
        self.from.is_some() || self.to.is_some() || self.points.is_some()
    }

    fn values(&self) -> Result<Vec<f64>, CliError> {
        match (self.from, self.to, self.points) {
            (Some(a), Some(b), Some(p)) => Ok(sweep_values(a, b, p, self.log)?),
            _ => Err(CliError::Validation("a range needs --from, --to and --points".into())),
        }
    }
}

struct Report {
    body: Map<String, Value>,
    warnings: Vec<String>,
}

impl Report {
    fn new(command: &str, sys: &System) -> Self {
        let mut body = Map::new();
        body.insert("command".into(), json!(command));
        body.insert("units".into(), json!("gaussian"));
        body.insert("input".into(), serde_json::to_value(&sys.config).expect("config serialises"));
        Report { body, warnings: sys.mtl.warnings() }
    }

    fn set(&mut self, key: &str, v: Value) {
        self.body.insert(key.into(), v);
    }

    fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    fn finish(mut self) -> Value {
        self.body.insert("warnings".into(), json!(self.warnings));
        Value::Object(self.body)
    }
}

fn json_output(report: Value, name: &str, mut extra: Vec<(String, String)>) -> CommandOutput {
    let text = to_json(&report);
    extra.insert(0, (name.to_string(), text.clone()));
    CommandOutput { stdout: text, files: extra }
}

fn method_name(m: ThresholdMethod) -> &'static str {
    match m {
        ThresholdMethod::Unconditional => "unconditional",
        ThresholdMethod::Exact => "exact",
        ThresholdMethod::Sufficient => "sufficient",
    }
}

fn kind_name<T: std::fmt::Debug>(k: T) -> String {
    format!("{k:?}")
}

/// Of the pair `v₀, v₀*`, the mode whose amplitude grows along +z.
fn growing_mode(spec: &MtlSpectralData, beam: &BeamParams, omega: f64, v0: Complex64) -> Result<Eigenmode, CliError> {
    for v in [v0, v0.conj()] {
        let m = eigenmode_solve(spec, beam, omega, v)?;
        if m.k.im < 0.0 {
            return Ok(m);
        }
    }
    Err(CliError::Numeric(mtlb::Error::NonGrowingInput { im: v0.im }))
}

fn spectral_json(spec: &MtlSpectralData) -> Value {
    json!({
        "n": spec.n(),
        "lambdas": nums(&spec.lambdas),
        "velocities": spec.velocities.iter().map(|v| complex(*v)).collect::<Vec<_>>(),
        "d": num(spec.d),
        "d_vector": nums(spec.d_vec.iter()),
        "d_tilde": nums(spec.dtilde.iter()),
        "det_l": num(spec.det_l),
        "det_c": num(spec.det_c),
        "imaginary_count": spec.imaginary_count,
        "clusters": spec.clusters.iter().map(|c| json!({
            "lambda": num(c.lambda),
            "multiplicity": c.multiplicity(),
            "coupling": num(c.coupling),
        })).collect::<Vec<_>>(),
    })
}

fn energy_json(spec: &MtlSpectralData, beam: &BeamParams, omega: f64, v0: Complex64, gain: f64) -> Result<Value, CliError> {
    let mode = growing_mode(spec, beam, omega, v0)?;
    let blocks = assemble_blocks(&spec.mtl, beam)?;
    let z: Vec<f64> = (0..=10).map(|i| i as f64 / (10.0 * gain)).collect();
    let r = energy_report(&mode, beam, &blocks, &z);
    let (lo, hi) = r.avg_flux_total.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let mean = r.avg_flux_total.iter().sum::<f64>() / z.len() as f64;
    let invariant_mismatch = r
        .poincare
        .iter()
        .zip(&r.avg_flux_total)
        .map(|(p, s)| (p - Complex64::new(0.0, 4.0 * s)).norm() / (4.0 * r.flux_scale))
        .fold(0.0, f64::max);
    Ok(json!({
        "mode_velocity": complex(mode.v),
        "wavenumber": complex(mode.k),
        "z_grid": nums(&z),
        "flux_mean": num(mean),
        "flux_scale": num(r.flux_scale),
        "flux_variation": num((hi - lo) / r.flux_scale),
        "power_beam_to_line": r.avg_power_beam_to_mtl.as_ref().map(nums).unwrap_or(Value::Null),
        "power_positive": r.positivity,
        "invariant_mismatch": num(invariant_mismatch),
    }))
}

pub fn analyze(sys: &System) -> Result<CommandOutput, CliError> {
    let spec = spectral_data(&sys.mtl);
    let mut rep = Report::new("analyze", sys);
    rep.set("spectral", spectral_json(&spec));

    let threshold = match xi_threshold(&spec, sys.beam.u0) {
        Ok(t) => json!({
            "xi0": num(t.xi0),
            "method": method_name(t.method),
            "beam_below": sys.beam.xi < t.xi0,
        }),
        Err(e) => {
            rep.warn(format!("threshold unavailable: {e}"));
            Value::Null
        }
    };
    rep.set("threshold", threshold);

    let mut results = Vec::new();
    for &w in &sys.omegas {
        let sol = solve_dispersion(&spec, &sys.beam, w)?;
        let vieta = vieta_residuals(&sol, &sys.beam, &spec);
        let mut warnings = sol.warnings.clone();
        let energy = match (sol.v0, sol.gain) {
            (Some(v0), Some(g)) => energy_json(&spec, &sys.beam, w, v0, g).unwrap_or_else(|e| {
                warnings.push(format!("energy summary unavailable: {e}"));
                Value::Null
            }),
            _ => Value::Null,
        };
        for x in &warnings {
            rep.warn(format!("omega = {w}: {x}"));
        }
        results.push(json!({
            "omega": num(w),
            "roots": sol.roots.iter().map(|r| json!({
                "re": num(r.value.re),
                "im": num(r.value.im),
                "multiplicity": r.multiplicity,
                "kind": kind_name(r.kind),
            })).collect::<Vec<_>>(),
            "coefficients": nums(&sol.coeffs_v),
            "real_root_count": sol.real_root_count(),
            "complex_pair_count": sol.complex_pair_count(),
            "v0": opt_complex(sol.v0),
            "k0": opt_complex(sol.k0),
            "gain": opt_num(sol.gain),
            "growth_guaranteed": sol.growth_guaranteed,
            "permissive": sol.permissive,
            "vieta": json!({
                "sum_residual": num(vieta.sum_residual),
                "product_residual": opt_num(vieta.product_residual),
            }),
            "energy": energy,
            "warnings": warnings,
        }));
    }
    rep.set("results", Value::Array(results));
    Ok(json_output(rep.finish(), "report.json", vec![]))
}

pub fn sweep(sys: &System, range: &RangeArgs) -> Result<CommandOutput, CliError> {
    let param: SweepParam = range
        .param
        .as_deref()
        .ok_or_else(|| CliError::Validation("sweep needs --param".into()))?
        .parse()?;
    let values = range.values()?;
    let spec = spectral_data(&sys.mtl);
    let omega = sys.omegas[0];
    let rows = gain_sweep(&spec, &sys.beam, omega, param, &values)?;

    let mut rep = Report::new("sweep", sys);
    for r in &rows {
        for w in &r.warnings {
            rep.warn(format!("{} = {}: {w}", param.name(), r.value));
        }
    }
    let mut footer = Vec::new();
    let decades = match (range.from, range.to) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => (b / a).log10().abs(),
        _ => 0.0,
    };
    let mut exponent = None;
    if param == SweepParam::Xi && range.log && decades >= 3.0 - 1e-9 && !rows.is_empty() {
        exponent = asymptotic_exponent(&rows, 3.0);
        match exponent {
            Some(e) => footer.push(format!("asymptotic_exponent = {}", fmt17(e))),
            None => rep.warn("asymptotic exponent unavailable: fewer than three decades carry a growing pair"),
        }
    }
    rep.set("omega", num(omega));
    rep.set("param", json!(param.name()));
    rep.set("points", json!(rows.len()));
    rep.set("asymptotic_exponent", opt_num(exponent));
    let report = rep.finish();
    for w in report["warnings"].as_array().expect("array") {
        footer.push(format!("warning: {}", w.as_str().unwrap_or_default()));
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt17(r.value),
                field(r.gain),
                field(r.v0.map(|v| v.re)),
                field(r.v0.map(|v| v.im)),
                r.real_roots.to_string(),
            ]
        })
        .collect();
    let csv = csv_table(&[param.name(), "gain", "re_v0", "im_v0", "n_real_roots"], &table, &footer);
    Ok(CommandOutput {
        stdout: csv.clone(),
        files: vec![("sweep.csv".into(), csv), ("report.json".into(), to_json(&report))],
    })
}

fn single_line(mtl: &MtlParams) -> Result<(f64, f64), CliError> {
    if mtl.n != 1 {
        return Err(CliError::Validation(format!("pierce requires n=1 (input has n={})", mtl.n)));
    }
    if (mtl.b[0] - 1.0).abs() > 1e-12 {
        return Err(CliError::Validation("pierce requires unit coupling B = [1]".into()));
    }
    Ok((mtl.l[(0, 0)], mtl.c[(0, 0)]))
}

pub fn pierce(sys: &System, range: &RangeArgs) -> Result<CommandOutput, CliError> {
    let (l, c) = single_line(&sys.mtl)?;
    let omega = sys.omegas[0];
    let xis = if range.is_set() { range.values()? } else { vec![sys.beam.xi] };
    let rows = compare_cubic_vs_exact(l, c, &xis, omega)?;
    let approx = pierce_approx(l, c, &sys.beam, omega);

    let mut rep = Report::new("pierce", sys);
    rep.set("omega", num(omega));
    rep.set("synchronous_u0", num(1.0 / (l * c).sqrt()));
    rep.set(
        "comparisons",
        Value::Array(
            rows.iter()
                .map(|r| {
                    json!({
                        "xi": num(r.xi),
                        "max_mismatch": num(r.max_mismatch),
                        "vieta_residual": num(r.vieta_residual),
                        "backward_velocity": num(r.backward_velocity),
                        "smallness": num(r.smallness),
                        "cubic_gain": num(r.approx.gain()),
                    })
                })
                .collect(),
        ),
    );
    rep.set(
        "configured_beam",
        json!({
            "k_b": num(approx.k_b),
            "k_p": opt_num(approx.k_p),
            "c": num(approx.c),
            "deltas": approx.deltas.iter().map(|d| complex(*d)).collect::<Vec<_>>(),
            "cubic_k_roots": approx.k_roots().iter().map(|d| complex(*d)).collect::<Vec<_>>(),
            "exact_k_roots": approx.exact_roots_k.iter().map(|d| complex(*d)).collect::<Vec<_>>(),
            "cubic_gain": num(approx.gain()),
            "smallness": num(approx.smallness),
        }),
    );
    if approx.smallness > 0.1 {
        rep.warn(format!("cubic approximation is outside its regime for the configured beam (|delta/k_b| = {:.3})", approx.smallness));
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt17(r.xi), fmt17(r.max_mismatch), fmt17(r.smallness), fmt17(r.approx.gain()), fmt17(r.backward_velocity)])
        .collect();
    let csv = csv_table(&["xi", "max_mismatch", "smallness", "cubic_gain", "backward_velocity"], &table, &[]);
    Ok(json_output(rep.finish(), "report.json", vec![("pierce.csv".into(), csv)]))
}

pub fn reduce(sys: &System) -> Result<CommandOutput, CliError> {
    let eq = reduce_equivalent_line(&sys.mtl)?;
    let one = spectral_data(&MtlParams::single(eq.l, eq.c)?);
    let full = spectral_data(&sys.mtl);
    let mut rep = Report::new("reduce", sys);
    rep.set("equivalent_line", json!({ "L": num(eq.l), "C": num(eq.c), "v1": num(eq.v1) }));
    let mut per = Vec::new();
    for &w in &sys.omegas {
        let a = solve_dispersion(&full, &sys.beam, w)?;
        let b = solve_dispersion(&one, &sys.beam, w)?;
        let absent = roots_absent_from_reduction(&sys.mtl, &sys.beam, w)?;
        per.push(json!({
            "omega": num(w),
            "v0_full": opt_complex(a.v0),
            "v0_reduced": opt_complex(b.v0),
            "gain_full": opt_num(a.gain),
            "gain_reduced": opt_num(b.gain),
            "roots_absent_from_reduction": absent.iter().map(|(v, m)| json!({"velocity": num(*v), "multiplicity": m})).collect::<Vec<_>>(),
        }));
    }
    rep.set("results", Value::Array(per));
    Ok(json_output(rep.finish(), "report.json", vec![]))
}

/// A smooth state with a few Fourier modes on the ring.
fn ring_state(n: usize, nz: usize, dz: f64) -> FieldState {
    let mut s = FieldState::zeros(n, nz);
    let lz = nz as f64 * dz;
    for j in 0..nz {
        let z = j as f64 * dz;
        for m in 1..=3 {
            let k = m as f64 * 2.0 * std::f64::consts::PI / lz;
            let a = 1.0 / m as f64;
            for i in 0..n {
                s.q_lines_z[(i, j)] += a * (k * z + i as f64).sin();
                s.q_lines_dot[(i, j)] += 0.5 * a * (k * z).cos();
            }
            s.q_beam_z[j] += a * (k * z + 0.3).sin();
            s.q_beam_dot[j] -= 0.5 * a * (k * z).cos();
        }
    }
    s
}

fn snapshot_csv(history: &SimHistory, mtl: &MtlParams, frames_per_period: usize) -> String {
    let n = mtl.n;
    let per = ((2.0 * std::f64::consts::PI / history.omega) / history.dt).round().max(1.0) as usize;
    let stride = (per / frames_per_period.max(1)).max(1);
    let start = history.snapshots.len().saturating_sub(per);
    let mut header: Vec<String> = vec!["frame".into(), "t".into(), "z".into(), "q_beam".into(), "q_beam_t".into()];
    for i in 0..n {
        header.extend([format!("Q_{i}"), format!("V_{i}"), format!("I_{i}")]);
    }
    let mut rows = Vec::new();
    for (frame, s) in history.snapshots[start..].iter().step_by(stride).enumerate() {
        let v = s.voltage(mtl);
        let cur = s.current();
        for (j, z) in history.z.iter().enumerate() {
            let mut r = vec![frame.to_string(), fmt17(s.t), fmt17(*z), fmt17(s.q_beam[j]), fmt17(s.q_beam_dot[j])];
            for i in 0..n {
                r.extend([fmt17(s.q_lines[(i, j)]), fmt17(v[(i, j)]), fmt17(cur[(i, j)])]);
            }
            rows.push(r);
        }
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_table(&h, &rows, &[])
}

pub fn simulate_cmd(sys: &System) -> Result<CommandOutput, CliError> {
    let opts = sys.config.simulate.clone().unwrap_or_default();
    let (mtl, beam) = (&sys.mtl, &sys.beam);
    let omega = sys.omegas[0];
    let spec = spectral_data(mtl);
    let mut rep = Report::new("simulate", sys);

    let target = match opts.drive {
        DriveName::Beam => DriveTarget::Beam,
        DriveName::Line => DriveTarget::Line,
    };
    let drive = Drive { omega, amplitude: opts.amplitude, ramp_periods: opts.ramp_periods, target, shape: DriveShape::Harmonic };
    let slowest = spec.v1().unwrap_or(beam.u0).min(beam.u0);
    let duration = opts
        .duration
        .unwrap_or((opts.ramp_periods + 4.0) * drive.period() + 2.0 * opts.length / slowest);
    let mut cfg = SimConfig::drive_absorb(mtl, beam, drive, opts.length, opts.dz, duration, opts.cfl)?;
    cfg.scheme = match opts.scheme {
        SchemeName::Auto => Scheme::Auto,
        SchemeName::First => Scheme::FirstOrderUpwind,
        SchemeName::Third => Scheme::ThirdOrderUpwind,
    };
    let history = simulate(mtl, beam, &cfg)?;
    rep.set(
        "run",
        json!({
            "nz": cfg.nz, "dz": num(cfg.dz), "dt": num(cfg.dt), "steps": cfg.steps,
            "duration": num(cfg.dt * cfg.steps as f64),
            "scheme": kind_name(history.scheme),
        }),
    );

    let window = opts.fit_window.unwrap_or([0.15 * opts.length, 0.8 * opts.length]);
    let analytic = solve_dispersion(&spec, beam, omega)?.gain;
    let growth = match measure_growth(&history, omega, (window[0], window[1]), GrowthProbe::Beam) {
        Ok(f) => json!({
            "gain_fit": num(f.gain_fit),
            "r_squared": num(f.r_squared),
            "variation": num(f.variation),
            "gain_analytic": opt_num(analytic),
            "relative_error": opt_num(analytic.map(|g| (f.gain_fit - g).abs() / g)),
            "fit_window": nums(&window),
        }),
        Err(e @ mtlb::Error::NotConverged { .. }) => {
            rep.warn(format!("growth fit skipped: {e}"));
            Value::Null
        }
        Err(e) => return Err(e.into()),
    };
    rep.set("growth", growth);
    match flux_budget(&history, mtl, window[0], window[1]) {
        Ok(b) => rep.set(
            "flux_budget",
            json!({
                "z": nums(&window),
                "flux_difference": num(b.flux_difference),
                "power_integral": num(b.power_integral),
                "relative_mismatch": num(b.relative_mismatch),
            }),
        ),
        Err(e) => {
            rep.warn(format!("flux budget unavailable: {e}"));
            rep.set("flux_budget", Value::Null);
        }
    }

    let audit = if FirstOrderSystem::new(mtl, beam)?.has_complex_roots {
        rep.warn("energy audit skipped: growing waves make the closed ring problem ill-posed");
        Value::Null
    } else {
        let ring = SimConfig::periodic(mtl, beam, omega, opts.audit_nz, opts.length, opts.audit_periods, opts.cfl)?;
        let init = ring_state(mtl.n, ring.nz, ring.dz);
        match simulate_from(mtl, beam, &ring, init) {
            Ok(h) => {
                let a = energy_audit(&h, mtl, beam);
                json!({
                    "nz": ring.nz,
                    "periods": opts.audit_periods,
                    "max_relative_drift": num(a.max_relative_drift),
                    "drift_per_period": num(a.drift_per_period),
                })
            }
            Err(e) => {
                rep.warn(format!("energy audit failed: {e}"));
                Value::Null
            }
        }
    };
    rep.set("energy_audit", audit);
    let frames = snapshot_csv(&history, mtl, opts.frames_per_period);
    Ok(json_output(rep.finish(), "report.json", vec![("snapshots.csv".into(), frames)]))
}

pub fn propagate(sys: &System) -> Result<CommandOutput, CliError> {
    let opts = sys.config.propagate.clone().unwrap_or_default();
    let (mtl, beam) = (&sys.mtl, &sys.beam);
    let omega = sys.omegas[0];
    let spec = spectral_data(mtl);
    let blocks = assemble_blocks(mtl, beam)?;
    let dim = 2 * (mtl.n + 1);
    let (z0, z1) = (opts.z_span[0], opts.z_span[1]);
    if !(z0.is_finite() && z1.is_finite() && z1 > z0) {
        return Err(CliError::Validation("z_span must be increasing and finite".into()));
    }
    let mut rep = Report::new("propagate", sys);

    let mode = match &opts.initial {
        InitialState::Named(s) if s == "growing" => {
            let v0 = solve_dispersion(&spec, beam, omega)?.v0.ok_or(mtlb::Error::NoComplexPair)?;
            Some(growing_mode(&spec, beam, omega, v0)?)
        }
        InitialState::Named(s) => return Err(CliError::Validation(format!("unknown initial state '{s}'"))),
        InitialState::Root { v } => Some(eigenmode_solve(&spec, beam, omega, Complex64::new(v[0], v[1]))?),
        InitialState::Explicit { .. } => None,
    };
    let start: DVector<Complex64> = match (&mode, &opts.initial) {
        (Some(m), _) => m.dw_state(&blocks, z0),
        (None, InitialState::Explicit { re, im }) => {
            if re.len() != dim || im.len() != dim {
                return Err(CliError::Validation(format!("initial state needs {dim} real and {dim} imaginary parts")));
            }
            DVector::from_fn(dim, |i, _| Complex64::new(re[i], im[i]))
        }
        _ => unreachable!("named states resolve to a mode"),
    };

    let homogeneous = m_tilde(&blocks).map(|x| Complex64::new(x, 0.0));
    let profile = sys.config.profile.as_ref().map(|p| build_profile(p, mtl)).transpose()?;
    if let Some(p) = &profile {
        // catch bad samples up front; interpolation between valid samples stays valid
        for i in 0..=64 {
            p.m_tilde_at(z0 + (z1 - z0) * i as f64 / 64.0, beam)?;
        }
    }
    let mt = |z: f64| -> DMatrix<Complex64> {
        match &profile {
            Some(p) => p.m_tilde_at(z, beam).expect("profile checked above"),
            None => homogeneous.clone(),
        }
    };
    let traj = z_propagate(mt, omega, &start, (z0, z1), opts.steps)?;
    let end = traj.v.last().expect("trajectory has points");
    let defect = propagator_defect(&propagator(mt, omega, dim, (z0, z1), traj.steps));

    rep.set("omega", num(omega));
    rep.set("z_span", nums(&[z0, z1]));
    rep.set("steps", json!(traj.steps));
    rep.set("invariant_drift", num(traj.invariant_drift));
    rep.set("invariant_initial", complex(symplectic_square(&start)));
    rep.set("propagator_defect", num(defect));
    rep.set("initial_state", Value::Array(start.iter().map(|x| complex(*x)).collect()));
    rep.set("final_state", Value::Array(end.iter().map(|x| complex(*x)).collect()));
    let mismatch = match (&mode, &profile) {
        (Some(m), None) => {
            let want = &start * (Complex64::i() * m.k * (z1 - z0)).exp();
            rep.set("mode_wavenumber", complex(m.k));
            num((end - &want).norm() / want.norm())
        }
        _ => Value::Null,
    };
    rep.set("mode_mismatch", mismatch);

    let rows: Vec<Vec<String>> = traj
        .z
        .iter()
        .zip(&traj.v)
        .map(|(z, v)| {
            let p = symplectic_square(v);
            vec![fmt17(*z), fmt17(v.norm()), fmt17(p.re), fmt17(p.im)]
        })
        .collect();
    let csv = csv_table(&["z", "norm", "invariant_re", "invariant_im"], &rows, &[]);
    Ok(json_output(rep.finish(), "report.json", vec![("trajectory.csv".into(), csv)]))
}
