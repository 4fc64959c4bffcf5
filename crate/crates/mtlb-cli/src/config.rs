//! JSON input files. Parsing is strict: unknown keys are errors.

use std::path::Path;

use mtlb::dw::MtlProfile;
use mtlb::{validate_mtl, BeamParams, MtlParams, Plasma, Strictness};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Default relative tolerance between a given `xi` and the one implied by
/// the plasma quantities.
pub const PLASMA_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub mtl: MtlConfig,
    pub beam: BeamConfig,
    pub omega: Omegas,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagate: Option<PropagateConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtlConfig {
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default = "default_strictness")]
    pub strictness: StrictnessName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrictnessName {
    Strict,
    Permissive,
}

fn default_strictness() -> StrictnessName {
    StrictnessName::Strict
}

/// Either `xi` directly, the plasma quantities it follows from, or both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub u0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_mass_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Omegas {
    One(f64),
    Many(Vec<f64>),
}

impl Omegas {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Omegas::One(w) => vec![*w],
            Omegas::Many(w) => w.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub period: f64,
    pub samples: Vec<ProfileSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSample {
    pub z: f64,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveName {
    Beam,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Auto,
    First,
    Third,
}

/// Time-domain run settings. Missing entries take the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "d_length")]
    pub length: f64,
    #[serde(default = "d_dz")]
    pub dz: f64,
    /// Defaults to the ramp plus two slowest transits plus four periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default = "d_cfl")]
    pub cfl: f64,
    #[serde(default = "d_amplitude")]
    pub amplitude: f64,
    #[serde(default = "d_ramp")]
    pub ramp_periods: f64,
    #[serde(default = "d_drive")]
    pub drive: DriveName,
    #[serde(default = "d_scheme")]
    pub scheme: SchemeName,
    /// Defaults to `[0.15, 0.8]` of the domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    /// Frames written per drive period to the snapshot CSV.
    #[serde(default = "d_frames")]
    pub frames_per_period: usize,
    #[serde(default = "d_audit_nz")]
    pub audit_nz: usize,
    #[serde(default = "d_audit_periods")]
    pub audit_periods: usize,
}

fn d_length() -> f64 {
    6.0
}
fn d_dz() -> f64 {
    0.05
}
fn d_cfl() -> f64 {
    0.5
}
fn d_amplitude() -> f64 {
    1e-3
}
fn d_ramp() -> f64 {
    3.0
}
fn d_drive() -> DriveName {
    DriveName::Beam
}
fn d_scheme() -> SchemeName {
    SchemeName::Auto
}
fn d_frames() -> usize {
    16
}
fn d_audit_nz() -> usize {
    128
}
fn d_audit_periods() -> usize {
    20
}

impl Default for SimulateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    /// `"growing"`, or a dispersion root given as `{"v": [re, im]}`.
    Named(String),
    Root { v: [f64; 2] },
    Explicit { re: Vec<f64>, im: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateConfig {
    #[serde(default = "d_span")]
    pub z_span: [f64; 2],
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_initial")]
    pub initial: InitialState,
}

fn d_span() -> [f64; 2] {
    [0.0, 1.0]
}
fn d_steps() -> usize {
    1000
}
fn d_initial() -> InitialState {
    InitialState::Named("growing".into())
}

impl Default for PropagateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Validated domain objects for one input file.
#[derive(Debug, Clone)]
pub struct System {
    pub config: SystemConfig,
    pub mtl: MtlParams,
    pub beam: BeamParams,
    pub omegas: Vec<f64>,
}

pub fn parse_system(text: &str, plasma_rtol: f64) -> Result<System, CliError> {
    let config: SystemConfig = serde_json::from_str(text).map_err(|e| {
        CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    })?;
    let mtl = build_mtl(&config.mtl)?;
    let beam = build_beam(&config.beam, plasma_rtol)?;
    let omegas = config.omega.values();
    if omegas.is_empty() {
        return Err(CliError::Validation("omega must list at least one frequency".into()));
    }
    for &w in &omegas {
        if !w.is_finite() || w <= 0.0 {
            return Err(CliError::Validation(format!("omega must be positive and finite (got {w})")));
        }
    }
    Ok(System { config, mtl, beam, omegas })
}

pub fn load_system(path: &Path, plasma_rtol: f64) -> Result<System, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_system(&text, plasma_rtol)
}

pub fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 {
        return Err(CliError::Validation(format!("{name} is empty")));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Validation(format!("{name} is not rectangular")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CliError::Validation(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn build_mtl(cfg: &MtlConfig) -> Result<MtlParams, CliError> {
    let l = matrix("L", &cfg.l)?;
    let c = matrix("C", &cfg.c)?;
    let b = cfg.b.as_ref().map(|b| DVector::from_column_slice(b));
    let strictness = match cfg.strictness {
        StrictnessName::Strict => Strictness::Strict,
        StrictnessName::Permissive => Strictness::Permissive,
    };
    Ok(validate_mtl(l, c, b, strictness)?)
}

fn build_beam(cfg: &BeamConfig, rtol: f64) -> Result<BeamParams, CliError> {
    let plasma = match (cfg.sigma, cfg.rho0, cfg.charge_mass_ratio) {
        (None, None, None) => None,
        (Some(sigma), Some(rho0), Some(charge_mass_ratio)) => Some(Plasma { sigma, rho0, charge_mass_ratio }),
        _ => {
            return Err(CliError::Validation(
                "beam plasma quantities need all of sigma, rho0 and charge_mass_ratio".into(),
            ))
        }
    };
    let beam = match (cfg.xi, plasma) {
        (Some(xi), None) => BeamParams::new(cfg.u0, xi)?,
        (None, Some(p)) => BeamParams::from_plasma(cfg.u0, p)?,
        (Some(xi), Some(p)) => BeamParams::with_consistency(cfg.u0, xi, p, rtol)?,
        (None, None) => return Err(CliError::Validation("beam needs xi or the plasma quantities".into())),
    };
    Ok(beam)
}

pub fn build_profile(cfg: &ProfileConfig, mtl: &MtlParams) -> Result<MtlProfile, CliError> {
    let samples = cfg
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| Ok((s.z, matrix(&format!("profile sample {i} L"), &s.l)?, matrix(&format!("profile sample {i} C"), &s.c)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(MtlProfile::new(cfg.period, samples, mtl.b.clone())?)
}
