//! Experiment configuration, orchestration, persistence, and reporting.
//!
//! A run is described by a TOML document with six optional sections —
//! `[flux]`, `[profile]`, `[grid]`, `[shift]`, `[run]`, `[perturbation]` —
//! in which every key has a documented default and unknown keys are
//! rejected. The harness builds the shock profile, prepares initial data
//! from a seeded perturbation family, steps the coupled system to the
//! horizon under per-step stability control, and persists four artifact
//! kinds into the run directory:
//!
//! * `diagnostics.csv` — one [`DiagnosticsRecord`] row every `diag_stride`
//!   steps (plus the initial and final states), written a row at a time so
//!   the file is well-formed after any termination;
//! * `manifest.json`  — the resolved configuration, the profile
//!   certificate, wall-clock, sup-norm trackers, and the termination
//!   reason;
//! * `*.bin`          — binary field snapshots (initial, final, and an
//!   optional stride);
//! * `report.txt`     — a human-readable pass/fail summary of the
//!   stability properties the run was expected to exhibit.
//!
//! Identical configuration and seed give a byte-identical diagnostics CSV
//! on one platform: every float is printed with Rust's shortest
//! round-trip formatting and all randomness flows from counter-keyed
//! streams.

use crate::dynamics::{
    compose_v, DynError, Mode, ShiftParams, SimState, Stepper, StepperOptions, CFL_SAFETY,
    FOLD_LIMIT,
};
use crate::flux::{FluxError, FluxField, Polynomial};
use crate::functionals::{
    assemble_record, contraction_energy, energy_identity_residual, DiagnosticsRecord, RecordInputs,
};
use crate::grid::{Grid, GridError, ScalarField};
use crate::profile::{solve_profile, ProfileCertificate, ProfileError, ShockProfile};
use crate::rng::stream_rng;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Errors raised while loading, validating, or orchestrating an experiment.
///
/// Stepper failures *during* a run are not errors at this level: they are
/// recorded as the run's [`TerminationReason`] and the partial artifacts
/// stay valid.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("config error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dyn(#[from] DynError),
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid { field: field.to_string(), message: message.into() }
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

/// Which flux family the run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKindConfig {
    /// `A = (u²/2, u, …, u)`.
    #[default]
    Burgers,
    /// `A₁ = u³/3 + u` with linear transverse components.
    CubicConvex,
    /// Fully custom polynomial components (requires `a1`, `transverse`).
    Custom,
}

/// `[flux]` section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxConfig {
    pub kind: FluxKindConfig,
    /// Leading-component coefficients, ascending degree (custom kind only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a1: Option<Vec<f64>>,
    /// One coefficient list per transverse component (custom kind only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transverse: Option<Vec<Vec<f64>>>,
}

/// `[profile]` section: far-field states and the profile tabulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub u_minus: f64,
    pub u_plus: f64,
    /// Half-width of the tabulated profile table (must cover the grid).
    pub x1_max: f64,
    /// Tabulation step of the profile integrator.
    pub dx: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { u_minus: 1.0, u_plus: -1.0, x1_max: 25.0, dx: 0.01 }
    }
}

/// `[grid]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Space dimension (2 or 3): one slab direction plus `dim − 1` torus
    /// directions.
    pub dim: usize,
    /// Slab half-length.
    pub l: f64,
    /// Nodes across the slab.
    pub n1: usize,
    /// Nodes per torus direction.
    pub n_perp: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 2, l: 20.0, n1: 401, n_perp: 64 }
    }
}

/// `[run]` section: mode, horizon, cadence, stepping knobs, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Final time.
    pub horizon: f64,
    /// Steps between diagnostic rows.
    pub diag_stride: usize,
    /// Steps between intermediate field snapshots; `0` writes only the
    /// initial and final fields.
    pub snapshot_stride: usize,
    /// Safety factor against the stability bound.
    pub cfl_safety: f64,
    /// Fixed step instead of the adaptive bound (rejected if above it).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_override: Option<f64>,
    /// Subtract the tabulated profile's stencil residual so the unperturbed
    /// profile is an exact discrete equilibrium.
    pub well_balanced: bool,
    /// Where artifacts go; `None` keeps the run in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::General,
            horizon: 10.0,
            diag_stride: 10,
            snapshot_stride: 0,
            cfl_safety: CFL_SAFETY,
            dt_override: None,
            well_balanced: true,
            output_dir: None,
        }
    }
}

/// Initial-perturbation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationFamily {
    /// No perturbation: `u₀ = U`, `Y₀ = 0`.
    None,
    /// Gaussian bump in `x₁` centered at `center` with width `width`
    /// (default 1), constant in the transverse directions.
    #[default]
    GaussianBump,
    /// `sin(2π·wavenumber·x₂)`; in the driven modes it carries a Gaussian
    /// `x₁`-envelope of width `width` (default 3), in the source-free mode
    /// it is bare.
    TransverseSine,
    /// Seeded random combination of transverse Fourier modes up to
    /// `max_mode`, under a Gaussian `x₁`-envelope of width `width`
    /// (default 3).
    BandNoise,
}

/// `[perturbation]` section: family, size, seed, and shape knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub family: PerturbationFamily,
    /// Perturbation size: the `L²` norm of `u₀ − U` in the driven modes,
    /// `sup|Y₀|` in the source-free mode.
    pub amplitude: f64,
    /// Seed for the noise family (other families are deterministic).
    pub seed: u64,
    /// Bump center on the `x₁` axis.
    pub center: f64,
    /// Bump / envelope width; per-family default when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Transverse wavenumber of the sine family.
    pub wavenumber: u32,
    /// Highest transverse wavenumber of the noise family.
    pub max_mode: u32,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            family: PerturbationFamily::GaussianBump,
            amplitude: 0.0,
            seed: 0,
            center: 6.0,
            width: None,
            wavenumber: 1,
            max_mode: 4,
        }
    }
}

/// A full experiment description; every section and key has a default, so
/// the empty document is a valid configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub flux: FluxConfig,
    pub profile: ProfileConfig,
    pub grid: GridConfig,
    pub shift: ShiftParams,
    pub run: RunConfig,
    pub perturbation: PerturbationConfig,
}

impl ExperimentConfig {
    /// Cross-field validation; errors name the offending key.
    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.flux.kind {
            FluxKindConfig::Custom => {
                let a1 = self
                    .flux
                    .a1
                    .as_ref()
                    .ok_or_else(|| invalid("flux.a1", "custom flux needs coefficients"))?;
                if a1.is_empty() {
                    return Err(invalid("flux.a1", "coefficient list is empty"));
                }
                let n_tr = self.flux.transverse.as_ref().map_or(0, |t| t.len());
                if 1 + n_tr < self.grid.dim {
                    return Err(invalid(
                        "flux.transverse",
                        format!(
                            "custom flux provides {} components but the grid needs {}",
                            1 + n_tr,
                            self.grid.dim
                        ),
                    ));
                }
            }
            _ => {
                if self.flux.a1.is_some() || self.flux.transverse.is_some() {
                    return Err(invalid(
                        "flux.a1",
                        "coefficients are only accepted for kind = \"custom\"",
                    ));
                }
            }
        }

        if !(self.profile.u_minus > self.profile.u_plus) {
            return Err(invalid(
                "profile.u_minus",
                format!(
                    "far-field states must satisfy u_minus > u_plus (got {} and {})",
                    self.profile.u_minus, self.profile.u_plus
                ),
            ));
        }
        if !(self.profile.dx > 0.0) {
            return Err(invalid("profile.dx", "tabulation step must be positive"));
        }
        if !(self.profile.x1_max >= self.grid.l + 1.0) {
            return Err(invalid(
                "profile.x1_max",
                format!("profile table must cover the grid: need at least L + 1 = {}", self.grid.l + 1.0),
            ));
        }

        Grid::new(self.grid.dim, self.grid.l, self.grid.n1, self.grid.n_perp)
            .map_err(|e| invalid("grid", e.to_string()))?;

        match self.shift.validate() {
            Ok(()) => {}
            Err(e @ DynError::CutoffTooNarrow(_)) => {
                return Err(invalid("shift.m_cutoff", e.to_string()))
            }
            Err(e) => return Err(invalid("shift.ramp_time", e.to_string())),
        }
        if !(self.shift.m_cutoff + 1.0 <= self.grid.l) {
            return Err(invalid(
                "shift.m_cutoff",
                format!("cutoff support [−M−1, M+1] must fit inside [−L, L] (L = {})", self.grid.l),
            ));
        }

        if !(self.run.horizon > 0.0) {
            return Err(invalid("run.horizon", "horizon must be positive"));
        }
        if self.run.diag_stride == 0 {
            return Err(invalid("run.diag_stride", "diagnostic stride must be at least 1"));
        }
        if !(self.run.cfl_safety > 0.0 && self.run.cfl_safety <= 1.0) {
            return Err(invalid("run.cfl_safety", "safety factor must lie in (0, 1]"));
        }
        if let Some(dt) = self.run.dt_override {
            if !(dt > 0.0) {
                return Err(invalid("run.dt_override", "fixed step must be positive"));
            }
        }

        let p = &self.perturbation;
        if !(p.amplitude >= 0.0) || !p.amplitude.is_finite() {
            return Err(invalid(
                "perturbation.amplitude",
                format!("amplitude must be a finite nonnegative number (got {})", p.amplitude),
            ));
        }
        if p.family == PerturbationFamily::None && p.amplitude > 0.0 {
            return Err(invalid(
                "perturbation.family",
                "family `none` cannot carry a positive amplitude",
            ));
        }
        if let Some(w) = p.width {
            if !(w > 0.0) {
                return Err(invalid("perturbation.width", "width must be positive"));
            }
        }
        if p.wavenumber == 0 {
            return Err(invalid("perturbation.wavenumber", "wavenumber must be at least 1"));
        }
        if p.max_mode == 0 || p.max_mode > 16 {
            return Err(invalid("perturbation.max_mode", "max_mode must lie in 1..=16"));
        }
        Ok(())
    }

    /// Builds the flux field for the configured grid dimension.
    pub fn build_flux(&self) -> Result<FluxField, HarnessError> {
        let flux = match self.flux.kind {
            FluxKindConfig::Burgers => FluxField::burgers(self.grid.dim)?,
            FluxKindConfig::CubicConvex => FluxField::cubic_convex(self.grid.dim)?,
            FluxKindConfig::Custom => {
                let a1 = Polynomial::new(self.flux.a1.clone().unwrap_or_default());
                let transverse = self
                    .flux
                    .transverse
                    .clone()
                    .unwrap_or_default()
                    .into_iter()
                    .map(Polynomial::new)
                    .collect();
                FluxField::custom(a1, transverse)?
            }
        };
        Ok(flux)
    }

    /// Builds the computational grid.
    pub fn build_grid(&self) -> Result<Grid, HarnessError> {
        Ok(Grid::new(self.grid.dim, self.grid.l, self.grid.n1, self.grid.n_perp)?)
    }

    /// Solves and tabulates the shock profile.
    pub fn build_profile(&self, flux: &FluxField) -> Result<ShockProfile, HarnessError> {
        Ok(solve_profile(
            flux,
            self.profile.u_minus,
            self.profile.u_plus,
            self.profile.x1_max,
            self.profile.dx,
        )?)
    }

    /// Stepper options implied by the `[run]` section.
    pub fn stepper_options(&self) -> StepperOptions {
        StepperOptions {
            cfl_safety: self.run.cfl_safety,
            dt_override: self.run.dt_override,
            well_balanced: self.run.well_balanced,
        }
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

/// Parses one `--set` value: tries TOML scalar syntax first (numbers,
/// booleans, arrays, quoted strings), falling back to a bare string so
/// `--set flux.kind=burgers` works without quotes.
fn parse_toml_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    if let Ok(tbl) = doc.parse::<toml::Table>() {
        if let Some(v) = tbl.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Applies one `section.key=value` override to a parsed TOML table,
/// creating intermediate tables as needed.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        invalid(spec, "override must look like `section.key=value`")
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(invalid(spec, "override key is empty"));
    }
    let value = parse_toml_scalar(raw.trim());
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for part in parts {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(path, format!("`{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Deserializes and validates a config from an already-parsed TOML table.
fn config_from_table(table: toml::Table) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses, deserializes, and validates a config from TOML text.
pub fn config_from_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let table =
        text.parse::<toml::Table>().map_err(|e| HarnessError::Parse(e.to_string()))?;
    config_from_table(table)
}

/// Loads a config file; unknown keys are rejected, defaults fill gaps.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    load_config_with_overrides(Some(path), &[])
}

/// Loads a config (or starts from the defaults when `path` is `None`) and
/// applies `section.key=value` overrides on the raw document before
/// deserialization, so overrides face the same schema checks as the file.
pub fn load_config_with_overrides(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig, HarnessError> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::ReadConfig { path: p.to_owned(), source: e })?;
            text.parse::<toml::Table>()
                .map_err(|e| HarnessError::Parse(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    config_from_table(table)
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

/// Prepared initial state plus the measured size of the perturbation.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub u0: ScalarField,
    pub y0: ScalarField,
    /// Measured `‖u₀ − U‖_{L²}` on the grid quadrature.
    pub perturbation_l2: f64,
}

/// The steady front sampled on the grid (matches the stepper's own table
/// bitwise, so a zero perturbation is an exact discrete equilibrium).
pub fn steady_front(profile: &ShockProfile, grid: &Grid) -> ScalarField {
    ScalarField::from_fn(grid, |x1, _| profile.eval_profile(x1))
}

/// Raw (unnormalized) member of the configured perturbation family.
fn raw_member(p: &PerturbationConfig, mode: Mode, grid: &Grid) -> ScalarField {
    use std::f64::consts::PI;
    match p.family {
        PerturbationFamily::None => ScalarField::zeros(grid),
        PerturbationFamily::GaussianBump => {
            let c = p.center;
            let s = p.width.unwrap_or(1.0);
            ScalarField::from_fn(grid, |x1, _| (-(x1 - c) * (x1 - c) / (2.0 * s * s)).exp())
        }
        PerturbationFamily::TransverseSine => {
            let k = p.wavenumber as f64;
            match mode {
                // Source-free mode: a bare transverse wave of the front.
                Mode::Special => {
                    ScalarField::from_fn(grid, |_, xp| (2.0 * PI * k * xp[0]).sin())
                }
                // Driven modes: localize the wave around the shock layer so
                // it is square-integrable content of u₀ − U.
                _ => {
                    let s = p.width.unwrap_or(3.0);
                    ScalarField::from_fn(grid, |x1, xp| {
                        (2.0 * PI * k * xp[0]).sin() * (-x1 * x1 / (2.0 * s * s)).exp()
                    })
                }
            }
        }
        PerturbationFamily::BandNoise => {
            // One coefficient pair per transverse Fourier mode, drawn in a
            // fixed order from the seed's stream 0.
            let mut rng = stream_rng(p.seed, 0);
            let max = p.max_mode as usize;
            let mut modes: Vec<([f64; 2], f64, f64)> = Vec::new();
            match grid.dim() {
                2 => {
                    for k in 1..=max {
                        let a = rng.random_range(-1.0..1.0);
                        let b = rng.random_range(-1.0..1.0);
                        modes.push(([k as f64, 0.0], a, b));
                    }
                }
                _ => {
                    for k2 in 0..=max {
                        for k3 in 0..=max {
                            if k2 == 0 && k3 == 0 {
                                continue;
                            }
                            let a = rng.random_range(-1.0..1.0);
                            let b = rng.random_range(-1.0..1.0);
                            modes.push(([k2 as f64, k3 as f64], a, b));
                        }
                    }
                }
            }
            let s = p.width.unwrap_or(3.0);
            ScalarField::from_fn(grid, |x1, xp| {
                let mut v = 0.0;
                for (k, a, b) in &modes {
                    let mut phase = 0.0;
                    for (d, &x) in xp.iter().enumerate() {
                        phase += k[d] * x;
                    }
                    let arg = 2.0 * PI * phase;
                    v += a * arg.cos() + b * arg.sin();
                }
                v * (-x1 * x1 / (2.0 * s * s)).exp()
            })
        }
    }
}

/// Smallest `1 + ∂₁Y` over the grid (the same fold diagnostic the stepper
/// enforces each stage).
fn min_fold_of(y: &ScalarField) -> f64 {
    let dy = y.deriv(0);
    1.0 + dy.values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Builds `(u₀, Y₀)` from the perturbation config.
///
/// Driven modes: `u₀ = U + amplitude·(member / ‖member‖_{L²})`, `Y₀ = 0`.
/// Source-free mode: `Y₀ = amplitude·(member / sup|member|)`,
/// `u₀ = U(x₁ + Y₀)`. A zero amplitude returns the steady front exactly.
pub fn make_initial_data(
    cfg: &ExperimentConfig,
    profile: &ShockProfile,
    grid: &Grid,
) -> Result<InitialData, HarnessError> {
    let p = &cfg.perturbation;
    let u_steady = steady_front(profile, grid);
    if p.amplitude == 0.0 {
        return Ok(InitialData {
            u0: u_steady,
            y0: ScalarField::zeros(grid),
            perturbation_l2: 0.0,
        });
    }

    let member = raw_member(p, cfg.run.mode, grid);
    let (u0, y0) = match cfg.run.mode {
        Mode::Special => {
            let sup = member.sup_abs();
            if sup == 0.0 {
                return Err(invalid(
                    "perturbation.family",
                    "family member vanishes identically; cannot carry the amplitude",
                ));
            }
            let mut y0 = member;
            let scale = p.amplitude / sup;
            for v in y0.values_mut() {
                *v *= scale;
            }
            let u0 = compose_v(profile, &y0);
            (u0, y0)
        }
        _ => {
            let mut sq = member.clone();
            for v in sq.values_mut() {
                *v *= *v;
            }
            let norm = sq.integrate().sqrt();
            if norm == 0.0 {
                return Err(invalid(
                    "perturbation.family",
                    "family member vanishes identically; cannot carry the amplitude",
                ));
            }
            let scale = p.amplitude / norm;
            let mut u0 = u_steady.clone();
            for (u, w) in u0.values_mut().iter_mut().zip(member.values()) {
                *u += scale * w;
            }
            (u0, ScalarField::zeros(grid))
        }
    };

    let fold = min_fold_of(&y0);
    if fold <= FOLD_LIMIT {
        return Err(invalid(
            "perturbation.amplitude",
            format!("initial shift folds the front: min(1 + ∂₁Y₀) = {fold:.3e}"),
        ));
    }

    let perturbation_l2 = contraction_energy(&u0, &u_steady).sqrt();
    Ok(InitialData { u0, y0, perturbation_l2 })
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    HorizonReached,
    CFLError,
    FoldOver,
    Diverged,
    MNonConvergence,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

fn termination_of(err: &DynError) -> TerminationReason {
    match err {
        DynError::Cfl { .. } => TerminationReason::CFLError,
        DynError::FoldOver { .. } => TerminationReason::FoldOver,
        DynError::MNonConvergence { .. } | DynError::ShiftRateSingular { .. } => {
            TerminationReason::MNonConvergence
        }
        // Everything else (divergence, the averaging window leaving the
        // grid) means the solution left the regime the scheme can represent.
        _ => TerminationReason::Diverged,
    }
}

/// Everything a finished (or failed) run reports besides the CSV series.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// The fully resolved configuration the run used.
    pub config: ExperimentConfig,
    pub profile_certificate: ProfileCertificate,
    /// Measured `‖u₀ − U‖_{L²}`.
    pub perturbation_l2: f64,
    pub termination: TerminationReason,
    /// Error message behind an early termination (empty otherwise).
    pub termination_detail: String,
    pub steps: u64,
    pub final_time: f64,
    pub wall_clock_secs: f64,
    pub initial_sup_u: f64,
    pub initial_sup_y: f64,
    /// Largest `sup|u|` over every step of the run.
    pub sup_u_global: f64,
    /// Largest `sup|Y|` over every step of the run.
    pub sup_y_global: f64,
    /// Largest one-step increase of `sup|Y|` (`0` when the run took no
    /// steps; negative values mean strict decay every step).
    pub max_sup_y_step_increase: f64,
    /// Smallest `1 + ∂₁Y` seen anywhere in the run.
    pub min_fold: f64,
    /// Whether the drift-averaging window ever had to be clipped.
    pub window_clipped_ever: bool,
    pub diagnostic_rows: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// Lazily created output directory with a crash-consistent CSV writer.
struct Artifacts {
    dir: Option<PathBuf>,
    csv: Option<BufWriter<File>>,
}

impl Artifacts {
    fn new(dir: Option<&Path>) -> Result<Self, HarnessError> {
        let Some(dir) = dir else {
            return Ok(Artifacts { dir: None, csv: None });
        };
        fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Io { path: dir.to_owned(), source: e })?;
        let path = dir.join("diagnostics.csv");
        let file =
            File::create(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
        let mut csv = BufWriter::new(file);
        writeln!(csv, "{}", DiagnosticsRecord::CSV_HEADER)
            .map_err(|e| HarnessError::Io { path, source: e })?;
        Ok(Artifacts { dir: Some(dir.to_owned()), csv: Some(csv) })
    }

    fn csv_path(&self) -> PathBuf {
        self.dir.as_deref().unwrap_or(Path::new(".")).join("diagnostics.csv")
    }

    /// Appends one complete row and flushes, so the file never holds a
    /// partial line.
    fn row(&mut self, rec: &DiagnosticsRecord) -> Result<(), HarnessError> {
        if let Some(csv) = self.csv.as_mut() {
            writeln!(csv, "{}", rec.csv_row())
                .and_then(|_| csv.flush())
                .map_err(|e| HarnessError::Io { path: self.csv_path(), source: e })?;
        }
        Ok(())
    }

    fn snapshot(&self, name: &str, field: &ScalarField) -> Result<(), HarnessError> {
        if let Some(dir) = self.dir.as_deref() {
            let path = dir.join(name);
            field.write_binary(&path)?;
        }
        Ok(())
    }

    fn text(&self, name: &str, content: &str) -> Result<(), HarnessError> {
        if let Some(dir) = self.dir.as_deref() {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| HarnessError::Io { path, source: e })?;
        }
        Ok(())
    }
}

/// Runs one experiment end to end.
///
/// Builds profile → grid → initial data → stepper, advances to the horizon
/// (landing on it exactly) with diagnostics every `diag_stride` steps, and
/// writes artifacts when an output directory is configured. Stepper
/// failures terminate the run gracefully: they are recorded in the
/// manifest, the partial CSV stays valid, and the function still returns
/// the series collected so far.
pub fn run_experiment(
    cfg: &ExperimentConfig,
) -> Result<(RunManifest, Vec<DiagnosticsRecord>), HarnessError> {
    cfg.validate()?;
    let start = Instant::now();

    let flux = cfg.build_flux()?;
    let profile = cfg.build_profile(&flux)?;
    let certificate = profile.check_profile();
    let grid = cfg.build_grid()?;
    let init = make_initial_data(cfg, &profile, &grid)?;

    let mut stepper = Stepper::new(
        profile.clone(),
        grid.clone(),
        cfg.shift,
        cfg.run.mode,
        cfg.stepper_options(),
    )?;
    let mut state = stepper.make_state(init.u0.clone(), init.y0.clone())?;

    let mut artifacts = Artifacts::new(cfg.run.output_dir.as_deref())?;
    artifacts.snapshot("u_initial.bin", &state.u)?;
    artifacts.snapshot("y_initial.bin", &state.y)?;

    // Trackers.
    let initial_sup_u = state.u.sup_abs();
    let initial_sup_y = state.y.sup_abs();
    let mut sup_u_global = initial_sup_u;
    let mut sup_y_global = initial_sup_y;
    let mut prev_sup_y = initial_sup_y;
    let mut max_dy = f64::NEG_INFINITY;
    let mut min_fold = min_fold_of(&state.y);
    let mut window_clipped_ever = state.window_clipped;

    let horizon = cfg.run.horizon;
    let t_eps = 1e-12 * horizon.max(1.0);
    let mut series: Vec<DiagnosticsRecord> = Vec::new();
    series.push(assemble_record(&RecordInputs {
        state: &state,
        profile: &profile,
        entropy_residual: 0.0,
    }));
    // A diagnostic row is emitted with a zero residual, then patched with
    // the energy-identity residual of the step that starts there; `pending`
    // holds the state snapshot needed for that patch and the row's index.
    let mut pending: Option<(SimState, usize)> = Some((state.clone(), 0));

    let mut steps: u64 = 0;
    let mut termination = TerminationReason::HorizonReached;
    let mut termination_detail = String::new();

    while state.t < horizon - t_eps {
        // Clamp the final step so the run lands exactly on the horizon.
        let dt_plan = match stepper.planned_dt(&state) {
            Ok(dt) => dt,
            Err(e) => {
                termination = termination_of(&e);
                termination_detail = e.to_string();
                break;
            }
        };
        if state.t + dt_plan > horizon {
            stepper.set_dt_override(Some(horizon - state.t));
        }

        let info = match stepper.advance(&mut state) {
            Ok(info) => info,
            Err(e) => {
                termination = termination_of(&e);
                termination_detail = e.to_string();
                break;
            }
        };
        steps += 1;

        sup_u_global = sup_u_global.max(info.sup_u);
        sup_y_global = sup_y_global.max(info.sup_y);
        max_dy = max_dy.max(info.sup_y - prev_sup_y);
        prev_sup_y = info.sup_y;
        min_fold = min_fold.min(info.min_fold);
        window_clipped_ever |= state.window_clipped;

        if let Some((prev, idx)) = pending.take() {
            series[idx].entropy_residual = energy_identity_residual(
                &prev,
                &state,
                profile.flux(),
                &profile,
                stepper.params(),
                info.dt,
                Some(stepper.rho_row()),
            );
            artifacts.row(&series[idx])?;
        }

        if cfg.run.snapshot_stride > 0 && steps % cfg.run.snapshot_stride as u64 == 0 {
            artifacts.snapshot(&format!("u_{steps:08}.bin"), &state.u)?;
            artifacts.snapshot(&format!("y_{steps:08}.bin"), &state.y)?;
        }

        let at_horizon = state.t >= horizon - t_eps;
        if steps % cfg.run.diag_stride as u64 == 0 || at_horizon {
            series.push(assemble_record(&RecordInputs {
                state: &state,
                profile: &profile,
                entropy_residual: 0.0,
            }));
            pending = Some((state.clone(), series.len() - 1));
        }
    }

    // The last diagnostic row has no successor step; it keeps a zero
    // residual and still reaches the CSV.
    if let Some((_, idx)) = pending.take() {
        artifacts.row(&series[idx])?;
    }

    artifacts.snapshot("u_final.bin", &state.u)?;
    artifacts.snapshot("y_final.bin", &state.y)?;

    let manifest = RunManifest {
        config: cfg.clone(),
        profile_certificate: certificate,
        perturbation_l2: init.perturbation_l2,
        termination,
        termination_detail,
        steps,
        final_time: state.t,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        initial_sup_u,
        initial_sup_y,
        sup_u_global,
        sup_y_global,
        max_sup_y_step_increase: if steps == 0 { 0.0 } else { max_dy },
        min_fold,
        window_clipped_ever,
        diagnostic_rows: series.len(),
        initial_energy: series.first().map_or(0.0, |r| r.energy),
        final_energy: series.last().map_or(0.0, |r| r.energy),
    };

    let manifest_json = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    artifacts.text("manifest.json", &(manifest_json + "\n"))?;
    artifacts.text("report.txt", &render_report(&manifest, &series))?;

    Ok((manifest, series))
}

// ---------------------------------------------------------------------------
// Property evaluation and reporting
// ---------------------------------------------------------------------------

/// Outcome of one theorem-level property check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PropertyStatus {
    Pass,
    Fail,
    NotEvaluated,
}

impl fmt::Display for PropertyStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PropertyStatus::Pass => "PASS",
            PropertyStatus::Fail => "FAIL",
            PropertyStatus::NotEvaluated => "NOT-EVALUATED",
        };
        f.write_str(s)
    }
}

/// One line of the run report.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub status: PropertyStatus,
    pub detail: String,
}

fn property(name: &'static str, pass: bool, detail: String) -> PropertyResult {
    PropertyResult {
        name,
        status: if pass { PropertyStatus::Pass } else { PropertyStatus::Fail },
        detail,
    }
}

fn not_evaluated(name: &'static str, detail: String) -> PropertyResult {
    PropertyResult { name, status: PropertyStatus::NotEvaluated, detail }
}

/// Trapezoid rule over the diagnostic rows' time axis.
fn trapezoid_over_rows(series: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
    let mut acc = 0.0;
    for pair in series.windows(2) {
        acc += 0.5 * (f(&pair[0]) + f(&pair[1])) * (pair[1].t - pair[0].t);
    }
    acc
}

/// Evaluates the stability properties a finished run is expected to
/// exhibit. Sup-norm invariants are judged from the per-step trackers (so
/// they remain meaningful after an early termination); the theorem-level
/// trends are only evaluated on runs that reached their horizon.
pub fn evaluate_properties(
    manifest: &RunManifest,
    series: &[DiagnosticsRecord],
) -> Vec<PropertyResult> {
    let special = manifest.config.run.mode == Mode::Special;
    let finished = manifest.termination == TerminationReason::HorizonReached;
    let mut out = Vec::new();

    let growth = manifest.sup_u_global - manifest.initial_sup_u;
    out.push(property(
        "max principle",
        growth <= 1e-8,
        format!("sup|u| grew by {growth:.3e} over the run (tolerance 1e-8)"),
    ));

    if special {
        let inc = manifest.max_sup_y_step_increase;
        out.push(property(
            "shift sup-norm non-increase",
            inc <= 1e-10,
            format!("largest one-step sup|Y| increase {inc:.3e} (tolerance 1e-10)"),
        ));
    }

    if !finished {
        let why = format!(
            "run ended early ({}) at t = {:.6}; trend not evaluated",
            manifest.termination, manifest.final_time
        );
        out.push(not_evaluated("energy monotone after ramp time", why.clone()));
        out.push(not_evaluated("integrated energy balance", why.clone()));
        out.push(not_evaluated("front gap trend", why.clone()));
        if special {
            out.push(not_evaluated("weighted energy monotone", why));
        }
        return out;
    }

    // Energy monotone past the ramp time, with the measured identity
    // residual as the tolerance: E(t+Δ) ≤ E(t) + 10·residual·Δ.
    if special {
        out.push(not_evaluated(
            "energy monotone after ramp time",
            "not applicable in the source-free mode".into(),
        ));
    } else {
        let t0 = manifest.config.shift.ramp_time;
        let pairs: Vec<_> = series
            .windows(2)
            .filter(|pair| pair[0].t >= t0 - 1e-12)
            .collect();
        if pairs.len() < 2 {
            out.push(not_evaluated(
                "energy monotone after ramp time",
                format!("fewer than two diagnostic intervals past t = {t0}"),
            ));
        } else {
            let mut worst = f64::NEG_INFINITY;
            for pair in &pairs {
                let dt = pair[1].t - pair[0].t;
                let margin =
                    pair[1].energy - pair[0].energy - 10.0 * pair[0].entropy_residual * dt;
                worst = worst.max(margin);
            }
            out.push(property(
                "energy monotone after ramp time",
                worst <= 0.0,
                format!(
                    "worst excess of E(t+Δ) over E(t) + 10·residual·Δ is {worst:.3e} \
                     across {} intervals",
                    pairs.len()
                ),
            ));
        }
    }

    // Integrated balance: E(T)/2 + ∫(D_grad + D_proj) dt ≤ 1.05 · E(0)/2.
    if special {
        out.push(not_evaluated(
            "integrated energy balance",
            "not applicable in the source-free mode".into(),
        ));
    } else if series.len() < 2 {
        out.push(not_evaluated("integrated energy balance", "fewer than two rows".into()));
    } else {
        let dissipated = trapezoid_over_rows(series, |r| r.d_grad + r.d_proj);
        let lhs = 0.5 * series.last().unwrap().energy + dissipated;
        let rhs = 1.05 * 0.5 * series[0].energy;
        out.push(property(
            "integrated energy balance",
            lhs <= rhs,
            format!("E(T)/2 + ∫(D_grad + D_proj) dt = {lhs:.6e} vs 1.05·E(0)/2 = {rhs:.6e}"),
        ));
    }

    // Front gap trend: last-quarter mean at most half the first-quarter mean.
    if series.len() < 8 {
        out.push(not_evaluated("front gap trend", "fewer than eight rows".into()));
    } else {
        let q = series.len() / 4;
        let mean = |rows: &[DiagnosticsRecord]| {
            rows.iter().map(|r| r.f_gap).sum::<f64>() / rows.len() as f64
        };
        let first = mean(&series[..q]);
        let last = mean(&series[series.len() - q..]);
        out.push(property(
            "front gap trend",
            last <= 0.5 * first,
            format!("last-quarter mean {last:.6e} vs half of first-quarter mean {:.6e}", 0.5 * first),
        ));
    }

    if special {
        // Weighted energy ∫|U′(x₁)|(Y − c)² must not increase between rows.
        let mut worst_rel = f64::NEG_INFINITY;
        for pair in series.windows(2) {
            let scale = pair[0].w_y.max(1e-300);
            worst_rel = worst_rel.max((pair[1].w_y - pair[0].w_y) / scale);
        }
        let pass = series.len() < 2 || worst_rel <= 1e-10;
        out.push(property(
            "weighted energy monotone",
            pass,
            format!("largest relative between-row increase {worst_rel:.3e} (tolerance 1e-10)"),
        ));
    }

    out
}

/// Renders the run summary: header facts, then one line per property.
pub fn render_report(manifest: &RunManifest, series: &[DiagnosticsRecord]) -> String {
    let cfg = &manifest.config;
    let mut s = String::new();
    use std::fmt::Write as _;

    let _ = writeln!(
        s,
        "mode: {:?}   flux: {:?}   grid: {}x{} (dim {}, L = {})",
        cfg.run.mode, cfg.flux.kind, cfg.grid.n1, cfg.grid.n_perp, cfg.grid.dim, cfg.grid.l
    );
    let _ = writeln!(
        s,
        "perturbation: {:?}   amplitude {:e}   seed {}   measured ‖u0−U‖_L2 = {:.6e}",
        cfg.perturbation.family,
        cfg.perturbation.amplitude,
        cfg.perturbation.seed,
        manifest.perturbation_l2
    );
    let _ = writeln!(
        s,
        "termination: {}{}   t = {:.6}   steps = {}   wall = {:.2} s",
        manifest.termination,
        if manifest.termination_detail.is_empty() {
            String::new()
        } else {
            format!(" ({})", manifest.termination_detail)
        },
        manifest.final_time,
        manifest.steps,
        manifest.wall_clock_secs
    );
    let _ = writeln!(
        s,
        "energy: E(0) = {:.6e}   E(end) = {:.6e}   rows = {}",
        manifest.initial_energy,
        manifest.final_energy,
        series.len()
    );
    let _ = writeln!(s, "properties:");
    for p in evaluate_properties(manifest, series) {
        let _ = writeln!(s, "  {:<32} {:<14} {}", format!("{}:", p.name), p.status, p.detail);
    }
    s
}

/// Writes the rendered report to `path`.
pub fn emit_report(
    manifest: &RunManifest,
    series: &[DiagnosticsRecord],
    path: &Path,
) -> Result<(), HarnessError> {
    fs::write(path, render_report(manifest, series))
        .map_err(|e| HarnessError::Io { path: path.to_owned(), source: e })
}

// ---------------------------------------------------------------------------
// Amplitude sweeps
// ---------------------------------------------------------------------------

/// Summary of one sweep member (full artifacts live in its directory).
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub amplitude: f64,
    pub dir: PathBuf,
    pub termination: TerminationReason,
    pub steps: u64,
    pub final_time: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

/// Runs the base experiment at each amplitude, fanning the independent runs
/// out across worker threads, each with an isolated `amp_<a>` output
/// directory under `out_root`; writes `sweep.json` with the summaries.
pub fn sweep(
    base: &ExperimentConfig,
    amplitudes: &[f64],
    out_root: &Path,
) -> Result<Vec<SweepEntry>, HarnessError> {
    fs::create_dir_all(out_root)
        .map_err(|e| HarnessError::Io { path: out_root.to_owned(), source: e })?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);

    let mut entries: Vec<SweepEntry> = Vec::with_capacity(amplitudes.len());
    for chunk in amplitudes.chunks(workers) {
        let results: Vec<Result<SweepEntry, HarnessError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&amplitude| {
                    let mut cfg = base.clone();
                    let dir = out_root.join(format!("amp_{amplitude:e}"));
                    cfg.perturbation.amplitude = amplitude;
                    cfg.run.output_dir = Some(dir.clone());
                    scope.spawn(move || {
                        let (manifest, _series) = run_experiment(&cfg)?;
                        Ok(SweepEntry {
                            amplitude,
                            dir,
                            termination: manifest.termination,
                            steps: manifest.steps,
                            final_time: manifest.final_time,
                            initial_energy: manifest.initial_energy,
                            final_energy: manifest.final_energy,
                        })
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for r in results {
            entries.push(r?);
        }
    }

    let summary =
        serde_json::to_string_pretty(&entries).expect("sweep serialization cannot fail");
    let path = out_root.join("sweep.json");
    fs::write(&path, summary + "\n").map_err(|e| HarnessError::Io { path, source: e })?;
    Ok(entries)
}
