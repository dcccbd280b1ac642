//! Coupled evolution of the perturbed conservation law and the shift equation.
//!
//! The simulation advances two fields together on the slab `[-L,L] × T^{N-1}`:
//! the conserved quantity `u`, which obeys
//! `∂ₜu + div A(u) = Δu` with far-field Dirichlet data `u∓`, and the shift
//! field `Y`, which obeys an advected, damped Hamilton–Jacobi-type equation
//! whose sources steer the modulated front `V = U(x₁ + Y)` toward `u`:
//!
//! `∂ₜY = A₁′(V)∂₁Y − Σᵢ Aᵢ′(V)∂ᵢY + A₁′(V)|∇Y|² − w·∇Y + ΔY
//!        − (w₁ − h_M)ψ_M(x₁+m) − h_M + g`.
//!
//! Here `w = φ(t)·K(u, V)` is the drift field built from the flux kernel,
//! `h_M` is a windowed average of `w₁` around the front, `g` weighs the
//! mismatch `u − V` against the front slope, and `m` is the slope-weighted
//! mean of `Y` (the effective front position). In `Special` mode all sources
//! and the drift are switched off and `u` is expected to track `U(x₁ + Y)`
//! exactly up to discretization error.
//!
//! Time stepping is explicit Heun (two-stage, second order). The conservation
//! law uses a local Lax–Friedrichs flux plus centered diffusion and is
//! well-balanced: the tabulated profile is subtracted as a discrete source so
//! that `u = U` is preserved bitwise. The shift equation upwinds its advection
//! on the local velocity sign and treats the quadratic gradient term centrally.

mod kernels;
pub mod picard;

pub(crate) use kernels::{BurgersEval, FluxEval, PolyTabs};

use crate::flux::{FluxField, FluxKind, KernelPoly};
use crate::grid::{Grid, GridError, ScalarField, VectorField};
use crate::profile::ShockProfile;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default CFL safety factor applied to the stability bound.
pub const CFL_SAFETY: f64 = 0.4;

/// Minimum admissible value of `1 + ∂₁Y`: below this the graph
/// `x₁ ↦ x₁ + Y` is considered folded and the run aborts.
pub const FOLD_LIMIT: f64 = 0.1;

/// Stopping tolerance for the shift fixed-point iteration.
pub const M_FIXED_POINT_TOL: f64 = 1e-12;

/// Iteration cap for the shift fixed point.
pub const M_MAX_ITERS: usize = 50;

/// The shift-rate denominator is declared singular below this fraction of the
/// total profile-slope mass.
pub const SHIFT_RATE_GUARD: f64 = 1e-8;

/// Errors produced by the time stepper and the shift machinery.
#[derive(Debug, Error)]
pub enum DynError {
    #[error("time step {requested:.6e} exceeds the stability limit {limit:.6e}")]
    Cfl { requested: f64, limit: f64 },
    #[error(
        "shift fixed point stalled after {iters} iterations (last update {residual:.3e})"
    )]
    MNonConvergence { iters: usize, residual: f64 },
    #[error(
        "shift-rate denominator {denominator:.3e} is singular next to the slope mass {mass:.3e}"
    )]
    ShiftRateSingular { denominator: f64, mass: f64 },
    #[error("shift graph folds over at t = {t:.6}: min(1 + ∂₁Y) = {min_fold:.3e}")]
    FoldOver { t: f64, min_fold: f64 },
    #[error("solution diverged (non-finite or unbounded values) at t = {t:.6}")]
    Diverged { t: f64 },
    #[error(
        "averaging window [{lo:.3}, {hi:.3}] lies outside the grid [{x_lo:.3}, {x_hi:.3}]"
    )]
    WindowOutsideGrid { lo: f64, hi: f64, x_lo: f64, x_hi: f64 },
    #[error("cutoff half-width must be at least 5 (got {0})")]
    CutoffTooNarrow(f64),
    #[error("ramp time must be positive (got {0})")]
    BadRampTime(f64),
    #[error("flux provides {have} components but the grid has {need} space dimensions")]
    FluxDim { have: usize, need: usize },
    #[error("field shape does not match the stepper grid")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Which dynamical regime the stepper runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full coupled system with the drift ramped in over `[t₀/2, t₀]`.
    General,
    /// Full coupled system with the drift active from `t = 0`.
    GeneralNoRamp,
    /// Source-free shift equation; `u` should equal `U(x₁ + Y)` up to
    /// discretization error.
    Special,
}

/// Spatial cutoff profile for `ψ_M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiShape {
    /// Quintic smoothstep: 1 on `|x₁| ≤ M`, 0 on `|x₁| ≥ M + 1`, C² in between.
    SmoothStep,
}

/// Temporal ramp profile for `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiShape {
    /// Quintic smoothstep: 0 on `[0, t₀/2]`, 1 on `[t₀, ∞)`.
    SmoothStep,
    /// Constant 1 (no ramp).
    Identity,
}

/// Parameters of the shift sources: cutoff half-width `M`, ramp time `t₀`,
/// and the shapes of the spatial cutoff and temporal ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftParams {
    pub m_cutoff: f64,
    pub ramp_time: f64,
    pub psi_shape: PsiShape,
    pub phi_shape: PhiShape,
}

impl Default for ShiftParams {
    fn default() -> Self {
        ShiftParams {
            m_cutoff: 10.0,
            ramp_time: 1.0,
            psi_shape: PsiShape::SmoothStep,
            phi_shape: PhiShape::SmoothStep,
        }
    }
}

/// Quintic smoothstep on `[0, 1]`: 0 at 0, 1 at 1, with two vanishing
/// derivatives at both ends.
#[inline]
fn smoothstep5(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    }
}

impl ShiftParams {
    /// Checks the admissibility constraints `M ≥ 5` and `t₀ > 0`.
    pub fn validate(&self) -> Result<(), DynError> {
        if !(self.m_cutoff >= 5.0) {
            return Err(DynError::CutoffTooNarrow(self.m_cutoff));
        }
        if !(self.ramp_time > 0.0) {
            return Err(DynError::BadRampTime(self.ramp_time));
        }
        Ok(())
    }

    /// Spatial cutoff `ψ_M`: 1 for `|x₁| ≤ M`, 0 for `|x₁| ≥ M + 1`, C²
    /// monotone in between, even in `x₁`.
    pub fn psi_m(&self, x1: f64) -> f64 {
        match self.psi_shape {
            PsiShape::SmoothStep => 1.0 - smoothstep5(x1.abs() - self.m_cutoff),
        }
    }

    /// Temporal ramp `φ`: 0 on `[0, t₀/2]`, 1 on `[t₀, ∞)` for the smoothstep
    /// shape; identically 1 for the identity shape.
    pub fn phi_ramp(&self, t: f64) -> f64 {
        match self.phi_shape {
            PhiShape::Identity => 1.0,
            PhiShape::SmoothStep => {
                smoothstep5((t - 0.5 * self.ramp_time) / (0.5 * self.ramp_time))
            }
        }
    }
}

/// The ramp value actually applied in a given mode.
fn effective_phi(mode: Mode, params: &ShiftParams, t: f64) -> f64 {
    match mode {
        Mode::General => params.phi_ramp(t),
        Mode::GeneralNoRamp => 1.0,
        Mode::Special => 0.0,
    }
}

/// Full simulation state: the two evolved fields, the shift scalar, and the
/// cached derived quantities (`V`, `w`, `h_M`, `g`, wave-speed bound) that the
/// right sides and the diagnostics read.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub u: ScalarField,
    pub y: ScalarField,
    /// Slope-weighted mean of `Y` (fixed point of [`update_m`]).
    pub m: f64,
    pub mode: Mode,
    /// Cached modulated front `V = U(x₁ + Y)`.
    pub v: ScalarField,
    /// Cached drift field `w = φ(t)·K(u, V)`.
    pub w: VectorField,
    /// Cached windowed average of `w₁`.
    pub h_m: f64,
    /// Cached slope-weighted integral of `u − V`.
    pub g: f64,
    /// Cached `sup` over nodes and directions of `|A′(u)|, |A′(V)|, |w|`.
    pub s_max: f64,
    /// Whether the `h_M` window had to be clipped to the grid.
    pub window_clipped: bool,
}

impl SimState {
    /// Assembles a state from bare fields with zeroed caches. The caches are
    /// not consistent until [`refresh_caches`] (or a stepper refresh) runs.
    pub fn from_fields(u: ScalarField, y: ScalarField, mode: Mode) -> Result<Self, DynError> {
        if u.grid() != y.grid() {
            return Err(DynError::GridMismatch);
        }
        let grid = u.grid().clone();
        let dim = grid.dim();
        let zeros: Vec<ScalarField> = (0..dim).map(|_| ScalarField::zeros(&grid)).collect();
        let w = VectorField::new(zeros).expect("zero components share one grid");
        let v = ScalarField::zeros(&grid);
        Ok(SimState {
            t: 0.0,
            u,
            y,
            m: 0.0,
            mode,
            v,
            w,
            h_m: 0.0,
            g: 0.0,
            s_max: 0.0,
            window_clipped: false,
        })
    }
}

/// Dispatches a generic closure over the monomorphized flux evaluators.
macro_rules! with_flux_eval {
    ($flux:expr, $fx:ident => $body:expr) => {
        match $flux.kind() {
            FluxKind::Burgers => {
                let $fx = BurgersEval;
                $body
            }
            _ => {
                let tabs = PolyTabs::new($flux);
                let $fx = tabs.eval();
                $body
            }
        }
    };
}

// ---------------------------------------------------------------------------
// Pure operations
// ---------------------------------------------------------------------------

/// Composes the modulated front `V(x) = U(x₁ + Y(x))`, clamped to the
/// profile's range.
pub fn compose_v(profile: &ShockProfile, y: &ScalarField) -> ScalarField {
    let grid = y.grid();
    let n1 = grid.n1();
    let nt = grid.n_transverse();
    let yv = y.values();
    let mut vals = vec![0.0; yv.len()];
    for i1 in 0..n1 {
        let x1 = grid.x1(i1);
        for k in 0..nt {
            let idx = i1 * nt + k;
            vals[idx] = profile.eval_profile(x1 + yv[idx]);
        }
    }
    ScalarField::from_values(grid, vals).expect("profile values are finite")
}

/// Evaluates the drift field `w = φ(t)·K(u, V)` from the cached front in
/// `state`. Identically zero in `Special` mode and while the ramp is closed.
pub fn compute_w(state: &SimState, flux: &FluxField, params: &ShiftParams) -> VectorField {
    let grid = state.u.grid();
    let dim = grid.dim();
    let phi = effective_phi(state.mode, params, state.t);
    let uv = state.u.values();
    let vv = state.v.values();
    let mut comps = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut vals = vec![0.0; uv.len()];
        if phi != 0.0 {
            let kp = KernelPoly::from_polynomial(&flux.components()[d]);
            if !kp.is_zero() {
                for idx in 0..uv.len() {
                    vals[idx] = phi * kp.eval(vv[idx], uv[idx] - vv[idx]);
                }
            }
        }
        comps.push(ScalarField::from_values(grid, vals).expect("kernel values are finite"));
    }
    VectorField::new(comps).expect("components share one grid")
}

/// Integral over `[a, b]` of the piecewise-linear interpolant of the samples
/// `(x_min + i·dx, w[i])`, clipping the interval to the sample range.
/// Returns the integral and whether clipping occurred.
fn clipped_linear_integral(
    x_min: f64,
    dx: f64,
    w: &[f64],
    a: f64,
    b: f64,
) -> Result<(f64, bool), DynError> {
    let n = w.len();
    let x_max = x_min + (n - 1) as f64 * dx;
    let eps = 1e-9 * dx;
    if b <= x_min + eps || a >= x_max - eps {
        return Err(DynError::WindowOutsideGrid { lo: a, hi: b, x_lo: x_min, x_hi: x_max });
    }
    let clipped = a < x_min - eps || b > x_max + eps;
    let a = a.max(x_min);
    let b = b.min(x_max);
    let value_at = |x: f64| -> (usize, f64) {
        let s = (x - x_min) / dx;
        let mut i = s.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let frac = s - i as f64;
        (i, w[i] + frac * (w[i + 1] - w[i]))
    };
    let (ia, wa) = value_at(a);
    let (ib, wb) = value_at(b);
    if ia == ib {
        return Ok(((b - a) * 0.5 * (wa + wb), clipped));
    }
    let xa_next = x_min + (ia + 1) as f64 * dx;
    let xb_cell = x_min + ib as f64 * dx;
    let mut total = (xa_next - a) * 0.5 * (wa + w[ia + 1]);
    for i in ia + 1..ib {
        total += dx * 0.5 * (w[i] + w[i + 1]);
    }
    total += (b - xb_cell) * 0.5 * (w[ib] + wb);
    Ok((total, clipped))
}

/// Windowed average of the first drift component over `|x₁ + m| ≤ M + 1`,
/// normalized by the full window length `2(M+1)`. The window is clipped to
/// the grid (flag in the result); a window entirely off the grid is an error.
pub fn compute_h_m(state: &SimState, params: &ShiftParams) -> Result<(f64, bool), DynError> {
    let grid = state.u.grid();
    let n1 = grid.n1();
    let nt = grid.n_transverse();
    let tcell = grid.transverse_cell();
    let w1 = state.w.component(0).values();
    let mut density = vec![0.0; n1];
    for i1 in 0..n1 {
        let mut s = 0.0;
        for k in 0..nt {
            s += w1[i1 * nt + k];
        }
        density[i1] = s * tcell;
    }
    let half = params.m_cutoff + 1.0;
    let (integral, clipped) = clipped_linear_integral(
        -grid.l(),
        grid.dx1(),
        &density,
        -half - state.m,
        half - state.m,
    )?;
    Ok((integral / (2.0 * half), clipped))
}

/// Slope-weighted integral `g = ∫ (u − V)·U′(x₁ + m) dx`.
pub fn compute_g(state: &SimState, profile: &ShockProfile) -> f64 {
    let grid = state.u.grid();
    let n1 = grid.n1();
    let nt = grid.n_transverse();
    let tcell = grid.transverse_cell();
    let uv = state.u.values();
    let vv = state.v.values();
    let mut total = 0.0;
    for i1 in 0..n1 {
        let du = profile.eval_profile_deriv(grid.x1(i1) + state.m);
        if du == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for k in 0..nt {
            let idx = i1 * nt + k;
            s += uv[idx] - vv[idx];
        }
        total += grid.x1_weight(i1) * du * s * tcell;
    }
    total
}

/// One evaluation of the shift map `F(m) = ∫|U′(x₁+m)| Y dx / ∫|U′(x₁+m)| dx`
/// from per-slice plain sums of `Y`. Returns `(F(m), slope mass)`.
fn shift_map(profile: &ShockProfile, grid: &Grid, row_y: &[f64], m: f64) -> (f64, f64) {
    let n1 = grid.n1();
    let nt = grid.n_transverse() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i1 in 0..n1 {
        let q = profile.eval_profile_deriv(grid.x1(i1) + m).abs();
        if q == 0.0 {
            continue;
        }
        let wq = grid.x1_weight(i1) * q;
        num += wq * row_y[i1];
        den += wq * nt;
    }
    (num / den, den)
}

fn update_m_rows(
    profile: &ShockProfile,
    grid: &Grid,
    row_y: &[f64],
    m0: f64,
) -> Result<f64, DynError> {
    let mut m = m0;
    let mut prev_step = 0.0;
    let mut residual = f64::INFINITY;
    for it in 0..M_MAX_ITERS {
        let (fm, mass) = shift_map(profile, grid, row_y, m);
        if !(mass > 0.0) || !fm.is_finite() {
            return Err(DynError::MNonConvergence { iters: it, residual });
        }
        let delta = fm - m;
        residual = delta.abs();
        if residual < M_FIXED_POINT_TOL {
            return Ok(fm);
        }
        // Halve the update when the iteration starts to oscillate.
        let step = if it > 0 && delta * prev_step < 0.0 { 0.5 * delta } else { delta };
        m += step;
        prev_step = step;
    }
    Err(DynError::MNonConvergence { iters: M_MAX_ITERS, residual })
}

/// Solves the implicit shift definition `m = F(m)` by damped fixed-point
/// iteration warm-started at `m0`.
pub fn update_m(y: &ScalarField, profile: &ShockProfile, m0: f64) -> Result<f64, DynError> {
    let grid = y.grid();
    let n1 = grid.n1();
    let nt = grid.n_transverse();
    let yv = y.values();
    let mut row_y = vec![0.0; n1];
    for i1 in 0..n1 {
        let mut s = 0.0;
        for k in 0..nt {
            s += yv[i1 * nt + k];
        }
        row_y[i1] = s;
    }
    update_m_rows(profile, grid, &row_y, m0)
}

/// Builds the cutoff row `ψ_M(x₁ + m)` on the x₁ nodes.
fn psi_row_at(params: &ShiftParams, grid: &Grid, m: f64, out: &mut [f64]) {
    for (i1, slot) in out.iter_mut().enumerate() {
        *slot = params.psi_m(grid.x1(i1) + m);
    }
}

/// Recomputes every cache in `state` from `(t, u, Y)` in the canonical order:
/// front, drift, window average and slope integral (at the incoming shift),
/// then the shift fixed point.
pub fn refresh_caches(
    state: &mut SimState,
    profile: &ShockProfile,
    params: &ShiftParams,
) -> Result<(), DynError> {
    let flux = profile.flux();
    state.v = compose_v(profile, &state.y);
    state.w = compute_w(state, flux, params);
    let (h_m, clipped) = compute_h_m(state, params)?;
    state.h_m = h_m;
    state.window_clipped = clipped;
    state.g = compute_g(state, profile);
    state.m = update_m(&state.y, profile, state.m)?;
    state.s_max = wave_speed_bound(state, flux);
    let poison: f64 = state.u.values().iter().chain(state.y.values()).sum();
    if !poison.is_finite() {
        return Err(DynError::Diverged { t: state.t });
    }
    Ok(())
}

/// `sup` over nodes and directions of `|A′(u)|`, `|A′(V)|`, `|w|`.
pub fn wave_speed_bound(state: &SimState, flux: &FluxField) -> f64 {
    let dim = state.u.grid().dim();
    let uv = state.u.values();
    let vv = state.v.values();
    let mut s: f64 = 0.0;
    with_flux_eval!(flux, fx => {
        for idx in 0..uv.len() {
            for d in 0..dim {
                s = s.max(fx.ap(d, uv[idx]).abs()).max(fx.ap(d, vv[idx]).abs());
            }
        }
    });
    for d in 0..dim {
        for &wv in state.w.component(d).values() {
            s = s.max(wv.abs());
        }
    }
    s
}

/// Largest stable time step: `safety · min(dx²/(2N), dx / s_max)` with
/// `dx = min(dx₁, dx_perp)` and unit diffusion.
pub fn cfl_dt(state: &SimState, flux: &FluxField) -> f64 {
    let grid = state.u.grid();
    let dx = grid.dx1().min(grid.dx_perp());
    let s = wave_speed_bound(state, flux);
    cfl_from(grid.dim(), dx, s, CFL_SAFETY)
}

fn cfl_from(dim: usize, dx: f64, s_max: f64, safety: f64) -> f64 {
    let diffusive = dx * dx / (2.0 * dim as f64);
    let advective = if s_max > 0.0 { dx / s_max } else { f64::INFINITY };
    safety * diffusive.min(advective)
}

/// The discrete residual row `ϱ = Δ_h U − div_h F_llf(U)` of the tabulated
/// profile, one value per x₁ node. Subtracting it from the conservation-law
/// right side makes the tabulated profile an exact discrete equilibrium.
pub fn well_balancing_row(profile: &ShockProfile, grid: &Grid) -> Vec<f64> {
    let n1 = grid.n1();
    let u_row: Vec<f64> = (0..n1).map(|i| profile.eval_profile(grid.x1(i))).collect();
    let mut out = vec![0.0; n1];
    let mut face = vec![0.0; 1];
    let mut tface = vec![0.0; 1];
    let mut st = kernels::UStencil {
        n1,
        n_perp: 1,
        dim: 2,
        dx1: grid.dx1(),
        dx_perp: 1.0,
        ghost_left: profile.u_minus(),
        ghost_right: profile.u_plus(),
        rho: None,
        face: &mut face,
        tface: &mut tface,
    };
    with_flux_eval!(profile.flux(), fx => kernels::rhs_u(fx, &mut st, &u_row, &mut out));
    out
}

/// Evaluates the conservation-law right side `Δu − div F_llf(u) − ϱ` on a
/// bare field. `bc` is the Dirichlet ghost pair `(u₋, u₊)`; `rho` is an
/// optional well-balancing row (one value per x₁ slice) subtracted pointwise.
pub fn eval_rhs_u(
    u: &ScalarField,
    flux: &FluxField,
    bc: (f64, f64),
    rho: Option<&[f64]>,
) -> ScalarField {
    let grid = u.grid();
    let uv = u.values();
    let mut out = vec![0.0; uv.len()];
    let mut face = vec![0.0; grid.n_transverse()];
    let mut tface = vec![0.0; grid.n_transverse()];
    with_flux_eval!(flux, fx => {
        let mut st = kernels::UStencil {
            n1: grid.n1(),
            n_perp: grid.n_perp(),
            dim: grid.dim(),
            dx1: grid.dx1(),
            dx_perp: grid.dx_perp(),
            ghost_left: bc.0,
            ghost_right: bc.1,
            rho,
            face: &mut face,
            tface: &mut tface,
        };
        kernels::rhs_u(fx, &mut st, uv, &mut out);
    });
    ScalarField::from_values(grid, out).expect("rhs field matches the input grid")
}

/// One explicit Heun step of the conservation law alone. `bc` is the
/// Dirichlet ghost pair `(u₋, u₊)`; `rho` is an optional well-balancing row
/// subtracted from the right side.
pub fn step_u(
    state: &SimState,
    flux: &FluxField,
    bc: (f64, f64),
    rho: Option<&[f64]>,
    dt: f64,
) -> Result<ScalarField, DynError> {
    let limit = cfl_dt(state, flux);
    if dt > limit * (1.0 + 1e-9) {
        return Err(DynError::Cfl { requested: dt, limit });
    }
    let grid = state.u.grid();
    let uv = state.u.values();
    let n = uv.len();
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut face = vec![0.0; grid.n_transverse()];
    let mut tface = vec![0.0; grid.n_transverse()];
    with_flux_eval!(flux, fx => {
        let mut st = kernels::UStencil {
            n1: grid.n1(),
            n_perp: grid.n_perp(),
            dim: grid.dim(),
            dx1: grid.dx1(),
            dx_perp: grid.dx_perp(),
            ghost_left: bc.0,
            ghost_right: bc.1,
            rho,
            face: &mut face,
            tface: &mut tface,
        };
        kernels::rhs_u(fx, &mut st, uv, &mut f1);
        for idx in 0..n {
            pred[idx] = uv[idx] + dt * f1[idx];
        }
        kernels::rhs_u(fx, &mut st, &pred, &mut f2);
    });
    let mut out = vec![0.0; n];
    for idx in 0..n {
        out[idx] = uv[idx] + 0.5 * dt * (f1[idx] + f2[idx]);
    }
    ScalarField::from_values(grid, out).map_err(|_| DynError::Diverged { t: state.t })
}

/// One explicit Heun step of the shift equation with `u` frozen at its
/// current value. Returns the stepped field and the updated shift scalar.
/// Requires current caches in `state`.
pub fn step_y(
    state: &SimState,
    profile: &ShockProfile,
    params: &ShiftParams,
    dt: f64,
) -> Result<(ScalarField, f64), DynError> {
    let flux = profile.flux();
    let limit = cfl_dt(state, flux);
    if dt > limit * (1.0 + 1e-9) {
        return Err(DynError::Cfl { requested: dt, limit });
    }
    let grid = state.u.grid().clone();
    let n = state.u.grid().n_nodes();
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut psi = vec![0.0; grid.n1()];

    psi_row_at(params, &grid, state.m, &mut psi);
    let fold1 = eval_rhs_y(state, flux, &psi, &mut f1);
    if fold1 <= FOLD_LIMIT {
        return Err(DynError::FoldOver { t: state.t, min_fold: fold1 });
    }

    let mut stage = state.clone();
    stage.t = state.t + dt;
    {
        let yv = stage.y.values_mut();
        for idx in 0..n {
            yv[idx] += dt * f1[idx];
        }
    }
    refresh_caches(&mut stage, profile, params)?;
    psi_row_at(params, &grid, stage.m, &mut psi);
    let fold2 = eval_rhs_y(&stage, flux, &psi, &mut f2);
    if fold2 <= FOLD_LIMIT {
        return Err(DynError::FoldOver { t: stage.t, min_fold: fold2 });
    }

    let y0 = state.y.values();
    let mut out = vec![0.0; n];
    for idx in 0..n {
        out[idx] = y0[idx] + 0.5 * dt * (f1[idx] + f2[idx]);
    }
    let y_new =
        ScalarField::from_values(&grid, out).map_err(|_| DynError::Diverged { t: state.t })?;
    let m_new = update_m(&y_new, profile, stage.m)?;
    Ok((y_new, m_new))
}

/// Evaluates the shift-equation right side at the (cache-consistent) state
/// into `out`, returning the fold-guard minimum of `1 + ∂₁Y`.
fn eval_rhs_y(state: &SimState, flux: &FluxField, psi_row: &[f64], out: &mut [f64]) -> f64 {
    let grid = state.u.grid();
    let wrefs: Vec<&[f64]> = (0..grid.dim()).map(|d| state.w.component(d).values()).collect();
    let args = kernels::YArgs {
        y: state.y.values(),
        v: state.v.values(),
        w: &wrefs,
        psi_row,
        h_m: state.h_m,
        g: state.g,
    };
    with_flux_eval!(flux, fx => {
        match state.mode {
            Mode::Special => kernels::rhs_y::<_, false>(
                fx,
                grid.n1(),
                grid.n_perp(),
                grid.dim(),
                grid.dx1(),
                grid.dx_perp(),
                &args,
                out,
            ),
            _ => kernels::rhs_y::<_, true>(
                fx,
                grid.n1(),
                grid.n_perp(),
                grid.dim(),
                grid.dx1(),
                grid.dx_perp(),
                &args,
                out,
            ),
        }
    })
}

/// Instantaneous rate of the shift scalar implied by the discrete dynamics:
/// differentiates the fixed-point identity `m·∫|U′(x₁+m)| = ∫|U′(x₁+m)| Y`
/// along the flow, with the shift-equation right side supplying `∂ₜY`.
pub fn m_ode_rhs(
    state: &SimState,
    profile: &ShockProfile,
    params: &ShiftParams,
) -> Result<f64, DynError> {
    let grid = state.u.grid();
    let n1 = grid.n1();
    let nt = grid.n_transverse();
    let tcell = grid.transverse_cell();
    let flux = profile.flux();

    let mut psi = vec![0.0; n1];
    psi_row_at(params, grid, state.m, &mut psi);
    let mut f_y = vec![0.0; state.y.values().len()];
    eval_rhs_y(state, flux, &psi, &mut f_y);

    let yv = state.y.values();
    let mut num = 0.0;
    let mut mass = 0.0;
    let mut den = 0.0;
    for i1 in 0..n1 {
        let x = grid.x1(i1) + state.m;
        let q = profile.eval_profile_deriv(x).abs();
        let q2 = profile.eval_profile_deriv2(x);
        let wq = grid.x1_weight(i1) * tcell;
        let mut sum_fy = 0.0;
        let mut sum_y = 0.0;
        for k in 0..nt {
            let idx = i1 * nt + k;
            sum_fy += f_y[idx];
            sum_y += yv[idx];
        }
        num += wq * q * sum_fy;
        mass += wq * q * nt as f64;
        den += wq * q2 * (sum_y - state.m * nt as f64);
    }
    den += mass;
    if den.abs() < SHIFT_RATE_GUARD * mass {
        return Err(DynError::ShiftRateSingular { denominator: den, mass });
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// The coupled stepper
// ---------------------------------------------------------------------------

/// Per-step report from [`Stepper::advance`].
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Time after the step.
    pub t: f64,
    pub dt: f64,
    /// `sup|u|` after the step.
    pub sup_u: f64,
    /// `sup|Y|` after the step.
    pub sup_y: f64,
    /// Smallest `1 + ∂₁Y` seen across the two stages.
    pub min_fold: f64,
    pub m: f64,
    pub h_m: f64,
    pub g: f64,
}

/// Stepper configuration knobs.
#[derive(Debug, Clone, Copy)]
pub struct StepperOptions {
    pub cfl_safety: f64,
    /// Fixed step to use instead of the stability-bound step. Rejected if it
    /// exceeds the bound.
    pub dt_override: Option<f64>,
    /// Subtract the tabulated profile's discretization residual so the
    /// profile is an exact discrete equilibrium.
    pub well_balanced: bool,
}

impl Default for StepperOptions {
    fn default() -> Self {
        StepperOptions { cfl_safety: CFL_SAFETY, dt_override: None, well_balanced: true }
    }
}

/// Scalar caches produced by one fused refresh sweep.
struct ScalarCaches {
    h_m: f64,
    clipped: bool,
    g: f64,
    m: f64,
    s_max: f64,
    sup_u: f64,
    sup_y: f64,
}

/// Owns the grid, profile, parameters, and all step scratch; advances a
/// [`SimState`] with coupled Heun steps without per-step allocation.
pub struct Stepper {
    profile: ShockProfile,
    grid: Grid,
    params: ShiftParams,
    mode: Mode,
    opts: StepperOptions,
    poly: Option<PolyTabs>,
    rho_row: Vec<f64>,
    u_tab_row: Vec<f64>,
    // scratch
    f1_u: Vec<f64>,
    f1_y: Vec<f64>,
    f2_u: Vec<f64>,
    f2_y: Vec<f64>,
    u_pred: Vec<f64>,
    y_pred: Vec<f64>,
    v_pred: Vec<f64>,
    w_pred: Vec<Vec<f64>>,
    face: Vec<f64>,
    tface: Vec<f64>,
    psi_state: Vec<f64>,
    psi_pred: Vec<f64>,
    row_y: Vec<f64>,
    row_w1: Vec<f64>,
    row_h: Vec<f64>,
}

impl Stepper {
    pub fn new(
        profile: ShockProfile,
        grid: Grid,
        params: ShiftParams,
        mode: Mode,
        opts: StepperOptions,
    ) -> Result<Self, DynError> {
        params.validate()?;
        let dim = grid.dim();
        if profile.flux().n_components() < dim {
            return Err(DynError::FluxDim {
                have: profile.flux().n_components(),
                need: dim,
            });
        }
        let poly = match profile.flux().kind() {
            FluxKind::Burgers => None,
            _ => Some(PolyTabs::new(profile.flux())),
        };
        let n = grid.n_nodes();
        let n1 = grid.n1();
        let nt = grid.n_transverse();
        let u_tab_row: Vec<f64> =
            (0..n1).map(|i| profile.eval_profile(grid.x1(i))).collect();
        let rho_row = if opts.well_balanced {
            well_balancing_row(&profile, &grid)
        } else {
            vec![0.0; n1]
        };
        Ok(Stepper {
            poly,
            rho_row,
            u_tab_row,
            f1_u: vec![0.0; n],
            f1_y: vec![0.0; n],
            f2_u: vec![0.0; n],
            f2_y: vec![0.0; n],
            u_pred: vec![0.0; n],
            y_pred: vec![0.0; n],
            v_pred: vec![0.0; n],
            w_pred: (0..grid.dim()).map(|_| vec![0.0; n]).collect(),
            face: vec![0.0; nt],
            tface: vec![0.0; nt],
            psi_state: vec![0.0; n1],
            psi_pred: vec![0.0; n1],
            row_y: vec![0.0; n1],
            row_w1: vec![0.0; n1],
            row_h: vec![0.0; n1],
            profile,
            grid,
            params,
            mode,
            opts,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn profile(&self) -> &ShockProfile {
        &self.profile
    }

    pub fn params(&self) -> &ShiftParams {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn options(&self) -> &StepperOptions {
        &self.opts
    }

    /// The step the next [`Stepper::advance`] call would take from `state`:
    /// the fixed override if one is set (rejected when it exceeds the
    /// stability bound), otherwise the bound itself.
    pub fn planned_dt(&self, state: &SimState) -> Result<f64, DynError> {
        self.pick_dt(state)
    }

    /// Replaces the fixed-step override; `None` returns to the adaptive
    /// stability-bound step. Used by the harness to land exactly on a horizon.
    pub fn set_dt_override(&mut self, dt: Option<f64>) {
        self.opts.dt_override = dt;
    }

    /// The well-balancing residual row (zeros when balancing is disabled).
    pub fn rho_row(&self) -> &[f64] {
        &self.rho_row
    }

    /// The tabulated profile sampled on the grid's x₁ nodes.
    pub fn u_tab_row(&self) -> &[f64] {
        &self.u_tab_row
    }

    /// The steady front as a full grid field.
    pub fn u_tab_field(&self) -> ScalarField {
        let nt = self.grid.n_transverse();
        let mut vals = vec![0.0; self.grid.n_nodes()];
        for (i1, &uv) in self.u_tab_row.iter().enumerate() {
            vals[i1 * nt..(i1 + 1) * nt].fill(uv);
        }
        ScalarField::from_values(&self.grid, vals).expect("profile values are finite")
    }

    /// Builds a cache-consistent initial state at `t = 0`.
    pub fn make_state(&mut self, u0: ScalarField, y0: ScalarField) -> Result<SimState, DynError> {
        if u0.grid() != &self.grid || y0.grid() != &self.grid {
            return Err(DynError::GridMismatch);
        }
        let mut state = SimState::from_fields(u0, y0, self.mode)?;
        let caches = self.refresh(&mut state, 0.0, false)?;
        state.h_m = caches.h_m;
        state.window_clipped = caches.clipped;
        state.g = caches.g;
        state.m = caches.m;
        state.s_max = caches.s_max;
        Ok(state)
    }

    /// One coupled Heun step. On success the state is advanced and all caches
    /// are current; on error the state is unchanged (except for having
    /// detected divergence mid-step).
    pub fn advance(&mut self, state: &mut SimState) -> Result<StepInfo, DynError> {
        let tabs = self.poly.take();
        let result = match &tabs {
            None => self.advance_impl(BurgersEval, state),
            Some(t) => self.advance_impl(t.eval(), state),
        };
        self.poly = tabs;
        result
    }

    fn pick_dt(&self, state: &SimState) -> Result<f64, DynError> {
        let dx = self.grid.dx1().min(self.grid.dx_perp());
        let limit = cfl_from(self.grid.dim(), dx, state.s_max, self.opts.cfl_safety);
        match self.opts.dt_override {
            Some(dt) if dt > limit * (1.0 + 1e-9) => {
                Err(DynError::Cfl { requested: dt, limit })
            }
            Some(dt) => Ok(dt),
            None => Ok(limit),
        }
    }

    fn advance_impl<F: FluxEval>(
        &mut self,
        fx: F,
        state: &mut SimState,
    ) -> Result<StepInfo, DynError> {
        let dt = self.pick_dt(state)?;
        let n = self.grid.n_nodes();
        let t0 = state.t;

        // Stage 1: right sides from the current caches.
        let fold1 = {
            let wrefs: Vec<&[f64]> =
                (0..self.grid.dim()).map(|d| state.w.component(d).values()).collect();
            let args = kernels::YArgs {
                y: state.y.values(),
                v: state.v.values(),
                w: &wrefs,
                psi_row: &self.psi_state,
                h_m: state.h_m,
                g: state.g,
            };
            Self::rhs_y_kernel(fx, self.mode, &self.grid, &args, &mut self.f1_y)
        };
        if fold1 <= FOLD_LIMIT {
            return Err(DynError::FoldOver { t: t0, min_fold: fold1 });
        }
        {
            let mut st = kernels::UStencil {
                n1: self.grid.n1(),
                n_perp: self.grid.n_perp(),
                dim: self.grid.dim(),
                dx1: self.grid.dx1(),
                dx_perp: self.grid.dx_perp(),
                ghost_left: self.profile.u_minus(),
                ghost_right: self.profile.u_plus(),
                rho: Some(&self.rho_row),
                face: &mut self.face,
                tface: &mut self.tface,
            };
            kernels::rhs_u(fx, &mut st, state.u.values(), &mut self.f1_u);
        }

        // Predictor fields.
        {
            let uv = state.u.values();
            let yv = state.y.values();
            for idx in 0..n {
                self.u_pred[idx] = uv[idx] + dt * self.f1_u[idx];
                self.y_pred[idx] = yv[idx] + dt * self.f1_y[idx];
            }
        }

        // Stage 2: refresh caches on the predictor at t + dt, then its right
        // sides.
        let pred = self.refresh_pred(fx, t0 + dt, state.m)?;
        let fold2 = {
            let wrefs: Vec<&[f64]> = self.w_pred.iter().map(|w| w.as_slice()).collect();
            let args = kernels::YArgs {
                y: &self.y_pred,
                v: &self.v_pred,
                w: &wrefs,
                psi_row: &self.psi_pred,
                h_m: pred.h_m,
                g: pred.g,
            };
            Self::rhs_y_kernel(fx, self.mode, &self.grid, &args, &mut self.f2_y)
        };
        if fold2 <= FOLD_LIMIT {
            return Err(DynError::FoldOver { t: t0 + dt, min_fold: fold2 });
        }
        {
            let mut st = kernels::UStencil {
                n1: self.grid.n1(),
                n_perp: self.grid.n_perp(),
                dim: self.grid.dim(),
                dx1: self.grid.dx1(),
                dx_perp: self.grid.dx_perp(),
                ghost_left: self.profile.u_minus(),
                ghost_right: self.profile.u_plus(),
                rho: Some(&self.rho_row),
                face: &mut self.face,
                tface: &mut self.tface,
            };
            kernels::rhs_u(fx, &mut st, &self.u_pred, &mut self.f2_u);
        }

        // Corrector: average the stage slopes in place.
        {
            let uv = state.u.values_mut();
            for idx in 0..n {
                uv[idx] += 0.5 * dt * (self.f1_u[idx] + self.f2_u[idx]);
            }
            let yv = state.y.values_mut();
            for idx in 0..n {
                yv[idx] += 0.5 * dt * (self.f1_y[idx] + self.f2_y[idx]);
            }
        }
        state.t = t0 + dt;

        // Post-step refresh readies the caches for the next stage 1.
        let caches = self.refresh(state, pred.m, true)?;
        state.h_m = caches.h_m;
        state.window_clipped = caches.clipped;
        state.g = caches.g;
        state.m = caches.m;
        state.s_max = caches.s_max;

        let bound = 100.0 * self.profile.u_minus().abs().max(self.profile.u_plus().abs()).max(1.0);
        if caches.sup_u > bound {
            return Err(DynError::Diverged { t: state.t });
        }
        Ok(StepInfo {
            t: state.t,
            dt,
            sup_u: caches.sup_u,
            sup_y: caches.sup_y,
            min_fold: fold1.min(fold2),
            m: caches.m,
            h_m: caches.h_m,
            g: caches.g,
        })
    }

    fn rhs_y_kernel<F: FluxEval>(
        fx: F,
        mode: Mode,
        grid: &Grid,
        args: &kernels::YArgs<'_>,
        out: &mut [f64],
    ) -> f64 {
        match mode {
            Mode::Special => kernels::rhs_y::<_, false>(
                fx,
                grid.n1(),
                grid.n_perp(),
                grid.dim(),
                grid.dx1(),
                grid.dx_perp(),
                args,
                out,
            ),
            _ => kernels::rhs_y::<_, true>(
                fx,
                grid.n1(),
                grid.n_perp(),
                grid.dim(),
                grid.dx1(),
                grid.dx_perp(),
                args,
                out,
            ),
        }
    }

    /// Fused refresh writing into the state's own caches (and `psi_state`).
    fn refresh(
        &mut self,
        state: &mut SimState,
        m_prev: f64,
        _post_step: bool,
    ) -> Result<ScalarCaches, DynError> {
        let tabs = self.poly.take();
        let result = (|| {
            let phi = effective_phi(self.mode, &self.params, state.t);
            let with_w = self.mode != Mode::Special && phi != 0.0;
            let mut wrefs: Vec<&mut [f64]> = Vec::with_capacity(self.grid.dim());
            for comp in state.w.components_mut() {
                wrefs.push(comp.values_mut());
            }
            let mut args = kernels::RefreshArgs {
                phi,
                u: state.u.values(),
                y: state.y.values(),
                v: state.v.values_mut(),
                w: &mut wrefs,
                row_y: &mut self.row_y,
                row_w1: &mut self.row_w1,
                row_h: &mut self.row_h,
            };
            let out = match &tabs {
                None => {
                    Self::refresh_kernel(BurgersEval, &self.profile, &self.grid, with_w, true, &mut args)
                }
                Some(t) => {
                    Self::refresh_kernel(t.eval(), &self.profile, &self.grid, with_w, true, &mut args)
                }
            };
            drop(args);
            drop(wrefs);
            if !out.poison.is_finite() {
                return Err(DynError::Diverged { t: state.t });
            }
            self.finish_refresh(state.t, state.m, m_prev, out, true)
        })();
        self.poly = tabs;
        result
    }

    /// Fused refresh on the predictor scratch fields.
    fn refresh_pred<F: FluxEval>(&mut self, fx: F, t: f64, m_prev: f64) -> Result<ScalarCaches, DynError> {
        let phi = effective_phi(self.mode, &self.params, t);
        let with_w = self.mode != Mode::Special && phi != 0.0;
        let mut wrefs: Vec<&mut [f64]> = Vec::with_capacity(self.w_pred.len());
        for comp in self.w_pred.iter_mut() {
            wrefs.push(comp.as_mut_slice());
        }
        let mut args = kernels::RefreshArgs {
            phi,
            u: &self.u_pred,
            y: &self.y_pred,
            v: &mut self.v_pred,
            w: &mut wrefs,
            row_y: &mut self.row_y,
            row_w1: &mut self.row_w1,
            row_h: &mut self.row_h,
        };
        // The predictor lives only inside this step: its wave speeds and sups
        // are never consumed, so the sweep skips those reductions.
        let out = Self::refresh_kernel(fx, &self.profile, &self.grid, with_w, false, &mut args);
        drop(args);
        drop(wrefs);
        if !out.poison.is_finite() {
            return Err(DynError::Diverged { t });
        }
        self.finish_refresh(t, m_prev, m_prev, out, false)
    }

    fn refresh_kernel<F: FluxEval>(
        fx: F,
        profile: &ShockProfile,
        grid: &Grid,
        with_w: bool,
        with_stats: bool,
        args: &mut kernels::RefreshArgs<'_, '_>,
    ) -> kernels::RefreshOut {
        let n1 = grid.n1();
        let nt = grid.n_transverse();
        let dim = grid.dim();
        let x_min = -grid.l();
        let dx1 = grid.dx1();
        match (with_w, with_stats) {
            (true, true) => {
                kernels::refresh::<F, true, true>(fx, profile, n1, nt, dim, x_min, dx1, args)
            }
            (true, false) => {
                kernels::refresh::<F, true, false>(fx, profile, n1, nt, dim, x_min, dx1, args)
            }
            (false, true) => {
                kernels::refresh::<F, false, true>(fx, profile, n1, nt, dim, x_min, dx1, args)
            }
            (false, false) => {
                kernels::refresh::<F, false, false>(fx, profile, n1, nt, dim, x_min, dx1, args)
            }
        }
    }

    /// Scalar part of a refresh: window average and slope integral at the
    /// incoming shift, then the shift fixed point and the matching cutoff row.
    fn finish_refresh(
        &mut self,
        _t: f64,
        m_for_windows: f64,
        m_warm: f64,
        out: kernels::RefreshOut,
        into_state: bool,
    ) -> Result<ScalarCaches, DynError> {
        let grid = &self.grid;
        let n1 = grid.n1();
        let nt = grid.n_transverse() as f64;
        let tcell = grid.transverse_cell();

        // Window average of w₁ over |x₁ + m| ≤ M + 1.
        let half = self.params.m_cutoff + 1.0;
        let mut density = std::mem::take(&mut self.row_w1);
        for v in density.iter_mut() {
            *v *= tcell;
        }
        let (integral, clipped) = clipped_linear_integral(
            -grid.l(),
            grid.dx1(),
            &density,
            -half - m_for_windows,
            half - m_for_windows,
        )?;
        self.row_w1 = density;
        let h_m = integral / (2.0 * half);

        // Slope-weighted mismatch integral.
        let mut g = 0.0;
        for i1 in 0..n1 {
            let du = self.profile.eval_profile_deriv(grid.x1(i1) + m_for_windows);
            if du == 0.0 {
                continue;
            }
            g += grid.x1_weight(i1) * du * self.row_h[i1] * tcell;
        }
        let _ = nt;

        // Shift fixed point, then the cutoff row the right sides will read.
        let m = update_m_rows(&self.profile, grid, &self.row_y, m_warm)?;
        let psi = if into_state { &mut self.psi_state } else { &mut self.psi_pred };
        psi_row_at(&self.params, grid, m, psi);

        Ok(ScalarCaches {
            h_m,
            clipped,
            g,
            m,
            s_max: out.s_max,
            sup_u: out.sup_u,
            sup_y: out.sup_y,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::Polynomial;
    use approx::assert_abs_diff_eq;

    fn burgers_profile() -> ShockProfile {
        crate::profile::solve_profile(&FluxField::burgers(2).unwrap(), 1.0, -1.0, 25.0, 0.005).unwrap()
    }

    fn small_grid() -> Grid {
        Grid::new(2, 20.0, 101, 16).unwrap()
    }

    fn steady_stepper(mode: Mode) -> (Stepper, SimState) {
        let profile = burgers_profile();
        let grid = small_grid();
        let mut stepper =
            Stepper::new(profile, grid.clone(), ShiftParams::default(), mode, StepperOptions::default())
                .unwrap();
        let u0 = stepper.u_tab_field();
        let y0 = ScalarField::zeros(&grid);
        let state = stepper.make_state(u0, y0).unwrap();
        (stepper, state)
    }

    #[test]
    fn cutoff_has_plateau_ramp_and_midpoint() {
        let p = ShiftParams::default();
        assert_eq!(p.psi_m(0.0), 1.0);
        assert_eq!(p.psi_m(10.0), 1.0);
        assert_eq!(p.psi_m(11.0), 0.0);
        assert_eq!(p.psi_m(-14.0), 0.0);
        assert_abs_diff_eq!(p.psi_m(10.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.psi_m(-10.5), 0.5, epsilon = 1e-15);
        // monotone on the ramp
        let mut prev = 1.0;
        for k in 0..=20 {
            let v = p.psi_m(10.0 + k as f64 / 20.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn ramp_opens_between_half_and_full_time() {
        let p = ShiftParams { ramp_time: 2.0, ..ShiftParams::default() };
        assert_eq!(p.phi_ramp(0.0), 0.0);
        assert_eq!(p.phi_ramp(1.0), 0.0);
        assert_eq!(p.phi_ramp(2.0), 1.0);
        assert_eq!(p.phi_ramp(5.0), 1.0);
        assert_abs_diff_eq!(p.phi_ramp(1.5), 0.5, epsilon = 1e-15);
        let ident = ShiftParams { phi_shape: PhiShape::Identity, ..ShiftParams::default() };
        assert_eq!(ident.phi_ramp(0.0), 1.0);
        assert_eq!(ident.phi_ramp(0.3), 1.0);
    }

    #[test]
    fn params_validation_rejects_bad_values() {
        let narrow = ShiftParams { m_cutoff: 4.0, ..ShiftParams::default() };
        assert!(matches!(narrow.validate(), Err(DynError::CutoffTooNarrow(_))));
        let bad_t = ShiftParams { ramp_time: 0.0, ..ShiftParams::default() };
        assert!(matches!(bad_t.validate(), Err(DynError::BadRampTime(_))));
        assert!(ShiftParams::default().validate().is_ok());
    }

    #[test]
    fn drift_vanishes_on_steady_data_and_before_ramp() {
        let (_, state) = steady_stepper(Mode::General);
        // u = V exactly, so the kernel gap vanishes.
        assert_eq!(state.w.component(0).sup_abs(), 0.0);
        assert_eq!(state.h_m, 0.0);
        assert_eq!(state.g, 0.0);

        // Before the ramp opens the drift is off even for perturbed data.
        let profile = burgers_profile();
        let grid = small_grid();
        let u = ScalarField::from_fn(&grid, |x1, _| {
            profile.eval_profile(x1) + 0.1 * (-x1 * x1).exp()
        });
        let mut state = SimState::from_fields(u, ScalarField::zeros(&grid), Mode::General).unwrap();
        state.v = compose_v(&profile, &state.y);
        let w = compute_w(&state, profile.flux(), &ShiftParams::default());
        assert_eq!(w.component(0).sup_abs(), 0.0);

        // After the ramp the first component is half the mismatch for the
        // quadratic flux.
        state.t = 5.0;
        let w = compute_w(&state, profile.flux(), &ShiftParams::default());
        let uv = state.u.values();
        let vv = state.v.values();
        let w1 = w.component(0).values();
        for idx in (0..uv.len()).step_by(37) {
            assert_abs_diff_eq!(w1[idx], 0.5 * (uv[idx] - vv[idx]), epsilon = 1e-14);
        }
        // Transverse kernel of a linear component vanishes.
        assert_eq!(w.component(1).sup_abs(), 0.0);
    }

    #[test]
    fn window_average_is_exact_on_constants_and_flags_clipping() {
        let (_, mut state) = steady_stepper(Mode::General);
        let k = 0.37;
        for v in state.w.components_mut()[0].values_mut().iter_mut() {
            *v = k;
        }
        let params = ShiftParams::default();
        let (h, clipped) = compute_h_m(&state, &params).unwrap();
        assert!(!clipped);
        assert_abs_diff_eq!(h, k, epsilon = 1e-14);

        // Shifted window [-26, -4] sticks out of [-20, 20]: clipped, and the
        // average only sees the covered fraction 16/22.
        state.m = 15.0;
        let (h, clipped) = compute_h_m(&state, &params).unwrap();
        assert!(clipped);
        assert_abs_diff_eq!(h, k * 16.0 / 22.0, epsilon = 1e-12);

        // Window entirely off the grid.
        state.m = 60.0;
        assert!(matches!(
            compute_h_m(&state, &params),
            Err(DynError::WindowOutsideGrid { .. })
        ));
    }

    #[test]
    fn slope_weighted_mismatch_matches_closed_form() {
        let profile = burgers_profile();
        let grid = Grid::new(2, 20.0, 401, 16).unwrap();
        // u − V = |U′(x₁)|  ⇒  g = ∫ |U′| U′ dx = −∫ U′² dx = −2/3.
        let u = ScalarField::from_fn(&grid, |x1, _| {
            profile.eval_profile(x1) + profile.eval_profile_deriv(x1).abs()
        });
        let mut state =
            SimState::from_fields(u, ScalarField::zeros(&grid), Mode::GeneralNoRamp).unwrap();
        state.v = compose_v(&profile, &state.y);
        let g = compute_g(&state, &profile);
        assert_abs_diff_eq!(g, -2.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn shift_fixed_point_reproduces_known_means() {
        let profile = burgers_profile();
        let grid = small_grid();
        // Y ≡ 0 → 0, Y ≡ k → k (in one iteration), transverse sine → 0.
        assert_eq!(update_m(&ScalarField::zeros(&grid), &profile, 0.0).unwrap(), 0.0);
        let konst = ScalarField::from_fn(&grid, |_, _| 0.2);
        assert_abs_diff_eq!(update_m(&konst, &profile, 0.0).unwrap(), 0.2, epsilon = 1e-15);
        let sine = ScalarField::from_fn(&grid, |_, xp| {
            0.1 * (2.0 * std::f64::consts::PI * xp[0]).sin()
        });
        assert!(update_m(&sine, &profile, 0.0).unwrap().abs() <= 1e-12);

        // A localized bump: the fixed point satisfies its own equation.
        let bump = ScalarField::from_fn(&grid, |x1, _| 0.3 * (-(x1 - 1.0) * (x1 - 1.0)).exp());
        let m = update_m(&bump, &profile, 0.0).unwrap();
        let (fm, _) = {
            let yv = bump.values();
            let g2 = bump.grid();
            let mut row = vec![0.0; g2.n1()];
            for i1 in 0..g2.n1() {
                row[i1] = yv[i1 * g2.n_transverse()..(i1 + 1) * g2.n_transverse()]
                    .iter()
                    .sum();
            }
            shift_map(&profile, g2, &row, m)
        };
        assert_abs_diff_eq!(fm, m, epsilon = 1e-11);
    }

    #[test]
    fn front_composition_matches_profile_translates() {
        let profile = burgers_profile();
        let grid = small_grid();
        let v0 = compose_v(&profile, &ScalarField::zeros(&grid));
        for i1 in [0, 17, 50, 100] {
            let x1 = grid.x1(i1);
            assert_eq!(v0.values()[i1 * grid.n_transverse()], profile.eval_profile(x1));
        }
        let shifted = compose_v(&profile, &ScalarField::from_fn(&grid, |_, _| 0.7));
        for i1 in [3, 42, 77] {
            let x1 = grid.x1(i1);
            assert_abs_diff_eq!(
                shifted.values()[i1 * grid.n_transverse()],
                profile.eval_profile(x1 + 0.7),
                epsilon = 1e-15
            );
        }
        for &v in shifted.values() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn stability_bound_matches_heat_formula() {
        // A ≡ 0 on a grid with dx₁ = dx_perp = 0.1 in two dimensions:
        // dt = 0.4 · 0.1² / 4 = 1e−3.
        let zero = Polynomial::new(vec![0.0]);
        let flux = FluxField::custom(zero.clone(), vec![zero]).unwrap();
        let grid = Grid::new(2, 2.0, 41, 10).unwrap();
        assert_abs_diff_eq!(grid.dx1(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(grid.dx_perp(), 0.1, epsilon = 1e-15);
        let state = SimState::from_fields(
            ScalarField::zeros(&grid),
            ScalarField::zeros(&grid),
            Mode::Special,
        )
        .unwrap();
        assert_abs_diff_eq!(cfl_dt(&state, &flux), 1e-3, epsilon = 1e-18);

        // With waves the advective bound can take over: s_max = 2 on dx = 0.1
        // gives 0.4·min(0.0025, 0.05) — still diffusive; on a coarse-in-x₁
        // grid the formula uses the smaller spacing.
        let (_, state) = steady_stepper(Mode::General);
        let flux = FluxField::burgers(2).unwrap();
        let s = wave_speed_bound(&state, &flux);
        let dx = state.u.grid().dx1().min(state.u.grid().dx_perp());
        let expect = CFL_SAFETY * (dx * dx / 4.0).min(dx / s);
        assert_abs_diff_eq!(cfl_dt(&state, &flux), expect, epsilon = 1e-18);
    }

    #[test]
    fn conservation_step_keeps_constants_without_balancing() {
        let zero = Polynomial::new(vec![0.0]);
        let heat = FluxField::custom(zero.clone(), vec![zero]).unwrap();
        let grid = Grid::new(2, 4.0, 33, 16).unwrap();
        let c = 0.3;
        let u = ScalarField::from_fn(&grid, |_, _| c);
        let state =
            SimState::from_fields(u, ScalarField::zeros(&grid), Mode::Special).unwrap();
        let dt = cfl_dt(&state, &heat);
        let next = step_u(&state, &heat, (c, c), None, dt).unwrap();
        for &v in next.values() {
            assert_eq!(v, c);
        }
        // Same for a genuinely nonlinear flux: constants are equilibria of
        // the unforced update when the ghosts agree.
        let flux = FluxField::burgers(2).unwrap();
        let state2 = SimState::from_fields(
            ScalarField::from_fn(&grid, |_, _| c),
            ScalarField::zeros(&grid),
            Mode::Special,
        )
        .unwrap();
        let next2 = step_u(&state2, &flux, (c, c), None, 1e-4).unwrap();
        for &v in next2.values() {
            assert_eq!(v, c);
        }
    }

    #[test]
    fn balanced_step_preserves_profile_bitwise() {
        let (mut stepper, mut state) = steady_stepper(Mode::General);
        let reference = state.u.values().to_vec();
        for _ in 0..100 {
            stepper.advance(&mut state).unwrap();
        }
        let mut max_du = 0.0f64;
        let mut max_y = 0.0f64;
        for (a, b) in state.u.values().iter().zip(&reference) {
            max_du = max_du.max((a - b).abs());
        }
        for &y in state.y.values() {
            max_y = max_y.max(y.abs());
        }
        assert_eq!(max_du, 0.0, "profile drifted by {max_du:e}");
        assert_eq!(max_y, 0.0, "shift picked up {max_y:e}");
        assert_eq!(state.m, 0.0);
    }

    #[test]
    fn heat_mode_decays_transverse_waves_at_the_right_rate() {
        let zero = Polynomial::new(vec![0.0]);
        let heat = FluxField::custom(zero.clone(), vec![zero]).unwrap();
        let grid = Grid::new(2, 2.0, 41, 32).unwrap();
        let u0 = ScalarField::from_fn(&grid, |_, xp| {
            (2.0 * std::f64::consts::PI * xp[0]).sin()
        });
        let mut state =
            SimState::from_fields(u0, ScalarField::zeros(&grid), Mode::Special).unwrap();
        let dt = cfl_dt(&state, &heat);
        let t_end = 0.01;
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            state.u = step_u(&state, &heat, (0.0, 0.0), None, dt).unwrap();
        }
        let t = steps as f64 * dt;
        // Probe the center row, far from the Dirichlet ends.
        let mid = grid.n1() / 2;
        let row = &state.u.values()[mid * grid.n_perp()..(mid + 1) * grid.n_perp()];
        let amp = row.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let expected = (-4.0 * std::f64::consts::PI * std::f64::consts::PI * t).exp();
        assert_abs_diff_eq!(amp, expected, epsilon = 5e-3);
    }

    #[test]
    fn shift_step_is_exact_on_constants_and_stays_zero_on_steady_data() {
        // Special mode: a constant shift is a fixed point of the step.
        let profile = burgers_profile();
        let grid = small_grid();
        let k = 0.25;
        let y0 = ScalarField::from_fn(&grid, |_, _| k);
        let u0 = compose_v(&profile, &y0);
        let mut state = SimState::from_fields(u0, y0, Mode::Special).unwrap();
        refresh_caches(&mut state, &profile, &ShiftParams::default()).unwrap();
        assert_abs_diff_eq!(state.m, k, epsilon = 1e-14);
        let (y1, m1) = step_y(&state, &profile, &ShiftParams::default(), 1e-4).unwrap();
        for &v in y1.values() {
            assert_eq!(v, k);
        }
        assert_abs_diff_eq!(m1, k, epsilon = 1e-14);

        // General mode on steady data: every source vanishes identically.
        let (_, steady) = steady_stepper(Mode::GeneralNoRamp);
        let (y1, m1) = step_y(&steady, &burgers_profile(), &ShiftParams::default(), 1e-4).unwrap();
        assert_eq!(y1.sup_abs(), 0.0);
        assert_eq!(m1, 0.0);
    }

    #[test]
    fn special_mode_shift_sup_is_monotone() {
        let profile = burgers_profile();
        let grid = Grid::new(2, 20.0, 101, 32).unwrap();
        let y0 = ScalarField::from_fn(&grid, |_, xp| {
            0.05 * (2.0 * std::f64::consts::PI * xp[0]).sin()
        });
        let u0 = compose_v(&profile, &y0);
        let mut stepper = Stepper::new(
            profile,
            grid,
            ShiftParams::default(),
            Mode::Special,
            StepperOptions::default(),
        )
        .unwrap();
        let mut state = stepper.make_state(u0, y0).unwrap();
        let mut prev_sup = state.y.sup_abs();
        for _ in 0..50 {
            let info = stepper.advance(&mut state).unwrap();
            assert!(
                info.sup_y <= prev_sup + 1e-10,
                "sup|Y| rose from {prev_sup:.3e} to {:.3e}",
                info.sup_y
            );
            prev_sup = info.sup_y;
        }
        // Diffusion must actually shrink the transverse wave.
        assert!(prev_sup < 0.05 * 0.9);
    }

    #[test]
    fn special_mode_front_tracks_conserved_field() {
        let profile = burgers_profile();
        let grid = Grid::new(2, 20.0, 201, 16).unwrap();
        let y0 = ScalarField::from_fn(&grid, |_, xp| {
            0.05 * (2.0 * std::f64::consts::PI * xp[0]).sin()
        });
        let u0 = compose_v(&profile, &y0);
        let mut stepper = Stepper::new(
            profile,
            grid,
            ShiftParams::default(),
            Mode::Special,
            StepperOptions::default(),
        )
        .unwrap();
        let mut state = stepper.make_state(u0, y0).unwrap();
        for _ in 0..200 {
            stepper.advance(&mut state).unwrap();
        }
        let mut gap = 0.0f64;
        for (a, b) in state.u.values().iter().zip(state.v.values()) {
            gap = gap.max((a - b).abs());
        }
        assert!(gap < 5e-3, "representation gap {gap:.3e}");
    }

    #[test]
    fn shift_rate_matches_difference_quotients() {
        let profile = burgers_profile();
        let grid = Grid::new(2, 20.0, 201, 32).unwrap();
        // A shift with streamwise structure and a nonzero transverse mean so
        // m(t) actually moves (purely transverse data makes the slope-weighted
        // right side cancel by parity).
        let y0 = ScalarField::from_fn(&grid, |x1, xp| {
            0.05 * (-(x1 * x1) / 8.0).exp()
                * (0.5 + 0.4 * (2.0 * std::f64::consts::PI * xp[0]).sin())
        });
        let u0 = compose_v(&profile, &y0);
        let params = ShiftParams::default();
        let mut stepper = Stepper::new(
            profile.clone(),
            grid,
            params,
            Mode::Special,
            StepperOptions::default(),
        )
        .unwrap();
        let mut state = stepper.make_state(u0, y0).unwrap();
        let mut ms = Vec::new();
        let mut rate_mid = 0.0;
        let mut dt_used = 0.0;
        for k in 0..21 {
            if k == 10 {
                rate_mid = m_ode_rhs(&state, &profile, &params).unwrap();
            }
            let info = stepper.advance(&mut state).unwrap();
            dt_used = info.dt;
            ms.push(info.m);
        }
        // Centered difference across the midpoint step pair.
        let fd = (ms[10] - ms[8]) / (2.0 * dt_used);
        assert!(rate_mid.abs() > 1e-6, "rate should be nontrivial, got {rate_mid:.3e}");
        assert_abs_diff_eq!(fd, rate_mid, epsilon = 1e-5);
    }

    #[test]
    fn stationary_state_has_zero_shift_rate() {
        let (_, state) = steady_stepper(Mode::General);
        let profile = burgers_profile();
        let rate = m_ode_rhs(&state, &profile, &ShiftParams::default()).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn fold_over_is_detected() {
        let profile = burgers_profile();
        let grid = small_grid();
        // 1 + ∂₁Y = 0.05 everywhere: beyond the guard.
        let y0 = ScalarField::from_fn(&grid, |x1, _| -0.95 * x1);
        let u0 = compose_v(&profile, &y0);
        let mut stepper = Stepper::new(
            profile,
            grid,
            ShiftParams::default(),
            Mode::Special,
            StepperOptions::default(),
        )
        .unwrap();
        let mut state = stepper.make_state(u0, y0).unwrap();
        match stepper.advance(&mut state) {
            Err(DynError::FoldOver { min_fold, .. }) => {
                assert!(min_fold < FOLD_LIMIT + 0.01);
            }
            other => panic!("expected fold-over, got {other:?}"),
        }
    }

    #[test]
    fn oversized_fixed_step_is_rejected() {
        let (stepper, state) = steady_stepper(Mode::General);
        let profile = burgers_profile();
        let grid = stepper.grid().clone();
        let mut bad = Stepper::new(
            profile,
            grid,
            ShiftParams::default(),
            Mode::General,
            StepperOptions { dt_override: Some(1.0), ..StepperOptions::default() },
        )
        .unwrap();
        let mut state = state;
        match bad.advance(&mut state) {
            Err(DynError::Cfl { requested, limit }) => {
                assert_eq!(requested, 1.0);
                assert!(limit < 1.0);
            }
            other => panic!("expected a step-size rejection, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_abort_the_run() {
        let (mut stepper, mut state) = steady_stepper(Mode::General);
        state.u.values_mut()[5] = f64::NAN;
        match stepper.advance(&mut state) {
            Err(DynError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fused_refresh_agrees_with_the_pure_operations() {
        let profile = burgers_profile();
        let grid = Grid::new(2, 20.0, 101, 16).unwrap();
        let u0 = ScalarField::from_fn(&grid, |x1, _| {
            profile.eval_profile(x1) + 0.01 * (-(x1 - 6.0) * (x1 - 6.0)).exp()
        });
        let y0 = ScalarField::from_fn(&grid, |x1, xp| {
            0.02 * (-(x1 * x1) / 8.0).exp() * (2.0 * std::f64::consts::PI * xp[0]).cos()
        });
        let params = ShiftParams::default();
        let mut stepper = Stepper::new(
            profile.clone(),
            grid,
            params,
            Mode::GeneralNoRamp,
            StepperOptions::default(),
        )
        .unwrap();
        let fused = stepper.make_state(u0.clone(), y0.clone()).unwrap();

        let mut pure = SimState::from_fields(u0, y0, Mode::GeneralNoRamp).unwrap();
        refresh_caches(&mut pure, &profile, &params).unwrap();

        assert_abs_diff_eq!(fused.h_m, pure.h_m, epsilon = 1e-14);
        assert_abs_diff_eq!(fused.g, pure.g, epsilon = 1e-14);
        assert_abs_diff_eq!(fused.m, pure.m, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.s_max, pure.s_max, epsilon = 1e-14);
        let wa = fused.w.component(0).values();
        let wb = pure.w.component(0).values();
        for idx in (0..wa.len()).step_by(53) {
            assert_abs_diff_eq!(wa[idx], wb[idx], epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_runs_are_bitwise_deterministic() {
        let run = || {
            let profile = burgers_profile();
            let grid = Grid::new(2, 20.0, 65, 16).unwrap();
            let u0 = ScalarField::from_fn(&grid, |x1, _| {
                profile.eval_profile(x1) + 0.01 * (-(x1 - 3.0) * (x1 - 3.0)).exp()
            });
            let y0 = ScalarField::zeros(&grid);
            let mut stepper = Stepper::new(
                profile,
                grid,
                ShiftParams::default(),
                Mode::GeneralNoRamp,
                StepperOptions::default(),
            )
            .unwrap();
            let mut state = stepper.make_state(u0, y0).unwrap();
            for _ in 0..25 {
                stepper.advance(&mut state).unwrap();
            }
            (state.u.values().to_vec(), state.y.values().to_vec(), state.m)
        };
        let (u1, y1, m1) = run();
        let (u2, y2, m2) = run();
        assert_eq!(u1, u2);
        assert_eq!(y1, y2);
        assert_eq!(m1.to_bits(), m2.to_bits());
    }

    #[test]
    fn balancing_row_shrinks_under_refinement() {
        let profile = burgers_profile();
        let coarse = Grid::new(2, 20.0, 101, 8).unwrap();
        let fine = Grid::new(2, 20.0, 401, 8).unwrap();
        let sup = |row: &[f64]| row.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let rc = sup(&well_balancing_row(&profile, &coarse));
        let rf = sup(&well_balancing_row(&profile, &fine));
        assert!(rc < 0.2, "coarse residual {rc}");
        assert!(rf < rc, "residual should shrink: {rf} vs {rc}");
    }

    #[test]
    fn state_construction_rejects_mismatched_grids() {
        let profile = burgers_profile();
        let grid = small_grid();
        let other = Grid::new(2, 20.0, 65, 16).unwrap();
        let mut stepper = Stepper::new(
            profile,
            grid,
            ShiftParams::default(),
            Mode::General,
            StepperOptions::default(),
        )
        .unwrap();
        let u0 = ScalarField::zeros(&other);
        let y0 = ScalarField::zeros(&other);
        assert!(matches!(stepper.make_state(u0, y0), Err(DynError::GridMismatch)));
    }
}

#[cfg(test)]
mod bench_probe {
    use super::*;
    use crate::flux::FluxField;
    use crate::grid::{Grid, ScalarField};
    use std::time::Instant;

    #[test]
    #[ignore]
    fn probe_kernel_costs() {
        let profile = crate::profile::solve_profile(
            &FluxField::burgers(2).unwrap(), 1.0, -1.0, 25.0, 0.005).unwrap();
        let grid = Grid::new(2, 20.0, 401, 64).unwrap();
        let n = grid.n_nodes();
        let u0 = ScalarField::from_fn(&grid, |x1, _| {
            profile.eval_profile(x1) + 0.01 * (-((x1 - 6.0) * (x1 - 6.0)) / 2.0).exp()
        });
        let y0 = ScalarField::from_fn(&grid, |x1, xp| {
            0.01 * (-(x1 * x1) / 8.0).exp() * (2.0 * std::f64::consts::PI * xp[0]).sin()
        });
        let mut stepper = Stepper::new(
            profile.clone(), grid.clone(), ShiftParams::default(), Mode::General,
            StepperOptions::default()).unwrap();
        let mut state = stepper.make_state(u0, y0).unwrap();
        for _ in 0..5 { stepper.advance(&mut state).unwrap(); }

        let reps = 2000;

        // rhs_u
        let mut out = vec![0.0; n];
        let mut face = vec![0.0; grid.n_transverse()];
        let mut tface = vec![0.0; grid.n_transverse()];
        let rho = well_balancing_row(&profile, &grid);
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut st = kernels::UStencil {
                n1: grid.n1(), n_perp: grid.n_perp(), dim: grid.dim(),
                dx1: grid.dx1(), dx_perp: grid.dx_perp(),
                ghost_left: profile.u_minus(), ghost_right: profile.u_plus(),
                rho: Some(&rho), face: &mut face, tface: &mut tface,
            };
            kernels::rhs_u(BurgersEval, &mut st, state.u.values(), &mut out);
        }
        let el_u = t0.elapsed().as_secs_f64();

        // rhs_y
        let wrefs: Vec<&[f64]> = (0..grid.dim()).map(|d| state.w.component(d).values()).collect();
        let mut psi = vec![0.0; grid.n1()];
        psi_row_at(&ShiftParams::default(), &grid, state.m, &mut psi);
        let args = kernels::YArgs {
            y: state.y.values(), v: state.v.values(), w: &wrefs,
            psi_row: &psi, h_m: state.h_m, g: state.g,
        };
        let t0 = Instant::now();
        for _ in 0..reps {
            kernels::rhs_y::<_, true>(BurgersEval, grid.n1(), grid.n_perp(), grid.dim(),
                grid.dx1(), grid.dx_perp(), &args, &mut out);
        }
        let el_y = t0.elapsed().as_secs_f64();
        drop(args);
        drop(wrefs);

        // refresh
        let mut v = vec![0.0; n];
        let mut w0 = vec![0.0; n];
        let mut w1 = vec![0.0; n];
        let mut row_y = vec![0.0; grid.n1()];
        let mut row_w1 = vec![0.0; grid.n1()];
        let mut row_h = vec![0.0; grid.n1()];
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut wr: Vec<&mut [f64]> = vec![&mut w0, &mut w1];
            let mut args = kernels::RefreshArgs {
                phi: 1.0, u: state.u.values(), y: state.y.values(), v: &mut v,
                w: &mut wr, row_y: &mut row_y, row_w1: &mut row_w1, row_h: &mut row_h,
            };
            kernels::refresh::<_, true, true>(BurgersEval, &profile, grid.n1(),
                grid.n_transverse(), grid.dim(), -grid.l(), grid.dx1(), &mut args);
        }
        let el_r = t0.elapsed().as_secs_f64();

        // full advance for reference
        let t0 = Instant::now();
        for _ in 0..200 { stepper.advance(&mut state).unwrap(); }
        let el_a = t0.elapsed().as_secs_f64();

        println!("rhs_u    {:8.1} us/sweep", 1e6 * el_u / reps as f64);
        println!("rhs_y    {:8.1} us/sweep", 1e6 * el_y / reps as f64);
        println!("refresh  {:8.1} us/sweep", 1e6 * el_r / reps as f64);
        println!("advance  {:8.1} us/step", 1e6 * el_a / 200.0);
    }
}
