//! Scalar diagnostics of a run: the contraction energy and its dissipation
//! pair, weighted norms of the shift field, large-time gap functionals, and
//! discrete residuals of the energy identity and of the composed-front
//! equation.
//!
//! Everything here is a pure read-only function of one state (or of two
//! consecutive states one step apart, for the time-derivative residuals);
//! the harness samples them every `diag_stride` steps and appends one CSV row
//! per sample.

use crate::dynamics::{eval_rhs_u, Mode, ShiftParams, SimState};
use crate::flux::FluxField;
use crate::grid::{ScalarField, X1Boundary};
use crate::profile::ShockProfile;

/// One diagnostic sample. Squared-integral quantities are stored unhalved
/// (`energy = ∫|u−V|²`, not its half), and the two weighted shift norms use
/// the mode's natural weight and center: `|U′(x₁+m)|`, center `m`, in the
/// driven modes; fixed weight `|U′(x₁)|`, center `c`, in the source-free
/// mode (those are the quantities whose decay the respective theory tracks).
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsRecord {
    /// Sample time.
    pub t: f64,
    /// Contraction energy `∫|u−V|²`.
    pub energy: f64,
    /// Gradient dissipation `∫|∇(u−V)|²`.
    pub d_grad: f64,
    /// Squared slope projection `(∫(u−V)·U′(x₁+m))²`.
    pub d_proj: f64,
    /// Slope-weighted integral `g` of `u−V` (a shift-equation source).
    pub g: f64,
    /// Windowed average `h_M` of the first drift component.
    pub h_m: f64,
    /// Homogeneous shift (slope-weighted mean of `Y`).
    pub m: f64,
    /// Weighted squared deviation of `Y` from its center (see above).
    pub w_y: f64,
    /// Weighted squared gradient `∫ weight·|∇Y|²`.
    pub w_grad_y: f64,
    /// Plain `∫|∇Y|²`.
    pub grad_y_l2: f64,
    /// Plain `∫|Δ_h Y|²` (mirror ghosts at the x₁ ends, as in the stepper).
    pub lap_y_l2: f64,
    /// Squared front gap `∫|U(x₁+Y) − U(x₁+m)|²`.
    pub f_gap: f64,
    /// Fixed-weight mean `∫|U′(x₁)|Y / ∫|U′(x₁)|`.
    pub c: f64,
    /// Energy-identity residual between this sample's step and the next
    /// (`0` when no successor state was available).
    pub entropy_residual: f64,
}

impl DiagnosticsRecord {
    /// Fixed CSV column order; [`Self::csv_row`] emits values in this order.
    pub const CSV_HEADER: &'static str =
        "t,E,D_grad,D_proj,g,hM,m,W_Y,W_gradY,gradY_L2,lapY_L2,f_gap,c,entropy_residual";

    /// One CSV row; floats are printed with Rust's shortest round-trip
    /// formatting, so identical samples give identical bytes.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.energy,
            self.d_grad,
            self.d_proj,
            self.g,
            self.h_m,
            self.m,
            self.w_y,
            self.w_grad_y,
            self.grad_y_l2,
            self.lap_y_l2,
            self.f_gap,
            self.c,
            self.entropy_residual,
        )
    }
}

/// `∫ (u − v)² dx`.
pub fn contraction_energy(u: &ScalarField, v: &ScalarField) -> f64 {
    assert_eq!(u.grid(), v.grid(), "fields must share a grid");
    let grid = u.grid();
    let nt = grid.n_transverse();
    let cell = grid.transverse_cell();
    let uv = u.values();
    let vv = v.values();
    let mut total = 0.0;
    for i1 in 0..grid.n1() {
        let mut s = 0.0;
        for k in 0..nt {
            let idx = i1 * nt + k;
            let d = uv[idx] - vv[idx];
            s += d * d;
        }
        total += grid.x1_weight(i1) * s;
    }
    total * cell
}

/// The two dissipation terms of the contraction budget:
/// `(∫|∇(u−v)|², (∫(u−v)·U′(x₁+m))²)`.
pub fn dissipation_terms(
    u: &ScalarField,
    v: &ScalarField,
    profile: &ShockProfile,
    m: f64,
) -> (f64, f64) {
    assert_eq!(u.grid(), v.grid(), "fields must share a grid");
    let grid = u.grid();
    let diff = ScalarField::from_fn(grid, |_, _| 0.0);
    let mut diff = diff;
    {
        let dv = diff.values_mut();
        let uv = u.values();
        let vv = v.values();
        for idx in 0..uv.len() {
            dv[idx] = uv[idx] - vv[idx];
        }
    }
    let grad = diff.gradient();
    let mut d_grad = 0.0;
    for comp in grad.components() {
        let mut sq = comp.clone();
        let vals = sq.values_mut();
        for x in vals.iter_mut() {
            *x *= *x;
        }
        d_grad += sq.integrate();
    }
    let proj = diff.weighted_integrate(|x1| profile.eval_profile_deriv(x1), m);
    (d_grad, proj * proj)
}

/// Weighted norms of the shift field:
/// `(∫ |U′(x₁+weight_shift)|·(Y−center)², ∫ |U′(x₁+weight_shift)|·|∇Y|²)`.
pub fn weighted_shift_norms(
    y: &ScalarField,
    profile: &ShockProfile,
    center: f64,
    weight_shift: f64,
) -> (f64, f64) {
    let grid = y.grid();
    let mut dev = y.clone();
    for x in dev.values_mut().iter_mut() {
        let d = *x - center;
        *x = d * d;
    }
    let w_y = dev.weighted_integrate(|x1| profile.eval_profile_deriv(x1).abs(), weight_shift);

    let grad = y.gradient();
    let mut gsq = ScalarField::zeros(grid);
    {
        let out = gsq.values_mut();
        for comp in grad.components() {
            let cv = comp.values();
            for idx in 0..cv.len() {
                out[idx] += cv[idx] * cv[idx];
            }
        }
    }
    let w_grad =
        gsq.weighted_integrate(|x1| profile.eval_profile_deriv(x1).abs(), weight_shift);
    (w_y, w_grad)
}

/// Squared front gap `∫ |v − U(x₁+m)|² dx` between the composed front and the
/// rigidly shifted profile.
pub fn front_gap(v: &ScalarField, profile: &ShockProfile, m: f64) -> f64 {
    let grid = v.grid();
    let nt = grid.n_transverse();
    let cell = grid.transverse_cell();
    let vv = v.values();
    let mut total = 0.0;
    for i1 in 0..grid.n1() {
        let shifted = profile.eval_profile(grid.x1(i1) + m);
        let mut s = 0.0;
        for k in 0..nt {
            let d = vv[i1 * nt + k] - shifted;
            s += d * d;
        }
        total += grid.x1_weight(i1) * s;
    }
    total * cell
}

/// Fixed-weight mean `∫|U′(x₁)| Y dx / ∫|U′(x₁)| dx` — the scalar the shift
/// field collapses to in the source-free mode.
pub fn fixed_weight_mean(y: &ScalarField, profile: &ShockProfile) -> f64 {
    let grid = y.grid();
    let num = y.weighted_integrate(|x1| profile.eval_profile_deriv(x1).abs(), 0.0);
    let nt = grid.n_transverse() as f64;
    let mut den = 0.0;
    for i1 in 0..grid.n1() {
        den += grid.x1_weight(i1) * profile.eval_profile_deriv(grid.x1(i1)).abs();
    }
    den *= nt * grid.transverse_cell();
    num / den
}

/// Pointwise average of two fields (the midpoint state of a step).
fn midpoint(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let mut out = a.clone();
    let ov = out.values_mut();
    let bv = b.values();
    for idx in 0..bv.len() {
        ov[idx] = 0.5 * (ov[idx] + bv[idx]);
    }
    out
}

/// The source row of the composed-front equation at one x₁ slice factor:
/// `(w₁ − h_M)·(1 − ψ_M(x₁+m)) + g`, to be multiplied by `U′(x₁+Y)` per node.
/// Returns `None` in the source-free mode (where the source vanishes).
fn front_source_factor(
    params: &ShiftParams,
    mode: Mode,
    x1: f64,
    m: f64,
    w1: f64,
    h_m: f64,
    g: f64,
) -> Option<f64> {
    match mode {
        Mode::Special => None,
        _ => Some((w1 - h_m) * (1.0 - params.psi_m(x1 + m)) + g),
    }
}

/// Discrete residual of the energy identity between two consecutive states
/// one `dt` apart:
///
/// `(1/2) d/dt ∫|u−V|² + ∫|∇(u−V)|²
///    = −∫ (A(u|V) − (u−V)·w) · ∇V + ∫ (u−V)·G − ∫ (u−V)·ϱ`,
///
/// where `A(u|V) = A(u) − A(V) − A′(V)(u−V)` is the relative flux,
/// `G = U′(x₁+Y)·[(w₁−h_M)(1−ψ_M(x₁+m)) + g]` is the front-equation source,
/// and `ϱ` is the optional well-balancing row of the conservation-law step.
/// The time derivative is the centered difference of the two energies; all
/// spatial terms are evaluated on the pointwise midpoint state.
#[allow(clippy::too_many_arguments)]
pub fn energy_identity_residual(
    prev: &SimState,
    next: &SimState,
    flux: &FluxField,
    profile: &ShockProfile,
    params: &ShiftParams,
    dt: f64,
    balancing: Option<&[f64]>,
) -> f64 {
    let grid = prev.u.grid();
    let nt = grid.n_transverse();
    let cell = grid.transverse_cell();
    let dim = grid.dim();

    let e_prev = contraction_energy(&prev.u, &prev.v);
    let e_next = contraction_energy(&next.u, &next.v);

    let um = midpoint(&prev.u, &next.u);
    let vm = midpoint(&prev.v, &next.v);
    let ym = midpoint(&prev.y, &next.y);
    let m_mid = 0.5 * (prev.m + next.m);
    let h_mid = 0.5 * (prev.h_m + next.h_m);
    let g_mid = 0.5 * (prev.g + next.g);

    let (d_grad_mid, _) = dissipation_terms(&um, &vm, profile, m_mid);
    let lhs = (e_next - e_prev) / (2.0 * dt) + d_grad_mid;

    let grad_v = vm.gradient();
    let umv = um.values();
    let vmv = vm.values();
    let ymv = ym.values();

    let mut rhs = 0.0;
    for i1 in 0..grid.n1() {
        let x1 = grid.x1(i1);
        let x1w = grid.x1_weight(i1);
        let mut s = 0.0;
        for k in 0..nt {
            let idx = i1 * nt + k;
            let z = umv[idx] - vmv[idx];
            // Relative-flux and drift transport term, dotted with ∇V.
            let mut transport = 0.0;
            for d in 0..dim {
                let a = &flux.components()[d];
                let ap_v = flux.component_derivs(d)[0].eval(vmv[idx]);
                let rel = a.eval(umv[idx]) - a.eval(vmv[idx]) - ap_v * z;
                let w_mid =
                    0.5 * (prev.w.component(d).values()[idx] + next.w.component(d).values()[idx]);
                transport += (rel - z * w_mid) * grad_v.component(d).values()[idx];
            }
            s -= transport;

            // Front-equation source term.
            let w1_mid =
                0.5 * (prev.w.component(0).values()[idx] + next.w.component(0).values()[idx]);
            if let Some(factor) =
                front_source_factor(params, prev.mode, x1, m_mid, w1_mid, h_mid, g_mid)
            {
                s += z * profile.eval_profile_deriv(x1 + ymv[idx]) * factor;
            }

            // Well-balancing forcing of the conservation-law step.
            if let Some(rho) = balancing {
                s -= z * rho[i1];
            }
        }
        rhs += x1w * s;
    }
    rhs *= cell;

    (lhs - rhs).abs()
}

/// Sup-norm of the discrete residual of the composed-front equation between
/// two consecutive states one `dt` apart:
///
/// `∂ₜV + div A(V) + w·∇V − ΔV = G`,
///
/// with the same conservative flux divergence, Laplacian, far-field ghosts,
/// and optional well-balancing row `ϱ` as the conservation-law step (so an
/// exactly steady front has residual exactly zero), the time derivative from
/// the state pair, and every other field at the pointwise midpoint.
pub fn front_equation_residual(
    prev: &SimState,
    next: &SimState,
    flux: &FluxField,
    profile: &ShockProfile,
    params: &ShiftParams,
    dt: f64,
    balancing: Option<&[f64]>,
) -> f64 {
    let grid = prev.u.grid();
    let nt = grid.n_transverse();
    let dim = grid.dim();

    let vm = midpoint(&prev.v, &next.v);
    let ym = midpoint(&prev.y, &next.y);
    let m_mid = 0.5 * (prev.m + next.m);
    let h_mid = 0.5 * (prev.h_m + next.h_m);
    let g_mid = 0.5 * (prev.g + next.g);

    // Δ_h V − div_h F_llf(V) − ϱ, exactly the conservation-law stencil.
    let space = eval_rhs_u(&vm, flux, (profile.u_minus(), profile.u_plus()), balancing);
    let grad_v = vm.gradient();

    let vp = prev.v.values();
    let vn = next.v.values();
    let ymv = ym.values();
    let space_v = space.values();

    let mut sup = 0.0f64;
    for i1 in 0..grid.n1() {
        let x1 = grid.x1(i1);
        for k in 0..nt {
            let idx = i1 * nt + k;
            let time = (vn[idx] - vp[idx]) / dt;
            let mut drift = 0.0;
            for d in 0..dim {
                let w_mid =
                    0.5 * (prev.w.component(d).values()[idx] + next.w.component(d).values()[idx]);
                drift += w_mid * grad_v.component(d).values()[idx];
            }
            let w1_mid =
                0.5 * (prev.w.component(0).values()[idx] + next.w.component(0).values()[idx]);
            let source = match front_source_factor(
                params, prev.mode, x1, m_mid, w1_mid, h_mid, g_mid,
            ) {
                Some(factor) => profile.eval_profile_deriv(x1 + ymv[idx]) * factor,
                None => 0.0,
            };
            sup = sup.max((time - space_v[idx] + drift - source).abs());
        }
    }
    sup
}

/// Inputs for assembling one diagnostic row from a state.
pub struct RecordInputs<'a> {
    pub state: &'a SimState,
    pub profile: &'a ShockProfile,
    /// Energy-identity residual for the step beginning at this sample
    /// (compute via [`energy_identity_residual`]; pass `0.0` if unavailable).
    pub entropy_residual: f64,
}

/// Assembles one diagnostic row from a cache-consistent state.
pub fn assemble_record(inp: &RecordInputs<'_>) -> DiagnosticsRecord {
    let st = inp.state;
    let profile = inp.profile;
    let energy = contraction_energy(&st.u, &st.v);
    let (d_grad, d_proj) = dissipation_terms(&st.u, &st.v, profile, st.m);
    let c = fixed_weight_mean(&st.y, profile);
    let (w_y, w_grad_y) = match st.mode {
        // Source-free mode: fixed weight |U′(x₁)|, centered at the
        // fixed-weight mean — the energy that mode's maximum principle and
        // collapse statement control.
        Mode::Special => weighted_shift_norms(&st.y, profile, c, 0.0),
        _ => weighted_shift_norms(&st.y, profile, st.m, st.m),
    };

    let grad = st.y.gradient();
    let mut grad_y_l2 = 0.0;
    for comp in grad.components() {
        let mut sq = comp.clone();
        for x in sq.values_mut().iter_mut() {
            *x *= *x;
        }
        grad_y_l2 += sq.integrate();
    }
    let mut lap = st.y.laplacian(X1Boundary::NeumannMirror);
    for x in lap.values_mut().iter_mut() {
        *x *= *x;
    }
    let lap_y_l2 = lap.integrate();

    DiagnosticsRecord {
        t: st.t,
        energy,
        d_grad,
        d_proj,
        g: st.g,
        h_m: st.h_m,
        m: st.m,
        w_y,
        w_grad_y,
        grad_y_l2,
        lap_y_l2,
        f_gap: front_gap(&st.v, profile, st.m),
        c,
        entropy_residual: inp.entropy_residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        refresh_caches, well_balancing_row, Mode, ShiftParams, SimState, Stepper, StepperOptions,
    };
    use crate::flux::FluxField;
    use crate::grid::Grid;
    use crate::profile::solve_profile;
    use std::f64::consts::PI;

    fn burgers_profile() -> ShockProfile {
        solve_profile(&FluxField::burgers(2).unwrap(), 1.0, -1.0, 25.0, 0.01).unwrap()
    }

    fn grid_2d(n1: usize, np: usize) -> Grid {
        Grid::new(2, 20.0, n1, np).unwrap()
    }

    #[test]
    fn energy_of_matched_fields_is_zero() {
        let grid = grid_2d(41, 8);
        let u = ScalarField::from_fn(&grid, |x1, xp| (x1 * 0.1).sin() + xp[0]);
        assert_eq!(contraction_energy(&u, &u), 0.0);
    }

    #[test]
    fn energy_of_constant_gap_is_domain_measure() {
        let grid = grid_2d(41, 8);
        let u = ScalarField::from_fn(&grid, |_, _| 1.0);
        let v = ScalarField::zeros(&grid);
        // Slab measure 2L × torus measure 1 = 40.
        assert!((contraction_energy(&u, &v) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn energy_of_transverse_sine_gap_matches_exact_quadrature() {
        // Equispaced quadrature integrates sin² exactly (mean 1/2), so the
        // energy is L = 20 to roundoff.
        let grid = grid_2d(41, 16);
        let u = ScalarField::from_fn(&grid, |_, xp| (2.0 * PI * xp[0]).sin());
        let v = ScalarField::zeros(&grid);
        assert!((contraction_energy(&u, &v) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn dissipation_terms_vanish_for_matched_and_constant_gaps() {
        let profile = burgers_profile();
        let grid = grid_2d(41, 8);
        let u = ScalarField::from_fn(&grid, |x1, _| x1.cos());
        let (dg, dp) = dissipation_terms(&u, &u, &profile, 0.0);
        assert_eq!(dg, 0.0);
        assert_eq!(dp, 0.0);

        // Constant gap: gradient dissipation is exactly zero; the projection
        // is the constant times ∫U′ = u₊ − u₋ = −2, squared → 4 (minus
        // exponentially small tails).
        let v = ScalarField::zeros(&grid);
        let c = ScalarField::from_fn(&grid, |_, _| 1.0);
        let (dg, dp) = dissipation_terms(&c, &v, &profile, 0.0);
        assert_eq!(dg, 0.0);
        assert!((dp - 4.0).abs() < 2e-2, "dp = {dp}");
    }

    #[test]
    fn slope_aligned_gap_projects_to_known_square() {
        // Gap = |U′(x₁)|: the projection is ∫|U′|·U′ = −∫U′² = −2/3 for the
        // tanh profile (∫ sech⁴(x/2)/4 dx = 2/3), so its square is 4/9.
        let profile = burgers_profile();
        let grid = grid_2d(401, 8);
        let v = ScalarField::zeros(&grid);
        let gap =
            ScalarField::from_fn(&grid, |x1, _| profile.eval_profile_deriv(x1).abs());
        let (_, dp) = dissipation_terms(&gap, &v, &profile, 0.0);
        assert!((dp - 4.0 / 9.0).abs() < 1e-3, "dp = {dp}");
    }

    #[test]
    fn weighted_norms_of_constant_offset() {
        // Y = m + 1: the deviation norm telescopes to ∫|U′| = u₋ − u₊ = 2
        // (up to quadrature error and exponentially small tails), and the
        // gradient norm is exactly zero.
        let profile = burgers_profile();
        let grid = grid_2d(401, 8);
        let m = 0.3;
        let y = ScalarField::from_fn(&grid, |_, _| m + 1.0);
        let (w_y, w_g) = weighted_shift_norms(&y, &profile, m, m);
        assert!((w_y - 2.0).abs() < 2e-3, "w_y = {w_y}");
        // The one-sided end stencils leave ~1e-16 roundoff on a constant
        // field, squared and damped by the exponentially small end weight.
        assert!(w_g < 1e-30, "w_g = {w_g}");
    }

    #[test]
    fn weighted_norms_of_transverse_sine() {
        // Y = m + sin(2πx₂): deviation norm = (weight mass 2)·(mean sin² =
        // 1/2) = 1; gradient norm = 2·(2π)²·(1/2) = (2π)² up to the central
        // difference factor (sin(2πh)/(2πh))² ≈ 0.9968 at h = 1/64.
        let profile = burgers_profile();
        let grid = grid_2d(401, 64);
        let y = ScalarField::from_fn(&grid, |_, xp| 0.25 + (2.0 * PI * xp[0]).sin());
        let (w_y, w_g) = weighted_shift_norms(&y, &profile, 0.25, 0.25);
        assert!((w_y - 1.0).abs() < 2e-3, "w_y = {w_y}");
        let two_pi_sq = (2.0 * PI) * (2.0 * PI);
        assert!((w_g - two_pi_sq).abs() < 0.01 * two_pi_sq, "w_g = {w_g}");
    }

    #[test]
    fn front_gap_of_rigid_match_is_zero_and_of_unit_shift_matches_quadrature() {
        let profile = burgers_profile();
        let grid = grid_2d(401, 8);
        let m = 0.15;
        let v = ScalarField::from_fn(&grid, |x1, _| profile.eval_profile(x1 + m));
        assert_eq!(front_gap(&v, &profile, m), 0.0);

        // Y = m + 1 rigidly: gap = ∫(U(x₁+m+1) − U(x₁+m))² dx. Independent
        // oracle: fine Simpson quadrature of the exact tanh form
        // ∫(tanh((x+1)/2) − tanh(x/2))² dx ≈ 0.65581365.
        let shifted = ScalarField::from_fn(&grid, |x1, _| profile.eval_profile(x1 + m + 1.0));
        let measured = front_gap(&shifted, &profile, m);

        let oracle = {
            let f = |x: f64| {
                let d = ((x + 1.0) / 2.0).tanh() - (x / 2.0).tanh();
                d * d
            };
            let (a, b, n) = (-40.0, 40.0, 80_000usize);
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        assert!((oracle - 0.655_813_654_9).abs() < 1e-8, "oracle = {oracle}");
        assert!((measured - oracle).abs() < 1e-3, "measured = {measured}");
    }

    #[test]
    fn fixed_weight_mean_normalizes_and_kills_odd_symmetry() {
        let profile = burgers_profile();
        let grid = grid_2d(101, 16);

        let constant = ScalarField::from_fn(&grid, |_, _| 0.7);
        assert!((fixed_weight_mean(&constant, &profile) - 0.7).abs() < 1e-12);

        let sine = ScalarField::from_fn(&grid, |_, xp| (2.0 * PI * xp[0]).sin());
        assert!(fixed_weight_mean(&sine, &profile).abs() < 1e-13);

        // Odd in x₁ against the even weight |U′(x₁)| on the symmetric grid.
        let odd = ScalarField::from_fn(&grid, |x1, _| x1.powi(3).sin());
        assert!(fixed_weight_mean(&odd, &profile).abs() < 1e-13);
    }

    /// Heat-mode oracle: with the front frozen at zero and no drift, the
    /// identity reduces to the heat equation's energy balance. For
    /// `u(t) = e^{−4π²t}·sin(2πx₂)` every quadrature is exact, so the
    /// residual equals the closed-form defect between the centered decay
    /// quotient and the discrete gradient dissipation.
    #[test]
    fn energy_identity_matches_heat_mode_oracle() {
        let profile = burgers_profile();
        let flux = FluxField::burgers(2).unwrap();
        let params = ShiftParams::default();

        let run = |np: usize| -> (f64, f64) {
            let grid = grid_2d(41, np);
            let dt = 1e-3;
            let (t0, t1) = (0.1, 0.1 + dt);
            let amp = |t: f64| (-4.0 * PI * PI * t).exp();
            let mk = |t: f64| -> SimState {
                let u =
                    ScalarField::from_fn(&grid, |_, xp| amp(t) * (2.0 * PI * xp[0]).sin());
                let y = ScalarField::zeros(&grid);
                let mut st = SimState::from_fields(u, y, Mode::Special).unwrap();
                st.t = t;
                // Caches stay zero: the front is frozen at V ≡ 0 and w ≡ 0,
                // turning the identity into the pure heat balance.
                st
            };
            let measured =
                energy_identity_residual(&mk(t0), &mk(t1), &flux, &profile, &params, dt, None);

            // Closed form: E(t) = L·e^{−8π²t} (equispaced quadrature of sin²
            // is exact), and the discrete transverse gradient of sin(2πx₂)
            // has factor κ = sin(2πh)/h, so D_grad(mid) = κ²·L·ā² with
            // ā = (a(t₀)+a(t₁))/2.
            let l = 20.0;
            let h = 1.0 / np as f64;
            let kappa = (2.0 * PI * h).sin() / h;
            let e = |t: f64| l * amp(t) * amp(t);
            let abar = 0.5 * (amp(t0) + amp(t1));
            let predicted = ((e(t1) - e(t0)) / (2.0 * dt) + kappa * kappa * l * abar * abar).abs();
            (measured, predicted)
        };

        let (m64, p64) = run(64);
        assert!((m64 - p64).abs() < 1e-9 * p64.max(1.0), "m = {m64}, p = {p64}");
        // The defect is dominated by the O(h²) gradient factor: quartering h²
        // under np 64 → 128 must shrink it accordingly.
        let (m128, _) = run(128);
        let ratio = m64 / m128;
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected ~4× decay of the spatial defect, got {ratio} ({m64} → {m128})"
        );
    }

    #[test]
    fn identity_and_front_residuals_vanish_on_the_steady_state() {
        let profile = burgers_profile();
        let flux = FluxField::burgers(2).unwrap();
        let params = ShiftParams::default();
        let grid = grid_2d(101, 8);
        let rho = well_balancing_row(&profile, &grid);

        let u = ScalarField::from_fn(&grid, |x1, _| profile.eval_profile(x1));
        let y = ScalarField::zeros(&grid);
        let mut st = SimState::from_fields(u, y, Mode::General).unwrap();
        refresh_caches(&mut st, &profile, &params).unwrap();
        let mut st2 = st.clone();
        st2.t = 1e-3;

        let er =
            energy_identity_residual(&st, &st2, &flux, &profile, &params, 1e-3, Some(&rho));
        assert!(er < 1e-14, "energy identity residual {er}");

        let fr =
            front_equation_residual(&st, &st2, &flux, &profile, &params, 1e-3, Some(&rho));
        assert_eq!(fr, 0.0, "front residual must vanish exactly, got {fr}");
    }

    // The identity residual is dominated by the first-order numerical
    // viscosity of the flux-split transport (measured constants: residual ≈
    // 0.11·max(E, D_grad) at 101×16, ≈ 1.4e-2 at 401×64, shrinking at order
    // ≈ 1.5 under refinement), so the threshold here is the measured coarse
    // constant with headroom, not an absolute small number.
    #[test]
    fn identity_residual_is_controlled_along_a_perturbed_run() {
        let profile = burgers_profile();
        let flux = FluxField::burgers(2).unwrap();
        let params = ShiftParams { m_cutoff: 8.0, ..ShiftParams::default() };
        let grid = grid_2d(101, 16);
        let mut stepper = Stepper::new(
            profile.clone(),
            grid.clone(),
            params,
            Mode::GeneralNoRamp,
            StepperOptions::default(),
        )
        .unwrap();

        let u0 = ScalarField::from_fn(&grid, |x1, _| {
            profile.eval_profile(x1) + 0.01 * (-(x1 - 6.0) * (x1 - 6.0)).exp()
        });
        let y0 = ScalarField::zeros(&grid);
        let mut state = stepper.make_state(u0, y0).unwrap();

        // Let the layers settle, then check the identity across single steps.
        for _ in 0..20 {
            stepper.advance(&mut state).unwrap();
        }
        let rho = stepper.rho_row().to_vec();
        for _ in 0..5 {
            let prev = state.clone();
            let info = stepper.advance(&mut state).unwrap();
            let res = energy_identity_residual(
                &prev,
                &state,
                &flux,
                &profile,
                stepper.params(),
                info.dt,
                Some(&rho),
            );
            let rec = assemble_record(&RecordInputs {
                state: &prev,
                profile: &profile,
                entropy_residual: res,
            });
            let scale = rec.energy.max(rec.d_grad);
            assert!(res <= 0.2 * scale, "residual {res} too large vs scale {scale}");
        }
    }

    #[test]
    fn front_residual_refines_at_first_order_in_the_source_free_mode() {
        let profile = burgers_profile();
        let flux = FluxField::burgers(2).unwrap();
        let params = ShiftParams::default();

        // Halving dx and dt together should at least halve the residual
        // (upwind transport limits the order to one). Every level must keep
        // dx₁ well below the front offset sup|Y|: the local Lax–Friedrichs
        // speed |A₁′| has a kink where the composed front crosses zero, and
        // nodes between the shifted crossing and the steady crossing baked
        // into the well-balancing row see a dissipation gap of about dx₁/4;
        // on grids coarser than the offset that gap saturates near sup|Y|/4
        // and stops shrinking with dx.
        let levels: Vec<f64> = [(401usize, 16usize, 8e-5, 4usize), (801, 32, 4e-5, 8), (1601, 64, 2e-5, 16)]
            .iter()
            .map(|&(n1, np, dt, steps)| {
                let grid = grid_2d(n1, np);
                let mut stepper = Stepper::new(
                    profile.clone(),
                    grid.clone(),
                    params,
                    Mode::Special,
                    StepperOptions { dt_override: Some(dt), ..StepperOptions::default() },
                )
                .unwrap();
                let u0 = ScalarField::from_fn(&grid, |x1, xp| {
                    profile.eval_profile(
                        x1 + 0.2 * (2.0 * PI * xp[0]).sin() * (-(x1 * x1) / 8.0).exp(),
                    )
                });
                let y0 = ScalarField::from_fn(&grid, |x1, xp| {
                    0.2 * (2.0 * PI * xp[0]).sin() * (-(x1 * x1) / 8.0).exp()
                });
                let mut state = stepper.make_state(u0, y0).unwrap();
                for _ in 0..steps {
                    stepper.advance(&mut state).unwrap();
                }
                let prev = state.clone();
                let info = stepper.advance(&mut state).unwrap();
                front_equation_residual(
                    &prev,
                    &state,
                    &flux,
                    &profile,
                    stepper.params(),
                    info.dt,
                    Some(stepper.rho_row()),
                )
            })
            .collect();

        assert!(
            levels[0] / levels[1] > 1.7 && levels[1] / levels[2] > 1.7,
            "front residuals did not refine: {levels:?}"
        );
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let rec = DiagnosticsRecord {
            t: 0.5,
            energy: 1.0,
            d_grad: 2.0,
            d_proj: 3.0,
            g: 4.0,
            h_m: 5.0,
            m: 6.0,
            w_y: 7.0,
            w_grad_y: 8.0,
            grad_y_l2: 9.0,
            lap_y_l2: 10.0,
            f_gap: 11.0,
            c: 12.0,
            entropy_residual: 13.0,
        };
        let header_cols = DiagnosticsRecord::CSV_HEADER.split(',').count();
        let row_cols = rec.csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
        assert_eq!(header_cols, 14);
        assert!(rec.csv_row().starts_with("0.5,1,2,3,"));
    }
}
