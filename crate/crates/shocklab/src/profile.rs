//! Construction, interpolation, and certification of viscous planar shock
//! profiles.
//!
//! A profile is the travelling-wave solution `U(x₁)` of the leading flux
//! component: `U' = A₁(U) − A₁(u₊)`, decreasing from `u₋` at `−∞` to `u₊` at
//! `+∞`, normalized so that `U(0) = u*` where `A₁'(u*) = 0` (the point of
//! steepest descent). It exists when the end states balance the flux
//! (`A₁(u₊) = A₁(u₋)`) and satisfy the entropy ordering
//! `A₁'(u₊) < 0 < A₁'(u₋)`; the tails then decay like `exp(−c∓|x₁|)` with
//! `c₋ = A₁'(u₋)` and `c₊ = −A₁'(u₊)`.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::flux::{FluxError, FluxField};

/// Flux balance between the end states must hold to this absolute tolerance;
/// anything larger means the pair does not support a stationary profile.
const FLUX_BALANCE_TOL: f64 = 1e-10;

/// Tabulation stops once the profile is within this distance of an end state;
/// beyond the table the evaluator clamps to the end state, so this is also the
/// size of the (negligible) jump at the table edge.
const TAIL_STOP_TOL: f64 = 1e-13;

/// Root tolerance for locating the interior state with zero wave speed.
const U_STAR_TOL: f64 = 1e-14;

/// Errors from profile construction.
#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("end states must be ordered u_minus > u_plus, got {u_minus} <= {u_plus}")]
    NotOrdered { u_minus: f64, u_plus: f64 },
    #[error("end states do not balance the leading flux: |A1(u+) - A1(u-)| = {residual:.3e}")]
    FluxImbalance { residual: f64 },
    #[error("entropy ordering violated: A1'(u+) = {speed_plus:.3e}, A1'(u-) = {speed_minus:.3e}")]
    EntropyOrdering { speed_plus: f64, speed_minus: f64 },
    #[error("half-length {x1_max} too short for decay rates (need at least {required})")]
    DomainTooShort { x1_max: f64, required: f64 },
    #[error("tabulation step must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Flux(#[from] FluxError),
}

/// A tabulated shock profile with a monotone piecewise-cubic evaluator.
#[derive(Debug, Clone)]
pub struct ShockProfile {
    u_minus: f64,
    u_plus: f64,
    u_star: f64,
    decay_minus: f64,
    decay_plus: f64,
    x1_nodes: Vec<f64>,
    u_values: Vec<f64>,
    du_values: Vec<f64>,
    /// Per-interval cubic coefficients in the local variable t = (x−xᵢ)/dx:
    /// value = c₀ + c₁t + c₂t² + c₃t³.
    hermite: Vec<[f64; 4]>,
    dx: f64,
    /// Cached `1/dx`: `locate` runs once per grid node per refresh sweep, and
    /// a multiply is several times cheaper there than a divide.
    inv_dx: f64,
    x_min: f64,
    x_max: f64,
    flux: FluxField,
}

/// Machine-checkable summary of a constructed profile, suitable for JSON.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileCertificate {
    /// |A₁(u₊) − A₁(u₋)|.
    pub flux_balance_residual: f64,
    /// A₁'(u₋) (must be positive) and A₁'(u₊) (must be negative).
    pub speed_minus: f64,
    pub speed_plus: f64,
    pub entropy_ordering_ok: bool,
    /// Count of table entries violating strict decrease / negative slope.
    pub monotonicity_violations: usize,
    /// Count of nodes where |U′| fails to decrease away from its peak at 0.
    pub slope_unimodality_violations: usize,
    /// sup over interior nodes of |centered difference of U − tabulated U'|.
    pub slope_consistency_sup: f64,
    /// sup over interior nodes of the discrete defect of the slope identity
    /// |U′|″ = (A₁′(U)·|U′|)′, second-order stencils on the table.
    pub slope_identity_residual_sup: f64,
    /// Fitted exponential tail rates of |U − u±| and their relative error
    /// against the analytic rates c∓/c₊.
    pub tail_rate_left: f64,
    pub tail_rate_left_rel_err: f64,
    pub tail_rate_right: f64,
    pub tail_rate_right_rel_err: f64,
    /// U(0) − u*; the construction pins this to roundoff.
    pub centering_residual: f64,
}

/// Integrates the profile equation outward from `U(0) = u*` with fourth-order
/// Runge–Kutta at step `dx`, tabulating until the tails flatten or `x1_max` is
/// reached.
///
/// `x1_max` must be at least `20/min(c₋, c₊)` so that both tails decay below
/// any quantity the diagnostics weigh against them.
pub fn solve_profile(
    flux: &FluxField,
    u_minus: f64,
    u_plus: f64,
    x1_max: f64,
    dx: f64,
) -> Result<ShockProfile, ProfileError> {
    if u_minus <= u_plus {
        return Err(ProfileError::NotOrdered { u_minus, u_plus });
    }
    if !(dx > 0.0) {
        return Err(ProfileError::BadStep(dx));
    }
    flux.validate(u_plus, u_minus)?;
    let a1 = flux.a1();
    let a1p = &flux.component_derivs(0)[0];

    let residual = (a1.eval(u_plus) - a1.eval(u_minus)).abs();
    if residual > FLUX_BALANCE_TOL {
        return Err(ProfileError::FluxImbalance { residual });
    }
    let speed_plus = a1p.eval(u_plus);
    let speed_minus = a1p.eval(u_minus);
    if !(speed_plus < 0.0 && speed_minus > 0.0) {
        return Err(ProfileError::EntropyOrdering { speed_plus, speed_minus });
    }
    let decay_minus = speed_minus;
    let decay_plus = -speed_plus;
    let required = 20.0 / decay_minus.min(decay_plus);
    if x1_max < required {
        return Err(ProfileError::DomainTooShort { x1_max, required });
    }

    // A₁' is increasing (A₁'' > 0 on the hull), so bisection finds the unique
    // interior state with zero wave speed.
    let mut lo = u_plus;
    let mut hi = u_minus;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if a1p.eval(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < U_STAR_TOL * (u_minus - u_plus).abs() {
            break;
        }
    }
    let u_star = 0.5 * (lo + hi);

    let flux_level = a1.eval(u_plus);
    let rhs = |u: f64| a1.eval(u) - flux_level;
    let rk4 = |u: f64, h: f64| {
        let k1 = rhs(u);
        let k2 = rhs(u + 0.5 * h * k1);
        let k3 = rhs(u + 0.5 * h * k2);
        let k4 = rhs(u + h * k3);
        u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };

    let max_steps = (x1_max / dx).round() as usize;
    let mut right = Vec::with_capacity(max_steps);
    let mut u = u_star;
    for _ in 0..max_steps {
        u = rk4(u, dx).clamp(u_plus, u_minus);
        right.push(u);
        if (u - u_plus).abs() < TAIL_STOP_TOL {
            break;
        }
    }
    let mut left = Vec::with_capacity(max_steps);
    let mut u = u_star;
    for _ in 0..max_steps {
        u = rk4(u, -dx).clamp(u_plus, u_minus);
        left.push(u);
        if (u - u_minus).abs() < TAIL_STOP_TOL {
            break;
        }
    }

    let n_left = left.len();
    let n = n_left + 1 + right.len();
    let mut x1_nodes = Vec::with_capacity(n);
    let mut u_values = Vec::with_capacity(n);
    for (k, &val) in left.iter().rev().enumerate() {
        x1_nodes.push(-((n_left - k) as f64) * dx);
        u_values.push(val);
    }
    x1_nodes.push(0.0);
    u_values.push(u_star);
    for (k, &val) in right.iter().enumerate() {
        x1_nodes.push((k + 1) as f64 * dx);
        u_values.push(val);
    }
    // Slopes from the profile equation itself: exact at the tabulated values.
    let du_values: Vec<f64> = u_values.iter().map(|&v| rhs(v)).collect();

    let x_min = x1_nodes[0];
    let x_max = *x1_nodes.last().unwrap();
    let hermite = build_monotone_hermite(&u_values, &du_values, dx);

    Ok(ShockProfile {
        u_minus,
        u_plus,
        u_star,
        decay_minus,
        decay_plus,
        x1_nodes,
        u_values,
        du_values,
        hermite,
        dx,
        inv_dx: 1.0 / dx,
        x_min,
        x_max,
        flux: flux.clone(),
    })
}

/// Builds per-interval cubic coefficients from values and slopes, limiting the
/// slopes to the monotone box `|d| ≤ 3·min(|Δ₋|, |Δ₊|)` (the sufficient
/// condition of Fritsch–Carlson). With slopes straight from the profile
/// equation the limiter only acts in the flat tails, where it suppresses
/// roundoff-scale wiggles.
fn build_monotone_hermite(u: &[f64], du: &[f64], dx: f64) -> Vec<[f64; 4]> {
    let n = u.len();
    let mut d = du.to_vec();
    for i in 0..n {
        let sec_l = if i > 0 { (u[i] - u[i - 1]) / dx } else { f64::NEG_INFINITY };
        let sec_r = if i + 1 < n { (u[i + 1] - u[i]) / dx } else { f64::NEG_INFINITY };
        // Both secants are ≤ 0 for decreasing data; the admissible slope
        // magnitude is 3× the smaller secant magnitude.
        let cap = match (i > 0, i + 1 < n) {
            (true, true) => 3.0 * sec_l.abs().min(sec_r.abs()),
            (true, false) => 3.0 * sec_l.abs(),
            (false, true) => 3.0 * sec_r.abs(),
            (false, false) => 0.0,
        };
        if d[i].abs() > cap {
            d[i] = d[i].signum() * cap;
        }
    }
    (0..n - 1)
        .map(|i| {
            let delta = u[i + 1] - u[i];
            let c0 = u[i];
            let c1 = dx * d[i];
            let c2 = 3.0 * delta - dx * (2.0 * d[i] + d[i + 1]);
            let c3 = -2.0 * delta + dx * (d[i] + d[i + 1]);
            [c0, c1, c2, c3]
        })
        .collect()
}

impl ShockProfile {
    /// Left end state (value at `−∞`).
    pub fn u_minus(&self) -> f64 {
        self.u_minus
    }

    /// Right end state (value at `+∞`).
    pub fn u_plus(&self) -> f64 {
        self.u_plus
    }

    /// Interior state with zero wave speed; the profile passes through it at 0.
    pub fn u_star(&self) -> f64 {
        self.u_star
    }

    /// Exponential decay rate of the left tail (`|U − u₋| ~ e^{−c₋|x₁|}`).
    pub fn decay_minus(&self) -> f64 {
        self.decay_minus
    }

    /// Exponential decay rate of the right tail.
    pub fn decay_plus(&self) -> f64 {
        self.decay_plus
    }

    /// Tabulation nodes (ascending, uniform spacing).
    pub fn x1_nodes(&self) -> &[f64] {
        &self.x1_nodes
    }

    /// Tabulated profile values.
    pub fn u_values(&self) -> &[f64] {
        &self.u_values
    }

    /// Tabulated slopes (from the profile equation; all ≤ 0).
    pub fn du_values(&self) -> &[f64] {
        &self.du_values
    }

    /// Tabulation step.
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// The flux this profile solves.
    pub fn flux(&self) -> &FluxField {
        &self.flux
    }

    #[inline]
    fn locate(&self, x1: f64) -> (usize, f64) {
        let s = (x1 - self.x_min) * self.inv_dx;
        let i = (s as usize).min(self.hermite.len() - 1);
        (i, s - i as f64)
    }

    /// Profile value at `x1`; outside the table this clamps to the end states
    /// (the tails are below `1e-13` there by construction).
    #[inline]
    pub fn eval_profile(&self, x1: f64) -> f64 {
        if x1 <= self.x_min {
            return self.u_minus;
        }
        if x1 >= self.x_max {
            return self.u_plus;
        }
        let (i, t) = self.locate(x1);
        let c = &self.hermite[i];
        let v = c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        v.clamp(self.u_plus, self.u_minus)
    }

    /// Profile slope at `x1` (≤ 0 everywhere); 0 outside the table.
    #[inline]
    pub fn eval_profile_deriv(&self, x1: f64) -> f64 {
        if x1 <= self.x_min || x1 >= self.x_max {
            return 0.0;
        }
        let (i, t) = self.locate(x1);
        let c = &self.hermite[i];
        (c[1] + t * (2.0 * c[2] + t * 3.0 * c[3])) / self.dx
    }

    /// Second derivative of the piecewise-cubic evaluator at `x1`; this is the
    /// exact sensitivity of [`Self::eval_profile_deriv`] to a shift of its
    /// argument, which the homogeneous-shift rate cross-check needs.
    #[inline]
    pub fn eval_profile_deriv2(&self, x1: f64) -> f64 {
        if x1 <= self.x_min || x1 >= self.x_max {
            return 0.0;
        }
        let (i, t) = self.locate(x1);
        let c = &self.hermite[i];
        (2.0 * c[2] + t * 6.0 * c[3]) / (self.dx * self.dx)
    }

    /// Independent re-derivation of the certificate quantities from the table.
    pub fn check_profile(&self) -> ProfileCertificate {
        let a1 = self.flux.a1();
        let a1p = &self.flux.component_derivs(0)[0];
        let flux_balance_residual = (a1.eval(self.u_plus) - a1.eval(self.u_minus)).abs();
        let speed_minus = a1p.eval(self.u_minus);
        let speed_plus = a1p.eval(self.u_plus);
        let entropy_ordering_ok = speed_minus > 0.0 && speed_plus < 0.0;

        let mut monotonicity_violations = 0;
        for i in 0..self.u_values.len() {
            if self.du_values[i] > 0.0 {
                monotonicity_violations += 1;
            }
            if i + 1 < self.u_values.len() && self.u_values[i + 1] >= self.u_values[i] {
                monotonicity_violations += 1;
            }
        }

        // |U′| peaks at x₁ = 0 and decays monotonically outward; allow
        // roundoff-level slack where the tails are flat.
        let mut slope_unimodality_violations = 0;
        for i in 0..self.x1_nodes.len() - 1 {
            let lo = self.du_values[i].abs();
            let hi = self.du_values[i + 1].abs();
            if self.x1_nodes[i] >= 0.0 {
                if hi > lo + 1e-12 {
                    slope_unimodality_violations += 1;
                }
            } else if self.x1_nodes[i + 1] <= 0.0 && lo > hi + 1e-12 {
                slope_unimodality_violations += 1;
            }
        }

        let mut slope_consistency_sup = 0.0f64;
        for i in 1..self.u_values.len() - 1 {
            let fd = (self.u_values[i + 1] - self.u_values[i - 1]) / (2.0 * self.dx);
            slope_consistency_sup = slope_consistency_sup.max((fd - self.du_values[i]).abs());
        }

        // Differentiating the profile equation gives |U′|″ = (A₁′(U)·|U′|)′;
        // check it with centered stencils on the tabulated values.
        let mut slope_identity_residual_sup = 0.0f64;
        for i in 1..self.u_values.len() - 1 {
            let s = |j: usize| self.du_values[j].abs();
            let lhs = (s(i + 1) - 2.0 * s(i) + s(i - 1)) / (self.dx * self.dx);
            let flux_slope = |j: usize| a1p.eval(self.u_values[j]) * s(j);
            let rhs = (flux_slope(i + 1) - flux_slope(i - 1)) / (2.0 * self.dx);
            slope_identity_residual_sup = slope_identity_residual_sup.max((lhs - rhs).abs());
        }

        let (tail_rate_right, tail_rate_right_rel_err) =
            self.fit_tail(5.0, 10.0, self.u_plus, self.decay_plus);
        let (tail_rate_left, tail_rate_left_rel_err) =
            self.fit_tail(-10.0, -5.0, self.u_minus, self.decay_minus);

        ProfileCertificate {
            flux_balance_residual,
            speed_minus,
            speed_plus,
            entropy_ordering_ok,
            monotonicity_violations,
            slope_unimodality_violations,
            slope_consistency_sup,
            slope_identity_residual_sup,
            tail_rate_left,
            tail_rate_left_rel_err,
            tail_rate_right,
            tail_rate_right_rel_err,
            centering_residual: self.eval_profile(0.0) - self.u_star,
        }
    }

    /// Least-squares slope of `ln|U − u_end|` over table nodes in `[a, b]`,
    /// returned as a positive rate with its relative error against `expected`.
    fn fit_tail(&self, a: f64, b: f64, u_end: f64, expected: f64) -> (f64, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        let mut n = 0.0;
        for (&x, &u) in self.x1_nodes.iter().zip(&self.u_values) {
            if x < a || x > b {
                continue;
            }
            let gap = (u - u_end).abs();
            if gap < 1e-300 {
                continue;
            }
            let y = gap.ln();
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            n += 1.0;
        }
        if n < 2.0 {
            return (f64::NAN, f64::NAN);
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let rate = slope.abs();
        (rate, (rate - expected).abs() / expected)
    }

    /// Writes the table as CSV with columns `x1,U,dU`.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x1,U,dU")?;
        for i in 0..self.x1_nodes.len() {
            writeln!(
                f,
                "{:.17e},{:.17e},{:.17e}",
                self.x1_nodes[i], self.u_values[i], self.du_values[i]
            )?;
        }
        Ok(())
    }
}
