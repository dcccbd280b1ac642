//! Polynomial flux fields `A(u) = (A₁(u), …, A_N(u))` and the derived
//! quantities the stability machinery needs: relative fluxes (Bregman gaps)
//! and the drift kernel `A(u|v)/(u−v)` extended continuously across `u = v`.

use thiserror::Error;

/// Relative tolerance for the finite-difference self-check of analytic flux
/// derivatives. A centered difference with step `~1e-6·max(1,|u|)` on a smooth
/// polynomial carries roundoff plus `O(h²)` truncation, both well below this.
const DERIV_SELF_CHECK_TOL: f64 = 1e-6;

/// Number of samples per unit interval when scanning convexity of the leading
/// flux component over a state hull.
const CONVEXITY_SCAN_SAMPLES: usize = 512;

/// Fraction by which a state hull is widened before convexity scanning, so a
/// profile stays inside the certified interval even with small overshoots.
const HULL_MARGIN: f64 = 0.1;

/// Errors from flux construction and validation.
#[derive(Debug, Error)]
pub enum FluxError {
    #[error("flux needs at least one component, got {0}")]
    NoComponents(usize),
    #[error("leading flux component is not strictly convex at u = {at} (A1'' = {value})")]
    NotConvex { at: f64, value: f64 },
    #[error(
        "analytic derivative of component {component} disagrees with finite differences \
         at u = {at} (relative error {rel_err:.3e})"
    )]
    DerivativeMismatch { component: usize, at: f64, rel_err: f64 },
    #[error("unsupported derivative order {0} (supported: 1, 2, 3)")]
    BadDerivOrder(usize),
}

/// Dense univariate polynomial, coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending coefficients `c₀ + c₁u + c₂u² + …`.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    /// Ascending coefficients.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree of the polynomial (0 for constants, including the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * u + c;
        }
        acc
    }

    /// Analytic derivative.
    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::new(vec![0.0]);
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        Polynomial::new(coeffs)
    }
}

/// Built-in flux families plus fully custom polynomial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxKind {
    /// `A = (u²/2, u, …, u)`: convex leading component, linear transverse drift.
    Burgers,
    /// `A = (u³/3 + u, u²/2, …, u²/2)`: strictly convex leading component with
    /// everywhere-positive wave speed, quadratic transverse components.
    CubicConvex,
    /// Arbitrary polynomial components supplied by the caller.
    Custom,
}

/// The flux `A : ℝ → ℝᴺ` of the conservation law, with per-component
/// polynomials and their first three derivatives precomputed.
#[derive(Debug, Clone)]
pub struct FluxField {
    n_components: usize,
    kind: FluxKind,
    components: Vec<Polynomial>,
    derivs: Vec<[Polynomial; 3]>,
}

impl FluxField {
    /// Burgers-type flux `(u²/2, u, …, u)` with `n_components ≥ 1` components.
    pub fn burgers(n_components: usize) -> Result<Self, FluxError> {
        let mut comps = vec![Polynomial::new(vec![0.0, 0.0, 0.5])];
        comps.extend((1..n_components).map(|_| Polynomial::new(vec![0.0, 1.0])));
        Self::from_components(FluxKind::Burgers, comps, n_components)
    }

    /// Cubic flux `(u³/3 + u, u²/2, …, u²/2)` with `n_components ≥ 1` components.
    pub fn cubic_convex(n_components: usize) -> Result<Self, FluxError> {
        let mut comps = vec![Polynomial::new(vec![0.0, 1.0, 0.0, 1.0 / 3.0])];
        comps.extend((1..n_components).map(|_| Polynomial::new(vec![0.0, 0.0, 0.5])));
        Self::from_components(FluxKind::CubicConvex, comps, n_components)
    }

    /// Custom polynomial flux: a leading component and one polynomial per
    /// transverse direction.
    pub fn custom(a1: Polynomial, transverse: Vec<Polynomial>) -> Result<Self, FluxError> {
        let n = 1 + transverse.len();
        let mut comps = vec![a1];
        comps.extend(transverse);
        Self::from_components(FluxKind::Custom, comps, n)
    }

    fn from_components(
        kind: FluxKind,
        components: Vec<Polynomial>,
        n_components: usize,
    ) -> Result<Self, FluxError> {
        if n_components == 0 || components.is_empty() {
            return Err(FluxError::NoComponents(n_components));
        }
        let derivs = components
            .iter()
            .map(|p| {
                let d1 = p.derivative();
                let d2 = d1.derivative();
                let d3 = d2.derivative();
                [d1, d2, d3]
            })
            .collect();
        Ok(Self { n_components, kind, components, derivs })
    }

    /// Number of spatial components `N`.
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Which family this flux belongs to.
    pub fn kind(&self) -> FluxKind {
        self.kind
    }

    /// The leading (shock-carrying) component `A₁`.
    pub fn a1(&self) -> &Polynomial {
        &self.components[0]
    }

    /// Derivative polynomials `[A_d', A_d'', A_d''']` of component `d` (0-based).
    pub fn component_derivs(&self, d: usize) -> &[Polynomial; 3] {
        &self.derivs[d]
    }

    /// Component polynomials, leading component first.
    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    /// Pointwise flux value `A(u)`.
    pub fn eval_flux(&self, u: f64) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(u)).collect()
    }

    /// Pointwise derivative `A⁽ᵒʳᵈᵉʳ⁾(u)` for `order ∈ {1, 2, 3}`.
    pub fn eval_flux_deriv(&self, u: f64, order: usize) -> Result<Vec<f64>, FluxError> {
        if !(1..=3).contains(&order) {
            return Err(FluxError::BadDerivOrder(order));
        }
        Ok(self.derivs.iter().map(|d| d[order - 1].eval(u)).collect())
    }

    /// Relative flux (componentwise Bregman gap)
    /// `A(u|v) = A(u) − A(v) − A'(v)(u − v)`.
    pub fn relative_flux(&self, u: f64, v: f64) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.derivs)
            .map(|(p, d)| p.eval(u) - p.eval(v) - d[0].eval(v) * (u - v))
            .collect()
    }

    /// Drift kernel `A(u|v)/(u − v)`, extended by its limit 0 across `u = v`,
    /// evaluated through the integral representation
    /// `(u−v)·∫₀¹∫₀¹ A''(v + sτ(u−v)) τ ds dτ` with an 8×8 Gauss–Legendre rule
    /// (exact for polynomial components up to degree 17).
    pub fn w_kernel(&self, u: f64, v: f64) -> Vec<f64> {
        let d = u - v;
        (0..self.n_components)
            .map(|c| {
                let a2 = &self.derivs[c][1];
                let mut acc = 0.0;
                for (&s, &ws) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                    for (&t, &wt) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                        acc += ws * wt * a2.eval(v + s * t * d) * t;
                    }
                }
                d * acc
            })
            .collect()
    }

    /// Checks strict convexity of `A₁` on `[lo, hi]` widened by 10%, and that
    /// every analytic component derivative matches centered finite differences
    /// to relative accuracy `1e-6` on sampled states.
    pub fn validate(&self, lo: f64, hi: f64) -> Result<(), FluxError> {
        let span = (hi - lo).abs().max(1e-3);
        let margin = HULL_MARGIN * span;
        let (a, b) = (lo.min(hi) - margin, lo.max(hi) + margin);
        let n = ((b - a) * CONVEXITY_SCAN_SAMPLES as f64).ceil() as usize + 2;
        let a2 = &self.derivs[0][1];
        for k in 0..=n {
            let u = a + (b - a) * k as f64 / n as f64;
            let value = a2.eval(u);
            if value <= 0.0 {
                return Err(FluxError::NotConvex { at: u, value });
            }
        }
        for c in 0..self.n_components {
            let p = &self.components[c];
            let d1 = &self.derivs[c][0];
            for k in 0..=16 {
                let u = a + (b - a) * k as f64 / 16.0;
                let h = 1e-6 * u.abs().max(1.0);
                let fd = (p.eval(u + h) - p.eval(u - h)) / (2.0 * h);
                let exact = d1.eval(u);
                let rel_err = (fd - exact).abs() / exact.abs().max(1.0);
                if rel_err > DERIV_SELF_CHECK_TOL {
                    return Err(FluxError::DerivativeMismatch { component: c, at: u, rel_err });
                }
            }
        }
        Ok(())
    }
}

/// Closed-form drift kernel for one polynomial component.
///
/// Expanding `∫₀¹∫₀¹ A''(v + sτd) τ ds dτ` monomial by monomial gives
/// `K(v, d) = d · Σⱼ cⱼ j(j−1) Σ_q C(j−2, q) μ_q v^{j−2−q} d^q` with moments
/// `μ_q = 1/((q+1)(q+2))`. This is the same function as [`FluxField::w_kernel`]
/// per component, but costs a handful of fused multiplies per call, which is
/// what the time stepper needs on its innermost loop.
#[derive(Debug, Clone)]
pub struct KernelPoly {
    /// Terms `(coefficient, power of v, power of d)`.
    terms: Vec<(f64, u32, u32)>,
}

impl KernelPoly {
    /// Precomputes the kernel expansion for one flux component.
    pub fn from_polynomial(p: &Polynomial) -> Self {
        let mut terms = Vec::new();
        for (j, &cj) in p.coeffs().iter().enumerate() {
            if j < 2 || cj == 0.0 {
                continue;
            }
            let lead = cj * (j as f64) * (j as f64 - 1.0);
            let m = j - 2;
            let mut binom = 1.0f64;
            for q in 0..=m {
                if q > 0 {
                    binom *= (m - q + 1) as f64 / q as f64;
                }
                let mu = 1.0 / ((q as f64 + 1.0) * (q as f64 + 2.0));
                terms.push((lead * binom * mu, (m - q) as u32, q as u32));
            }
        }
        Self { terms }
    }

    /// Evaluates `K(v, u−v)` with `d = u − v`; returns exactly 0 when `d = 0`.
    #[inline]
    pub fn eval(&self, v: f64, d: f64) -> f64 {
        let mut acc = 0.0;
        for &(c, pv, pd) in &self.terms {
            acc += c * v.powi(pv as i32) * d.powi(pd as i32);
        }
        d * acc
    }

    /// True when the kernel is identically zero (linear or constant component).
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// 8-point Gauss–Legendre nodes mapped to [0, 1].
const GL8_NODES: [f64; 8] = [
    0.5 * (1.0 - 0.960_289_856_497_536_2),
    0.5 * (1.0 - 0.796_666_477_413_626_7),
    0.5 * (1.0 - 0.525_532_409_916_329_0),
    0.5 * (1.0 - 0.183_434_642_495_649_8),
    0.5 * (1.0 + 0.183_434_642_495_649_8),
    0.5 * (1.0 + 0.525_532_409_916_329_0),
    0.5 * (1.0 + 0.796_666_477_413_626_7),
    0.5 * (1.0 + 0.960_289_856_497_536_2),
];

/// 8-point Gauss–Legendre weights scaled to [0, 1], paired with `GL8_NODES`.
const GL8_WEIGHTS: [f64; 8] = [
    0.5 * 0.101_228_536_290_376_3,
    0.5 * 0.222_381_034_453_374_5,
    0.5 * 0.313_706_645_877_887_3,
    0.5 * 0.362_683_783_378_362_0,
    0.5 * 0.362_683_783_378_362_0,
    0.5 * 0.313_706_645_877_887_3,
    0.5 * 0.222_381_034_453_374_5,
    0.5 * 0.101_228_536_290_376_3,
];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn burgers2() -> FluxField {
        FluxField::burgers(2).unwrap()
    }

    fn cubic2() -> FluxField {
        FluxField::cubic_convex(2).unwrap()
    }

    #[test]
    fn burgers_flux_values() {
        let f = burgers2();
        assert_eq!(f.eval_flux(0.0), vec![0.0, 0.0]);
        assert_eq!(f.eval_flux(2.0), vec![2.0, 2.0]);
    }

    #[test]
    fn cubic_flux_value() {
        let f = cubic2();
        let vals = f.eval_flux(1.0);
        assert!((vals[0] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn burgers_derivatives() {
        let f = burgers2();
        assert_eq!(f.eval_flux_deriv(3.0, 1).unwrap(), vec![3.0, 1.0]);
        assert_eq!(f.eval_flux_deriv(3.0, 2).unwrap(), vec![1.0, 0.0]);
        assert_eq!(f.eval_flux_deriv(3.0, 3).unwrap(), vec![0.0, 0.0]);
        assert!(f.eval_flux_deriv(3.0, 4).is_err());
    }

    #[test]
    fn cubic_second_derivative() {
        let f = cubic2();
        assert_eq!(f.eval_flux_deriv(2.0, 2).unwrap()[0], 4.0);
    }

    #[test]
    fn relative_flux_vanishes_on_diagonal() {
        let f = cubic2();
        for &u in &[-1.5, 0.0, 0.7, 2.3] {
            for r in f.relative_flux(u, u) {
                assert_eq!(r, 0.0);
            }
        }
    }

    #[test]
    fn relative_flux_burgers_example() {
        let f = burgers2();
        let r = f.relative_flux(1.0, 0.0);
        assert!((r[0] - 0.5).abs() < 1e-15);
        // Linear transverse components have zero Bregman gap.
        assert_eq!(r[1], 0.0);
    }

    #[test]
    fn kernel_vanishes_on_diagonal() {
        let f = cubic2();
        for k in f.w_kernel(0.8, 0.8) {
            assert_eq!(k, 0.0);
        }
    }

    #[test]
    fn kernel_burgers_example() {
        let f = burgers2();
        let k = f.w_kernel(1.0, 0.0);
        assert!((k[0] - 0.5).abs() < 1e-14);
        assert!(k[1].abs() < 1e-15);
    }

    /// Oracle: for u ≠ v the kernel must equal the direct quotient
    /// A(u|v)/(u−v) computed from plain polynomial evaluations.
    #[test]
    fn kernel_matches_direct_quotient_cubic() {
        let f = cubic2();
        let (u, v) = (0.3, 0.1);
        let k = f.w_kernel(u, v);
        let r = f.relative_flux(u, v);
        for (kc, rc) in k.iter().zip(&r) {
            assert!((kc - rc / (u - v)).abs() < 1e-12, "kernel {kc} vs quotient {}", rc / (u - v));
        }
    }

    #[test]
    fn kernel_times_gap_equals_relative_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        for f in [burgers2(), cubic2()] {
            for _ in 0..500 {
                let u: f64 = rng.random_range(-2.0..2.0);
                let v: f64 = rng.random_range(-2.0..2.0);
                if (u - v).abs() <= 1e-8 {
                    continue;
                }
                let k = f.w_kernel(u, v);
                let r = f.relative_flux(u, v);
                for (kc, rc) in k.iter().zip(&r) {
                    let err = (kc * (u - v) - rc).abs();
                    assert!(err <= 1e-10 * rc.abs().max(1.0), "err {err}");
                }
            }
        }
    }

    #[test]
    fn closed_form_kernel_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        for _ in 0..50 {
            let deg = rng.random_range(2..=7);
            let coeffs: Vec<f64> = (0..=deg).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = Polynomial::new(coeffs);
            let f = FluxField::custom(p.clone(), vec![]).unwrap();
            let kp = KernelPoly::from_polynomial(&p);
            for _ in 0..20 {
                let v: f64 = rng.random_range(-2.0..2.0);
                let d: f64 = rng.random_range(-2.0..2.0);
                let gl = f.w_kernel(v + d, v)[0];
                let closed = kp.eval(v, d);
                assert!(
                    (gl - closed).abs() <= 1e-13 * gl.abs().max(1.0),
                    "gl {gl} closed {closed}"
                );
            }
        }
    }

    /// The 8×8 product Gauss rule integrates the kernel exactly for components
    /// up to degree 15 (the integrand then has degree ≤ 14 in each variable,
    /// within the rule's degree-15 exactness).
    #[test]
    fn quadrature_exact_for_high_degree() {
        let mut coeffs = vec![0.0; 16];
        coeffs[15] = 0.25;
        coeffs[9] = -1.5;
        coeffs[3] = 2.0;
        let p = Polynomial::new(coeffs);
        let f = FluxField::custom(p.clone(), vec![]).unwrap();
        let kp = KernelPoly::from_polynomial(&p);
        for &(v, d) in &[(0.3, 0.4), (-0.5, 0.2), (0.9, -0.8)] {
            let gl = f.w_kernel(v + d, v)[0];
            let closed = kp.eval(v, d);
            assert!((gl - closed).abs() <= 1e-12 * gl.abs().max(1.0));
        }
    }

    /// Bregman nonnegativity holds exactly where the leading component is
    /// convex on the hull of (u, v): everywhere for Burgers, on u ≥ 0 for the
    /// cubic (its second derivative 2u changes sign at 0).
    #[test]
    fn bregman_gap_nonnegative_for_convex_leading_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
        for (f, lo, hi) in [(burgers2(), -2.0, 2.0), (cubic2(), 0.0, 2.0)] {
            for _ in 0..2000 {
                let u: f64 = rng.random_range(lo..hi);
                let v: f64 = rng.random_range(lo..hi);
                assert!(f.relative_flux(u, v)[0] >= -1e-15);
            }
        }
        // Outside the convex region the gap genuinely flips sign.
        assert!(cubic2().relative_flux(-1.0, -0.2)[0] < 0.0);
    }

    #[test]
    fn quadratic_upper_bound_on_relative_flux() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
        let (lo, hi) = (-2.0, 2.0);
        for f in [burgers2(), cubic2()] {
            // sup |A''| over the sampled hull, per component.
            let mut sup2 = vec![0.0f64; f.n_components()];
            for k in 0..=400 {
                let u = lo + (hi - lo) * k as f64 / 400.0;
                for (c, s) in sup2.iter_mut().enumerate() {
                    *s = s.max(f.component_derivs(c)[1].eval(u).abs());
                }
            }
            for _ in 0..2000 {
                let u: f64 = rng.random_range(lo..hi);
                let v: f64 = rng.random_range(lo..hi);
                let r = f.relative_flux(u, v);
                for (c, rc) in r.iter().enumerate() {
                    let bound = 0.5 * sup2[c] * (u - v) * (u - v);
                    assert!(rc.abs() <= bound + 1e-12, "component {c}: |{rc}| > {bound}");
                }
            }
        }
    }

    #[test]
    fn validate_accepts_convex_and_rejects_inflected() {
        assert!(burgers2().validate(-1.0, 1.0).is_ok());
        // The cubic is convex only for u ≥ 0; a positive hull (with its 10%
        // margin still positive) passes, a sign-straddling hull does not.
        assert!(cubic2().validate(0.5, 2.0).is_ok());
        assert!(matches!(cubic2().validate(-2.0, 2.0), Err(FluxError::NotConvex { .. })));
        // A1 = u³/3 has A1'' = 2u, which changes sign on any hull containing 0.
        let bad = FluxField::custom(Polynomial::new(vec![0.0, 0.0, 0.0, 1.0 / 3.0]), vec![])
            .unwrap();
        assert!(matches!(bad.validate(-1.0, 1.0), Err(FluxError::NotConvex { .. })));
    }

    #[test]
    fn polynomial_basics() {
        let p = Polynomial::new(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
        let d = p.derivative();
        assert_eq!(d.coeffs(), &[-2.0, 6.0]);
        // Trailing zeros are trimmed and the zero polynomial survives.
        assert_eq!(Polynomial::new(vec![0.0, 0.0]).degree(), 0);
        assert_eq!(Polynomial::new(vec![]).eval(5.0), 0.0);
    }
}
