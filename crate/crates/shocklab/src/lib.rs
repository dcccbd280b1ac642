//! Numerical laboratory for viscous planar shocks in multi-dimensional scalar
//! conservation laws.
//!
//! The crate builds travelling-wave (viscous shock) profiles for a strictly
//! convex leading flux, co-evolves a perturbed solution of
//! `∂ₜu + div A(u) = Δu` on the slab `[-L, L] × Tᴺ⁻¹` together with a
//! spatially inhomogeneous shift field `Y(t, x)` driven by a parabolic
//! equation, and measures the quantities that make shock stability a testable
//! statement: the squared distance to the shifted profile, its gradient and
//! projection dissipations, weighted shift norms, and the residuals of the
//! underlying energy identity.
//!
//! Modules:
//! - [`flux`]: polynomial flux fields, relative fluxes, and drift kernels.
//! - [`profile`]: shock profile construction, interpolation, certification.
//! - [`grid`]: slab-with-torus grids, fields, differential operators,
//!   quadrature, snapshot I/O.
//! - [`dynamics`]: coupled explicit time integration of the state and shift,
//!   the homogeneous shift fixed point, and a fixed-point (Picard) solver for
//!   the shift equation.
//! - [`functionals`]: scalar diagnostics and identity residuals.
//! - [`inequalities`]: empirical verifiers for the weighted Poincaré and
//!   pointwise weighted bounds used by the stability argument.
//! - [`harness`]: experiment configuration, orchestration, reporting.
//! - [`rng`]: deterministic seeded random streams.

pub mod dynamics;
pub mod flux;
pub mod functionals;
pub mod grid;
pub mod harness;
pub mod inequalities;
pub mod profile;
pub mod rng;
