//! Fused stencil kernels for the time stepper.
//!
//! These loops are the hot path: every simulation step makes two
//! right-hand-side sweeps and two cache-refresh sweeps over the grid. They are
//! monomorphized over a small flux-evaluation trait so the Burgers case
//! compiles to straight-line arithmetic, and they take raw slices plus
//! caller-owned scratch so a step performs no allocation.
//!
//! The 2-d sweeps are written for single-core throughput: rows are cut into
//! exact-length subslices so index checks vanish, the periodic wrap is peeled
//! out of the inner loops, and running maxima/minima are kept in four
//! independent lanes so one long dependency chain of `max`/`min` operations
//! does not serialize the sweep. Per-node arithmetic is kept in the exact
//! same expression shape everywhere a quantity is computed twice (the
//! well-balancing residual relies on bitwise agreement between the
//! single-column and the full-grid sweep).
//!
//! Layout contract (from [`crate::grid`]): row-major, x₁ slowest; for `dim = 3`
//! each x₁ slice is an `n_perp × n_perp` block with the last axis contiguous.

use crate::flux::{FluxField, KernelPoly};
use crate::profile::ShockProfile;

/// Pointwise flux evaluation, monomorphized per flux family.
pub(crate) trait FluxEval: Copy {
    /// Component `d` of the flux at `u`.
    fn a(&self, d: usize, u: f64) -> f64;
    /// First derivative of component `d` at `u`.
    fn ap(&self, d: usize, u: f64) -> f64;
    /// Drift kernel component `d`: the value of `A_d(v+gap|v)/gap`, smooth
    /// through `gap = 0`.
    fn kernel(&self, d: usize, v: f64, gap: f64) -> f64;
    /// `max |A_d′|` over `[lo, hi]` when a closed form exists. The refresh
    /// sweep uses it to bound the wave speeds of the composed front (whose
    /// values always lie between the end states) without touching every node;
    /// `None` makes the sweep scan nodes instead.
    fn hull_speed(&self, d: usize, lo: f64, hi: f64) -> Option<f64>;
}

/// Burgers flux with linear transverse components: A₁ = u²/2, Aᵢ = u.
#[derive(Clone, Copy)]
pub(crate) struct BurgersEval;

impl FluxEval for BurgersEval {
    #[inline(always)]
    fn a(&self, d: usize, u: f64) -> f64 {
        if d == 0 { 0.5 * u * u } else { u }
    }
    #[inline(always)]
    fn ap(&self, d: usize, u: f64) -> f64 {
        if d == 0 { u } else { 1.0 }
    }
    #[inline(always)]
    fn kernel(&self, d: usize, _v: f64, gap: f64) -> f64 {
        if d == 0 { 0.5 * gap } else { 0.0 }
    }
    #[inline(always)]
    fn hull_speed(&self, d: usize, lo: f64, hi: f64) -> Option<f64> {
        // |A₁′| = |u| peaks at an interval end; transverse speeds are 1.
        Some(if d == 0 { lo.abs().max(hi.abs()) } else { 1.0 })
    }
}

/// Polynomial flux tables borrowed from a [`FluxField`]; used for every
/// non-Burgers family.
#[derive(Clone, Copy)]
pub(crate) struct PolyEval<'a> {
    comps: &'a [Vec<f64>],
    derivs: &'a [Vec<f64>],
    kernels: &'a [KernelPoly],
}

/// Owned backing storage for [`PolyEval`].
pub(crate) struct PolyTabs {
    comps: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    kernels: Vec<KernelPoly>,
}

impl PolyTabs {
    pub(crate) fn new(flux: &FluxField) -> Self {
        let n = flux.n_components();
        let comps = (0..n).map(|d| flux.components()[d].coeffs().to_vec()).collect();
        let derivs = (0..n).map(|d| flux.component_derivs(d)[0].coeffs().to_vec()).collect();
        let kernels =
            (0..n).map(|d| KernelPoly::from_polynomial(&flux.components()[d])).collect();
        PolyTabs { comps, derivs, kernels }
    }

    pub(crate) fn eval(&self) -> PolyEval<'_> {
        PolyEval { comps: &self.comps, derivs: &self.derivs, kernels: &self.kernels }
    }
}

#[inline(always)]
fn horner(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * u + c;
    }
    acc
}

impl FluxEval for PolyEval<'_> {
    #[inline(always)]
    fn a(&self, d: usize, u: f64) -> f64 {
        horner(&self.comps[d], u)
    }
    #[inline(always)]
    fn ap(&self, d: usize, u: f64) -> f64 {
        horner(&self.derivs[d], u)
    }
    #[inline(always)]
    fn kernel(&self, d: usize, v: f64, gap: f64) -> f64 {
        self.kernels[d].eval(v, gap)
    }
    #[inline(always)]
    fn hull_speed(&self, _d: usize, _lo: f64, _hi: f64) -> Option<f64> {
        // General polynomial derivatives peak anywhere; scan nodes.
        None
    }
}

/// `max |A_d′(u)|` over the flux directions at one value.
#[inline(always)]
fn node_speed<F: FluxEval>(fx: F, dim: usize, u: f64) -> f64 {
    let mut s = fx.ap(0, u).abs();
    for d in 1..dim {
        s = s.max(fx.ap(d, u).abs());
    }
    s
}

/// Folds `max(lanes, |vals|)` elementwise into four independent lanes.
#[inline(always)]
fn lane_max_abs(vals: &[f64], lanes: &mut [f64; 4]) {
    let mut chunks = vals.chunks_exact(4);
    for c in &mut chunks {
        lanes[0] = lanes[0].max(c[0].abs());
        lanes[1] = lanes[1].max(c[1].abs());
        lanes[2] = lanes[2].max(c[2].abs());
        lanes[3] = lanes[3].max(c[3].abs());
    }
    for (l, &v) in chunks.remainder().iter().enumerate() {
        lanes[l] = lanes[l].max(v.abs());
    }
}

/// Folds `max(lanes, node_speed(vals))` into four independent lanes.
#[inline(always)]
fn lane_max_speed<F: FluxEval>(fx: F, dim: usize, vals: &[f64], lanes: &mut [f64; 4]) {
    let mut chunks = vals.chunks_exact(4);
    for c in &mut chunks {
        lanes[0] = lanes[0].max(node_speed(fx, dim, c[0]));
        lanes[1] = lanes[1].max(node_speed(fx, dim, c[1]));
        lanes[2] = lanes[2].max(node_speed(fx, dim, c[2]));
        lanes[3] = lanes[3].max(node_speed(fx, dim, c[3]));
    }
    for (l, &v) in chunks.remainder().iter().enumerate() {
        lanes[l] = lanes[l].max(node_speed(fx, dim, v));
    }
}

#[inline(always)]
fn merge_max(lanes: [f64; 4]) -> f64 {
    lanes[0].max(lanes[1]).max(lanes[2]).max(lanes[3])
}

/// Local Lax–Friedrichs numerical flux for direction `d` at the face between
/// states `ul` (lower index) and `ur`.
#[inline(always)]
fn llf_face<F: FluxEval>(fx: F, d: usize, ul: f64, ur: f64) -> f64 {
    let alpha = fx.ap(d, ul).abs().max(fx.ap(d, ur).abs());
    0.5 * (fx.a(d, ul) + fx.a(d, ur)) - 0.5 * alpha * (ur - ul)
}

/// An x₁ neighbor row: either a real slice or a constant ghost state.
trait XRow: Copy {
    fn get(&self, j: usize) -> f64;
}

#[derive(Clone, Copy)]
struct SliceRow<'a>(&'a [f64]);
impl XRow for SliceRow<'_> {
    #[inline(always)]
    fn get(&self, j: usize) -> f64 {
        self.0[j]
    }
}

#[derive(Clone, Copy)]
struct GhostRow(f64);
impl XRow for GhostRow {
    #[inline(always)]
    fn get(&self, _j: usize) -> f64 {
        self.0
    }
}

/// Geometry and scratch shared by the kernels. `face` and `tface` must each
/// hold one value per transverse node of a 2-d grid (unused in 3-d).
pub(crate) struct UStencil<'a> {
    pub n1: usize,
    pub n_perp: usize,
    pub dim: usize,
    pub dx1: f64,
    pub dx_perp: f64,
    pub ghost_left: f64,
    pub ghost_right: f64,
    pub rho: Option<&'a [f64]>,
    pub face: &'a mut [f64],
    pub tface: &'a mut [f64],
}

/// Right side of the conservation-law step: `Δu − div F_llf(u) − ϱ` with
/// Dirichlet far-field ghosts in x₁ and periodic transverse directions.
/// `ϱ` (one value per x₁ slice) is the caller's well-balancing row.
pub(crate) fn rhs_u<F: FluxEval>(fx: F, st: &mut UStencil<'_>, u: &[f64], out: &mut [f64]) {
    if st.dim == 2 {
        rhs_u_2d(fx, st, u, out)
    } else {
        rhs_u_3d(fx, st, u, out)
    }
}

struct RowGeom {
    inv_dx1: f64,
    inv_dx1_2: f64,
    inv_dxp: f64,
    inv_dxp_2: f64,
}

/// One node of the conservation-law stencil. Returns `(rhs, upper x₁ face
/// flux)`; a plain function (not a closure) so the row loops fully inline
/// and vectorize.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn u_node<F: FluxEval>(
    fx: F,
    uc: f64,
    u_dn: f64,
    u_up: f64,
    u_prev: f64,
    u_next: f64,
    f_dn: f64,
    f_prev: f64,
    f_next: f64,
    rho_i: f64,
    g: &RowGeom,
) -> (f64, f64) {
    let fx_up = llf_face(fx, 0, uc, u_up);
    let div = (fx_up - f_dn) * g.inv_dx1 + (f_next - f_prev) * g.inv_dxp;
    let lap =
        (u_dn - 2.0 * uc + u_up) * g.inv_dx1_2 + (u_prev - 2.0 * uc + u_next) * g.inv_dxp_2;
    (lap - div - rho_i, fx_up)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn u_row_core<F: FluxEval, D: XRow, U: XRow>(
    fx: F,
    row: &[f64],
    dn: D,
    up: U,
    face: &mut [f64],
    tface: &[f64],
    out_row: &mut [f64],
    rho_i: f64,
    g: &RowGeom,
) {
    let np = row.len();
    if np == 1 {
        let (o, f) = u_node(
            fx, row[0], dn.get(0), up.get(0), row[0], row[0], face[0], tface[0], tface[0],
            rho_i, g,
        );
        out_row[0] = o;
        face[0] = f;
        return;
    }
    let (o, f) = u_node(
        fx, row[0], dn.get(0), up.get(0), row[np - 1], row[1], face[0], tface[np - 1],
        tface[0], rho_i, g,
    );
    out_row[0] = o;
    face[0] = f;
    for j in 1..np - 1 {
        let (o, f) = u_node(
            fx, row[j], dn.get(j), up.get(j), row[j - 1], row[j + 1], face[j], tface[j - 1],
            tface[j], rho_i, g,
        );
        out_row[j] = o;
        face[j] = f;
    }
    let j = np - 1;
    let (o, f) = u_node(
        fx, row[j], dn.get(j), up.get(j), row[j - 1], row[0], face[j], tface[j - 1], tface[j],
        rho_i, g,
    );
    out_row[j] = o;
    face[j] = f;
}

fn rhs_u_2d<F: FluxEval>(fx: F, st: &mut UStencil<'_>, u: &[f64], out: &mut [f64]) {
    let (n1, np) = (st.n1, st.n_perp);
    let inv_dx1 = 1.0 / st.dx1;
    let inv_dxp = 1.0 / st.dx_perp;
    let g = RowGeom {
        inv_dx1,
        inv_dx1_2: inv_dx1 * inv_dx1,
        inv_dxp,
        inv_dxp_2: inv_dxp * inv_dxp,
    };
    let face = &mut st.face[..np];
    let tface = &mut st.tface[..np];

    // Rolling buffer of x₁-face fluxes; start with the faces against the
    // left ghost slice.
    for j in 0..np {
        face[j] = llf_face(fx, 0, st.ghost_left, u[j]);
    }
    for i1 in 0..n1 {
        let row = &u[i1 * np..(i1 + 1) * np];
        let rho_i = st.rho.map_or(0.0, |r| r[i1]);
        let out_row = &mut out[i1 * np..(i1 + 1) * np];

        // Transverse face fluxes for this row (loads only in the node loop,
        // so nothing carries across iterations).
        for j in 0..np - 1 {
            tface[j] = llf_face(fx, 1, row[j], row[j + 1]);
        }
        tface[np - 1] = llf_face(fx, 1, row[np - 1], row[0]);

        match (i1 > 0, i1 + 1 < n1) {
            (true, true) => u_row_core(
                fx,
                row,
                SliceRow(&u[(i1 - 1) * np..i1 * np]),
                SliceRow(&u[(i1 + 1) * np..(i1 + 2) * np]),
                face,
                tface,
                out_row,
                rho_i,
                &g,
            ),
            (false, true) => u_row_core(
                fx,
                row,
                GhostRow(st.ghost_left),
                SliceRow(&u[(i1 + 1) * np..(i1 + 2) * np]),
                face,
                tface,
                out_row,
                rho_i,
                &g,
            ),
            (true, false) => u_row_core(
                fx,
                row,
                SliceRow(&u[(i1 - 1) * np..i1 * np]),
                GhostRow(st.ghost_right),
                face,
                tface,
                out_row,
                rho_i,
                &g,
            ),
            (false, false) => u_row_core(
                fx,
                row,
                GhostRow(st.ghost_left),
                GhostRow(st.ghost_right),
                face,
                tface,
                out_row,
                rho_i,
                &g,
            ),
        }
    }
}

fn rhs_u_3d<F: FluxEval>(fx: F, st: &mut UStencil<'_>, u: &[f64], out: &mut [f64]) {
    let (n1, np) = (st.n1, st.n_perp);
    let nt = np * np;
    let inv_dx1 = 1.0 / st.dx1;
    let inv_dx1_2 = inv_dx1 * inv_dx1;
    let inv_dxp = 1.0 / st.dx_perp;
    let inv_dxp_2 = inv_dxp * inv_dxp;

    for i1 in 0..n1 {
        let rho_i = st.rho.map_or(0.0, |r| r[i1]);
        for i2 in 0..np {
            for i3 in 0..np {
                let idx = (i1 * np + i2) * np + i3;
                let uc = u[idx];
                let u_dn = if i1 > 0 { u[idx - nt] } else { st.ghost_left };
                let u_up = if i1 + 1 < n1 { u[idx + nt] } else { st.ghost_right };
                let i2m = if i2 > 0 { idx - np } else { idx + (np - 1) * np };
                let i2p = if i2 + 1 < np { idx + np } else { idx - (np - 1) * np };
                let i3m = if i3 > 0 { idx - 1 } else { idx + np - 1 };
                let i3p = if i3 + 1 < np { idx + 1 } else { idx + 1 - np };
                let div = (llf_face(fx, 0, uc, u_up) - llf_face(fx, 0, u_dn, uc)) * inv_dx1
                    + (llf_face(fx, 1, uc, u[i2p]) - llf_face(fx, 1, u[i2m], uc)) * inv_dxp
                    + (llf_face(fx, 2, uc, u[i3p]) - llf_face(fx, 2, u[i3m], uc)) * inv_dxp;
                let lap = (u_dn - 2.0 * uc + u_up) * inv_dx1_2
                    + (u[i2m] - 2.0 * uc + u[i2p]) * inv_dxp_2
                    + (u[i3m] - 2.0 * uc + u[i3p]) * inv_dxp_2;
                out[idx] = lap - div - rho_i;
            }
        }
    }
}

/// Aggregates produced by a cache-refresh sweep.
pub(crate) struct RefreshOut {
    /// max over nodes and directions of |A′(u)|, |A′(V)|, |w|; `0` when the
    /// sweep ran without statistics.
    pub s_max: f64,
    /// Σ(u + Y): finite iff no NaN/∞ anywhere (max-based sups can mask NaN).
    pub poison: f64,
    pub sup_u: f64,
    pub sup_y: f64,
}

/// Inputs/outputs of the refresh sweep: composes `V = U(x₁+Y)`, evaluates the
/// drift field `w = φ·K(u, V)` (unless `WITH_W` is off), and accumulates the
/// per-slice sums the scalar shift quantities are built from.
pub(crate) struct RefreshArgs<'a, 'b> {
    pub phi: f64,
    pub u: &'a [f64],
    pub y: &'a [f64],
    pub v: &'a mut [f64],
    /// One slice per direction; untouched when `WITH_W` is false.
    pub w: &'a mut [&'b mut [f64]],
    /// Per-x₁-slice plain sums of Y, of w₁, and of u−V.
    pub row_y: &'a mut [f64],
    pub row_w1: &'a mut [f64],
    pub row_h: &'a mut [f64],
}

/// `WITH_STATS` controls the wave-speed and sup reductions: the predictor
/// refresh inside a step does not need them (its `dt` is already fixed and
/// divergence is caught by the post-step refresh), and skipping them saves
/// work. The NaN poison sum is always accumulated.
pub(crate) fn refresh<F: FluxEval, const WITH_W: bool, const WITH_STATS: bool>(
    fx: F,
    profile: &ShockProfile,
    n1: usize,
    nt: usize,
    dim: usize,
    x_min: f64,
    dx1: f64,
    args: &mut RefreshArgs<'_, '_>,
) -> RefreshOut {
    if dim == 2 {
        refresh_2d::<F, WITH_W, WITH_STATS>(fx, profile, n1, nt, x_min, dx1, args)
    } else {
        refresh_nd::<F, WITH_W, WITH_STATS>(fx, profile, n1, nt, dim, x_min, dx1, args)
    }
}

/// Single fused pass per row for the 2-d hot path: composes the front, writes
/// both drift rows, and folds every reduction in one sweep so each row is
/// streamed once. Reductions live in four independent lanes.
fn refresh_2d<F: FluxEval, const WITH_W: bool, const WITH_STATS: bool>(
    fx: F,
    profile: &ShockProfile,
    n1: usize,
    nt: usize,
    x_min: f64,
    dx1: f64,
    args: &mut RefreshArgs<'_, '_>,
) -> RefreshOut {
    let phi = args.phi;
    let mut poison = 0.0f64;
    let mut speed_lanes = [0.0f64; 4];
    let mut sup_u_lanes = [0.0f64; 4];
    let mut sup_y_lanes = [0.0f64; 4];

    // Wave speeds of the composed front: its values stay between the end
    // states, so closed-form interval bounds replace a per-node scan when the
    // flux provides them.
    let (lo, hi) = (profile.u_plus(), profile.u_minus());
    let mut hull = 0.0f64;
    let mut scan_v = false;
    if WITH_STATS {
        for d in 0..2 {
            match fx.hull_speed(d, lo, hi) {
                Some(s) => hull = hull.max(s),
                None => scan_v = true,
            }
        }
    }

    // Split the two drift direction rows up front so the node loop can write
    // them alongside the composed front.
    let mut w0_all: &mut [f64] = &mut [];
    let mut w1_all: &mut [f64] = &mut [];
    if WITH_W {
        let (head, rest) = args.w.split_at_mut(1);
        w0_all = &mut *head[0];
        w1_all = &mut *rest[0];
    }

    for i1 in 0..n1 {
        let x1 = x_min + i1 as f64 * dx1;
        let base = i1 * nt;
        let u_row = &args.u[base..base + nt];
        let y_row = &args.y[base..base + nt];
        let v_row = &mut args.v[base..base + nt];
        let mut empty0: [f64; 0] = [];
        let mut empty1: [f64; 0] = [];
        let (w0_row, w1_row): (&mut [f64], &mut [f64]) = if WITH_W {
            (&mut w0_all[base..base + nt], &mut w1_all[base..base + nt])
        } else {
            (&mut empty0, &mut empty1)
        };

        let mut sy_l = [0.0f64; 4];
        let mut sh_l = [0.0f64; 4];
        let mut po_l = [0.0f64; 4];
        let mut sw_l = [0.0f64; 4];

        // One node of the fused sweep; a macro so both the blocked loop and
        // the remainder share the exact same inlined body.
        macro_rules! node {
            ($k:expr, $l:expr) => {{
                let k = $k;
                let l = $l;
                let uc = u_row[k];
                let yc = y_row[k];
                let vc = profile.eval_profile(x1 + yc);
                v_row[k] = vc;
                sy_l[l] += yc;
                sh_l[l] += uc - vc;
                po_l[l] += uc + yc;
                if WITH_W {
                    let gap = uc - vc;
                    let w0 = phi * fx.kernel(0, vc, gap);
                    let w1 = phi * fx.kernel(1, vc, gap);
                    w0_row[k] = w0;
                    w1_row[k] = w1;
                    sw_l[l] += w0;
                    if WITH_STATS {
                        speed_lanes[l] = speed_lanes[l].max(w0.abs()).max(w1.abs());
                    }
                }
                if WITH_STATS {
                    sup_u_lanes[l] = sup_u_lanes[l].max(uc.abs());
                    sup_y_lanes[l] = sup_y_lanes[l].max(yc.abs());
                    speed_lanes[l] = speed_lanes[l].max(node_speed(fx, 2, uc));
                    if scan_v {
                        speed_lanes[l] = speed_lanes[l].max(node_speed(fx, 2, vc));
                    }
                }
            }};
        }

        let mut k = 0;
        while k + 4 <= nt {
            node!(k, 0);
            node!(k + 1, 1);
            node!(k + 2, 2);
            node!(k + 3, 3);
            k += 4;
        }
        while k < nt {
            node!(k, 0);
            k += 1;
        }

        args.row_y[i1] = (sy_l[0] + sy_l[1]) + (sy_l[2] + sy_l[3]);
        args.row_w1[i1] = (sw_l[0] + sw_l[1]) + (sw_l[2] + sw_l[3]);
        args.row_h[i1] = (sh_l[0] + sh_l[1]) + (sh_l[2] + sh_l[3]);
        poison += (po_l[0] + po_l[1]) + (po_l[2] + po_l[3]);
    }

    RefreshOut {
        s_max: merge_max(speed_lanes).max(hull),
        poison,
        sup_u: merge_max(sup_u_lanes),
        sup_y: merge_max(sup_y_lanes),
    }
}

/// Multi-pass refresh for 3-d grids (not performance-critical).
fn refresh_nd<F: FluxEval, const WITH_W: bool, const WITH_STATS: bool>(
    fx: F,
    profile: &ShockProfile,
    n1: usize,
    nt: usize,
    dim: usize,
    x_min: f64,
    dx1: f64,
    args: &mut RefreshArgs<'_, '_>,
) -> RefreshOut {
    let mut poison = 0.0f64;
    let mut speed_lanes = [0.0f64; 4];
    let mut sup_u_lanes = [0.0f64; 4];
    let mut sup_y_lanes = [0.0f64; 4];

    // Wave speeds of the composed front: its values stay between the end
    // states, so closed-form interval bounds replace a per-node scan when the
    // flux provides them.
    let (lo, hi) = (profile.u_plus(), profile.u_minus());
    let mut hull = 0.0f64;
    let mut scan_v = false;
    if WITH_STATS {
        for d in 0..dim {
            match fx.hull_speed(d, lo, hi) {
                Some(s) => hull = hull.max(s),
                None => scan_v = true,
            }
        }
    }

    for i1 in 0..n1 {
        let x1 = x_min + i1 as f64 * dx1;
        let base = i1 * nt;
        let u_row = &args.u[base..base + nt];
        let y_row = &args.y[base..base + nt];
        let v_row = &mut args.v[base..base + nt];

        // Compose the front and collect the per-slice sums. The running sums
        // are split over four lanes so they do not form one serial
        // floating-point dependency chain.
        let mut sy_l = [0.0f64; 4];
        let mut sh_l = [0.0f64; 4];
        let mut po_l = [0.0f64; 4];
        let mut k = 0;
        while k + 4 <= nt {
            for l in 0..4 {
                let uc = u_row[k + l];
                let yc = y_row[k + l];
                let vc = profile.eval_profile(x1 + yc);
                v_row[k + l] = vc;
                sy_l[l] += yc;
                sh_l[l] += uc - vc;
                po_l[l] += uc + yc;
            }
            k += 4;
        }
        while k < nt {
            let uc = u_row[k];
            let yc = y_row[k];
            let vc = profile.eval_profile(x1 + yc);
            v_row[k] = vc;
            sy_l[0] += yc;
            sh_l[0] += uc - vc;
            po_l[0] += uc + yc;
            k += 1;
        }
        let sy = (sy_l[0] + sy_l[1]) + (sy_l[2] + sy_l[3]);
        let sh = (sh_l[0] + sh_l[1]) + (sh_l[2] + sh_l[3]);
        poison += (po_l[0] + po_l[1]) + (po_l[2] + po_l[3]);

        let mut sw = 0.0;
        if WITH_W {
            for d in 0..dim {
                let w_row = &mut args.w[d][base..base + nt];
                if d == 0 {
                    let mut sw_l = [0.0f64; 4];
                    let mut k = 0;
                    while k + 4 <= nt {
                        for l in 0..4 {
                            let wv =
                                args.phi * fx.kernel(0, v_row[k + l], u_row[k + l] - v_row[k + l]);
                            w_row[k + l] = wv;
                            sw_l[l] += wv;
                        }
                        k += 4;
                    }
                    while k < nt {
                        let wv = args.phi * fx.kernel(0, v_row[k], u_row[k] - v_row[k]);
                        w_row[k] = wv;
                        sw_l[0] += wv;
                        k += 1;
                    }
                    sw = (sw_l[0] + sw_l[1]) + (sw_l[2] + sw_l[3]);
                } else {
                    for k in 0..nt {
                        w_row[k] = args.phi * fx.kernel(d, v_row[k], u_row[k] - v_row[k]);
                    }
                }
                if WITH_STATS {
                    lane_max_abs(w_row, &mut speed_lanes);
                }
            }
        }

        if WITH_STATS {
            lane_max_abs(u_row, &mut sup_u_lanes);
            lane_max_abs(y_row, &mut sup_y_lanes);
            lane_max_speed(fx, dim, u_row, &mut speed_lanes);
            if scan_v {
                lane_max_speed(fx, dim, v_row, &mut speed_lanes);
            }
        }

        args.row_y[i1] = sy;
        args.row_w1[i1] = sw;
        args.row_h[i1] = sh;
    }

    RefreshOut {
        s_max: merge_max(speed_lanes).max(hull),
        poison,
        sup_u: merge_max(sup_u_lanes),
        sup_y: merge_max(sup_y_lanes),
    }
}

/// Inputs of the shift-equation sweep. `w`/`psi_row` are read only when
/// `GENERAL` is on; `h_m` and `g` are the current scalar sources.
pub(crate) struct YArgs<'a> {
    pub y: &'a [f64],
    pub v: &'a [f64],
    pub w: &'a [&'a [f64]],
    pub psi_row: &'a [f64],
    pub h_m: f64,
    pub g: f64,
}

/// Right side of the shift equation
/// `∂ₜY = A₁′(V)∂₁Y − Σᵢ Aᵢ′(V)∂ᵢY + A₁′(V)|∇Y|² − w·∇Y + ΔY + sources`,
/// upwinded on the combined advection velocity, with mirror (zero-slope)
/// ghosts at the x₁ ends. Returns the smallest value of `1 + ∂₁Y` seen
/// (the graph fold-over guard).
pub(crate) fn rhs_y<F: FluxEval, const GENERAL: bool>(
    fx: F,
    n1: usize,
    n_perp: usize,
    dim: usize,
    dx1: f64,
    dx_perp: f64,
    args: &YArgs<'_>,
    out: &mut [f64],
) -> f64 {
    if dim == 2 {
        rhs_y_2d::<F, GENERAL>(fx, n1, n_perp, dx1, dx_perp, args, out)
    } else {
        rhs_y_3d::<F, GENERAL>(fx, n1, n_perp, dx1, dx_perp, args, out)
    }
}

/// One node of the shift-equation stencil; a plain function (not a closure)
/// so the row loops fully inline and vectorize. `w0`/`w1` are ignored when
/// `GENERAL` is off (callers pass dummies).
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn y_node<F: FluxEval, const GENERAL: bool>(
    fx: F,
    yc: f64,
    y_dn: f64,
    y_up: f64,
    y_l: f64,
    y_r: f64,
    vc: f64,
    w0: f64,
    w1: f64,
    psi: f64,
    g: &YGeom,
) -> f64 {
    let dm1 = (yc - y_dn) * g.inv_dx1;
    let dp1 = (y_up - yc) * g.inv_dx1;
    let dm2 = (yc - y_l) * g.inv_dxp;
    let dp2 = (y_r - yc) * g.inv_dxp;
    let d1c = 0.5 * (dm1 + dp1);
    let d2c = 0.5 * (dm2 + dp2);

    let a1p = fx.ap(0, vc);
    let c1 = if GENERAL { w0 - a1p } else { -a1p };
    let c2 = if GENERAL { w1 + fx.ap(1, vc) } else { fx.ap(1, vc) };
    let adv = c1.max(0.0) * dm1 + c1.min(0.0) * dp1 + c2.max(0.0) * dm2 + c2.min(0.0) * dp2;

    let quad = a1p * (d1c * d1c + d2c * d2c);
    let lap = (y_dn - 2.0 * yc + y_up) * g.inv_dx1_2 + (y_l - 2.0 * yc + y_r) * g.inv_dxp_2;
    let src = if GENERAL { -(w0 - g.h_m) * psi - g.h_m + g.g } else { 0.0 };
    -adv + quad + lap + src
}

struct YGeom {
    inv_dx1: f64,
    inv_dx1_2: f64,
    inv_dxp: f64,
    inv_dxp_2: f64,
    h_m: f64,
    g: f64,
}

fn rhs_y_2d<F: FluxEval, const GENERAL: bool>(
    fx: F,
    n1: usize,
    np: usize,
    dx1: f64,
    dxp: f64,
    args: &YArgs<'_>,
    out: &mut [f64],
) -> f64 {
    let inv_dx1 = 1.0 / dx1;
    let inv_dxp = 1.0 / dxp;
    let geom = YGeom {
        inv_dx1,
        inv_dx1_2: inv_dx1 * inv_dx1,
        inv_dxp,
        inv_dxp_2: inv_dxp * inv_dxp,
        h_m: args.h_m,
        g: args.g,
    };
    let y = args.y;
    let mut fold_lanes = [f64::INFINITY; 4];

    for i1 in 0..n1 {
        let base = i1 * np;
        // Mirror ghosts: the slice beyond each x₁ end reflects the first
        // interior slice, so the normal derivative vanishes at the ends.
        let dn_off = if i1 > 0 { base - np } else { base + np };
        let up_off = if i1 + 1 < n1 { base + np } else { base - np };
        let row = &y[base..base + np];
        let y_dn = &y[dn_off..dn_off + np];
        let y_up = &y[up_off..up_off + np];
        let v_row = &args.v[base..base + np];
        let (w0_row, w1_row) = if GENERAL {
            (&args.w[0][base..base + np], &args.w[1][base..base + np])
        } else {
            (row, row)
        };
        let psi = if GENERAL { args.psi_row[i1] } else { 0.0 };
        let out_row = &mut out[base..base + np];

        if np == 1 {
            out_row[0] = y_node::<F, GENERAL>(
                fx, row[0], y_dn[0], y_up[0], row[0], row[0], v_row[0], w0_row[0], w1_row[0],
                psi, &geom,
            );
        } else {
            out_row[0] = y_node::<F, GENERAL>(
                fx,
                row[0],
                y_dn[0],
                y_up[0],
                row[np - 1],
                row[1],
                v_row[0],
                w0_row[0],
                w1_row[0],
                psi,
                &geom,
            );
            for j in 1..np - 1 {
                out_row[j] = y_node::<F, GENERAL>(
                    fx,
                    row[j],
                    y_dn[j],
                    y_up[j],
                    row[j - 1],
                    row[j + 1],
                    v_row[j],
                    w0_row[j],
                    w1_row[j],
                    psi,
                    &geom,
                );
            }
            let j = np - 1;
            out_row[j] = y_node::<F, GENERAL>(
                fx,
                row[j],
                y_dn[j],
                y_up[j],
                row[j - 1],
                row[0],
                v_row[j],
                w0_row[j],
                w1_row[j],
                psi,
                &geom,
            );
        }

        // Fold-over guard, reduced separately in four lanes.
        let mut k = 0;
        while k + 4 <= np {
            for l in 0..4 {
                let yc = row[k + l];
                let dm1 = (yc - y_dn[k + l]) * inv_dx1;
                let dp1 = (y_up[k + l] - yc) * inv_dx1;
                fold_lanes[l] = fold_lanes[l].min(1.0 + 0.5 * (dm1 + dp1));
            }
            k += 4;
        }
        while k < np {
            let yc = row[k];
            let dm1 = (yc - y_dn[k]) * inv_dx1;
            let dp1 = (y_up[k] - yc) * inv_dx1;
            fold_lanes[0] = fold_lanes[0].min(1.0 + 0.5 * (dm1 + dp1));
            k += 1;
        }
    }
    fold_lanes[0].min(fold_lanes[1]).min(fold_lanes[2]).min(fold_lanes[3])
}

fn rhs_y_3d<F: FluxEval, const GENERAL: bool>(
    fx: F,
    n1: usize,
    np: usize,
    dx1: f64,
    dxp: f64,
    args: &YArgs<'_>,
    out: &mut [f64],
) -> f64 {
    let nt = np * np;
    let inv_dx1 = 1.0 / dx1;
    let inv_dx1_2 = inv_dx1 * inv_dx1;
    let inv_dxp = 1.0 / dxp;
    let inv_dxp_2 = inv_dxp * inv_dxp;
    let y = args.y;
    let mut fold_min = f64::INFINITY;

    for i1 in 0..n1 {
        let psi = if GENERAL { args.psi_row[i1] } else { 0.0 };
        for i2 in 0..np {
            for i3 in 0..np {
                let idx = (i1 * np + i2) * np + i3;
                let yc = y[idx];
                let y_dn = if i1 > 0 { y[idx - nt] } else { y[idx + nt] };
                let y_up = if i1 + 1 < n1 { y[idx + nt] } else { y[idx - nt] };
                let i2m = if i2 > 0 { idx - np } else { idx + (np - 1) * np };
                let i2p = if i2 + 1 < np { idx + np } else { idx - (np - 1) * np };
                let i3m = if i3 > 0 { idx - 1 } else { idx + np - 1 };
                let i3p = if i3 + 1 < np { idx + 1 } else { idx + 1 - np };
                let vc = args.v[idx];

                let dm1 = (yc - y_dn) * inv_dx1;
                let dp1 = (y_up - yc) * inv_dx1;
                let dm2 = (yc - y[i2m]) * inv_dxp;
                let dp2 = (y[i2p] - yc) * inv_dxp;
                let dm3 = (yc - y[i3m]) * inv_dxp;
                let dp3 = (y[i3p] - yc) * inv_dxp;
                let d1c = 0.5 * (dm1 + dp1);
                let d2c = 0.5 * (dm2 + dp2);
                let d3c = 0.5 * (dm3 + dp3);

                let a1p = fx.ap(0, vc);
                let c1 = if GENERAL { args.w[0][idx] - a1p } else { -a1p };
                let c2 = if GENERAL { args.w[1][idx] + fx.ap(1, vc) } else { fx.ap(1, vc) };
                let c3 = if GENERAL { args.w[2][idx] + fx.ap(2, vc) } else { fx.ap(2, vc) };
                let adv = c1.max(0.0) * dm1
                    + c1.min(0.0) * dp1
                    + c2.max(0.0) * dm2
                    + c2.min(0.0) * dp2
                    + c3.max(0.0) * dm3
                    + c3.min(0.0) * dp3;

                let quad = a1p * (d1c * d1c + d2c * d2c + d3c * d3c);
                let lap = (y_dn - 2.0 * yc + y_up) * inv_dx1_2
                    + (y[i2m] - 2.0 * yc + y[i2p]) * inv_dxp_2
                    + (y[i3m] - 2.0 * yc + y[i3p]) * inv_dxp_2;
                let src = if GENERAL {
                    -(args.w[0][idx] - args.h_m) * psi - args.h_m + args.g
                } else {
                    0.0
                };
                out[idx] = -adv + quad + lap + src;
                fold_min = fold_min.min(1.0 + d1c);
            }
        }
    }
    fold_min
}

/// Right side of one frozen-coefficient (Picard) sweep:
/// `∂ₜY = A₁′(V̄)∂₁Y − Σᵢ Aᵢ′(V̄)∂ᵢY + ΔY + S` where `V̄` and the source field
/// `S` come from the previous iterate and `Y` is the unknown being stepped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rhs_y_linear<F: FluxEval>(
    fx: F,
    n1: usize,
    np: usize,
    dim: usize,
    dx1: f64,
    dxp: f64,
    y: &[f64],
    v_frozen: &[f64],
    source: &[f64],
    out: &mut [f64],
) {
    let nt = np.pow(dim as u32 - 1);
    let inv_dx1 = 1.0 / dx1;
    let inv_dx1_2 = inv_dx1 * inv_dx1;
    let inv_dxp = 1.0 / dxp;
    let inv_dxp_2 = inv_dxp * inv_dxp;
    for i1 in 0..n1 {
        let base = i1 * nt;
        let base_dn = if i1 > 0 { base - nt } else { base + nt };
        let base_up = if i1 + 1 < n1 { base + nt } else { base - nt };
        for k in 0..nt {
            let idx = base + k;
            let yc = y[idx];
            let y_dn = y[base_dn + k];
            let y_up = y[base_up + k];
            let vc = v_frozen[idx];

            let dm1 = (yc - y_dn) * inv_dx1;
            let dp1 = (y_up - yc) * inv_dx1;
            let c1 = -fx.ap(0, vc);
            let mut adv = c1.max(0.0) * dm1 + c1.min(0.0) * dp1;
            let mut lap = (y_dn - 2.0 * yc + y_up) * inv_dx1_2;

            if dim == 2 {
                let kl = if k > 0 { idx - 1 } else { base + nt - 1 };
                let kr = if k + 1 < nt { idx + 1 } else { base };
                let c2 = fx.ap(1, vc);
                let dm2 = (yc - y[kl]) * inv_dxp;
                let dp2 = (y[kr] - yc) * inv_dxp;
                adv += c2.max(0.0) * dm2 + c2.min(0.0) * dp2;
                lap += (y[kl] - 2.0 * yc + y[kr]) * inv_dxp_2;
            } else {
                let i2 = k / np;
                let i3 = k % np;
                let i2m = if i2 > 0 { idx - np } else { idx + (np - 1) * np };
                let i2p = if i2 + 1 < np { idx + np } else { idx - (np - 1) * np };
                let i3m = if i3 > 0 { idx - 1 } else { idx + np - 1 };
                let i3p = if i3 + 1 < np { idx + 1 } else { idx + 1 - np };
                let c2 = fx.ap(1, vc);
                let c3 = fx.ap(2, vc);
                let dm2 = (yc - y[i2m]) * inv_dxp;
                let dp2 = (y[i2p] - yc) * inv_dxp;
                let dm3 = (yc - y[i3m]) * inv_dxp;
                let dp3 = (y[i3p] - yc) * inv_dxp;
                adv += c2.max(0.0) * dm2 + c2.min(0.0) * dp2;
                adv += c3.max(0.0) * dm3 + c3.min(0.0) * dp3;
                lap += (y[i2m] - 2.0 * yc + y[i2p]) * inv_dxp_2;
                lap += (y[i3m] - 2.0 * yc + y[i3p]) * inv_dxp_2;
            }
            out[idx] = -adv + lap + source[idx];
        }
    }
}

/// Central gradient of `y` with mirror x₁ ghosts and periodic wrap, written
/// into per-direction slices; used to build frozen Picard sources.
pub(crate) fn central_gradient(
    n1: usize,
    np: usize,
    dim: usize,
    dx1: f64,
    dxp: f64,
    y: &[f64],
    out: &mut [&mut [f64]],
) {
    let nt = np.pow(dim as u32 - 1);
    let inv_2dx1 = 0.5 / dx1;
    let inv_2dxp = 0.5 / dxp;
    for i1 in 0..n1 {
        let base = i1 * nt;
        let base_dn = if i1 > 0 { base - nt } else { base + nt };
        let base_up = if i1 + 1 < n1 { base + nt } else { base - nt };
        for k in 0..nt {
            let idx = base + k;
            out[0][idx] = (y[base_up + k] - y[base_dn + k]) * inv_2dx1;
            if dim == 2 {
                let kl = if k > 0 { idx - 1 } else { base + nt - 1 };
                let kr = if k + 1 < nt { idx + 1 } else { base };
                out[1][idx] = (y[kr] - y[kl]) * inv_2dxp;
            } else {
                let i2 = k / np;
                let i3 = k % np;
                let i2m = if i2 > 0 { idx - np } else { idx + (np - 1) * np };
                let i2p = if i2 + 1 < np { idx + np } else { idx - (np - 1) * np };
                let i3m = if i3 > 0 { idx - 1 } else { idx + np - 1 };
                let i3p = if i3 + 1 < np { idx + 1 } else { idx + 1 - np };
                out[1][idx] = (y[i2p] - y[i2m]) * inv_2dxp;
                out[2][idx] = (y[i3p] - y[i3m]) * inv_2dxp;
            }
        }
    }
}
