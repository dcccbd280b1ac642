//! Discretization of the slab Ω = [−L, L] × T^{N−1} (torus circumference 1)
//! with second-order differential operators and quadrature.
//!
//! The x₁ direction is truncated and non-periodic; transverse directions wrap.
//! Fields are stored row-major with x₁ slowest, so each x₁ slice is a
//! contiguous block of `n_perp^{N−1}` values. Operators are pure: inputs are
//! immutable and outputs freshly allocated. The time stepper keeps its own
//! fused loops for speed; these implementations are the readable reference the
//! functionals and tests build on.

use std::io::{BufRead, Read as _, Write as _};
use std::path::Path;

use thiserror::Error;

/// Grid construction and field-shape errors.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("dim must be 2 or 3, got {0}")]
    BadDim(usize),
    #[error("half-length must be positive, got {0}")]
    BadLength(f64),
    #[error("resolution too coarse: need n1 >= 16 and n_perp >= 8, got n1 = {n1}, n_perp = {n_perp}")]
    TooCoarse { n1: usize, n_perp: usize },
    #[error("value buffer has length {got}, grid needs {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("vector field components live on different grids")]
    GridMismatch,
    #[error("field contains a non-finite value at node {0}")]
    NonFinite(usize),
    #[error("unreadable snapshot header: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Truncated-slab grid: `n1` nodes spanning `[−L, L]` (spacing `2L/(n1−1)`)
/// and `n_perp` nodes per transverse direction (spacing `1/n_perp`, periodic,
/// endpoint not duplicated).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    l: f64,
    n1: usize,
    n_perp: usize,
    dx1: f64,
    dx_perp: f64,
}

/// Ghost-value convention for the x₁ ends of second-difference stencils.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum X1Boundary {
    /// Ghost nodes hold the far-field states themselves (constant extension
    /// to `left` beyond `−L` and `right` beyond `+L`).
    Dirichlet { left: f64, right: f64 },
    /// Ghost nodes mirror the first interior node, enforcing zero normal
    /// derivative at `±L`.
    NeumannMirror,
}

impl Grid {
    /// Builds a grid, enforcing `dim ∈ {2,3}`, `L > 0`, `n1 ≥ 16`, `n_perp ≥ 8`.
    pub fn new(dim: usize, l: f64, n1: usize, n_perp: usize) -> Result<Self, GridError> {
        if dim != 2 && dim != 3 {
            return Err(GridError::BadDim(dim));
        }
        if !(l > 0.0) {
            return Err(GridError::BadLength(l));
        }
        if n1 < 16 || n_perp < 8 {
            return Err(GridError::TooCoarse { n1, n_perp });
        }
        Ok(Grid {
            dim,
            l,
            n1,
            n_perp,
            dx1: 2.0 * l / (n1 - 1) as f64,
            dx_perp: 1.0 / n_perp as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Truncation half-length L.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n_perp(&self) -> usize {
        self.n_perp
    }

    pub fn dx1(&self) -> f64 {
        self.dx1
    }

    pub fn dx_perp(&self) -> f64 {
        self.dx_perp
    }

    /// Nodes per x₁ slice: `n_perp^{dim−1}`.
    pub fn n_transverse(&self) -> usize {
        self.n_perp.pow(self.dim as u32 - 1)
    }

    /// Total node count.
    pub fn n_nodes(&self) -> usize {
        self.n1 * self.n_transverse()
    }

    /// Coordinate of x₁ node `i`: `−L + i·dx1`.
    pub fn x1(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.dx1
    }

    /// Coordinate of transverse node `j` in any periodic direction.
    pub fn x_perp(&self, j: usize) -> f64 {
        j as f64 * self.dx_perp
    }

    /// Trapezoid weight of x₁ node `i` (dx1, halved at the ends).
    pub fn x1_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n1 - 1 {
            0.5 * self.dx1
        } else {
            self.dx1
        }
    }

    /// Measure carried by one node of an x₁ slice: `dx_perp^{dim−1}`.
    pub fn transverse_cell(&self) -> f64 {
        self.dx_perp.powi(self.dim as i32 - 1)
    }

    /// Linear index of (x₁ node, transverse node).
    #[inline]
    pub fn idx(&self, i1: usize, it: usize) -> usize {
        i1 * self.n_transverse() + it
    }

    /// Loop bounds (outer, size, inner) so that nodes along `axis` sit at
    /// `o·size·inner + k·inner + i` for `o < outer`, `k < size`, `i < inner`.
    fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        match (self.dim, axis) {
            (_, 0) => (1, self.n1, self.n_transverse()),
            (2, 1) => (self.n1, self.n_perp, 1),
            (3, 1) => (self.n1, self.n_perp, self.n_perp),
            (3, 2) => (self.n1 * self.n_perp, self.n_perp, 1),
            _ => unreachable!("axis {axis} out of range for dim {}", self.dim),
        }
    }

    /// Node spacing along `axis`.
    fn axis_dx(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.dx1
        } else {
            self.dx_perp
        }
    }
}

/// A scalar sample on every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

/// One scalar component per spatial direction, all on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.n_nodes()] }
    }

    /// Samples `f(x₁, x′)` at every node; `x′` has `dim − 1` entries.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        let mut xp = [0.0f64; 2];
        for i1 in 0..grid.n1 {
            let x1 = grid.x1(i1);
            if grid.dim == 2 {
                for j in 0..grid.n_perp {
                    xp[0] = grid.x_perp(j);
                    values.push(f(x1, &xp[..1]));
                }
            } else {
                for j in 0..grid.n_perp {
                    xp[0] = grid.x_perp(j);
                    for k in 0..grid.n_perp {
                        xp[1] = grid.x_perp(k);
                        values.push(f(x1, &xp[..2]));
                    }
                }
            }
        }
        ScalarField { grid: grid.clone(), values }
    }

    /// Wraps an existing buffer, checking length and finiteness.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_nodes() {
            return Err(GridError::LengthMismatch { got: values.len(), want: grid.n_nodes() });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(bad));
        }
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Largest absolute value on the grid.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// First derivative along `axis`: second-order central stencils, periodic
    /// wrap in transverse directions, one-sided second-order stencils at the
    /// x₁ ends.
    pub fn deriv(&self, axis: usize) -> ScalarField {
        let g = &self.grid;
        let (outer, size, inner) = g.axis_layout(axis);
        let inv2dx = 1.0 / (2.0 * g.axis_dx(axis));
        let f = &self.values;
        let mut out = vec![0.0; f.len()];
        let block = size * inner;
        for o in 0..outer {
            let base = o * block;
            if axis == 0 {
                for i in 0..inner {
                    out[base + i] =
                        (-3.0 * f[base + i] + 4.0 * f[base + inner + i] - f[base + 2 * inner + i])
                            * inv2dx;
                    let top = base + (size - 1) * inner;
                    out[top + i] = (3.0 * f[top + i] - 4.0 * f[top - inner + i]
                        + f[top - 2 * inner + i])
                        * inv2dx;
                }
                for k in 1..size - 1 {
                    let row = base + k * inner;
                    for i in 0..inner {
                        out[row + i] = (f[row + inner + i] - f[row - inner + i]) * inv2dx;
                    }
                }
            } else {
                for k in 0..size {
                    let up = base + ((k + 1) % size) * inner;
                    let dn = base + ((k + size - 1) % size) * inner;
                    let row = base + k * inner;
                    for i in 0..inner {
                        out[row + i] = (f[up + i] - f[dn + i]) * inv2dx;
                    }
                }
            }
        }
        ScalarField { grid: g.clone(), values: out }
    }

    /// Gradient: one component per direction, stencils as in [`Self::deriv`].
    pub fn gradient(&self) -> VectorField {
        VectorField { components: (0..self.grid.dim).map(|ax| self.deriv(ax)).collect() }
    }

    /// (2N+1)-point Laplacian; transverse directions wrap, x₁ ends take ghost
    /// values from `bc`.
    pub fn laplacian(&self, bc: X1Boundary) -> ScalarField {
        let g = &self.grid;
        let f = &self.values;
        let mut out = vec![0.0; f.len()];
        for axis in 0..g.dim {
            let (outer, size, inner) = g.axis_layout(axis);
            let inv_dx2 = 1.0 / (g.axis_dx(axis) * g.axis_dx(axis));
            let block = size * inner;
            for o in 0..outer {
                let base = o * block;
                if axis == 0 {
                    for i in 0..inner {
                        let (gl, gr) = match bc {
                            X1Boundary::Dirichlet { left, right } => (left, right),
                            X1Boundary::NeumannMirror => {
                                (f[base + inner + i], f[base + (size - 2) * inner + i])
                            }
                        };
                        out[base + i] +=
                            (gl - 2.0 * f[base + i] + f[base + inner + i]) * inv_dx2;
                        let top = base + (size - 1) * inner;
                        out[top + i] += (f[top - inner + i] - 2.0 * f[top + i] + gr) * inv_dx2;
                    }
                    for k in 1..size - 1 {
                        let row = base + k * inner;
                        for i in 0..inner {
                            out[row + i] += (f[row + inner + i] - 2.0 * f[row + i]
                                + f[row - inner + i])
                                * inv_dx2;
                        }
                    }
                } else {
                    for k in 0..size {
                        let up = base + ((k + 1) % size) * inner;
                        let dn = base + ((k + size - 1) % size) * inner;
                        let row = base + k * inner;
                        for i in 0..inner {
                            out[row + i] +=
                                (f[up + i] - 2.0 * f[row + i] + f[dn + i]) * inv_dx2;
                        }
                    }
                }
            }
        }
        ScalarField { grid: g.clone(), values: out }
    }

    /// Trapezoid rule in x₁ times rectangle rule in the periodic directions
    /// (the rectangle rule is the natural exact quadrature on the torus).
    pub fn integrate(&self) -> f64 {
        let g = &self.grid;
        let nt = g.n_transverse();
        let cell = g.transverse_cell();
        let mut total = 0.0;
        for i1 in 0..g.n1 {
            let row = &self.values[i1 * nt..(i1 + 1) * nt];
            let s: f64 = row.iter().sum();
            total += g.x1_weight(i1) * s;
        }
        total * cell
    }

    /// `∫ f(x)·weight(x₁ + shift) dx` with the weight sampled at the nodes.
    pub fn weighted_integrate(&self, weight: impl Fn(f64) -> f64, shift: f64) -> f64 {
        let g = &self.grid;
        let nt = g.n_transverse();
        let cell = g.transverse_cell();
        let mut total = 0.0;
        for i1 in 0..g.n1 {
            let w = weight(g.x1(i1) + shift);
            if w == 0.0 {
                continue;
            }
            let row = &self.values[i1 * nt..(i1 + 1) * nt];
            let s: f64 = row.iter().sum();
            total += g.x1_weight(i1) * w * s;
        }
        total * cell
    }

    /// Writes a flat little-endian binary snapshot: one ASCII header line with
    /// the dimensions, then the raw values.
    pub fn write_binary(&self, path: &Path) -> Result<(), GridError> {
        let g = &self.grid;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "field dim={} n1={} n_perp={} l={:.17e}", g.dim, g.n1, g.n_perp, g.l)?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`Self::write_binary`].
    pub fn read_binary(path: &Path) -> Result<Self, GridError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut dim = 0usize;
        let mut n1 = 0usize;
        let mut n_perp = 0usize;
        let mut l = 0.0f64;
        for token in header.split_whitespace().skip(1) {
            let (key, val) = token
                .split_once('=')
                .ok_or_else(|| GridError::BadSnapshot(format!("bad token {token:?}")))?;
            match key {
                "dim" => dim = val.parse().map_err(|e| GridError::BadSnapshot(format!("{e}")))?,
                "n1" => n1 = val.parse().map_err(|e| GridError::BadSnapshot(format!("{e}")))?,
                "n_perp" => {
                    n_perp = val.parse().map_err(|e| GridError::BadSnapshot(format!("{e}")))?
                }
                "l" => l = val.parse().map_err(|e| GridError::BadSnapshot(format!("{e}")))?,
                other => return Err(GridError::BadSnapshot(format!("unknown key {other:?}"))),
            }
        }
        let grid = Grid::new(dim, l, n1, n_perp)?;
        let mut buf = vec![0u8; grid.n_nodes() * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ScalarField::from_values(&grid, values)
    }

    /// Writes nodes as CSV rows `x1,x2[,x3],value`; intended for small grids.
    pub fn write_csv(&self, path: &Path) -> Result<(), GridError> {
        let g = &self.grid;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if g.dim == 2 {
            writeln!(f, "x1,x2,value")?;
        } else {
            writeln!(f, "x1,x2,x3,value")?;
        }
        let nt = g.n_transverse();
        for (idx, v) in self.values.iter().enumerate() {
            let i1 = idx / nt;
            let it = idx % nt;
            if g.dim == 2 {
                writeln!(f, "{:.17e},{:.17e},{:.17e}", g.x1(i1), g.x_perp(it), v)?;
            } else {
                let j = it / g.n_perp;
                let k = it % g.n_perp;
                writeln!(
                    f,
                    "{:.17e},{:.17e},{:.17e},{:.17e}",
                    g.x1(i1),
                    g.x_perp(j),
                    g.x_perp(k),
                    v
                )?;
            }
        }
        Ok(())
    }
}

impl VectorField {
    /// Bundles components, requiring a shared grid and one component per
    /// direction.
    pub fn new(components: Vec<ScalarField>) -> Result<Self, GridError> {
        let dim = components.first().map(|c| c.grid.dim).unwrap_or(0);
        if components.len() != dim {
            return Err(GridError::GridMismatch);
        }
        if components.windows(2).any(|w| w[0].grid != w[1].grid) {
            return Err(GridError::GridMismatch);
        }
        Ok(VectorField { components })
    }

    pub fn component(&self, d: usize) -> &ScalarField {
        &self.components[d]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    /// Mutable access to the component fields; the shared grid stays fixed
    /// because [`ScalarField`] never exposes its grid mutably.
    pub fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.components
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    /// Sum of directional derivatives of the components (central stencils,
    /// matching [`ScalarField::deriv`]).
    pub fn divergence(&self) -> ScalarField {
        let mut out = self.components[0].deriv(0);
        for (ax, c) in self.components.iter().enumerate().skip(1) {
            let d = c.deriv(ax);
            for (o, v) in out.values.iter_mut().zip(&d.values) {
                *o += v;
            }
        }
        out
    }
}
