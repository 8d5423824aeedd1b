//! Rectangular node grid and the field containers living on it.
//!
//! Nodes are `(i, j)` with `0 <= i <= nx`, `0 <= j <= ny`, stored row-major
//! with `j` as the outer index. Multi-component fields are stored
//! component-major: component `c` occupies `data[c*n .. (c+1)*n]` where
//! `n = (nx+1)(ny+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Tensor-product node grid on `[0, lx] x [0, ly]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(Error::Structural(format!(
                "grid needs at least 8 cells per direction, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Structural(format!(
                "domain lengths must be positive, got {lx}x{ly}"
            )));
        }
        Ok(Grid { nx, ny, lx, ly })
    }

    /// Unit square with `n x n` cells.
    pub fn unit(n: usize) -> Result<Self> {
        Grid::new(n, n, 1.0, 1.0)
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Nodes per row.
    #[inline]
    pub fn row_len(&self) -> usize {
        self.nx + 1
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.ny + 1
    }

    #[inline]
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Trapezoid weight of one axis position (1, or 1/2 at the ends).
    #[inline]
    pub(crate) fn edge_factor(k: usize, n: usize) -> f64 {
        if k == 0 || k == n {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoid quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.hx() * self.hy() * Self::edge_factor(i, self.nx) * Self::edge_factor(j, self.ny)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::Structural(format!(
                "grid mismatch: {}x{} on {}x{} vs {}x{} on {}x{}",
                self.nx, self.ny, self.lx, self.ly, other.nx, other.ny, other.lx, other.ly
            )));
        }
        Ok(())
    }
}

/// Boundary rule carried by a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bc {
    /// Values pinned to zero on the boundary (v, F and their duals).
    DirichletZero,
    /// Zero normal derivative (M, H, pressure-like potentials).
    NeumannZero,
    /// No boundary rule; difference operators fall back to one-sided stencils.
    None,
}

impl Bc {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bc::DirichletZero => "dirichlet_zero",
            Bc::NeumannZero => "neumann_zero",
            Bc::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Bc> {
        match s {
            "dirichlet_zero" => Some(Bc::DirichletZero),
            "neumann_zero" => Some(Bc::NeumannZero),
            "none" => Some(Bc::None),
            _ => None,
        }
    }
}

/// A `C`-component grid function.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<const C: usize> {
    grid: Grid,
    bc: Bc,
    data: Vec<f64>,
}

pub type ScalarField = Field<1>;
pub type Vector2Field = Field<2>;
pub type Vector3Field = Field<3>;
/// Row-major 2x2 tensor: components `[F11, F12, F21, F22]`.
pub type Tensor22Field = Field<4>;

impl<const C: usize> Field<C> {
    pub fn zeros(grid: Grid, bc: Bc) -> Self {
        Field {
            grid,
            bc,
            data: vec![0.0; C * grid.len()],
        }
    }

    /// Spatially constant field. Dirichlet fields keep zero boundary values.
    pub fn uniform(grid: Grid, bc: Bc, value: [f64; C]) -> Self {
        Self::from_fn(grid, bc, |_, _| value)
    }

    /// Samples `f(x, y)` at every node; Dirichlet fields are zeroed on the
    /// boundary afterwards.
    pub fn from_fn(grid: Grid, bc: Bc, f: impl Fn(f64, f64) -> [f64; C]) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; C * n];
        for j in 0..grid.rows() {
            for i in 0..grid.row_len() {
                let k = grid.idx(i, j);
                let v = f(grid.x(i), grid.y(j));
                for c in 0..C {
                    data[c * n + k] = v[c];
                }
            }
        }
        let mut out = Field { grid, bc, data };
        out.enforce_bc();
        out
    }

    pub fn from_data(grid: Grid, bc: Bc, data: Vec<f64>) -> Result<Self> {
        if data.len() != C * grid.len() {
            return Err(Error::Structural(format!(
                "expected {} values for a {}-component field, got {}",
                C * grid.len(),
                C,
                data.len()
            )));
        }
        Ok(Field { grid, bc, data })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn bc(&self) -> Bc {
        self.bc
    }

    pub fn with_bc(mut self, bc: Bc) -> Self {
        self.bc = bc;
        self.enforce_bc();
        self
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Value of all components at node `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> [f64; C] {
        let k = self.grid.idx(i, j);
        let n = self.grid.len();
        std::array::from_fn(|c| self.data[c * n + k])
    }

    pub fn set(&mut self, i: usize, j: usize, v: [f64; C]) {
        let k = self.grid.idx(i, j);
        let n = self.grid.len();
        for c in 0..C {
            self.data[c * n + k] = v[c];
        }
    }

    /// Zeroes boundary values of Dirichlet fields; no-op otherwise.
    pub fn enforce_bc(&mut self) {
        if self.bc == Bc::DirichletZero {
            let g = self.grid;
            for c in 0..C {
                zero_boundary(&g, self.comp_mut(c));
            }
        }
    }

    pub fn check_compatible<const D: usize>(&self, other: &Field<D>) -> Result<()> {
        self.grid.check_same(&other.grid)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Field<C>) {
        debug_assert_eq!(self.grid, x.grid);
        self.data
            .iter_mut()
            .zip(&x.data)
            .for_each(|(s, xv)| *s += a * xv);
    }

    pub fn add(&self, other: &Field<C>) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Field<C>) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Nodewise map over the component vector.
    pub fn map_nodes(&self, f: impl Fn([f64; C]) -> [f64; C]) -> Self {
        let n = self.grid.len();
        let mut out = self.clone();
        for k in 0..n {
            let v: [f64; C] = std::array::from_fn(|c| self.data[c * n + k]);
            let r = f(v);
            for c in 0..C {
                out.data[c * n + k] = r[c];
            }
        }
        out
    }
}

pub(crate) fn zero_boundary(g: &Grid, a: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    for i in 0..=nx {
        a[g.idx(i, 0)] = 0.0;
        a[g.idx(i, ny)] = 0.0;
    }
    for j in 0..=ny {
        a[g.idx(0, j)] = 0.0;
        a[g.idx(nx, j)] = 0.0;
    }
}

/// Weighted inner product of two scalar planes.
pub(crate) fn dot_plane(g: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let (hx, hy) = (g.hx(), g.hy());
    let rl = g.row_len();
    par::sum_rows(g.rows(), rl, |j| {
        let base = j * rl;
        let mut s = 0.0;
        // interior of the row, then the two half-weight ends
        for i in 1..g.nx {
            s += a[base + i] * b[base + i];
        }
        s += 0.5 * (a[base] * b[base] + a[base + g.nx] * b[base + g.nx]);
        s * Grid::edge_factor(j, g.ny)
    }) * hx
        * hy
}

/// Weighted mean of a scalar plane.
pub(crate) fn mean_plane(g: &Grid, a: &[f64]) -> f64 {
    let ones = vec![1.0; g.len()];
    dot_plane(g, a, &ones) / g.area()
}

/// Trapezoid-weighted `∫ a·b` summed over components.
pub fn inner_l2<const C: usize>(a: &Field<C>, b: &Field<C>) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(dot(a, b))
}

/// Unchecked variant of [`inner_l2`] for internal hot paths.
pub(crate) fn dot<const C: usize>(a: &Field<C>, b: &Field<C>) -> f64 {
    (0..C).map(|c| dot_plane(&a.grid, a.comp(c), b.comp(c))).sum()
}

pub fn norm_l2<const C: usize>(a: &Field<C>) -> f64 {
    dot(a, a).sqrt()
}

/// Squared discrete Dirichlet energy `∫|∇f|²`, summed over edges with
/// half weight on edges running along the boundary. Equals
/// `<f, -Δ_N f>` for the five-point Neumann Laplacian.
pub(crate) fn grad_seminorm_sq_plane(g: &Grid, a: &[f64]) -> f64 {
    let (hx, hy) = (g.hx(), g.hy());
    let rl = g.row_len();
    let ex = par::sum_rows(g.rows(), rl, |j| {
        let base = j * rl;
        let mut s = 0.0;
        for i in 0..g.nx {
            let d = a[base + i + 1] - a[base + i];
            s += d * d;
        }
        s * Grid::edge_factor(j, g.ny)
    });
    let ey = par::sum_rows(g.ny, rl, |j| {
        let (b0, b1) = (j * rl, (j + 1) * rl);
        let mut s = 0.0;
        for i in 0..=g.nx {
            let d = a[b1 + i] - a[b0 + i];
            s += d * d * Grid::edge_factor(i, g.nx);
        }
        s
    });
    ex * hy / hx + ey * hx / hy
}

pub fn grad_seminorm_sq<const C: usize>(a: &Field<C>) -> f64 {
    (0..C)
        .map(|c| grad_seminorm_sq_plane(&a.grid, a.comp(c)))
        .sum()
}

/// `‖f‖_{H¹}` with the edge-based gradient term.
pub fn norm_h1<const C: usize>(a: &Field<C>) -> f64 {
    (dot(a, a) + grad_seminorm_sq(a)).sqrt()
}

/// `‖f‖_{H²}`: adds `‖Δf‖²` using the field's boundary rule (interior
/// nodes only when the field has none).
pub fn norm_h2<const C: usize>(a: &Field<C>) -> f64 {
    let lap = crate::stencil::laplacian_any(a);
    (dot(a, a) + grad_seminorm_sq(a) + dot(&lap, &lap)).sqrt()
}

/// `‖f‖_{H³}` surrogate: adds the gradient energy of `Δf`.
pub fn norm_h3<const C: usize>(a: &Field<C>) -> f64 {
    let lap = crate::stencil::laplacian_any(a);
    (dot(a, a) + grad_seminorm_sq(a) + dot(&lap, &lap) + grad_seminorm_sq(&lap)).sqrt()
}
