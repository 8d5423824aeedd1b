//! Finite-difference operators on node grids.
//!
//! Two families live here. The user-facing operators ([`gradient_scalar`],
//! [`divergence`], [`laplacian`]) honour the field's boundary tag. The
//! plane kernels (`central_*`, `central_*_adj`, `lap_*`) are what the
//! time steppers use: `central_x` evaluates the centred difference on
//! interior nodes only and `central_x_adj` is its exact adjoint with respect
//! to the trapezoid inner product, so every transpose needed by the
//! tangent and adjoint solvers is available without hand-derived boundary
//! terms.

use crate::error::{Error, Result};
use crate::grid::{Bc, Field, Grid, ScalarField, Vector2Field};
use crate::par;

/// Boundary closure for a first derivative at the two ends of an axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Closure {
    /// Second-order one-sided difference.
    OneSided,
    /// Zero (even reflection, homogeneous Neumann data).
    Even,
}

fn closure_for(bc: Bc) -> Closure {
    match bc {
        Bc::NeumannZero => Closure::Even,
        Bc::DirichletZero | Bc::None => Closure::OneSided,
    }
}

fn deriv_x(g: &Grid, src: &[f64], dst: &mut [f64], closure: Closure) {
    let nx = g.nx;
    let h = g.hx();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        let s = &src[j * rl..(j + 1) * rl];
        for i in 1..nx {
            row[i] = (s[i + 1] - s[i - 1]) / (2.0 * h);
        }
        let (lo, hi) = match closure {
            Closure::OneSided => (
                (-3.0 * s[0] + 4.0 * s[1] - s[2]) / (2.0 * h),
                (3.0 * s[nx] - 4.0 * s[nx - 1] + s[nx - 2]) / (2.0 * h),
            ),
            Closure::Even => (0.0, 0.0),
        };
        row[0] = lo;
        row[nx] = hi;
    });
}

fn deriv_y(g: &Grid, src: &[f64], dst: &mut [f64], closure: Closure) {
    let ny = g.ny;
    let h = g.hy();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        let at = |jj: usize| &src[jj * rl..(jj + 1) * rl];
        if j > 0 && j < ny {
            let (dn, up) = (at(j - 1), at(j + 1));
            for i in 0..rl {
                row[i] = (up[i] - dn[i]) / (2.0 * h);
            }
            return;
        }
        for i in 0..rl {
            row[i] = match (closure, j == 0) {
                (Closure::OneSided, true) => {
                    (-3.0 * at(0)[i] + 4.0 * at(1)[i] - at(2)[i]) / (2.0 * h)
                }
                (Closure::OneSided, false) => {
                    (3.0 * at(ny)[i] - 4.0 * at(ny - 1)[i] + at(ny - 2)[i]) / (2.0 * h)
                }
                (Closure::Even, _) => 0.0,
            };
        }
    });
}

/// Centred x-difference on interior nodes; zero on the boundary.
pub(crate) fn central_x(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let inv = 0.5 / g.hx();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        if j == 0 || j == ny {
            row.fill(0.0);
            return;
        }
        let s = &src[j * rl..(j + 1) * rl];
        row[0] = 0.0;
        row[nx] = 0.0;
        for i in 1..nx {
            row[i] = (s[i + 1] - s[i - 1]) * inv;
        }
    });
}

/// Centred y-difference on interior nodes; zero on the boundary.
pub(crate) fn central_y(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let inv = 0.5 / g.hy();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        if j == 0 || j == ny {
            row.fill(0.0);
            return;
        }
        let dn = &src[(j - 1) * rl..j * rl];
        let up = &src[(j + 1) * rl..(j + 2) * rl];
        row[0] = 0.0;
        row[nx] = 0.0;
        for i in 1..nx {
            row[i] = (up[i] - dn[i]) * inv;
        }
    });
}

/// Trapezoid-adjoint of [`central_x`]. Only interior values of `src` are read.
pub(crate) fn central_x_adj(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let inv = 0.5 / g.hx();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        if j == 0 || j == ny {
            row.fill(0.0);
            return;
        }
        let s = &src[j * rl..(j + 1) * rl];
        let interior = |i: usize| if i >= 1 && i < nx { s[i] } else { 0.0 };
        for i in 0..=nx {
            let left = if i >= 1 { interior(i - 1) } else { 0.0 };
            let right = interior(i + 1);
            let c = Grid::edge_factor(i, nx);
            row[i] = (left - right) * inv / c;
        }
    });
}

/// Trapezoid-adjoint of [`central_y`]. Only interior values of `src` are read.
pub(crate) fn central_y_adj(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let inv = 0.5 / g.hy();
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        let c = Grid::edge_factor(j, ny);
        let take = |jj: usize, i: usize| {
            if jj >= 1 && jj < ny && i >= 1 && i < nx {
                src[jj * rl + i]
            } else {
                0.0
            }
        };
        row[0] = 0.0;
        row[nx] = 0.0;
        for i in 1..nx {
            let below = if j >= 1 { take(j - 1, i) } else { 0.0 };
            let above = take(j + 1, i);
            row[i] = (below - above) * inv / c;
        }
    });
}

/// Five-point Laplacian with reflected ghosts (homogeneous Neumann).
pub(crate) fn lap_neumann(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        let s = &src[j * rl..(j + 1) * rl];
        let dn = if j == 0 { 1 } else { j - 1 };
        let up = if j == ny { ny - 1 } else { j + 1 };
        let sd = &src[dn * rl..(dn + 1) * rl];
        let su = &src[up * rl..(up + 1) * rl];
        for i in 0..=nx {
            let l = if i == 0 { s[1] } else { s[i - 1] };
            let r = if i == nx { s[nx - 1] } else { s[i + 1] };
            row[i] = (l - 2.0 * s[i] + r) * ax + (sd[i] - 2.0 * s[i] + su[i]) * ay;
        }
    });
}

/// Five-point Laplacian on interior nodes with zero boundary values; the
/// boundary entries of `dst` are zero.
pub(crate) fn lap_dirichlet(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        if j == 0 || j == ny {
            row.fill(0.0);
            return;
        }
        let v = |jj: usize, i: usize| {
            if jj == 0 || jj == ny || i == 0 || i == nx {
                0.0
            } else {
                src[jj * rl + i]
            }
        };
        row[0] = 0.0;
        row[nx] = 0.0;
        for i in 1..nx {
            let c = v(j, i);
            row[i] = (v(j, i - 1) - 2.0 * c + v(j, i + 1)) * ax + (v(j - 1, i) - 2.0 * c + v(j + 1, i)) * ay;
        }
    });
}

/// Five-point Laplacian evaluated on interior nodes from the raw values,
/// zero on the boundary. Used for fields without a boundary rule.
fn lap_interior(g: &Grid, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
    let rl = g.row_len();
    par::for_each_row(dst, rl, |j, row| {
        if j == 0 || j == ny {
            row.fill(0.0);
            return;
        }
        let s = &src[j * rl..(j + 1) * rl];
        let sd = &src[(j - 1) * rl..j * rl];
        let su = &src[(j + 1) * rl..(j + 2) * rl];
        row[0] = 0.0;
        row[nx] = 0.0;
        for i in 1..nx {
            row[i] = (s[i - 1] - 2.0 * s[i] + s[i + 1]) * ax + (sd[i] - 2.0 * s[i] + su[i]) * ay;
        }
    });
}

pub(crate) fn lap_plane(g: &Grid, bc: Bc, src: &[f64], dst: &mut [f64]) {
    match bc {
        Bc::NeumannZero => lap_neumann(g, src, dst),
        Bc::DirichletZero => lap_dirichlet(g, src, dst),
        Bc::None => lap_interior(g, src, dst),
    }
}

/// `∇f`: centred differences inside, boundary closure chosen by `f.bc()`
/// (one-sided second order, or zero normal derivative for Neumann data).
pub fn gradient_scalar(f: &ScalarField) -> Vector2Field {
    let g = *f.grid();
    let closure = closure_for(f.bc());
    let mut out = Vector2Field::zeros(g, Bc::None);
    deriv_x(&g, f.comp(0), out.comp_mut(0), closure);
    deriv_y(&g, f.comp(0), out.comp_mut(1), closure);
    out
}

/// `div u`. For no-slip (`DirichletZero`) fields this is exactly minus the
/// trapezoid adjoint of the interior gradient, so `<∇f, u> = -<f, div u>`
/// holds to rounding for every `f`; otherwise one-sided closures are used.
pub fn divergence(u: &Vector2Field) -> ScalarField {
    let g = *u.grid();
    let n = g.len();
    let mut out = ScalarField::zeros(g, Bc::None);
    let mut tmp = vec![0.0; n];
    match u.bc() {
        Bc::DirichletZero => {
            central_x_adj(&g, u.comp(0), out.comp_mut(0));
            central_y_adj(&g, u.comp(1), &mut tmp);
            out.comp_mut(0)
                .iter_mut()
                .zip(&tmp)
                .for_each(|(o, t)| *o = -(*o + t));
        }
        bc => {
            let closure = closure_for(bc);
            deriv_x(&g, u.comp(0), out.comp_mut(0), closure);
            deriv_y(&g, u.comp(1), &mut tmp, closure);
            out.comp_mut(0)
                .iter_mut()
                .zip(&tmp)
                .for_each(|(o, t)| *o += t);
        }
    }
    out
}

/// Discrete divergence `-(C_x^* u1 + C_y^* u2)` used by the projection,
/// regardless of the tag carried by `u`.
pub(crate) fn weak_divergence(g: &Grid, u1: &[f64], u2: &[f64], dst: &mut [f64]) {
    let mut tmp = vec![0.0; g.len()];
    central_x_adj(g, u1, dst);
    central_y_adj(g, u2, &mut tmp);
    dst.iter_mut().zip(&tmp).for_each(|(o, t)| *o = -(*o + t));
}

/// Stream-function velocity `(∂_y ψ, -∂_x ψ)` built from the interior
/// centred stencils, so that it is exactly divergence free for the
/// projection's divergence whenever ψ vanishes on the two outermost node
/// rings.
pub fn discrete_curl(psi: &ScalarField) -> Vector2Field {
    let g = *psi.grid();
    let mut out = Vector2Field::zeros(g, Bc::DirichletZero);
    central_y(&g, psi.comp(0), out.comp_mut(0));
    central_x(&g, psi.comp(0), out.comp_mut(1));
    out.comp_mut(1).iter_mut().for_each(|v| *v = -*v);
    out
}

/// Five-point Laplacian applied componentwise. Ghost values follow the
/// field's tag: reflection for Neumann, zero boundary values for Dirichlet.
pub fn laplacian<const C: usize>(f: &Field<C>) -> Result<Field<C>> {
    if f.bc() == Bc::None {
        return Err(Error::Usage(
            "laplacian needs a boundary rule; field is tagged `none`".into(),
        ));
    }
    Ok(laplacian_any(f))
}

/// Like [`laplacian`] but falls back to interior-only evaluation for
/// untagged fields; used by norms.
pub(crate) fn laplacian_any<const C: usize>(f: &Field<C>) -> Field<C> {
    let g = *f.grid();
    let mut out = Field::<C>::zeros(g, f.bc());
    for c in 0..C {
        lap_plane(&g, f.bc(), f.comp(c), out.comp_mut(c));
    }
    out
}
