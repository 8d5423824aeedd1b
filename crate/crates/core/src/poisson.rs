//! Elliptic solves: the Neumann–Poisson problem, shifted Laplacians for the
//! implicit diffusion steps, and the discrete Leray projection.

use crate::error::{Error, Result};
use crate::grid::{dot_plane, mean_plane, Bc, Field, Grid, ScalarField, Vector2Field};
use crate::krylov::{cg, Kernel, SolveReport, SolverOptions};
use crate::stencil::{central_x, central_y, lap_neumann, lap_plane, weak_divergence};

/// Solves `Δ_N p = rhs` with the five-point Neumann Laplacian and returns the
/// zero-mean solution.
pub fn poisson_neumann_solve(
    rhs: &ScalarField,
    opts: SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    let g = *rhs.grid();
    let b = rhs.comp(0);
    let norm = dot_plane(&g, b, b).sqrt();
    // component of rhs along the normalised constant function
    let mean_part = mean_plane(&g, b).abs() * g.area().sqrt();
    let limit = opts.tol * norm;
    if mean_part > limit && mean_part > 1e-14 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Compatibility {
            mean: mean_plane(&g, b),
            limit: limit / g.area().sqrt(),
        });
    }
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    let mut p = ScalarField::zeros(g, Bc::NeumannZero);
    let rep = cg(
        &g,
        |x, y| {
            lap_neumann(&g, x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        },
        &neg,
        p.comp_mut(0),
        opts,
        Kernel::Constants,
        "neumann poisson",
    )?;
    Ok((p, rep))
}

/// Solves `(I - c Δ) x = b` componentwise using `b`'s boundary rule.
pub fn shifted_laplacian_solve<const C: usize>(
    b: &Field<C>,
    c: f64,
    opts: SolverOptions,
) -> Result<(Field<C>, SolveReport)> {
    let g = *b.grid();
    let bc = b.bc();
    if bc == Bc::None {
        return Err(Error::Usage("implicit diffusion needs a boundary rule".into()));
    }
    let mut out = Field::<C>::zeros(g, bc);
    let mut worst = SolveReport::default();
    for k in 0..C {
        let rep = solve_plane_shifted(&g, bc, c, b.comp(k), out.comp_mut(k), opts)?;
        worst.iterations = worst.iterations.max(rep.iterations);
        worst.residual = worst.residual.max(rep.residual);
    }
    Ok((out, worst))
}

pub(crate) fn solve_plane_shifted(
    g: &Grid,
    bc: Bc,
    c: f64,
    b: &[f64],
    x: &mut [f64],
    opts: SolverOptions,
) -> Result<SolveReport> {
    let mut rhs = b.to_vec();
    if bc == Bc::DirichletZero {
        crate::grid::zero_boundary(g, &mut rhs);
    }
    cg(
        g,
        |p, y| {
            lap_plane(g, bc, p, y);
            for (yv, pv) in y.iter_mut().zip(p) {
                *yv = pv - c * *yv;
            }
            if bc == Bc::DirichletZero {
                crate::grid::zero_boundary(g, y);
            }
        },
        &rhs,
        x,
        opts,
        Kernel::Trivial,
        "implicit diffusion",
    )
}

/// Result of a Leray projection.
#[derive(Clone, Debug)]
pub struct Projection {
    /// Divergence-free part, no-slip on the boundary.
    pub u: Vector2Field,
    /// Zero-mean potential with `f = u + ∇p` on interior nodes.
    pub p: ScalarField,
    pub report: SolveReport,
}

/// Discrete Leray projection onto no-slip, divergence-free fields.
///
/// The potential solves the weak Neumann problem `<∇p, ∇φ> = <f, ∇φ>` for
/// all grid functions `φ`, with `∇` the interior centred gradient. The map
/// `f ↦ u` is therefore the trapezoid-orthogonal projection onto the kernel
/// of the projection divergence (see [`crate::stencil::divergence`] for
/// no-slip fields), composed with zeroing the boundary values of `f`.
pub fn leray_project(f: &Vector2Field, opts: SolverOptions) -> Result<Projection> {
    let g = *f.grid();
    let n = g.len();
    let mut u1 = f.comp(0).to_vec();
    let mut u2 = f.comp(1).to_vec();
    crate::grid::zero_boundary(&g, &mut u1);
    crate::grid::zero_boundary(&g, &mut u2);

    // rhs = C^* f = -div_w f
    let mut rhs = vec![0.0; n];
    weak_divergence(&g, &u1, &u2, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);

    // The CG residual is `-div u`; stop on `‖div u‖ ≤ tol ‖f‖` rather than
    // relative to `‖C* f‖`, which carries an extra 1/h.
    let fnorm = (dot_plane(&g, &u1, &u1) + dot_plane(&g, &u2, &u2)).sqrt();
    let bnorm = dot_plane(&g, &rhs, &rhs).sqrt();
    let mut inner = opts;
    if bnorm > fnorm {
        inner.tol = (opts.tol * fnorm / bnorm).max(1e-14);
    }

    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut p = ScalarField::zeros(g, Bc::NeumannZero);
    let report = cg(
        &g,
        |x, y| {
            central_x(&g, x, &mut gx);
            central_y(&g, x, &mut gy);
            weak_divergence(&g, &gx, &gy, y);
            y.iter_mut().for_each(|v| *v = -*v);
        },
        &rhs,
        p.comp_mut(0),
        inner,
        Kernel::CentredGradient,
        "leray projection",
    )?;

    central_x(&g, p.comp(0), &mut gx);
    central_y(&g, p.comp(0), &mut gy);
    let mut u = Vector2Field::zeros(g, Bc::DirichletZero);
    for k in 0..n {
        u.comp_mut(0)[k] = u1[k] - gx[k];
        u.comp_mut(1)[k] = u2[k] - gy[k];
    }
    Ok(Projection { u, p, report })
}
