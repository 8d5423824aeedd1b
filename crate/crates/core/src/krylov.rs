//! Matrix-free conjugate gradients in the trapezoid inner product.

use crate::error::{Error, Result};
use crate::grid::{dot_plane, mean_plane, Grid};

/// Stopping rule for inner linear solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target `‖r‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for an operator that is symmetric positive
/// (semi-)definite in the trapezoid inner product, starting from `x = 0`.
///
/// Iterates and residuals are kept orthogonal to `kernel`, the null space
/// of a singular operator.
pub(crate) fn cg<A>(
    g: &Grid,
    mut apply: A,
    b: &[f64],
    x: &mut [f64],
    opts: SolverOptions,
    kernel: Kernel,
    context: &'static str,
) -> Result<SolveReport>
where
    A: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    x.fill(0.0);
    let mut r = b.to_vec();
    kernel.remove(g, &mut r);
    let bnorm = dot_plane(g, &r, &r).sqrt();
    if bnorm == 0.0 {
        return Ok(SolveReport::default());
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = bnorm * bnorm;
    let target = opts.tol * bnorm;
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        kernel.remove(g, &mut ap);
        let pap = dot_plane(g, &p, &ap);
        if !(pap > 0.0) {
            // Breakdown only happens once the residual is at rounding level.
            let res = rr.sqrt() / bnorm;
            if res <= opts.tol.max(1e-13) {
                return Ok(SolveReport {
                    iterations: it - 1,
                    residual: res,
                });
            }
            return Err(Error::Convergence {
                context,
                iterations: it,
                residual: res,
            });
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        kernel.remove(g, &mut r);
        let rr_new = dot_plane(g, &r, &r);
        if rr_new.sqrt() <= target {
            kernel.remove(g, x);
            return Ok(SolveReport {
                iterations: it,
                residual: rr_new.sqrt() / bnorm,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(Error::Convergence {
        context,
        iterations: opts.max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

/// Null space of the operator handed to [`cg`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Kernel {
    Trivial,
    /// Constants (pure-Neumann Laplacian).
    Constants,
    /// Kernel of the interior centred gradient: functions constant on each
    /// of the four parity classes of non-corner nodes, plus the corners,
    /// which no interior stencil reads.
    CentredGradient,
}

impl Kernel {
    pub(crate) fn remove(self, g: &Grid, a: &mut [f64]) {
        match self {
            Kernel::Trivial => {}
            Kernel::Constants => {
                let m = mean_plane(g, a);
                a.iter_mut().for_each(|v| *v -= m);
            }
            Kernel::CentredGradient => {
                let corner = |i: usize, j: usize| (i == 0 || i == g.nx) && (j == 0 || j == g.ny);
                let mut sum = [0.0; 4];
                let mut wsum = [0.0; 4];
                for j in 0..=g.ny {
                    for i in 0..=g.nx {
                        if corner(i, j) {
                            continue;
                        }
                        let c = (i % 2) + 2 * (j % 2);
                        let w = g.weight(i, j);
                        sum[c] += w * a[g.idx(i, j)];
                        wsum[c] += w;
                    }
                }
                for j in 0..=g.ny {
                    for i in 0..=g.nx {
                        let k = g.idx(i, j);
                        if corner(i, j) {
                            a[k] = 0.0;
                        } else {
                            let c = (i % 2) + 2 * (j % 2);
                            a[k] -= sum[c] / wsum[c];
                        }
                    }
                }
            }
        }
    }
}
