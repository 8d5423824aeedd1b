//! The discrete right-hand side shared by the forward, tangent and adjoint
//! solvers.
//!
//! One time step is `y⁺ = S⁻¹(y + dt·E(y, H))` where `S` collects the
//! implicit diffusion solves (followed by the projection for `v`) and `E`
//! holds every explicit term:
//!
//! ```text
//! E_v = -B(v, v) - (∇M)ᵀ(ΔM - f(M)) + div(F Fᵀ) + (∇H)ᵀ M
//! E_F = -B(v, F) + (∇v) F
//! E_M = -(v·∇)M - f(M) + H
//! ```
//!
//! `B(a, u) = ½[(a·∇)u - ∇ᵀ(a u)]` is the skew-symmetric advection form
//! and `div(F Fᵀ)` is the negative adjoint of the interior gradient, so the
//! kinetic, elastic and magnetic exchanges cancel exactly in the discrete
//! energy balance. The `(∇M)ᵀ f(M)` term is a gradient in the continuum
//! and only shifts the pressure there.
//!
//! [`explicit_jvp`] is the exact derivative of [`explicit_rhs`] and
//! [`explicit_vjp`] its exact transpose in the trapezoid inner product.

use crate::error::Result;
use crate::grid::{dot, Bc, Grid, ScalarField, Tensor22Field, Vector2Field, Vector3Field};
use crate::krylov::{SolveReport, SolverOptions};
use crate::poisson::{leray_project, shifted_laplacian_solve};
use crate::state::PhysParams;
use crate::stencil::{central_x, central_x_adj, central_y, central_y_adj, lap_neumann};

/// Velocity, deformation and magnetization at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Fields {
    pub v: Vector2Field,
    pub f: Tensor22Field,
    pub m: Vector3Field,
}

impl Fields {
    pub fn zeros(g: Grid) -> Self {
        Fields {
            v: Vector2Field::zeros(g, Bc::DirichletZero),
            f: Tensor22Field::zeros(g, Bc::DirichletZero),
            m: Vector3Field::zeros(g, Bc::NeumannZero),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.v.grid()
    }

    pub fn axpy(&mut self, a: f64, x: &Fields) {
        self.v.axpy(a, &x.v);
        self.f.axpy(a, &x.f);
        self.m.axpy(a, &x.m);
    }

    pub fn scale(&mut self, a: f64) {
        self.v.scale(a);
        self.f.scale(a);
        self.m.scale(a);
    }

    /// Sum of the trapezoid inner products of the three parts.
    pub fn dot(&self, other: &Fields) -> f64 {
        dot(&self.v, &other.v) + dot(&self.f, &other.f) + dot(&self.m, &other.m)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.f.is_finite() && self.m.is_finite()
    }

    /// Zeroes the boundary values of the no-slip parts.
    pub fn enforce_bc(&mut self) {
        self.v.enforce_bc();
        self.f.enforce_bc();
    }
}

/// Nodewise `f(M) = α⁻²(|M|²-1)M`.
pub(crate) fn penalty_planes(m: &Vector3Field, alpha: f64) -> [Vec<f64>; 3] {
    let n = m.grid().len();
    let inv = 1.0 / (alpha * alpha);
    let (m0, m1, m2) = (m.comp(0), m.comp(1), m.comp(2));
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let s = inv * (m0[k] * m0[k] + m1[k] * m1[k] + m2[k] * m2[k] - 1.0);
        out[0][k] = s * m0[k];
        out[1][k] = s * m1[k];
        out[2][k] = s * m2[k];
    }
    out
}

/// `f'(M) d = α⁻²[(|M|²-1) d + 2 (M·d) M]`; the matrix is symmetric.
fn penalty_derivative(m: &Vector3Field, d: [&[f64]; 3], alpha: f64) -> [Vec<f64>; 3] {
    let n = m.grid().len();
    let inv = 1.0 / (alpha * alpha);
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let mk = [m.comp(0)[k], m.comp(1)[k], m.comp(2)[k]];
        let s = mk[0] * mk[0] + mk[1] * mk[1] + mk[2] * mk[2] - 1.0;
        let md = mk[0] * d[0][k] + mk[1] * d[1][k] + mk[2] * d[2][k];
        for c in 0..3 {
            out[c][k] = inv * (s * d[c][k] + 2.0 * md * mk[c]);
        }
    }
    out
}

/// Plane-level helpers bound to one grid.
struct Ops {
    g: Grid,
}

impl Ops {
    fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.g.len()]
    }

    /// Interior centred difference along axis `j`.
    fn d(&self, j: usize, a: &[f64]) -> Vec<f64> {
        let mut out = self.zeros();
        if j == 0 {
            central_x(&self.g, a, &mut out);
        } else {
            central_y(&self.g, a, &mut out);
        }
        out
    }

    /// Trapezoid adjoint of [`Ops::d`].
    fn da(&self, j: usize, a: &[f64]) -> Vec<f64> {
        let mut out = self.zeros();
        if j == 0 {
            central_x_adj(&self.g, a, &mut out);
        } else {
            central_y_adj(&self.g, a, &mut out);
        }
        out
    }

    fn lap(&self, a: &[f64]) -> Vec<f64> {
        let mut out = self.zeros();
        lap_neumann(&self.g, a, &mut out);
        out
    }

    /// `B(a, u) = ½ Σ_j [a_j C_j u - C_j*(a_j u)]`.
    fn skew(&self, a: [&[f64]; 2], u: &[f64]) -> Vec<f64> {
        let mut out = self.zeros();
        for j in 0..2 {
            let du = self.d(j, u);
            let au: Vec<f64> = a[j].iter().zip(u).map(|(x, y)| x * y).collect();
            let dau = self.da(j, &au);
            for k in 0..out.len() {
                out[k] += 0.5 * (a[j][k] * du[k] - dau[k]);
            }
        }
        out
    }
}

fn acc(dst: &mut [f64], a: f64, src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
}

fn acc_prod(dst: &mut [f64], a: f64, x: &[f64], y: &[f64]) {
    for k in 0..dst.len() {
        dst[k] += a * x[k] * y[k];
    }
}

fn vel(v: &Vector2Field) -> [&[f64]; 2] {
    [v.comp(0), v.comp(1)]
}

/// Tensor component index of `F_ik`.
#[inline]
fn fi(i: usize, k: usize) -> usize {
    2 * i + k
}

fn finish(g: Grid, ev: [Vec<f64>; 2], ef: [Vec<f64>; 4], em: [Vec<f64>; 3]) -> Fields {
    let mut out = Fields::zeros(g);
    for i in 0..2 {
        out.v.comp_mut(i).copy_from_slice(&ev[i]);
    }
    for i in 0..4 {
        out.f.comp_mut(i).copy_from_slice(&ef[i]);
    }
    for c in 0..3 {
        out.m.comp_mut(c).copy_from_slice(&em[c]);
    }
    out.enforce_bc();
    out
}

/// `μ = Δ_N M - f(M)` per component.
fn chemical_potential(ops: &Ops, m: &Vector3Field, alpha: f64) -> [Vec<f64>; 3] {
    let fm = penalty_planes(m, alpha);
    std::array::from_fn(|c| {
        let mut l = ops.lap(m.comp(c));
        acc(&mut l, -1.0, &fm[c]);
        l
    })
}

/// Explicit part `E(y, H)`. No-slip components are zero on the boundary.
pub fn explicit_rhs(y: &Fields, h: &Vector3Field, params: &PhysParams) -> Fields {
    let g = *y.grid();
    let ops = Ops { g };
    let v = vel(&y.v);
    let fm = penalty_planes(&y.m, params.alpha);
    let mu = chemical_potential(&ops, &y.m, params.alpha);
    // dm[c][j] = C_j M_c, dh[c][j] = C_j H_c
    let dm: Vec<[Vec<f64>; 2]> = (0..3)
        .map(|c| [ops.d(0, y.m.comp(c)), ops.d(1, y.m.comp(c))])
        .collect();
    let dh: Vec<[Vec<f64>; 2]> = (0..3)
        .map(|c| [ops.d(0, h.comp(c)), ops.d(1, h.comp(c))])
        .collect();
    let ff = |i: usize, k: usize| y.f.comp(fi(i, k));

    let ev: [Vec<f64>; 2] = std::array::from_fn(|i| {
        let mut e = ops.skew(v, v[i]);
        e.iter_mut().for_each(|x| *x = -*x);
        for c in 0..3 {
            acc_prod(&mut e, -1.0, &dm[c][i], &mu[c]);
            acc_prod(&mut e, 1.0, &dh[c][i], y.m.comp(c));
        }
        for j in 0..2 {
            let mut s = ops.zeros();
            for k in 0..2 {
                acc_prod(&mut s, 1.0, ff(i, k), ff(j, k));
            }
            acc(&mut e, -1.0, &ops.da(j, &s));
        }
        e
    });

    let dv: [[Vec<f64>; 2]; 2] = std::array::from_fn(|i| [ops.d(0, v[i]), ops.d(1, v[i])]);
    let ef: [Vec<f64>; 4] = std::array::from_fn(|idx| {
        let (i, k) = (idx / 2, idx % 2);
        let mut e = ops.skew(v, ff(i, k));
        e.iter_mut().for_each(|x| *x = -*x);
        for j in 0..2 {
            acc_prod(&mut e, 1.0, &dv[i][j], ff(j, k));
        }
        e
    });

    let em: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let mut e = h.comp(c).to_vec();
        acc(&mut e, -1.0, &fm[c]);
        for j in 0..2 {
            acc_prod(&mut e, -1.0, v[j], &dm[c][j]);
        }
        e
    });
    finish(g, ev, ef, em)
}

/// Directional derivative `∂_y E(y, H)[dy] + ∂_H E(y, H)[dh]`.
pub fn explicit_jvp(
    y: &Fields,
    h: &Vector3Field,
    dy: &Fields,
    dh: Option<&Vector3Field>,
    params: &PhysParams,
) -> Fields {
    let g = *y.grid();
    let ops = Ops { g };
    let alpha = params.alpha;
    let v = vel(&y.v);
    let dvv = vel(&dy.v);
    let mu = chemical_potential(&ops, &y.m, alpha);
    let dmm = [dy.m.comp(0), dy.m.comp(1), dy.m.comp(2)];
    let fprime = penalty_derivative(&y.m, dmm, alpha);
    let dmu: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let mut l = ops.lap(dmm[c]);
        acc(&mut l, -1.0, &fprime[c]);
        l
    });
    let grad = |a: &[f64]| [ops.d(0, a), ops.d(1, a)];
    let dm: Vec<[Vec<f64>; 2]> = (0..3).map(|c| grad(y.m.comp(c))).collect();
    let ddm: Vec<[Vec<f64>; 2]> = (0..3).map(|c| grad(dmm[c])).collect();
    let dh_base: Vec<[Vec<f64>; 2]> = (0..3).map(|c| grad(h.comp(c))).collect();
    let ddh: Option<Vec<[Vec<f64>; 2]>> = dh.map(|d| (0..3).map(|c| grad(d.comp(c))).collect());
    let ff = |i: usize, k: usize| y.f.comp(fi(i, k));
    let dff = |i: usize, k: usize| dy.f.comp(fi(i, k));

    let ev: [Vec<f64>; 2] = std::array::from_fn(|i| {
        let mut e = ops.skew(dvv, v[i]);
        acc(&mut e, 1.0, &ops.skew(v, dvv[i]));
        e.iter_mut().for_each(|x| *x = -*x);
        for c in 0..3 {
            acc_prod(&mut e, -1.0, &ddm[c][i], &mu[c]);
            acc_prod(&mut e, -1.0, &dm[c][i], &dmu[c]);
            acc_prod(&mut e, 1.0, &dh_base[c][i], dmm[c]);
            if let Some(ddh) = &ddh {
                acc_prod(&mut e, 1.0, &ddh[c][i], y.m.comp(c));
            }
        }
        for j in 0..2 {
            let mut s = ops.zeros();
            for k in 0..2 {
                acc_prod(&mut s, 1.0, dff(i, k), ff(j, k));
                acc_prod(&mut s, 1.0, ff(i, k), dff(j, k));
            }
            acc(&mut e, -1.0, &ops.da(j, &s));
        }
        e
    });

    let gv: [[Vec<f64>; 2]; 2] = std::array::from_fn(|i| grad(v[i]));
    let gdv: [[Vec<f64>; 2]; 2] = std::array::from_fn(|i| grad(dvv[i]));
    let ef: [Vec<f64>; 4] = std::array::from_fn(|idx| {
        let (i, k) = (idx / 2, idx % 2);
        let mut e = ops.skew(dvv, ff(i, k));
        acc(&mut e, 1.0, &ops.skew(v, dff(i, k)));
        e.iter_mut().for_each(|x| *x = -*x);
        for j in 0..2 {
            acc_prod(&mut e, 1.0, &gdv[i][j], ff(j, k));
            acc_prod(&mut e, 1.0, &gv[i][j], dff(j, k));
        }
        e
    });

    let em: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let mut e = match dh {
            Some(d) => d.comp(c).to_vec(),
            None => ops.zeros(),
        };
        acc(&mut e, -1.0, &fprime[c]);
        for j in 0..2 {
            acc_prod(&mut e, -1.0, dvv[j], &dm[c][j]);
            acc_prod(&mut e, -1.0, v[j], &ddm[c][j]);
        }
        e
    });
    finish(g, ev, ef, em)
}

/// Transpose of [`explicit_jvp`]: returns `(∂_y E)ᵀ bar` and `(∂_H E)ᵀ bar`.
pub fn explicit_vjp(
    y: &Fields,
    h: &Vector3Field,
    bar: &Fields,
    params: &PhysParams,
) -> (Fields, Vector3Field) {
    let g = *y.grid();
    let ops = Ops { g };
    let alpha = params.alpha;
    let n = g.len();
    let v = vel(&y.v);
    let ff = |i: usize, k: usize| y.f.comp(fi(i, k));
    let mu = chemical_potential(&ops, &y.m, alpha);
    let grad = |a: &[f64]| [ops.d(0, a), ops.d(1, a)];
    let dm: Vec<[Vec<f64>; 2]> = (0..3).map(|c| grad(y.m.comp(c))).collect();
    let dh: Vec<[Vec<f64>; 2]> = (0..3).map(|c| grad(h.comp(c))).collect();
    let gv: [[Vec<f64>; 2]; 2] = std::array::from_fn(|i| grad(v[i]));

    // only interior values of the no-slip parts are seen by the forward map
    let mut a = bar.v.clone();
    a.enforce_bc();
    let mut b = bar.f.clone();
    b.enforce_bc();
    let a = [a.comp(0).to_vec(), a.comp(1).to_vec()];
    let b: [Vec<f64>; 4] = std::array::from_fn(|i| b.comp(i).to_vec());
    let cm = [bar.m.comp(0), bar.m.comp(1), bar.m.comp(2)];

    let mut ov = [vec![0.0; n], vec![0.0; n]];
    let mut of: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut om = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut oh = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];

    // <a, B(δv, u)> = Σ_j <δv_j, ½(a C_j u - u C_j a)>
    let skew_first = |ov: &mut [Vec<f64>; 2], wgt: f64, a: &[f64], u: &[f64]| {
        let da = grad(a);
        let du = grad(u);
        for j in 0..2 {
            for k in 0..n {
                ov[j][k] += wgt * 0.5 * (a[k] * du[j][k] - u[k] * da[j][k]);
            }
        }
    };

    let ga: [[Vec<f64>; 2]; 2] = std::array::from_fn(|i| grad(&a[i]));
    for i in 0..2 {
        // momentum advection, both slots
        skew_first(&mut ov, -1.0, &a[i], v[i]);
        acc(&mut ov[i], 1.0, &ops.skew(v, &a[i]));
        for c in 0..3 {
            // -(C_i δM_c) μ_c
            let am: Vec<f64> = a[i].iter().zip(&mu[c]).map(|(x, y)| x * y).collect();
            acc(&mut om[c], -1.0, &ops.da(i, &am));
            // (C_i δH_c) M_c
            let amc: Vec<f64> = a[i].iter().zip(y.m.comp(c)).map(|(x, y)| x * y).collect();
            acc(&mut oh[c], 1.0, &ops.da(i, &amc));
            // (C_i H_c) δM_c
            acc_prod(&mut om[c], 1.0, &a[i], &dh[c][i]);
        }
    }
    // -(∇M)ᵀ δμ: z_c = Σ_i a_i C_i M_c, contributes -Δz + f'(M) z
    let z: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let mut s = vec![0.0; n];
        for i in 0..2 {
            acc_prod(&mut s, 1.0, &a[i], &dm[c][i]);
        }
        s
    });
    let fz = penalty_derivative(&y.m, [&z[0], &z[1], &z[2]], alpha);
    for c in 0..3 {
        acc(&mut om[c], -1.0, &ops.lap(&z[c]));
        acc(&mut om[c], 1.0, &fz[c]);
    }
    // -Σ_j C_j*(δF_ik F_jk + F_ik δF_jk): δF gets -(D + Dᵀ) F with D_ij = C_j a_i
    for i in 0..2 {
        for k in 0..2 {
            for j in 0..2 {
                acc_prod(&mut of[fi(i, k)], -1.0, &ga[i][j], ff(j, k));
                acc_prod(&mut of[fi(i, k)], -1.0, &ga[j][i], ff(j, k));
            }
        }
    }

    for i in 0..2 {
        for k in 0..2 {
            let bik = &b[fi(i, k)];
            skew_first(&mut ov, -1.0, bik, ff(i, k));
            acc(&mut of[fi(i, k)], 1.0, &ops.skew(v, bik));
            for j in 0..2 {
                // (C_j δv_i) F_jk
                let bf: Vec<f64> = bik.iter().zip(ff(j, k)).map(|(x, y)| x * y).collect();
                acc(&mut ov[i], 1.0, &ops.da(j, &bf));
                // (C_j v_i) δF_jk
                acc_prod(&mut of[fi(j, k)], 1.0, &gv[i][j], bik);
            }
        }
    }

    for c in 0..3 {
        for j in 0..2 {
            acc_prod(&mut ov[j], -1.0, cm[c], &dm[c][j]);
            let vc: Vec<f64> = v[j].iter().zip(cm[c]).map(|(x, y)| x * y).collect();
            acc(&mut om[c], -1.0, &ops.da(j, &vc));
        }
        acc(&mut oh[c], 1.0, cm[c]);
    }
    let fc = penalty_derivative(&y.m, cm, alpha);
    for c in 0..3 {
        acc(&mut om[c], -1.0, &fc[c]);
    }

    let mut hbar = Vector3Field::zeros(g, Bc::NeumannZero);
    for c in 0..3 {
        hbar.comp_mut(c).copy_from_slice(&oh[c]);
    }
    (finish(g, ov, of, om), hbar)
}

/// `(∂_H E)ᵀ bar = N + Σ_i C_i*(w_i M)`, the control part of
/// [`explicit_vjp`] on its own.
pub fn control_vjp(y: &Fields, bar: &Fields) -> Vector3Field {
    let g = *y.grid();
    let ops = Ops { g };
    let mut w = bar.v.clone();
    w.enforce_bc();
    let mut out = bar.m.clone().with_bc(Bc::NeumannZero);
    for c in 0..3 {
        for i in 0..2 {
            let wm: Vec<f64> = w.comp(i).iter().zip(y.m.comp(c)).map(|(a, b)| a * b).collect();
            acc(out.comp_mut(c), 1.0, &ops.da(i, &wm));
        }
    }
    out
}

/// Outcome of the implicit half of a step.
#[derive(Clone, Debug)]
pub struct Implicit {
    pub y: Fields,
    /// Projection potential (not yet divided by `dt`).
    pub potential: ScalarField,
    pub report: SolveReport,
}

fn merge(a: SolveReport, b: SolveReport) -> SolveReport {
    SolveReport {
        iterations: a.iterations.max(b.iterations),
        residual: a.residual.max(b.residual),
    }
}

/// `S⁻¹ r`: implicit diffusion of each part, then projection of the
/// velocity.
pub fn implicit_solve(
    r: &Fields,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<Implicit> {
    let (vs, r1) = shifted_laplacian_solve(&r.v, dt * params.nu, opts)?;
    let pr = leray_project(&vs, opts)?;
    let (f, r2) = shifted_laplacian_solve(&r.f, dt * params.kappa, opts)?;
    let (m, r3) = shifted_laplacian_solve(&r.m, dt, opts)?;
    Ok(Implicit {
        y: Fields { v: pr.u, f, m },
        potential: pr.p,
        report: merge(merge(merge(r1, pr.report), r2), r3),
    })
}

/// Transpose of [`implicit_solve`]: projection first, then the diffusion
/// solves. Also returns the projected velocity before diffusion.
pub fn implicit_solve_adjoint(
    r: &Fields,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<(Implicit, Vector2Field)> {
    let pr = leray_project(&r.v, opts)?;
    let (v, r1) = shifted_laplacian_solve(&pr.u, dt * params.nu, opts)?;
    let (f, r2) = shifted_laplacian_solve(&r.f, dt * params.kappa, opts)?;
    let (m, r3) = shifted_laplacian_solve(&r.m, dt, opts)?;
    Ok((
        Implicit {
            y: Fields { v, f, m },
            potential: pr.p,
            report: merge(merge(merge(r1, pr.report), r2), r3),
        },
        pr.u,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_fields, random_smooth, SplitMix64};

    fn params() -> PhysParams {
        PhysParams {
            nu: 0.7,
            kappa: 1.3,
            alpha: 0.9,
        }
    }

    #[test]
    fn jvp_matches_finite_difference() {
        let g = Grid::new(12, 10, 1.0, 0.9).unwrap();
        let mut rng = SplitMix64::new(3);
        let y = random_fields(g, &mut rng, 1.0);
        let dy = random_fields(g, &mut rng, 1.0);
        let h: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, 1.0);
        let dh: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, 1.0);
        let p = params();
        let lin = explicit_jvp(&y, &h, &dy, Some(&dh), &p);
        let eps = 1e-6;
        let mut yp = y.clone();
        yp.axpy(eps, &dy);
        let mut ym = y.clone();
        ym.axpy(-eps, &dy);
        let hp = h.add(&dh.scaled(eps));
        let hm = h.sub(&dh.scaled(eps));
        let mut fd = explicit_rhs(&yp, &hp, &p);
        fd.axpy(-1.0, &explicit_rhs(&ym, &hm, &p));
        fd.scale(0.5 / eps);
        let mut err = fd.clone();
        err.axpy(-1.0, &lin);
        assert!(err.dot(&err).sqrt() <= 1e-6 * lin.dot(&lin).sqrt());
    }

    #[test]
    fn vjp_is_exact_transpose() {
        let g = Grid::new(10, 12, 0.8, 1.0).unwrap();
        let mut rng = SplitMix64::new(9);
        let p = params();
        let y = random_fields(g, &mut rng, 1.0);
        let dy = random_fields(g, &mut rng, 1.0);
        let bar = random_fields(g, &mut rng, 1.0);
        let h: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, 1.0);
        let dh: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, 1.0);
        let lhs = bar.dot(&explicit_jvp(&y, &h, &dy, Some(&dh), &p));
        let (ybar, hbar) = explicit_vjp(&y, &h, &bar, &p);
        let rhs = ybar.dot(&dy) + dot(&hbar, &dh);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn control_vjp_matches_full_transpose() {
        let g = Grid::unit(10).unwrap();
        let mut rng = SplitMix64::new(21);
        let y = random_fields(g, &mut rng, 1.0);
        let bar = random_fields(g, &mut rng, 1.0);
        let h: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, 1.0);
        let (_, full) = explicit_vjp(&y, &h, &bar, &params());
        let part = control_vjp(&y, &bar);
        assert!(full.sub(&part).max_abs() <= 1e-12 * full.max_abs());
    }

    #[test]
    fn implicit_adjoint_is_transpose() {
        let g = Grid::unit(12).unwrap();
        let mut rng = SplitMix64::new(5);
        let p = params();
        let opts = SolverOptions {
            tol: 1e-13,
            max_iter: 5000,
        };
        let x = random_fields(g, &mut rng, 1.0);
        let z = random_fields(g, &mut rng, 1.0);
        let sx = implicit_solve(&x, 0.01, &p, opts).unwrap().y;
        let (sz, _) = implicit_solve_adjoint(&z, 0.01, &p, opts).unwrap();
        let (a, b) = (z.dot(&sx), sz.y.dot(&x));
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn energy_exchange_terms_cancel() {
        // kinetic and elastic parts of <y, E(y, 0)> cancel when M is const
        let g = Grid::unit(16).unwrap();
        let mut rng = SplitMix64::new(11);
        let mut y = random_fields(g, &mut rng, 1.0);
        y.m = Vector3Field::uniform(g, Bc::NeumannZero, [0.0, 0.6, 0.8]);
        let e = explicit_rhs(&y, &Vector3Field::zeros(g, Bc::NeumannZero), &params());
        let s = dot(&y.v, &e.v) + dot(&y.f, &e.f);
        assert!(s.abs() < 1e-11, "{s}");
    }
}
