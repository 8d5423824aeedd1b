//! Box-constrained coil intensities `H(x, t) = Σ_i u_i(t) h_i(x)`.

use std::f64::consts::PI;

use super::field::adjoint_density;
use super::{time_inner, ControlProblem, CostValue, FieldControl, IterRecord, OptimizerOptions};
use crate::error::{Error, Result};
use crate::grid::{dot, Bc, Grid, Vector3Field};
use crate::rng::SplitMix64;
use crate::state::{solve_state, Trajectory};

type Intensities = Vec<Vec<f64>>;

const MODES: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Fixed spatial profiles of the coils.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilBasis {
    pub h: Vec<Vector3Field>,
}

impl CoilBasis {
    pub fn new(h: Vec<Vector3Field>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::Structural("coil basis needs at least one coil".into()));
        }
        for f in &h {
            f.grid().check_same(h[0].grid())?;
            if !f.is_finite() {
                return Err(Error::NonFinite("coil basis"));
            }
        }
        Ok(CoilBasis { h })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Gaussian bumps with centres spread over the domain, pointing along
    /// alternating directions.
    pub fn bumps(g: Grid, n: usize) -> Result<Self> {
        let dirs = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let h = (0..n)
            .map(|i| {
                let cx = g.lx * (i as f64 + 0.5) / n as f64;
                let cy = g.ly * (0.3 + 0.4 * ((i % 2) as f64));
                let r2 = (0.25 * g.lx.min(g.ly)).powi(2);
                let d = dirs[i % 3];
                Vector3Field::from_fn(g, Bc::NeumannZero, |x, y| {
                    let e = (-((x - cx).powi(2) + (y - cy).powi(2)) / r2).exp();
                    [d[0] * e, d[1] * e, d[2] * e]
                })
            })
            .collect();
        Self::new(h)
    }

    /// Tensor-product cosines `cos(pπx/lx)cos(qπy/ly)` in the lowest
    /// modes, cycling through the three field directions.
    pub fn harmonics(g: Grid, n: usize) -> Result<Self> {
        let h = (0..n)
            .map(|i| {
                let (p, q) = MODES[(i / 3) % MODES.len()];
                let c = i % 3;
                Vector3Field::from_fn(g, Bc::NeumannZero, |x, y| {
                    let v = (p as f64 * PI * x / g.lx).cos() * (q as f64 * PI * y / g.ly).cos();
                    let mut out = [0.0; 3];
                    out[c] = v;
                    out
                })
            })
            .collect();
        Self::new(h)
    }
}

/// Intensities `u[i][k] = u_i(t_k)` with bounds of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilControl {
    pub u: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl CoilControl {
    pub fn new(u: Vec<Vec<f64>>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let shape = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.len()).collect::<Vec<_>>();
        if shape(&u) != shape(&a) || shape(&u) != shape(&b) || u.is_empty() {
            return Err(Error::Structural("intensity and bound matrices differ in shape".into()));
        }
        for (ra, rb) in a.iter().zip(&b) {
            if ra.iter().zip(rb).any(|(x, y)| !(x <= y)) {
                return Err(Error::Usage("lower bound exceeds upper bound".into()));
            }
        }
        Ok(CoilControl { u, a, b })
    }

    /// Constant intensities and bounds for `n` coils over `samples` levels.
    pub fn constant(n: usize, samples: usize, u0: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            vec![vec![u0; samples]; n],
            vec![vec![lo; samples]; n],
            vec![vec![hi; samples]; n],
        )
    }

    pub fn is_feasible(&self) -> bool {
        self.u.iter().zip(&self.a).zip(&self.b).all(|((u, a), b)| {
            u.iter().zip(a).zip(b).all(|((x, lo), hi)| lo <= x && x <= hi)
        })
    }
}

/// `𝒞(u)_k = Σ_i u_i(t_k) h_i`.
pub fn coil_field(u: &[Vec<f64>], basis: &CoilBasis) -> Result<FieldControl> {
    if u.len() != basis.len() {
        return Err(Error::Structural(format!(
            "{} intensity rows for {} coils",
            u.len(),
            basis.len()
        )));
    }
    let samples = u[0].len();
    if u.iter().any(|r| r.len() != samples) {
        return Err(Error::Structural("ragged intensity matrix".into()));
    }
    let g = *basis.h[0].grid();
    let mut out = FieldControl::zeros(g, samples);
    for (row, h) in u.iter().zip(&basis.h) {
        for (k, ui) in row.iter().enumerate() {
            out.samples[k].axpy(*ui, h);
        }
    }
    Ok(out)
}

/// `P_[a,b](u)` entrywise.
pub fn project_box(u: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    u.iter()
        .zip(a)
        .zip(b)
        .map(|((r, ra), rb)| {
            r.iter()
                .zip(ra)
                .zip(rb)
                .map(|((x, lo), hi)| x.max(*lo).min(*hi))
                .collect()
        })
        .collect()
}

fn check_samples(problem: &ControlProblem, u: &[Vec<f64>]) -> Result<()> {
    let n = problem.steps()?;
    if u.iter().any(|r| r.len() != n + 1) {
        return Err(Error::Structural(format!("intensities need {} samples", n + 1)));
    }
    Ok(())
}

/// Tracking cost of `𝒞(u)` plus `λ/2 Σ_k τ_k |u(t_k)|²`.
pub fn coil_cost(
    problem: &ControlProblem,
    basis: &CoilBasis,
    u: &[Vec<f64>],
) -> Result<(CostValue, Trajectory)> {
    check_samples(problem, u)?;
    problem.cost.validate()?;
    let h = coil_field(u, basis)?;
    let traj = solve_state(
        &problem.init,
        &h.samples,
        problem.t_final,
        problem.dt,
        &problem.params,
        problem.solver,
    )?;
    let w = traj.time_weights();
    problem.cost.check_targets(traj.grid(), w.len())?;
    let tracking: f64 = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| w[k] * problem.cost.tracking_density(s, k))
        .sum();
    let regularization = 0.5 * problem.cost.lambda * time_inner(u, u, &w);
    Ok((
        CostValue {
            total: tracking + regularization,
            tracking,
            regularization,
        },
        traj,
    ))
}

#[derive(Clone, Debug)]
pub struct CoilGradient {
    /// `λu + 𝒟(u)`.
    pub g: Vec<Vec<f64>>,
    /// `𝒟_i(t_k) = ∫ (N - ∇M w)·h_i`.
    pub d: Vec<Vec<f64>>,
    pub cost: CostValue,
}

fn gradient_from(
    problem: &ControlProblem,
    basis: &CoilBasis,
    u: &[Vec<f64>],
    traj: &Trajectory,
    cost: CostValue,
) -> Result<CoilGradient> {
    let dens = adjoint_density(problem, traj, 1.0)?;
    let d: Vec<Vec<f64>> = basis
        .h
        .iter()
        .map(|hi| dens.samples.iter().map(|a| dot(a, hi)).collect())
        .collect();
    let lambda = problem.cost.lambda;
    let g = u
        .iter()
        .zip(&d)
        .map(|(ur, dr)| ur.iter().zip(dr).map(|(x, y)| lambda * x + y).collect())
        .collect();
    Ok(CoilGradient { g, d, cost })
}

/// Gradient of the coil cost with respect to the intensities, in the
/// time-trapezoid pairing.
pub fn coil_gradient(problem: &ControlProblem, basis: &CoilBasis, u: &[Vec<f64>]) -> Result<CoilGradient> {
    let (cost, traj) = coil_cost(problem, basis, u)?;
    gradient_from(problem, basis, u, &traj, cost)
}

/// `‖u - P(-𝒟/λ)‖` in the time-trapezoid norm.
pub fn fixed_point_residual(
    u: &[Vec<f64>],
    d: &[Vec<f64>],
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let target: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|x| -x / lambda).collect()).collect();
    let p = project_box(&target, a, b);
    let diff: Vec<Vec<f64>> = u
        .iter()
        .zip(&p)
        .map(|(r, q)| r.iter().zip(q).map(|(x, y)| x - y).collect())
        .collect();
    time_inner(&diff, &diff, weights).sqrt()
}

#[derive(Clone, Debug)]
pub struct CoilOptimum {
    pub u: Vec<Vec<f64>>,
    pub history: Vec<IterRecord>,
    pub fixed_point_residual: f64,
    /// Smallest normalized `<J̃'(u), u' - u> / ‖u' - u‖` over sampled
    /// feasible `u'`; non-negative at a solution up to rounding.
    pub vi_residual: f64,
    pub converged: bool,
    pub gradient: CoilGradient,
}

/// Projected gradient with Armijo backtracking along the projection arc.
/// Stops once the projection fixed-point residual is below `opts.grad_tol`.
pub fn optimize_coils(
    problem: &ControlProblem,
    basis: &CoilBasis,
    start: &CoilControl,
    opts: &OptimizerOptions,
    seed: u64,
) -> Result<CoilOptimum> {
    let w = problem.weights()?;
    let lambda = problem.cost.lambda;
    let (a, b) = (&start.a, &start.b);
    let mut u = project_box(&start.u, a, b);
    let (mut cost, traj) = coil_cost(problem, basis, &u)?;
    let mut grad = gradient_from(problem, basis, &u, &traj, cost)?;
    let mut fp = fixed_point_residual(&u, &grad.d, a, b, lambda, &w);
    let mut history = vec![IterRecord {
        iter: 0,
        cost: cost.total,
        grad_norm: time_inner(&grad.g, &grad.g, &w).sqrt(),
        step: 0.0,
        fixed_point_residual: Some(fp),
    }];
    // previous (u, g) for the Barzilai-Borwein step
    let mut prev: Option<(Intensities, Intensities)> = None;
    let mut it = 0;
    while fp > opts.grad_tol && it < opts.max_iter {
        it += 1;
        let mut step = 1.0 / lambda;
        if let Some((pu, pg)) = &prev {
            let du = sub(&u, pu);
            let dg = sub(&grad.g, pg);
            let den = time_inner(&du, &dg, &w);
            let bb = time_inner(&du, &du, &w) / den;
            if den > 0.0 && bb.is_finite() && bb > 0.0 {
                step = bb;
            }
        }
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<Vec<f64>> = u
                .iter()
                .zip(&grad.g)
                .map(|(r, g)| r.iter().zip(g).map(|(x, y)| x - step * y).collect())
                .collect();
            let cand = project_box(&trial, a, b);
            let decrease = time_inner(&grad.g, &sub(&cand, &u), &w);
            let (c, t) = coil_cost(problem, basis, &cand)?;
            if c.total < cost.total && c.total <= cost.total + opts.armijo_c * decrease {
                accepted = Some((cand, c, t));
                break;
            }
            step *= opts.armijo_shrink;
        }
        let Some((cand, c, t)) = accepted else {
            return Err(Error::Stagnation {
                iteration: it,
                cost: cost.total,
                grad_norm: fp,
            });
        };
        let new_grad = gradient_from(problem, basis, &cand, &t, c)?;
        prev = Some((std::mem::replace(&mut u, cand), std::mem::replace(&mut grad, new_grad).g));
        cost = c;
        fp = fixed_point_residual(&u, &grad.d, a, b, lambda, &w);
        history.push(IterRecord {
            iter: it,
            cost: cost.total,
            grad_norm: time_inner(&grad.g, &grad.g, &w).sqrt(),
            step,
            fixed_point_residual: Some(fp),
        });
    }
    let vi_residual = sample_vi(&u, &grad.g, a, b, &w, seed);
    Ok(CoilOptimum {
        u,
        history,
        fixed_point_residual: fp,
        vi_residual,
        converged: fp <= opts.grad_tol,
        gradient: grad,
    })
}

fn sub(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

/// Minimum of the normalized variational inequality over 100 random
/// feasible points.
fn sample_vi(
    u: &[Vec<f64>],
    g: &[Vec<f64>],
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    w: &[f64],
    seed: u64,
) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let mut best = f64::INFINITY;
    for _ in 0..100 {
        let cand: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(lo, hi)| rng.uniform(*lo, *hi)).collect())
            .collect();
        let d = sub(&cand, u);
        let nd = time_inner(&d, &d, w).sqrt();
        if nd > 0.0 {
            best = best.min(time_inner(g, &d, w) / nd);
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}
