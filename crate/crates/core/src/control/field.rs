//! The unconstrained external-field problem.

use super::{h_inner, h_norm, ControlProblem, CostValue, FieldControl, IterRecord, OptimizerOptions};
use crate::adjoint::solve_adjoint;
use crate::error::{Error, Result};
use crate::grid::{dot, grad_seminorm_sq, Bc, Vector3Field};
use crate::poisson::shifted_laplacian_solve;
use crate::state::{solve_state, Trajectory};
use crate::stencil::lap_neumann;

/// Reduced cost `J(H)` and the trajectory it was evaluated on.
pub fn reduced_cost(problem: &ControlProblem, h: &FieldControl) -> Result<(CostValue, Trajectory)> {
    h.check(problem)?;
    problem.cost.validate()?;
    let traj = solve_state(
        &problem.init,
        &h.samples,
        problem.t_final,
        problem.dt,
        &problem.params,
        problem.solver,
    )?;
    let value = evaluate(problem, h, &traj)?;
    Ok((value, traj))
}

fn evaluate(problem: &ControlProblem, h: &FieldControl, traj: &Trajectory) -> Result<CostValue> {
    let w = traj.time_weights();
    problem.cost.check_targets(traj.grid(), w.len())?;
    let tracking: f64 = traj
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| w[k] * problem.cost.tracking_density(s, k))
        .sum();
    let reg: f64 = h
        .samples
        .iter()
        .zip(&w)
        .map(|(s, wk)| wk * (dot(s, s) + grad_seminorm_sq(s)))
        .sum();
    let regularization = 0.5 * problem.cost.lambda * reg;
    Ok(CostValue {
        total: tracking + regularization,
        tracking,
        regularization,
    })
}

/// Reduced gradient in its two representations.
#[derive(Clone, Debug)]
pub struct GradientReport {
    /// Nodal density `g` with `J'(H)[δH] = Σ_k τ_k <g_k, δH_k>`:
    /// `λ(I - Δ_N)H + (N - ∇M w)`.
    pub dual: FieldControl,
    /// ℍ-Riesz representative `r = λH + (I - Δ_N)⁻¹(N - ∇M w)`.
    pub riesz: FieldControl,
    /// The adjoint part `N - ∇M w` of the density.
    pub adjoint_density: FieldControl,
    /// `‖g‖_ℍ'`, which equals `‖r‖_ℍ`.
    pub norm_dual: f64,
    pub norm_riesz: f64,
    pub cost: CostValue,
}

impl GradientReport {
    /// `J'(H)[δH]`.
    pub fn apply(&self, dh: &FieldControl, weights: &[f64]) -> f64 {
        h_inner(&self.riesz, dh, weights)
    }
}

/// `N - ∇M w` at every sample, normalized so that the tracking part of
/// `J'(H)[δH]` is `Σ_k τ_k <density_k, δH_k>`.
pub(crate) fn adjoint_density(problem: &ControlProblem, traj: &Trajectory, scale: f64) -> Result<FieldControl> {
    let n = traj.steps;
    let w = traj.time_weights();
    let mut out = FieldControl::zeros(*problem.grid(), n + 1);
    if problem.cost.has_tracking() {
        let adj = solve_adjoint(traj, &problem.cost, problem.solver)?;
        for k in 0..n {
            out.samples[k] = adj.control_density[k].scaled(scale * traj.dt / w[k]);
        }
    }
    Ok(out)
}

pub(crate) fn gradient_on(
    problem: &ControlProblem,
    h: &FieldControl,
    traj: &Trajectory,
    cost: CostValue,
    adjoint_scale: f64,
) -> Result<GradientReport> {
    let g = *problem.grid();
    let n = traj.steps;
    let w = traj.time_weights();
    let lambda = problem.cost.lambda;
    let adjoint_density = adjoint_density(problem, traj, adjoint_scale)?;
    let mut dual = FieldControl::zeros(g, n + 1);
    let mut riesz = FieldControl::zeros(g, n + 1);
    let mut lap = Vector3Field::zeros(g, Bc::NeumannZero);
    for k in 0..=n {
        let hk = &h.samples[k];
        for c in 0..3 {
            lap_neumann(&g, hk.comp(c), lap.comp_mut(c));
        }
        let mut d = hk.sub(&lap).scaled(lambda);
        d.axpy(1.0, &adjoint_density.samples[k]);
        dual.samples[k] = d;
        let (sol, _) = shifted_laplacian_solve(&adjoint_density.samples[k], 1.0, problem.solver)
            .map_err(|e| e.at_step("gradient", k))?;
        let mut r = hk.scaled(lambda);
        r.axpy(1.0, &sol);
        riesz.samples[k] = r;
    }
    let norm_riesz = h_norm(&riesz, &w);
    let pairing: f64 = dual
        .samples
        .iter()
        .zip(&riesz.samples)
        .zip(&w)
        .map(|((a, b), wk)| wk * dot(a, b))
        .sum();
    Ok(GradientReport {
        dual,
        riesz,
        adjoint_density,
        norm_dual: pairing.max(0.0).sqrt(),
        norm_riesz,
        cost,
    })
}

/// Forward solve, backward sweep and assembly of the gradient.
pub fn reduced_gradient(problem: &ControlProblem, h: &FieldControl) -> Result<GradientReport> {
    let (cost, traj) = reduced_cost(problem, h)?;
    gradient_on(problem, h, &traj, cost, 1.0)
}

/// Gradient with the adjoint contribution deliberately halved; only used
/// as a negative control for the gradient check.
#[doc(hidden)]
pub fn reduced_gradient_corrupted(problem: &ControlProblem, h: &FieldControl) -> Result<GradientReport> {
    let (cost, traj) = reduced_cost(problem, h)?;
    gradient_on(problem, h, &traj, cost, 0.5)
}

/// First-order optimality residual `‖(I - Δ_N)H + (N - ∇M w)/λ‖_ℍ'`, i.e.
/// the dual gradient norm divided by `λ`.
pub fn kkt_residual(problem: &ControlProblem, report: &GradientReport) -> f64 {
    report.norm_dual / problem.cost.lambda
}

#[derive(Clone, Debug)]
pub struct FieldOptimum {
    pub h: FieldControl,
    pub history: Vec<IterRecord>,
    pub converged: bool,
    pub report: GradientReport,
}

/// Steepest descent in the ℍ metric with Barzilai–Borwein step guesses and
/// Armijo backtracking.
pub fn optimize_field(
    problem: &ControlProblem,
    h0: &FieldControl,
    opts: &OptimizerOptions,
) -> Result<FieldOptimum> {
    let w = problem.weights()?;
    let lambda = problem.cost.lambda;
    let mut h = h0.clone();
    let (mut cost, traj) = reduced_cost(problem, &h)?;
    let mut rep = gradient_on(problem, &h, &traj, cost, 1.0)?;
    let mut history = vec![IterRecord {
        iter: 0,
        cost: cost.total,
        grad_norm: rep.norm_riesz,
        step: 0.0,
        fixed_point_residual: None,
    }];
    let mut prev: Option<(FieldControl, FieldControl)> = None;
    let mut converged = rep.norm_riesz <= opts.grad_tol;
    let mut it = 0;
    while !converged && it < opts.max_iter {
        it += 1;
        let mut step = 1.0 / lambda;
        if let Some((ph, pr)) = &prev {
            let dh = h.sub(ph);
            let dr = rep.riesz.sub(pr);
            let den = h_inner(&dh, &dr, &w);
            let bb = h_inner(&dh, &dh, &w) / den;
            if den > 0.0 && bb.is_finite() && bb > 0.0 {
                step = bb;
            }
        }
        let g2 = rep.norm_riesz * rep.norm_riesz;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand = h.clone();
            cand.axpy(-step, &rep.riesz);
            let (c, t) = reduced_cost(problem, &cand)?;
            if c.total < cost.total && c.total <= cost.total - opts.armijo_c * step * g2 {
                accepted = Some((cand, c, t));
                break;
            }
            step *= opts.armijo_shrink;
        }
        let Some((cand, c, t)) = accepted else {
            return Err(Error::Stagnation {
                iteration: it,
                cost: cost.total,
                grad_norm: rep.norm_riesz,
            });
        };
        let new_rep = gradient_on(problem, &cand, &t, c, 1.0)?;
        prev = Some((std::mem::replace(&mut h, cand), std::mem::replace(&mut rep, new_rep).riesz));
        cost = c;
        history.push(IterRecord {
            iter: it,
            cost: cost.total,
            grad_norm: rep.norm_riesz,
            step,
            fixed_point_residual: None,
        });
        converged = rep.norm_riesz <= opts.grad_tol;
    }
    Ok(FieldOptimum {
        h,
        history,
        converged,
        report: rep,
    })
}
