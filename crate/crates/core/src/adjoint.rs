//! Backward sweep for the costate of the tracking cost.
//!
//! The sweep is the exact transpose of the tangent recursion. Writing
//! `c_k` for the costate paired with the sources of step `k` and
//! `τ_k` for the time-trapezoid weights,
//!
//! ```text
//! λ_k     = c_k + dt (∂E_k)ᵀ c_k + τ_k ∇j_k
//! c_{k-1} = S⁻ᵀ λ_k,        c_n = 0,
//! ```
//!
//! where `S⁻ᵀ` projects the velocity part first and then runs the
//! diffusion solves. The divergence-free velocity after projection is
//! reported as `w`, the projection potential as `q`.

use crate::dynamics::{control_vjp, explicit_vjp, implicit_solve_adjoint, Fields};
use crate::error::{Error, Result};
use crate::grid::{dot, grad_seminorm_sq, Bc, Field, Grid, ScalarField, Tensor22Field, Vector2Field, Vector3Field};
use crate::krylov::SolverOptions;
use crate::linearized::{LinearizedState, SourceTriple};
use crate::state::{PhysParams, State, Trajectory};

/// A tracking target: absent, constant in time, or sampled at every step.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<const C: usize> {
    Zero,
    Constant(Field<C>),
    Series(Vec<Field<C>>),
}

impl<const C: usize> Target<C> {
    fn at(&self, k: usize) -> Option<&Field<C>> {
        match self {
            Target::Zero => None,
            Target::Constant(f) => Some(f),
            Target::Series(s) => Some(&s[k.min(s.len() - 1)]),
        }
    }

    fn check(&self, g: &Grid, samples: usize) -> Result<()> {
        match self {
            Target::Zero => Ok(()),
            Target::Constant(f) => f.grid().check_same(g),
            Target::Series(s) => {
                if s.len() != samples {
                    return Err(Error::Structural(format!(
                        "target has {} samples, need {samples}",
                        s.len()
                    )));
                }
                s.iter().try_for_each(|f| f.grid().check_same(g))
            }
        }
    }

    /// `field - target` at step `k`.
    fn residual(&self, field: &Field<C>, k: usize) -> Field<C> {
        match self.at(k) {
            Some(t) => field.sub(t),
            None => field.clone(),
        }
    }
}

/// Weights, regularization and targets of the tracking functional.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub lambda: f64,
    pub v_d: Target<2>,
    pub f_d: Target<4>,
    pub m_d: Target<3>,
}

impl CostSpec {
    /// Pure regularization: all tracking weights zero.
    pub fn regularization_only(lambda: f64) -> Self {
        CostSpec {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            lambda,
            v_d: Target::Zero,
            f_d: Target::Zero,
            m_d: Target::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("a1", self.a1), ("a2", self.a2), ("a3", self.a3)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Usage(format!("{name} must be non-negative, got {a}")));
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Usage(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    pub(crate) fn check_targets(&self, g: &Grid, samples: usize) -> Result<()> {
        self.v_d.check(g, samples)?;
        self.f_d.check(g, samples)?;
        self.m_d.check(g, samples)
    }

    /// `j_k = a1/2‖v-v_d‖² + a2/2‖F-F_d‖² + a3/2‖M-M_d‖²`.
    pub fn tracking_density(&self, s: &State, k: usize) -> f64 {
        let mut j = 0.0;
        if self.a1 != 0.0 {
            let r = self.v_d.residual(&s.v, k);
            j += 0.5 * self.a1 * dot(&r, &r);
        }
        if self.a2 != 0.0 {
            let r = self.f_d.residual(&s.f, k);
            j += 0.5 * self.a2 * dot(&r, &r);
        }
        if self.a3 != 0.0 {
            let r = self.m_d.residual(&s.m, k);
            j += 0.5 * self.a3 * dot(&r, &r);
        }
        j
    }

    /// Gradient of `j_k` with respect to `(v, F, M)`; no-slip parts are
    /// restricted to interior nodes.
    pub fn tracking_gradient(&self, s: &State, k: usize) -> Fields {
        let g = *s.grid();
        let mut out = Fields::zeros(g);
        if self.a1 != 0.0 {
            out.v = self.v_d.residual(&s.v, k).scaled(self.a1).with_bc(Bc::DirichletZero);
        }
        if self.a2 != 0.0 {
            out.f = self.f_d.residual(&s.f, k).scaled(self.a2).with_bc(Bc::DirichletZero);
        }
        if self.a3 != 0.0 {
            out.m = self.m_d.residual(&s.m, k).scaled(self.a3).with_bc(Bc::NeumannZero);
        }
        out
    }

    pub fn has_tracking(&self) -> bool {
        self.a1 != 0.0 || self.a2 != 0.0 || self.a3 != 0.0
    }
}

/// Costate `(w, q, G, N)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    /// Divergence-free costate velocity.
    pub w: Vector2Field,
    pub q: ScalarField,
    pub g: Tensor22Field,
    pub n: Vector3Field,
    pub t: f64,
    /// `w` after the viscous solve; this is what pairs with velocity
    /// sources.
    w_diffused: Vector2Field,
}

impl AdjointState {
    /// Zero terminal data.
    pub fn terminal(g: Grid, t: f64) -> Self {
        let y = Fields::zeros(g);
        AdjointState {
            w: y.v.clone(),
            q: ScalarField::zeros(g, Bc::NeumannZero),
            g: y.f,
            n: y.m,
            t,
            w_diffused: y.v,
        }
    }

    /// The variables paired with the sources of the tangent step.
    pub fn costate(&self) -> Fields {
        Fields {
            v: self.w_diffused.clone(),
            f: self.g.clone(),
            m: self.n.clone(),
        }
    }

    /// `𝒴_a = ‖∇w‖² + ‖∇G‖² + ‖N‖²`.
    pub fn y_a(&self) -> f64 {
        grad_seminorm_sq(&self.w) + grad_seminorm_sq(&self.g) + dot(&self.n, &self.n)
    }
}

/// One backward step: from the costate at `base.t` to the one a step
/// earlier. `weight` is the time-quadrature weight of `base.t` and `k` its
/// step index (used to look up targets).
#[allow(clippy::too_many_arguments)]
pub fn step_adjoint_backward(
    adj: &AdjointState,
    base: &State,
    base_h: &Vector3Field,
    cost: &CostSpec,
    k: usize,
    weight: f64,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<AdjointState> {
    if (adj.t - base.t).abs() > 1e-9 * dt.max(1e-300) + 1e-14 {
        return Err(Error::Structural(format!(
            "costate at t={} does not match base state at t={}",
            adj.t, base.t
        )));
    }
    let c = adj.costate();
    let mut lam = c.clone();
    let (ct, _) = explicit_vjp(&base.fields(), base_h, &c, params);
    lam.axpy(dt, &ct);
    lam.axpy(weight, &cost.tracking_gradient(base, k));
    let (imp, w) = implicit_solve_adjoint(&lam, dt, params, opts)?;
    if !imp.y.is_finite() {
        return Err(Error::NonFinite("costate"));
    }
    Ok(AdjointState {
        w,
        q: imp.potential.scaled(1.0 / dt),
        g: imp.y.f,
        n: imp.y.m,
        t: adj.t - dt,
        w_diffused: imp.y.v,
    })
}

#[derive(Clone, Debug)]
pub struct AdjointSolution {
    /// Costates indexed by step, `states[n]` being the zero terminal data.
    pub states: Vec<AdjointState>,
    /// `(t_k, 𝒴_a(t_k))`.
    pub y_a: Vec<(f64, f64)>,
    /// `(∂_H E_k)ᵀ c_k`: the costate's action on control perturbations at
    /// step `k` (zero at the final step).
    pub control_density: Vec<Vector3Field>,
}

/// Backward sweep over a fully stored trajectory.
pub fn solve_adjoint(traj: &Trajectory, cost: &CostSpec, opts: SolverOptions) -> Result<AdjointSolution> {
    traj.require_full()?;
    cost.validate()?;
    let g = *traj.grid();
    let n = traj.steps;
    cost.check_targets(&g, n + 1)?;
    let w = traj.time_weights();
    let mut rev = Vec::with_capacity(n + 1);
    rev.push(AdjointState::terminal(g, traj.t_final()));
    for k in (1..=n).rev() {
        let prev = step_adjoint_backward(
            rev.last().unwrap(),
            &traj.states[k],
            &traj.h_samples[k],
            cost,
            k,
            w[k],
            traj.dt,
            &traj.params,
            opts,
        )
        .map_err(|e| e.at_step("adjoint", k))?;
        let mut prev = prev;
        prev.t = (k - 1) as f64 * traj.dt;
        rev.push(prev);
    }
    rev.reverse();
    let y_a = rev.iter().map(|a| (a.t, a.y_a())).collect();
    let control_density = rev
        .iter()
        .zip(&traj.states)
        .map(|(a, s)| control_vjp(&s.fields(), &a.costate()))
        .collect();
    Ok(AdjointSolution {
        states: rev,
        y_a,
        control_density,
    })
}

/// `Σ_k τ_k <∇j_k, δy_k>`: the tracking functional's derivative along a
/// tangent trajectory.
pub fn tracking_pairing(traj: &Trajectory, cost: &CostSpec, lin: &[LinearizedState]) -> f64 {
    let w = traj.time_weights();
    traj.states
        .iter()
        .zip(lin)
        .enumerate()
        .map(|(k, (s, l))| w[k] * cost.tracking_gradient(s, k).dot(&l.fields()))
        .sum()
}

/// `Σ_{k<n} dt <c_k, S_k>`: the same derivative assembled from the
/// costate and the sources.
pub fn source_pairing(adj: &AdjointSolution, sources: &SourceTriple, dt: f64) -> f64 {
    let n = adj.states.len() - 1;
    (0..n)
        .map(|k| dt * adj.states[k].costate().dot(&sources.at(k)))
        .sum()
}
