//! Tangent of the forward solver around a stored trajectory.
//!
//! The step is the exact derivative of [`crate::state::step_state`]:
//! `δy⁺ = S⁻¹(δy + dt(∂E[δy] + S_k))`, with the sources `S_k` entering at
//! the same time level as the control sample they come from.

use crate::dynamics::{explicit_jvp, implicit_solve, Fields};
use crate::error::{Error, Result};
use crate::grid::{dot, Bc, Grid, ScalarField, Tensor22Field, Vector2Field, Vector3Field};
use crate::krylov::SolverOptions;
use crate::state::{PhysParams, State, Trajectory};
use crate::stencil::{central_x, central_y};

/// `(δv, δp, δF, δM)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedState {
    pub dv: Vector2Field,
    pub dp: ScalarField,
    pub df: Tensor22Field,
    pub dm: Vector3Field,
    pub t: f64,
}

impl LinearizedState {
    pub fn zeros(g: Grid, t: f64) -> Self {
        let y = Fields::zeros(g);
        LinearizedState {
            dv: y.v,
            dp: ScalarField::zeros(g, Bc::NeumannZero),
            df: y.f,
            dm: y.m,
            t,
        }
    }

    pub fn fields(&self) -> Fields {
        Fields {
            v: self.dv.clone(),
            f: self.df.clone(),
            m: self.dm.clone(),
        }
    }

    /// `‖δv‖² + ‖δp‖² + ‖δF‖² + ‖δM‖²` at this instant.
    pub fn norm_sq(&self) -> f64 {
        dot(&self.dv, &self.dv) + dot(&self.dp, &self.dp) + dot(&self.df, &self.df) + dot(&self.dm, &self.dm)
    }

    /// `scale·(a - b)` for two states at the same time.
    pub fn difference(a: &State, b: &State, scale: f64) -> Self {
        LinearizedState {
            dv: a.v.sub(&b.v).scaled(scale),
            dp: a.p.sub(&b.p).scaled(scale),
            df: a.f.sub(&b.f).scaled(scale),
            dm: a.m.sub(&b.m).scaled(scale),
            t: a.t,
        }
    }

    pub fn sub(&self, other: &LinearizedState) -> Self {
        LinearizedState {
            dv: self.dv.sub(&other.dv),
            dp: self.dp.sub(&other.dp),
            df: self.df.sub(&other.df),
            dm: self.dm.sub(&other.dm),
            t: self.t,
        }
    }
}

/// Source samples `(S1, S2, S3)` at every time level.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceTriple {
    pub s1: Vec<Vector2Field>,
    pub s2: Vec<Tensor22Field>,
    pub s3: Vec<Vector3Field>,
}

impl SourceTriple {
    pub fn zeros(g: Grid, samples: usize) -> Self {
        let y = Fields::zeros(g);
        SourceTriple {
            s1: vec![y.v; samples],
            s2: vec![y.f; samples],
            s3: vec![y.m; samples],
        }
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }

    pub fn at(&self, k: usize) -> Fields {
        Fields {
            v: self.s1[k].clone(),
            f: self.s2[k].clone(),
            m: self.s3[k].clone(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        SourceTriple {
            s1: self.s1.iter().map(|s| s.scaled(a)).collect(),
            s2: self.s2.iter().map(|s| s.scaled(a)).collect(),
            s3: self.s3.iter().map(|s| s.scaled(a)).collect(),
        }
    }

    pub fn add(&self, o: &SourceTriple) -> Self {
        SourceTriple {
            s1: self.s1.iter().zip(&o.s1).map(|(a, b)| a.add(b)).collect(),
            s2: self.s2.iter().zip(&o.s2).map(|(a, b)| a.add(b)).collect(),
            s3: self.s3.iter().zip(&o.s3).map(|(a, b)| a.add(b)).collect(),
        }
    }

    /// `‖S1‖ + ‖S2‖ + ‖S3‖` in the time-trapezoid space-time L² norm.
    pub fn norm_sum(&self, weights: &[f64]) -> f64 {
        fn st<const C: usize>(s: &[crate::grid::Field<C>], w: &[f64]) -> f64 {
            s.iter().zip(w).map(|(f, w)| w * dot(f, f)).sum::<f64>().sqrt()
        }
        st(&self.s1, weights) + st(&self.s2, weights) + st(&self.s3, weights)
    }
}

/// One tangent step from `ls` (at `base.t`) with sources sampled at the
/// same time.
pub fn step_linearized(
    ls: &LinearizedState,
    base: &State,
    base_h: &Vector3Field,
    src: &Fields,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<LinearizedState> {
    if (ls.t - base.t).abs() > 1e-9 * dt.max(1e-300) + 1e-14 {
        return Err(Error::Structural(format!(
            "linearized state at t={} does not match base state at t={}",
            ls.t, base.t
        )));
    }
    let y = base.fields();
    let mut r = ls.fields();
    let mut e = explicit_jvp(&y, base_h, &r, None, params);
    e.axpy(1.0, src);
    r.axpy(dt, &e);
    let imp = implicit_solve(&r, dt, params, opts)?;
    if !imp.y.is_finite() {
        return Err(Error::NonFinite("linearized state"));
    }
    Ok(LinearizedState {
        dv: imp.y.v,
        dp: imp.potential.scaled(1.0 / dt),
        df: imp.y.f,
        dm: imp.y.m,
        t: ls.t + dt,
    })
}

#[derive(Clone, Debug)]
pub struct LinearizedSolution {
    pub states: Vec<LinearizedState>,
    /// `‖δ‖_𝕊`.
    pub s_norm: f64,
    /// `‖δ‖_𝕊 / Σ‖S_i‖`, zero for vanishing sources.
    pub ratio: f64,
}

/// Root-sum-square of the four space-time L² norms (time trapezoid).
pub fn s_norm(states: &[LinearizedState], weights: &[f64]) -> f64 {
    states
        .iter()
        .zip(weights)
        .map(|(s, w)| w * s.norm_sq())
        .sum::<f64>()
        .sqrt()
}

/// Tangent trajectory for the given sources, starting from zero.
pub fn solve_linearized(
    traj: &Trajectory,
    sources: &SourceTriple,
    opts: SolverOptions,
) -> Result<LinearizedSolution> {
    traj.require_full()?;
    let n = traj.steps;
    if sources.len() != n + 1 || sources.s2.len() != n + 1 || sources.s3.len() != n + 1 {
        return Err(Error::Structural(format!(
            "sources have {} samples, trajectory has {}",
            sources.len(),
            n + 1
        )));
    }
    let g = *traj.grid();
    let mut states = Vec::with_capacity(n + 1);
    states.push(LinearizedState::zeros(g, 0.0));
    for k in 0..n {
        let next = step_linearized(
            &states[k],
            &traj.states[k],
            &traj.h_samples[k],
            &sources.at(k),
            traj.dt,
            &traj.params,
            opts,
        )
        .map_err(|e| e.at_step("linearized", k))?;
        let mut next = next;
        next.t = (k + 1) as f64 * traj.dt;
        states.push(next);
    }
    let w = traj.time_weights();
    let sn = s_norm(&states, &w);
    let denom = sources.norm_sum(&w);
    Ok(LinearizedSolution {
        states,
        s_norm: sn,
        ratio: if denom > 0.0 { sn / denom } else { 0.0 },
    })
}

/// Sources `S1 = (∇δH)ᵀ M, S2 = 0, S3 = δH` along `traj`.
pub fn directional_sources(traj: &Trajectory, dh: &[Vector3Field]) -> Result<SourceTriple> {
    if dh.len() != traj.states.len() {
        return Err(Error::Structural(format!(
            "direction has {} samples, trajectory has {}",
            dh.len(),
            traj.states.len()
        )));
    }
    let g = *traj.grid();
    let n = g.len();
    let mut out = SourceTriple::zeros(g, dh.len());
    let mut d = vec![0.0; n];
    for (k, (s, h)) in traj.states.iter().zip(dh).enumerate() {
        h.check_compatible(&s.m)?;
        for i in 0..2 {
            for c in 0..3 {
                if i == 0 {
                    central_x(&g, h.comp(c), &mut d);
                } else {
                    central_y(&g, h.comp(c), &mut d);
                }
                let o = out.s1[k].comp_mut(i);
                for q in 0..n {
                    o[q] += d[q] * s.m.comp(c)[q];
                }
            }
        }
        out.s1[k].enforce_bc();
        out.s3[k] = h.clone().with_bc(Bc::NeumannZero);
    }
    Ok(out)
}

/// Derivative of the control-to-state map at the control of `traj` in the
/// direction `dh`.
pub fn directional_state_derivative(
    traj: &Trajectory,
    dh: &[Vector3Field],
    opts: SolverOptions,
) -> Result<LinearizedSolution> {
    let src = directional_sources(traj, dh)?;
    solve_linearized(traj, &src, opts)
}

/// `scale·(a - b)` for two trajectories on the same time grid.
pub fn trajectory_difference(a: &Trajectory, b: &Trajectory, scale: f64) -> Result<Vec<LinearizedState>> {
    if a.states.len() != b.states.len() {
        return Err(Error::Structural("trajectories have different lengths".into()));
    }
    Ok(a
        .states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| LinearizedState::difference(x, y, scale))
        .collect())
}
