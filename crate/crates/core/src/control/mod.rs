//! Reduced cost functionals, adjoint gradients and the two optimizers:
//! an unconstrained external field and box-constrained coil intensities.

mod coils;
mod field;
mod stability;

pub use coils::{
    coil_cost, coil_field, coil_gradient, fixed_point_residual, optimize_coils, project_box,
    CoilBasis, CoilControl, CoilGradient, CoilOptimum,
};
pub use field::{
    kkt_residual, optimize_field, reduced_cost, reduced_gradient, reduced_gradient_corrupted,
    FieldOptimum, GradientReport,
};
pub use stability::{stability_probe, StabilityReport};

use serde::{Deserialize, Serialize};

use crate::adjoint::CostSpec;
use crate::error::{Error, Result};
use crate::grid::{dot, Bc, Grid, Vector3Field};
use crate::krylov::SolverOptions;
use crate::state::{steps_for, time_weights, PhysParams, State};
use crate::stencil::lap_neumann;

/// Everything that stays fixed while the control varies.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub init: State,
    pub t_final: f64,
    pub dt: f64,
    pub params: PhysParams,
    pub cost: CostSpec,
    pub solver: SolverOptions,
}

impl ControlProblem {
    pub fn grid(&self) -> &Grid {
        self.init.grid()
    }

    pub fn steps(&self) -> Result<usize> {
        steps_for(self.t_final, self.dt)
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        Ok(time_weights(self.steps()?, self.dt))
    }
}

/// Control samples `H(·, t_k)`, `k = 0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldControl {
    pub samples: Vec<Vector3Field>,
}

impl FieldControl {
    pub fn zeros(g: Grid, samples: usize) -> Self {
        FieldControl {
            samples: vec![Vector3Field::zeros(g, Bc::NeumannZero); samples],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn axpy(&mut self, a: f64, x: &FieldControl) {
        for (s, xs) in self.samples.iter_mut().zip(&x.samples) {
            s.axpy(a, xs);
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        FieldControl {
            samples: self.samples.iter().map(|s| s.scaled(a)).collect(),
        }
    }

    pub fn add(&self, o: &FieldControl) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, o);
        out
    }

    pub fn sub(&self, o: &FieldControl) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }

    /// Shape and finiteness check against a problem.
    pub fn check(&self, problem: &ControlProblem) -> Result<()> {
        let n = problem.steps()?;
        if self.samples.len() != n + 1 {
            return Err(Error::Structural(format!(
                "control has {} samples, need {}",
                self.samples.len(),
                n + 1
            )));
        }
        for s in &self.samples {
            s.grid().check_same(problem.grid())?;
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("control"));
        }
        Ok(())
    }
}

/// `Σ_k τ_k (<a_k, b_k> + <∇a_k, ∇b_k>)`, the gradient term taken as
/// `<a, -Δ_N b>`.
pub fn h_inner(a: &FieldControl, b: &FieldControl, weights: &[f64]) -> f64 {
    let mut lap = Vector3Field::zeros(*a.samples[0].grid(), Bc::NeumannZero);
    a.samples
        .iter()
        .zip(&b.samples)
        .zip(weights)
        .map(|((x, y), w)| {
            let g = *y.grid();
            for c in 0..3 {
                lap_neumann(&g, y.comp(c), lap.comp_mut(c));
            }
            w * (dot(x, y) - dot(x, &lap))
        })
        .sum()
}

pub fn h_norm(a: &FieldControl, weights: &[f64]) -> f64 {
    h_inner(a, a, weights).max(0.0).sqrt()
}

/// `Σ_k τ_k <a_k, b_k>` for intensity matrices stored coil-major.
pub fn time_inner(a: &[Vec<f64>], b: &[Vec<f64>], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).zip(weights).map(|((p, q), w)| w * p * q).sum::<f64>())
        .sum()
}

/// Value of a reduced cost split into its two parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostValue {
    pub total: f64,
    pub tracking: f64,
    pub regularization: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iter: 50,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            max_halvings: 40,
        }
    }
}

/// One accepted optimizer iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Only for the coil problem.
    pub fixed_point_residual: Option<f64>,
}
