//! Empirical stability of the control-to-state map.

use serde::Serialize;

use super::{h_norm, ControlProblem, FieldControl};
use crate::error::{Error, Result};
use crate::grid::{dot, norm_h1, norm_h2, norm_h3};
use crate::state::{solve_state, Trajectory};
use crate::stencil::laplacian_any;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `max_k(‖v̄‖² + ‖F̄‖² + ‖M̄‖²_H¹) + Σ τ(‖v̄‖²_H¹ + ‖F̄‖²_H¹ + ‖ΔM̄‖²)`.
    pub weak_lhs: f64,
    /// `max_k(‖v̄‖²_H¹ + ‖F̄‖²_H¹ + ‖M̄‖²_H²) + Σ τ(‖v̄‖²_H² + ‖F̄‖²_H² + ‖M̄‖²_H³)`.
    pub strong_lhs: f64,
    /// `‖H₁ - H₂‖_ℍ`.
    pub rhs: f64,
    /// `lhs / rhs`, zero when the controls coincide.
    pub weak_ratio: f64,
    pub strong_ratio: f64,
    /// `sqrt(lhs) / rhs`: the ratio that stays bounded for a Lipschitz map.
    pub weak_lipschitz: f64,
    pub strong_lipschitz: f64,
}

fn aggregates(a: &Trajectory, b: &Trajectory) -> (f64, f64) {
    let w = a.time_weights();
    let (mut wmax, mut smax, mut wsum, mut ssum) = (0.0f64, 0.0f64, 0.0, 0.0);
    for (k, (x, y)) in a.states.iter().zip(&b.states).enumerate() {
        let v = x.v.sub(&y.v);
        let f = x.f.sub(&y.f);
        let m = x.m.sub(&y.m);
        let lap = laplacian_any(&m);
        let (v1, f1, m1) = (norm_h1(&v), norm_h1(&f), norm_h1(&m));
        let (v2, f2, m2) = (norm_h2(&v), norm_h2(&f), norm_h2(&m));
        wmax = wmax.max(dot(&v, &v) + dot(&f, &f) + m1 * m1);
        smax = smax.max(v1 * v1 + f1 * f1 + m2 * m2);
        wsum += w[k] * (v1 * v1 + f1 * f1 + dot(&lap, &lap));
        let m3 = norm_h3(&m);
        ssum += w[k] * (v2 * v2 + f2 * f2 + m3 * m3);
    }
    (wmax + wsum, smax + ssum)
}

/// Runs both controls and compares the state differences with the control
/// difference.
pub fn stability_probe(problem: &ControlProblem, h1: &FieldControl, h2: &FieldControl) -> Result<StabilityReport> {
    h1.check(problem)?;
    h2.check(problem)?;
    let run = |h: &FieldControl| {
        solve_state(
            &problem.init,
            &h.samples,
            problem.t_final,
            problem.dt,
            &problem.params,
            problem.solver,
        )
    };
    let a = run(h1)?;
    let b = if h1 == h2 { a.clone() } else { run(h2)? };
    let (weak_lhs, strong_lhs) = aggregates(&a, &b);
    let rhs = h_norm(&h1.sub(h2), &a.time_weights());
    if !(weak_lhs.is_finite() && strong_lhs.is_finite()) {
        return Err(Error::NonFinite("stability aggregates"));
    }
    let ratio = |x: f64| if rhs > 0.0 { x / rhs } else { 0.0 };
    Ok(StabilityReport {
        weak_lhs,
        strong_lhs,
        rhs,
        weak_ratio: ratio(weak_lhs),
        strong_ratio: ratio(strong_lhs),
        weak_lipschitz: ratio(weak_lhs.sqrt()),
        strong_lipschitz: ratio(strong_lhs.sqrt()),
    })
}
