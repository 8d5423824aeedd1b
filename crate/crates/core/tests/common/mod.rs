#![allow(dead_code)]

use mvf_core::adjoint::{CostSpec, Target};
use mvf_core::control::{ControlProblem, FieldControl};
use mvf_core::rng::{random_smooth, SplitMix64};
use mvf_core::state::{PhysParams, Preset};
use mvf_core::{Bc, Grid, SolverOptions, Vector3Field};

pub fn tight() -> SolverOptions {
    SolverOptions {
        tol: 1e-13,
        max_iter: 20000,
    }
}

/// Small tracking problem around the vortex preset.
pub fn tracking_problem(n: usize, t_final: f64, dt: f64) -> ControlProblem {
    let g = Grid::unit(n).unwrap();
    let init = Preset::Vortex { amplitude: 0.5 }.build(g, tight()).unwrap();
    let md = Vector3Field::uniform(g, Bc::NeumannZero, [0.6, 0.0, 0.8]);
    ControlProblem {
        init,
        t_final,
        dt,
        params: PhysParams::default(),
        cost: CostSpec {
            a1: 1.0,
            a2: 0.5,
            a3: 1.0,
            lambda: 1e-2,
            v_d: Target::Zero,
            f_d: Target::Zero,
            m_d: Target::Constant(md),
        },
        solver: tight(),
    }
}

/// Smooth control sampled on the problem's time grid with a time profile.
pub fn random_control(p: &ControlProblem, seed: u64, amp: f64) -> FieldControl {
    let g = *p.grid();
    let n = p.steps().unwrap();
    let mut rng = SplitMix64::new(seed);
    let a: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, amp);
    let b: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, amp);
    let t_final = p.t_final;
    FieldControl {
        samples: (0..=n)
            .map(|k| {
                let s = k as f64 * p.dt / t_final;
                let mut h = a.scaled(1.0 - s);
                h.axpy(s, &b);
                h
            })
            .collect(),
    }
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
