mod common;

use common::{loglog_slope, random_control, tight, tracking_problem};
use mvf_core::adjoint::{CostSpec, Target};
use mvf_core::control::{
    coil_cost, coil_field, coil_gradient, fixed_point_residual, h_inner, h_norm, kkt_residual,
    optimize_coils, optimize_field, project_box, reduced_cost, reduced_gradient,
    reduced_gradient_corrupted, stability_probe, time_inner, CoilBasis, CoilControl, ControlProblem,
    FieldControl, GradientReport, OptimizerOptions,
};
use mvf_core::grid::inner_l2;
use mvf_core::state::{PhysParams, Preset};
use mvf_core::{Bc, Error, Grid, Vector3Field};

const EPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn zero_problem(c: [f64; 3]) -> ControlProblem {
    let g = Grid::unit(8).unwrap();
    ControlProblem {
        init: Preset::Zero.build(g, tight()).unwrap(),
        t_final: 0.05,
        dt: 1e-2,
        params: PhysParams::default(),
        cost: CostSpec {
            a3: 1.0,
            m_d: Target::Constant(Vector3Field::uniform(g, Bc::NeumannZero, c)),
            ..CostSpec::regularization_only(1e-2)
        },
        solver: tight(),
    }
}

fn taylor_remainders(
    p: &ControlProblem,
    h: &FieldControl,
    grad: &GradientReport,
    dh: &FieldControl,
) -> Vec<f64> {
    let w = p.weights().unwrap();
    let j0 = reduced_cost(p, h).unwrap().0.total;
    let slope = grad.apply(dh, &w);
    EPS.iter()
        .map(|&e| {
            let mut hp = h.clone();
            hp.axpy(e, dh);
            (reduced_cost(p, &hp).unwrap().0.total - j0 - e * slope).abs()
        })
        .collect()
}

#[test]
fn zero_data_costs_nothing() {
    let mut p = zero_problem([0.0; 3]);
    p.cost.a3 = 0.0;
    let h = FieldControl::zeros(*p.grid(), p.steps().unwrap() + 1);
    let (j, _) = reduced_cost(&p, &h).unwrap();
    assert_eq!(j.total, 0.0);
}

#[test]
fn constant_target_closed_form() {
    let c = [0.3, -0.4, 1.2];
    let p = zero_problem(c);
    let h = FieldControl::zeros(*p.grid(), p.steps().unwrap() + 1);
    let (j, _) = reduced_cost(&p, &h).unwrap();
    let c2: f64 = c.iter().map(|x| x * x).sum();
    let expect = 0.5 * p.t_final * c2;
    assert!((j.total - expect).abs() <= 1e-12 * expect, "{} vs {expect}", j.total);
    assert_eq!(j.regularization, 0.0);
}

#[test]
fn regularization_scales_with_lambda() {
    let p = tracking_problem(16, 0.01, 1e-3);
    let h = random_control(&p, 3, 1.0);
    let w = p.weights().unwrap();
    let a = reduced_cost(&p, &h).unwrap().0;
    let mut q = p.clone();
    q.cost.lambda *= 2.0;
    let b = reduced_cost(&q, &h).unwrap().0;
    let expect = 0.5 * p.cost.lambda * h_norm(&h, &w).powi(2);
    assert!((b.total - a.total - expect).abs() <= 1e-12 * b.total);
    assert!((a.tracking - b.tracking).abs() == 0.0);
}

#[test]
fn gradient_passes_taylor_test() {
    let p = tracking_problem(16, 0.02, 1e-3);
    let h = random_control(&p, 10, 1.0);
    let grad = reduced_gradient(&p, &h).unwrap();
    for seed in 0..3 {
        let dh = random_control(&p, 20 + seed, 1.0);
        let r = taylor_remainders(&p, &h, &grad, &dh);
        let s = loglog_slope(&EPS, &r);
        assert!((1.6..=2.4).contains(&s), "direction {seed}: slope {s} {r:?}");
    }
}

#[test]
fn corrupted_gradient_fails_taylor_test() {
    let p = tracking_problem(16, 0.02, 1e-3);
    let h = random_control(&p, 10, 1.0);
    let grad = reduced_gradient_corrupted(&p, &h).unwrap();
    let dh = random_control(&p, 20, 1.0);
    let r = taylor_remainders(&p, &h, &grad, &dh);
    let s = loglog_slope(&EPS, &r);
    assert!(s < 1.6, "slope {s}");
}

#[test]
fn pure_regularization_gradient() {
    let mut p = tracking_problem(16, 0.01, 1e-3);
    p.cost = CostSpec::regularization_only(0.3);
    let w = p.weights().unwrap();
    let h = random_control(&p, 5, 1.0);
    let rep = reduced_gradient(&p, &h).unwrap();
    let diff = rep.riesz.sub(&h.scaled(0.3));
    assert!(h_norm(&diff, &w) <= 1e-12 * h_norm(&h, &w));

    let z = FieldControl::zeros(*p.grid(), w.len());
    let rep = reduced_gradient(&p, &z).unwrap();
    assert_eq!(kkt_residual(&p, &rep), 0.0);
}

#[test]
fn kkt_residual_matches_gradient_norm() {
    let p = tracking_problem(16, 0.01, 1e-3);
    let w = p.weights().unwrap();
    let h = random_control(&p, 6, 1.0);
    let rep = reduced_gradient(&p, &h).unwrap();
    let k = kkt_residual(&p, &rep);
    assert!((k - rep.norm_dual / p.cost.lambda).abs() <= 1e-14 * k);
    // dual and Riesz representatives describe the same functional
    let dh = random_control(&p, 7, 1.0);
    let via_riesz = h_inner(&rep.riesz, &dh, &w);
    let via_dual: f64 = (0..w.len())
        .map(|i| w[i] * inner_l2(&rep.dual.samples[i], &dh.samples[i]).unwrap())
        .sum();
    assert!((via_riesz - via_dual).abs() <= 1e-10 * via_riesz.abs());
    assert!((rep.norm_riesz - h_norm(&rep.riesz, &w)).abs() <= 1e-12 * rep.norm_riesz);
}

#[test]
fn optimizer_drives_pure_regularization_to_zero() {
    let mut p = tracking_problem(16, 0.01, 1e-3);
    p.cost = CostSpec::regularization_only(0.5);
    let w = p.weights().unwrap();
    let h0 = random_control(&p, 8, 1.0);
    let opt = optimize_field(&p, &h0, &OptimizerOptions::default()).unwrap();
    assert!(opt.converged);
    assert!(opt.history.len() <= 51);
    assert!(h_norm(&opt.h, &w) <= 1e-6);
}

#[test]
fn field_optimizer_decreases_cost_and_gradient() {
    let mut p = tracking_problem(16, 0.02, 1e-3);
    p.cost.lambda = 1.0;
    let h0 = FieldControl::zeros(*p.grid(), p.steps().unwrap() + 1);
    let opts = OptimizerOptions {
        grad_tol: 1e-9,
        ..OptimizerOptions::default()
    };
    let opt = optimize_field(&p, &h0, &opts).unwrap();
    assert!(opt.converged);
    for pair in opt.history.windows(2) {
        assert!(pair[1].cost <= pair[0].cost, "{} > {}", pair[1].cost, pair[0].cost);
    }
    let first = &opt.history[0];
    let last = opt.history.last().unwrap();
    assert!(last.cost < first.cost);
    assert!(last.grad_norm * 100.0 <= first.grad_norm);
    let k = kkt_residual(&p, &opt.report);
    assert!(k <= opts.grad_tol * (1.0 + p.cost.lambda), "kkt {k}");
}

#[test]
fn coil_field_superposes() {
    let g = Grid::unit(8).unwrap();
    let basis = CoilBasis::bumps(g, 2).unwrap();
    let u = vec![vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 0.5]];
    let h = coil_field(&u, &basis).unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(h.samples[0].sub(&basis.h[0]).max_abs(), 0.0);
    assert_eq!(h.samples[1].add(&basis.h[1]).max_abs(), 0.0);
    let mut e = basis.h[0].scaled(2.0);
    e.axpy(0.5, &basis.h[1]);
    assert!(h.samples[2].sub(&e).max_abs() <= 1e-15);

    let zero = coil_field(&[vec![0.0; 3], vec![0.0; 3]], &basis).unwrap();
    assert!(zero.samples.iter().all(|s| s.max_abs() == 0.0));
    assert!(matches!(coil_field(&[vec![0.0; 3]], &basis), Err(Error::Structural(_))));
    assert!(matches!(
        coil_field(&[vec![0.0; 3], vec![0.0; 2]], &basis),
        Err(Error::Structural(_))
    ));
}

#[test]
fn box_projection() {
    let a = vec![vec![-1.0, -1.0, 0.0]];
    let b = vec![vec![1.0, 1.0, 0.0]];
    let p = project_box(&[vec![2.0, -3.0, 5.0]], &a, &b);
    assert_eq!(p, vec![vec![1.0, -1.0, 0.0]]);
    let inside = vec![vec![0.25, -0.5, 0.0]];
    assert_eq!(project_box(&inside, &a, &b), inside);
    assert!(matches!(
        CoilControl::new(vec![vec![0.0]], vec![vec![1.0]], vec![vec![0.0]]),
        Err(Error::Usage(_))
    ));
}

#[test]
fn coil_gradient_without_tracking_is_lambda_u() {
    let mut p = tracking_problem(16, 0.01, 1e-3);
    p.cost = CostSpec::regularization_only(0.7);
    let basis = CoilBasis::harmonics(*p.grid(), 3).unwrap();
    let n = p.steps().unwrap() + 1;
    let u: Vec<Vec<f64>> = (0..3).map(|i| (0..n).map(|k| (i + k) as f64 * 0.1).collect()).collect();
    let g = coil_gradient(&p, &basis, &u).unwrap();
    for (gi, ui) in g.g.iter().zip(&u) {
        for (x, y) in gi.iter().zip(ui) {
            assert!((x - 0.7 * y).abs() <= 1e-15);
        }
    }
}

fn coil_setup() -> (ControlProblem, CoilBasis, Vec<Vec<f64>>) {
    let p = tracking_problem(16, 0.02, 1e-3);
    let basis = CoilBasis::bumps(*p.grid(), 2).unwrap();
    let n = p.steps().unwrap() + 1;
    let u = (0..2)
        .map(|i| (0..n).map(|k| 0.3 * (i as f64 + 1.0) * (k as f64 * 0.2).sin()).collect())
        .collect();
    (p, basis, u)
}

#[test]
fn coil_gradient_is_the_chain_rule() {
    let (p, basis, u) = coil_setup();
    let w = p.weights().unwrap();
    let cg = coil_gradient(&p, &basis, &u).unwrap();
    let rep = reduced_gradient(&p, &coil_field(&u, &basis).unwrap()).unwrap();
    let du: Vec<Vec<f64>> = (0..2)
        .map(|i| (0..w.len()).map(|k| ((i * 7 + k * 3) % 5) as f64 - 2.0).collect())
        .collect();
    let dh = coil_field(&du, &basis).unwrap();
    let lhs = time_inner(&cg.d, &du, &w);
    let rhs: f64 = (0..w.len())
        .map(|k| w[k] * inner_l2(&rep.adjoint_density.samples[k], &dh.samples[k]).unwrap())
        .sum();
    assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1e-300), "{lhs} vs {rhs}");
}

#[test]
fn coil_gradient_passes_taylor_test() {
    let (p, basis, u) = coil_setup();
    let w = p.weights().unwrap();
    let cg = coil_gradient(&p, &basis, &u).unwrap();
    let du: Vec<Vec<f64>> = (0..2)
        .map(|i| (0..w.len()).map(|k| 1.0 + 0.1 * (i + k) as f64).collect())
        .collect();
    let j0 = coil_cost(&p, &basis, &u).unwrap().0.total;
    let slope = time_inner(&cg.g, &du, &w);
    let r: Vec<f64> = EPS
        .iter()
        .map(|&e| {
            let up: Vec<Vec<f64>> = u
                .iter()
                .zip(&du)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + e * y).collect())
                .collect();
            (coil_cost(&p, &basis, &up).unwrap().0.total - j0 - e * slope).abs()
        })
        .collect();
    let s = loglog_slope(&EPS, &r);
    assert!((1.6..=2.4).contains(&s), "slope {s} {r:?}");
}

#[test]
fn coil_optimizer_regularization_only() {
    let mut p = tracking_problem(8, 0.01, 1e-3);
    p.cost = CostSpec::regularization_only(0.2);
    let basis = CoilBasis::bumps(*p.grid(), 2).unwrap();
    let n = p.steps().unwrap() + 1;
    let opts = OptimizerOptions::default();

    let start = CoilControl::constant(2, n, 0.5, -1.0, 1.0).unwrap();
    let opt = optimize_coils(&p, &basis, &start, &opts, 1).unwrap();
    assert!(opt.converged);
    assert!(opt.u.iter().flatten().all(|x| x.abs() <= 1e-8));

    let start = CoilControl::constant(2, n, 1.5, 1.0, 2.0).unwrap();
    let opt = optimize_coils(&p, &basis, &start, &opts, 1).unwrap();
    assert!(opt.u.iter().flatten().all(|x| (x - 1.0).abs() <= 1e-12));
    assert!(opt.fixed_point_residual <= 1e-8);
}

#[test]
fn coil_optimizer_tracking_run() {
    let p = tracking_problem(16, 0.02, 1e-3);
    let basis = CoilBasis::bumps(*p.grid(), 2).unwrap();
    let n = p.steps().unwrap() + 1;
    let start = CoilControl::constant(2, n, 0.0, -0.5, 0.5).unwrap();
    let opts = OptimizerOptions {
        max_iter: 100,
        grad_tol: 1e-8,
        ..OptimizerOptions::default()
    };
    let opt = optimize_coils(&p, &basis, &start, &opts, 42).unwrap();
    assert!(opt.converged);
    let done = CoilControl::new(opt.u.clone(), start.a.clone(), start.b.clone()).unwrap();
    assert!(done.is_feasible());
    for pair in opt.history.windows(2) {
        assert!(pair[1].cost < pair[0].cost);
    }
    // projection formula u = P(-d/λ)
    let lam = p.cost.lambda;
    let target: Vec<Vec<f64>> =
        opt.gradient.d.iter().map(|r| r.iter().map(|x| -x / lam).collect()).collect();
    let proj = project_box(&target, &start.a, &start.b);
    for (r, q) in opt.u.iter().zip(&proj) {
        for (x, y) in r.iter().zip(q) {
            assert!((x - y).abs() <= 10.0 * opts.grad_tol / lam, "{x} vs {y}");
        }
    }
    let w = p.weights().unwrap();
    let fp = fixed_point_residual(&opt.u, &opt.gradient.d, &start.a, &start.b, lam, &w);
    assert!(fp <= opts.grad_tol && (fp - opt.fixed_point_residual).abs() <= 1e-15);
    assert!(opt.vi_residual >= -1e-6, "vi {}", opt.vi_residual);
    // some bounds are active
    assert!(opt.u.iter().flatten().any(|x| (x.abs() - 0.5).abs() < 1e-12));
}

#[test]
fn stability_probe_is_zero_on_equal_controls() {
    let p = tracking_problem(16, 0.01, 1e-3);
    let h = random_control(&p, 30, 1.0);
    let r = stability_probe(&p, &h, &h).unwrap();
    assert_eq!(r.rhs, 0.0);
    assert_eq!(r.weak_lhs, 0.0);
    assert_eq!(r.strong_lhs, 0.0);
    assert_eq!(r.weak_ratio, 0.0);
}

#[test]
fn stability_ratio_is_bounded_under_refinement_of_the_perturbation() {
    let p = tracking_problem(16, 0.02, 1e-3);
    let h = random_control(&p, 31, 1.0);
    let dh = random_control(&p, 32, 1.0);
    let ratios: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&e| {
            let mut h2 = h.clone();
            h2.axpy(e, &dh);
            let r = stability_probe(&p, &h, &h2).unwrap();
            assert!(r.rhs > 0.0 && r.weak_lhs > 0.0 && r.strong_lhs > 0.0);
            (r.weak_lipschitz, r.strong_lipschitz)
        })
        .collect();
    for pick in [|r: &(f64, f64)| r.0, |r: &(f64, f64)| r.1] {
        let v: Vec<f64> = ratios.iter().map(pick).collect();
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 3.0, "{v:?}");
    }
}
