use std::f64::consts::PI;

use mvf_core::grid::{inner_l2, norm_l2};
use mvf_core::poisson::leray_project;
use mvf_core::rng::{random_smooth, SplitMix64};
use mvf_core::stencil::{discrete_curl, divergence, gradient_scalar};
use mvf_core::{Bc, Grid, ScalarField, SolverOptions, Vector2Field};

const TOL: f64 = 1e-10;

fn opts() -> SolverOptions {
    SolverOptions {
        tol: TOL,
        max_iter: 20000,
    }
}

fn grid() -> Grid {
    Grid::unit(64).unwrap()
}

fn random_vector(g: Grid, seed: u64) -> Vector2Field {
    let mut rng = SplitMix64::new(seed);
    random_smooth::<2>(g, Bc::NeumannZero, &mut rng, 5, 1.0).with_bc(Bc::DirichletZero)
}

#[test]
fn zero_maps_to_zero() {
    let g = grid();
    let pr = leray_project(&Vector2Field::zeros(g, Bc::DirichletZero), opts()).unwrap();
    assert_eq!(pr.u.max_abs(), 0.0);
    assert_eq!(pr.p.max_abs(), 0.0);
}

#[test]
fn output_is_divergence_free_and_idempotent() {
    let g = grid();
    for seed in 1..=3 {
        let f = random_vector(g, seed);
        let pr = leray_project(&f, opts()).unwrap();
        let div = norm_l2(&divergence(&pr.u));
        assert!(div <= TOL * norm_l2(&f), "divergence {div} vs {}", TOL * norm_l2(&f));
        let again = leray_project(&pr.u, opts()).unwrap();
        let diff = norm_l2(&again.u.sub(&pr.u));
        assert!(diff <= 10.0 * TOL * norm_l2(&f), "idempotence defect {diff}");
    }
}

#[test]
fn projection_is_symmetric_and_contracting() {
    let g = grid();
    let f = random_vector(g, 11);
    let h = random_vector(g, 12);
    let pf = leray_project(&f, opts()).unwrap().u;
    let ph = leray_project(&h, opts()).unwrap().u;
    let a = inner_l2(&pf, &h).unwrap();
    let b = inner_l2(&f, &ph).unwrap();
    assert!((a - b).abs() <= 10.0 * TOL * norm_l2(&f) * norm_l2(&h), "{a} vs {b}");
    assert!(norm_l2(&pf) <= norm_l2(&f) * (1.0 + 1e-8));
}

#[test]
fn gradients_are_annihilated() {
    let g = grid();
    let q = ScalarField::from_fn(g, Bc::NeumannZero, |x, y| [(PI * x).cos() * (2.0 * PI * y).cos()]);
    let f = gradient_scalar(&q).with_bc(Bc::DirichletZero);
    let pr = leray_project(&f, opts()).unwrap();
    assert!(norm_l2(&pr.u) <= 100.0 * TOL * norm_l2(&f), "{}", norm_l2(&pr.u));
}

#[test]
fn compactly_supported_curl_is_fixed() {
    let g = grid();
    let bump = |t: f64| if (0.2..=0.8).contains(&t) { ((t - 0.2) * (0.8 - t) * 10.0).powi(4) } else { 0.0 };
    let psi = ScalarField::from_fn(g, Bc::None, |x, y| [bump(x) * bump(y) * (2.0 * PI * x).sin()]);
    let f = discrete_curl(&psi);
    assert!(norm_l2(&divergence(&f)) < 1e-10);
    let pr = leray_project(&f, opts()).unwrap();
    let rel = norm_l2(&pr.u.sub(&f)) / norm_l2(&f);
    assert!(rel <= 100.0 * TOL, "relative change {rel}");
}

#[test]
fn potential_has_zero_mean() {
    let g = grid();
    let pr = leray_project(&random_vector(g, 4), opts()).unwrap();
    let one = ScalarField::uniform(g, Bc::None, [1.0]);
    let m = inner_l2(&pr.p.clone().with_bc(Bc::None), &one).unwrap();
    assert!(m.abs() < 1e-12 * (1.0 + norm_l2(&pr.p)));
}
