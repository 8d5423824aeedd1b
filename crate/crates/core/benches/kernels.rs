use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvf_core::par::set_parallel;
use mvf_core::poisson::leray_project;
use mvf_core::rng::{random_smooth, SplitMix64};
use mvf_core::state::{step_state, PhysParams, Preset};
use mvf_core::stencil::laplacian;
use mvf_core::{Bc, Grid, SolverOptions, Vector2Field, Vector3Field};

const OPTS: SolverOptions = SolverOptions {
    tol: 1e-10,
    max_iter: 20000,
};

fn paths() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn bench_laplacian(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    for n in [128, 256] {
        let g = Grid::unit(n).unwrap();
        let mut rng = SplitMix64::new(1);
        let f: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 4, 1.0);
        for (name, on) in paths() {
            set_parallel(on);
            group.bench_with_input(BenchmarkId::new(name, n), &f, |b, f| {
                b.iter(|| laplacian(f).unwrap())
            });
        }
    }
    set_parallel(true);
    group.finish();
}

fn bench_projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("leray_project");
    group.sample_size(10);
    for n in [64, 128] {
        let g = Grid::unit(n).unwrap();
        let mut rng = SplitMix64::new(2);
        let f: Vector2Field =
            random_smooth::<2>(g, Bc::NeumannZero, &mut rng, 4, 1.0).with_bc(Bc::DirichletZero);
        for (name, on) in paths() {
            set_parallel(on);
            group.bench_with_input(BenchmarkId::new(name, n), &f, |b, f| {
                b.iter(|| leray_project(f, OPTS).unwrap())
            });
        }
    }
    set_parallel(true);
    group.finish();
}

fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("state_step");
    group.sample_size(10);
    let params = PhysParams::default();
    for n in [64, 128] {
        let g = Grid::unit(n).unwrap();
        let s = Preset::Vortex { amplitude: 0.5 }.build(g, OPTS).unwrap();
        let h = Vector3Field::uniform(g, Bc::NeumannZero, [0.0, 0.0, 1.0]);
        for (name, on) in paths() {
            set_parallel(on);
            group.bench_with_input(BenchmarkId::new(name, n), &s, |b, s| {
                b.iter(|| step_state(s, &h, 1e-3, &params, OPTS).unwrap())
            });
        }
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench_laplacian, bench_projection, bench_step);
criterion_main!(benches);
