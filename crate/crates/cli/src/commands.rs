use std::fmt;
use std::fs;
use std::path::Path;

use mvf_core::adjoint::{CostSpec, Target};
use mvf_core::control::{
    coil_cost, coil_field, coil_gradient, h_norm, kkt_residual, optimize_coils, optimize_field,
    reduced_cost, reduced_gradient, reduced_gradient_corrupted, stability_probe, time_inner, CoilBasis,
    CoilControl, ControlProblem, FieldControl, OptimizerOptions,
};
use mvf_core::poisson::leray_project;
use mvf_core::rng::{random_smooth, SplitMix64};
use mvf_core::snapshot::{read_snapshot, write_snapshot};
use mvf_core::state::{
    energy_report, read_checkpoint, solve_state, steps_for, strong_norm_monitor, write_checkpoint,
    EnergyReport, PhysParams, Preset, State, StrongNorms,
};
use mvf_core::{Bc, Field, Grid, SolverOptions, Tensor22Field, Vector2Field, Vector3Field};

use crate::config::{
    BasisKind, ConfigError, ControlKind, FieldSource, InitialPreset, Loaded, RunConfig, TargetConfig,
    TargetKind,
};
use crate::output::{Artifacts, Csv};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(mvf_core::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<mvf_core::Error> for CliError {
    fn from(e: mvf_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// How a command that ran to completion ended.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok(String),
    CheckFailed(String),
    NotConverged(String),
}

pub type CmdResult = Result<Outcome, CliError>;

pub struct Ctx<'a> {
    pub loaded: &'a Loaded,
    pub out: Artifacts,
    pub corrupt_adjoint: bool,
}

impl Ctx<'_> {
    fn cfg(&self) -> &RunConfig {
        &self.loaded.config
    }
}

fn grid(c: &RunConfig) -> Grid {
    Grid::new(c.grid.nx, c.grid.ny, c.grid.lx, c.grid.ly).expect("validated")
}

fn solver(c: &RunConfig) -> SolverOptions {
    SolverOptions {
        tol: c.solver.poisson_tol,
        max_iter: c.solver.max_cg_iters,
    }
}

fn params(c: &RunConfig) -> PhysParams {
    PhysParams {
        nu: c.params.nu,
        kappa: c.params.kappa,
        alpha: c.params.alpha,
    }
}

fn optimizer(c: &RunConfig) -> OptimizerOptions {
    OptimizerOptions {
        max_iter: c.optimizer.max_iter,
        grad_tol: c.optimizer.grad_tol,
        armijo_c: c.optimizer.armijo_c,
        armijo_shrink: c.optimizer.armijo_shrink,
        max_halvings: c.optimizer.max_halvings,
    }
}

fn samples(c: &RunConfig) -> usize {
    steps_for(c.time.t_final, c.time.dt).expect("validated") + 1
}

/// One snapshot, or every `*.snap` in a directory in name order.
pub fn read_sequence<const C: usize>(p: &Path) -> mvf_core::Result<Vec<Field<C>>> {
    if !p.is_dir() {
        return Ok(vec![read_snapshot::<C>(p)?.0]);
    }
    let mut names: Vec<_> = fs::read_dir(p)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|q| q.extension().is_some_and(|x| x == "snap"))
        .collect();
    names.sort();
    names.iter().map(|q| Ok(read_snapshot::<C>(q)?.0)).collect()
}

fn in_grid<const C: usize>(g: &Grid, f: Field<C>, key: &str) -> Result<Field<C>, CliError> {
    if f.grid() != g {
        return Err(ConfigError {
            line: None,
            key: key.into(),
            message: format!("snapshot grid {:?} does not match the configured grid", f.grid()),
        }
        .into());
    }
    Ok(f)
}

fn initial(ctx: &Ctx, g: Grid, opts: SolverOptions) -> Result<State, CliError> {
    let c = &ctx.cfg().initial;
    let preset = match c.preset {
        InitialPreset::Zero => Preset::Zero,
        InitialPreset::ConstantM => Preset::ConstantM(c.m),
        InitialPreset::Vortex => Preset::Vortex { amplitude: c.amplitude },
        InitialPreset::Snapshots => {
            let v = match &c.v_path {
                Some(s) => in_grid(&g, read_snapshot::<2>(&ctx.loaded.resolve(s))?.0, "initial.v_path")?,
                None => Vector2Field::zeros(g, Bc::DirichletZero),
            };
            let f = match &c.f_path {
                Some(s) => in_grid(&g, read_snapshot::<4>(&ctx.loaded.resolve(s))?.0, "initial.f_path")?,
                None => Tensor22Field::zeros(g, Bc::DirichletZero),
            };
            let m = match &c.m_path {
                Some(s) => in_grid(&g, read_snapshot::<3>(&ctx.loaded.resolve(s))?.0, "initial.m_path")?,
                None => Vector3Field::zeros(g, Bc::NeumannZero),
            };
            let v = leray_project(&v.with_bc(Bc::DirichletZero), opts)?.u;
            return Ok(State::new(v, f, m, 0.0)?);
        }
    };
    Ok(preset.build(g, opts)?)
}

/// Smooth random field control: a linear blend in time of two random fields.
pub fn random_field_control(g: Grid, n: usize, seed: u64, amp: f64) -> FieldControl {
    let mut rng = SplitMix64::new(seed);
    let a: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, amp);
    let b: Vector3Field = random_smooth(g, Bc::NeumannZero, &mut rng, 3, amp);
    let last = (n - 1).max(1) as f64;
    FieldControl {
        samples: (0..n)
            .map(|k| {
                let s = k as f64 / last;
                let mut h = a.scaled(1.0 - s);
                h.axpy(s, &b);
                h
            })
            .collect(),
    }
}

fn field_control(ctx: &Ctx, g: Grid) -> Result<FieldControl, CliError> {
    let c = &ctx.cfg().control;
    let n = samples(ctx.cfg());
    Ok(match c.field {
        FieldSource::Zero => FieldControl::zeros(g, n),
        FieldSource::Uniform => FieldControl {
            samples: vec![Vector3Field::uniform(g, Bc::NeumannZero, c.value); n],
        },
        FieldSource::Random => random_field_control(g, n, ctx.cfg().seed, c.amplitude),
        FieldSource::Snapshots => load_field(ctx, g, c.path.as_deref().unwrap_or_default(), "control.path")?,
    })
}

fn load_field(ctx: &Ctx, g: Grid, path: &str, key: &str) -> Result<FieldControl, CliError> {
    let n = samples(ctx.cfg());
    let seq = read_sequence::<3>(&ctx.loaded.resolve(path))?;
    let seq = seq
        .into_iter()
        .map(|f| in_grid(&g, f.with_bc(Bc::NeumannZero), key))
        .collect::<Result<Vec<_>, _>>()?;
    let samples = match seq.len() {
        1 => vec![seq[0].clone(); n],
        m if m == n => seq,
        m => {
            return Err(ConfigError {
                line: None,
                key: key.into(),
                message: format!("found {m} snapshots, need 1 or {n}"),
            }
            .into())
        }
    };
    Ok(FieldControl { samples })
}

fn target<const C: usize>(ctx: &Ctx, g: Grid, t: &TargetConfig, key: &str) -> Result<Target<C>, CliError> {
    Ok(match t.kind {
        TargetKind::Zero => Target::Zero,
        TargetKind::Constant => {
            let mut v = [0.0; C];
            v.copy_from_slice(&t.value);
            Target::Constant(Field::uniform(g, Bc::None, v))
        }
        TargetKind::Snapshots => {
            let seq = read_sequence::<C>(&ctx.loaded.resolve(t.path.as_deref().unwrap_or_default()))?;
            let mut seq = seq
                .into_iter()
                .map(|f| in_grid(&g, f, key))
                .collect::<Result<Vec<_>, _>>()?;
            if seq.len() == 1 {
                Target::Constant(seq.remove(0))
            } else {
                Target::Series(seq)
            }
        }
    })
}

pub fn problem(ctx: &Ctx) -> Result<ControlProblem, CliError> {
    let c = ctx.cfg();
    let g = grid(c);
    let opts = solver(c);
    let cost = CostSpec {
        a1: c.cost.a1,
        a2: c.cost.a2,
        a3: c.cost.a3,
        lambda: c.cost.lambda,
        v_d: target(ctx, g, &c.cost.v_target, "cost.v_target.path")?,
        f_d: target(ctx, g, &c.cost.f_target, "cost.f_target.path")?,
        m_d: target(ctx, g, &c.cost.m_target, "cost.m_target.path")?,
    };
    Ok(ControlProblem {
        init: initial(ctx, g, opts)?,
        t_final: c.time.t_final,
        dt: c.time.dt,
        params: params(c),
        cost,
        solver: opts,
    })
}

fn basis(ctx: &Ctx, g: Grid) -> Result<CoilBasis, CliError> {
    let c = &ctx.cfg().control;
    Ok(match c.basis {
        BasisKind::Bumps => CoilBasis::bumps(g, c.coils)?,
        BasisKind::Harmonics => CoilBasis::harmonics(g, c.coils)?,
        BasisKind::Snapshots => {
            let h = c
                .coil_paths
                .iter()
                .map(|p| {
                    let f = read_snapshot::<3>(&ctx.loaded.resolve(p))?.0;
                    in_grid(&g, f.with_bc(Bc::NeumannZero), "control.coil_paths")
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            CoilBasis::new(h)?
        }
    })
}

fn write_field_sequence(out: &mut Artifacts, dir: &str, h: &FieldControl, dt: f64) -> Result<(), CliError> {
    fs::create_dir_all(out.path(dir))?;
    for (k, f) in h.samples.iter().enumerate() {
        write_snapshot(&out.path(dir).join(format!("H_{k:06}.snap")), f, k as f64 * dt)?;
    }
    out.add(dir);
    Ok(())
}

fn energy_csv(rep: &EnergyReport) -> Csv {
    let mut csv = Csv::new(&[
        "t", "kinetic", "exchange", "penalty", "zeeman", "elastic", "total", "intrinsic", "delta",
        "zeeman_work",
    ]);
    for r in &rep.rows {
        let e = &r.energy;
        csv.row(&[
            r.t, e.kinetic, e.exchange, e.penalty, e.zeeman, e.elastic, e.total, r.intrinsic, r.delta,
            r.zeeman_work,
        ]);
    }
    csv
}

fn norms_csv(norms: &[StrongNorms]) -> Csv {
    let mut csv = Csv::new(&["t", "a", "b"]);
    for r in norms {
        csv.row(&[r.t, r.a, r.b]);
    }
    csv
}

pub fn simulate(ctx: &mut Ctx) -> CmdResult {
    let c = ctx.cfg().clone();
    let p = problem(ctx)?;
    let h = field_control(ctx, *p.grid())?;
    let traj = solve_state(&p.init, &h.samples, p.t_final, p.dt, &p.params, p.solver)?;
    let source = format!("{:?}", c.control.field).to_lowercase();
    write_checkpoint(&ctx.out.path("trajectory"), &traj, c.time.save_stride, &source)?;
    ctx.out.add("trajectory");
    let rep = energy_report(&traj);
    ctx.out.csv("energy.csv", energy_csv(&rep))?;
    ctx.out.csv("norms.csv", norms_csv(&strong_norm_monitor(&traj, p.solver)?))?;
    Ok(Outcome::Ok(format!(
        "simulated {} steps, max intrinsic energy increase {:.3e}",
        traj.steps, rep.max_increase
    )))
}

pub fn energy(ctx: &mut Ctx) -> CmdResult {
    let dir = ctx.cfg().energy.trajectory.clone().ok_or_else(|| ConfigError {
        line: None,
        key: "energy.trajectory".into(),
        message: "energy-report needs a trajectory directory".into(),
    })?;
    let traj = read_checkpoint(&ctx.loaded.resolve(&dir))?;
    let rep = energy_report(&traj);
    ctx.out.csv("energy.csv", energy_csv(&rep))?;
    ctx.out.csv("norms.csv", norms_csv(&strong_norm_monitor(&traj, solver(ctx.cfg()))?))?;
    Ok(Outcome::Ok(format!(
        "{} states, max intrinsic energy increase {:.3e}",
        traj.states.len(),
        rep.max_increase
    )))
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Taylor test of `J` (field) or `J̃` (coils) along a random direction.
pub fn gradient_check(ctx: &mut Ctx) -> CmdResult {
    let c = ctx.cfg().clone();
    let p = problem(ctx)?;
    let g = *p.grid();
    let w = p.weights()?;
    let n = w.len();
    let eps = c.check.epsilons.clone();
    // the random control uses `seed`, the direction `seed + 1`
    let dseed = c.seed.wrapping_add(1);

    let (j0, dj, grad_norm, kkt, values): (f64, f64, f64, f64, Vec<f64>) = match c.control.kind {
        ControlKind::Field => {
            let h = field_control(ctx, g)?;
            let d = random_field_control(g, n, dseed, c.check.amplitude);
            let rep = if ctx.corrupt_adjoint {
                reduced_gradient_corrupted(&p, &h)?
            } else {
                reduced_gradient(&p, &h)?
            };
            let dj = rep.apply(&d, &w);
            let values = eps
                .iter()
                .map(|&e| {
                    let mut hp = h.clone();
                    hp.axpy(e, &d);
                    Ok(reduced_cost(&p, &hp)?.0.total)
                })
                .collect::<mvf_core::Result<Vec<f64>>>()?;
            (rep.cost.total, dj, rep.norm_riesz, kkt_residual(&p, &rep), values)
        }
        ControlKind::Coils => {
            let b = basis(ctx, g)?;
            let u: Vec<Vec<f64>> = vec![vec![c.control.u0; n]; b.len()];
            let mut rng = SplitMix64::new(dseed);
            let d: Vec<Vec<f64>> = (0..b.len())
                .map(|_| (0..n).map(|_| c.check.amplitude * rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let mut cg = coil_gradient(&p, &b, &u)?;
            if ctx.corrupt_adjoint {
                for (gi, ui) in cg.g.iter_mut().zip(&u) {
                    for (x, y) in gi.iter_mut().zip(ui) {
                        *x = 0.5 * (*x - p.cost.lambda * y) + p.cost.lambda * y;
                    }
                }
            }
            let dj = time_inner(&cg.g, &d, &w);
            let values = eps
                .iter()
                .map(|&e| {
                    let up: Vec<Vec<f64>> = u
                        .iter()
                        .zip(&d)
                        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + e * y).collect())
                        .collect();
                    Ok(coil_cost(&p, &b, &up)?.0.total)
                })
                .collect::<mvf_core::Result<Vec<f64>>>()?;
            let norm = time_inner(&cg.g, &cg.g, &w).sqrt();
            (cg.cost.total, dj, norm, norm / p.cost.lambda, values)
        }
    };

    let mut csv = Csv::new(&["epsilon", "dq_error", "remainder"]);
    let mut dq = Vec::new();
    let mut rem = Vec::new();
    for (&e, &je) in eps.iter().zip(&values) {
        let r = (je - j0 - e * dj).abs();
        dq.push(r / e);
        rem.push(r);
        csv.row(&[e, r / e, r]);
    }
    ctx.out.csv("gradient_check.csv", csv)?;
    let dq_slope = slope(&eps, &dq);
    let rem_slope = slope(&eps, &rem);
    // a vanishing remainder means the expansion is exact to rounding
    let exact = rem.iter().all(|r| *r <= 1e-14 * (1.0 + j0.abs()));
    let pass = exact || ((0.8..=1.2).contains(&dq_slope) && (1.6..=2.4).contains(&rem_slope));
    let mut summary = Csv::new(&[
        "J", "grad_norm", "kkt_residual", "directional_derivative", "dq_slope", "remainder_slope", "passed",
    ]);
    summary.row(&[j0, grad_norm, kkt, dj, dq_slope, rem_slope, if pass { 1.0 } else { 0.0 }]);
    ctx.out.csv("gradient_summary.csv", summary)?;
    let msg = format!("Taylor remainder slope {rem_slope:.3}, difference quotient slope {dq_slope:.3}");
    Ok(if pass { Outcome::Ok(msg) } else { Outcome::CheckFailed(msg) })
}

pub fn optimize_field_cmd(ctx: &mut Ctx) -> CmdResult {
    let c = ctx.cfg().clone();
    let p = problem(ctx)?;
    let h0 = field_control(ctx, *p.grid())?;
    let opt = optimize_field(&p, &h0, &optimizer(&c))?;
    let mut csv = Csv::new(&["iter", "J", "grad_norm", "step"]);
    for r in &opt.history {
        csv.row(&[r.iter as f64, r.cost, r.grad_norm, r.step]);
    }
    ctx.out.csv("optimize.csv", csv)?;
    write_field_sequence(&mut ctx.out, "control", &opt.h, p.dt)?;
    let w = p.weights()?;
    let last = opt.history.last().expect("history starts with iterate 0");
    let msg = format!(
        "{} iterations, J = {:.6e}, |grad| = {:.3e}, |H| = {:.3e}, kkt residual {:.3e}",
        last.iter,
        last.cost,
        last.grad_norm,
        h_norm(&opt.h, &w),
        kkt_residual(&p, &opt.report)
    );
    Ok(if opt.converged { Outcome::Ok(msg) } else { Outcome::NotConverged(msg) })
}

pub fn optimize_coils_cmd(ctx: &mut Ctx) -> CmdResult {
    let c = ctx.cfg().clone();
    let p = problem(ctx)?;
    let g = *p.grid();
    let b = basis(ctx, g)?;
    let n = samples(&c);
    let start = CoilControl::constant(b.len(), n, c.control.u0, c.control.lower, c.control.upper)?;
    let opt = optimize_coils(&p, &b, &start, &optimizer(&c), c.seed)?;
    let mut csv = Csv::new(&["iter", "J", "grad_norm", "step", "fixedpoint_residual"]);
    for r in &opt.history {
        csv.row(&[
            r.iter as f64,
            r.cost,
            r.grad_norm,
            r.step,
            r.fixed_point_residual.unwrap_or(f64::NAN),
        ]);
    }
    ctx.out.csv("optimize.csv", csv)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..b.len()).map(|i| format!("u_{i}")));
    let mut coils = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for k in 0..n {
        let mut row = vec![k as f64 * p.dt];
        row.extend(opt.u.iter().map(|r| r[k]));
        coils.row(&row);
    }
    ctx.out.csv("coils.csv", coils)?;
    write_field_sequence(&mut ctx.out, "control", &coil_field(&opt.u, &b)?, p.dt)?;
    let msg = format!(
        "{} iterations, J = {:.6e}, fixed-point residual {:.3e}, VI residual {:.3e}",
        opt.history.len() - 1,
        opt.history.last().map(|r| r.cost).unwrap_or(f64::NAN),
        opt.fixed_point_residual,
        opt.vi_residual
    );
    Ok(if opt.converged { Outcome::Ok(msg) } else { Outcome::NotConverged(msg) })
}

pub fn stability(ctx: &mut Ctx) -> CmdResult {
    let c = ctx.cfg().clone();
    let p = problem(ctx)?;
    let g = *p.grid();
    let h1 = field_control(ctx, g)?;
    let dir = match &c.stability.h2_path {
        Some(s) => load_field(ctx, g, s, "stability.h2_path")?.sub(&h1),
        None => random_field_control(g, h1.len(), c.seed.wrapping_add(1), c.control.amplitude),
    };
    let mut csv = Csv::new(&[
        "epsilon", "rhs", "weak_lhs", "strong_lhs", "weak_ratio", "strong_ratio", "weak_lipschitz",
        "strong_lipschitz",
    ]);
    let mut lip = Vec::new();
    for &e in &c.stability.epsilons {
        let mut h2 = h1.clone();
        if e != 0.0 {
            h2.axpy(e, &dir);
        }
        let r = stability_probe(&p, &h1, &h2)?;
        csv.row(&[
            e, r.rhs, r.weak_lhs, r.strong_lhs, r.weak_ratio, r.strong_ratio, r.weak_lipschitz,
            r.strong_lipschitz,
        ]);
        if r.rhs > 0.0 {
            lip.push((r.weak_lipschitz, r.strong_lipschitz));
        }
    }
    ctx.out.csv("stability.csv", csv)?;
    if lip.len() < 2 {
        return Ok(Outcome::Ok(format!("{} probes", c.stability.epsilons.len())));
    }
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = lip.iter().map(f).collect();
        let hi = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    };
    let (ws, ss) = (spread(|r| r.0), spread(|r| r.1));
    let msg = format!("Lipschitz ratio spread: weak {ws:.3}, strong {ss:.3}");
    Ok(if ws < 3.0 && ss < 3.0 { Outcome::Ok(msg) } else { Outcome::CheckFailed(msg) })
}
