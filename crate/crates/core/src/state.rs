//! Forward solver for the coupled velocity / deformation / magnetization
//! system and its energy and norm diagnostics.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{explicit_rhs, implicit_solve, penalty_planes, Fields};
use crate::error::{Error, Result};
use crate::grid::{
    dot, grad_seminorm_sq, Bc, Grid, ScalarField, Tensor22Field, Vector2Field, Vector3Field,
};
use crate::krylov::{SolveReport, SolverOptions};
use crate::poisson::leray_project;
use crate::snapshot::{read_snapshot, write_atomic, write_snapshot};
use crate::stencil::{central_x, central_x_adj, central_y, central_y_adj, discrete_curl, laplacian};

/// Advective CFL bound `dt·max|v|/min(hx, hy)`.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub nu: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            nu: 1.0,
            kappa: 1.0,
            alpha: 1.0,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu", self.nu), ("kappa", self.kappa), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `(v, p, F, M)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub v: Vector2Field,
    pub p: ScalarField,
    pub f: Tensor22Field,
    pub m: Vector3Field,
    pub t: f64,
}

impl State {
    /// Tags the fields with their boundary rules; `p` starts at zero.
    pub fn new(v: Vector2Field, f: Tensor22Field, m: Vector3Field, t: f64) -> Result<Self> {
        v.check_compatible(&f)?;
        v.check_compatible(&m)?;
        let g = *v.grid();
        Ok(State {
            v: v.with_bc(Bc::DirichletZero),
            p: ScalarField::zeros(g, Bc::NeumannZero),
            f: f.with_bc(Bc::DirichletZero),
            m: m.with_bc(Bc::NeumannZero),
            t,
        })
    }

    pub fn zeros(g: Grid) -> Self {
        Self::from_fields(Fields::zeros(g), ScalarField::zeros(g, Bc::NeumannZero), 0.0)
    }

    pub fn from_fields(y: Fields, p: ScalarField, t: f64) -> Self {
        State {
            v: y.v,
            p,
            f: y.f,
            m: y.m,
            t,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.v.grid()
    }

    pub fn fields(&self) -> Fields {
        Fields {
            v: self.v.clone(),
            f: self.f.clone(),
            m: self.m.clone(),
        }
    }
}

/// Built-in initial data.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// `v = 0, F = 0, M = 0`.
    Zero,
    /// `v = 0, F = 0`, spatially constant `M`.
    ConstantM([f64; 3]),
    /// Projected single vortex, a smooth interior deformation bump and a
    /// slowly rotating unit magnetization.
    Vortex { amplitude: f64 },
}

impl Preset {
    pub fn build(&self, g: Grid, opts: SolverOptions) -> Result<State> {
        match self {
            Preset::Zero => Ok(State::zeros(g)),
            Preset::ConstantM(m) => State::new(
                Vector2Field::zeros(g, Bc::DirichletZero),
                Tensor22Field::zeros(g, Bc::DirichletZero),
                Vector3Field::uniform(g, Bc::NeumannZero, *m),
                0.0,
            ),
            Preset::Vortex { amplitude } => {
                let a = *amplitude;
                let psi = ScalarField::from_fn(g, Bc::None, |x, y| {
                    let s = (PI * x / g.lx).sin() * (PI * y / g.ly).sin();
                    [a * s * s * s * s / PI]
                });
                let v = leray_project(&discrete_curl(&psi), opts)?.u;
                let f = Tensor22Field::from_fn(g, Bc::DirichletZero, |x, y| {
                    let b = 0.2 * (PI * x / g.lx).sin() * (PI * y / g.ly).sin();
                    [b, 0.3 * b, -0.2 * b, b]
                });
                let m = Vector3Field::from_fn(g, Bc::NeumannZero, |x, y| {
                    let th = 0.6 * (PI * x / g.lx).cos() * (PI * y / g.ly).cos();
                    [th.cos(), th.sin(), 0.0]
                });
                State::new(v, f, m, 0.0)
            }
        }
    }
}

/// `f(M) = α⁻²(|M|²-1)M` at every node.
pub fn penalty_force(m: &Vector3Field, alpha: f64) -> Vector3Field {
    let planes = penalty_planes(m, alpha);
    let mut out = Vector3Field::zeros(*m.grid(), m.bc());
    for c in 0..3 {
        out.comp_mut(c).copy_from_slice(&planes[c]);
    }
    out
}

/// `(∇M)ᵀΔM - div(F Fᵀ)`, with interior centred gradients, the Neumann
/// Laplacian of `M` and the divergence taken as minus the adjoint of the
/// interior gradient. The `½∇|∇M|²` part of the magnetic stress is left to
/// the pressure.
pub fn elastic_stress_div(m: &Vector3Field, f: &Tensor22Field) -> Result<Vector2Field> {
    m.check_compatible(f)?;
    let g = *m.grid();
    let n = g.len();
    let lap = laplacian(&m.clone().with_bc(Bc::NeumannZero))?;
    let mut out = Vector2Field::zeros(g, Bc::None);
    let mut d = vec![0.0; n];
    for c in 0..3 {
        for i in 0..2 {
            if i == 0 {
                central_x(&g, m.comp(c), &mut d);
            } else {
                central_y(&g, m.comp(c), &mut d);
            }
            let o = out.comp_mut(i);
            for k in 0..n {
                o[k] += d[k] * lap.comp(c)[k];
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            let s: Vec<f64> = (0..n)
                .map(|k| {
                    f.comp(2 * i)[k] * f.comp(2 * j)[k] + f.comp(2 * i + 1)[k] * f.comp(2 * j + 1)[k]
                })
                .collect();
            if j == 0 {
                central_x_adj(&g, &s, &mut d);
            } else {
                central_y_adj(&g, &s, &mut d);
            }
            // -div(FFᵀ)_i = Σ_j C_j*(FFᵀ)_ij
            let o = out.comp_mut(i);
            for k in 0..n {
                o[k] += d[k];
            }
        }
    }
    Ok(out)
}

/// Largest nodal speed.
pub fn max_speed(v: &Vector2Field) -> f64 {
    v.comp(0)
        .iter()
        .zip(v.comp(1))
        .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
}

/// One IMEX Euler step from `s` with the control sample `h` at `s.t`.
pub fn step_state(
    s: &State,
    h: &Vector3Field,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<(State, SolveReport)> {
    s.v.check_compatible(h)?;
    let g = *s.grid();
    let cfl = dt * max_speed(&s.v) / g.hx().min(g.hy());
    if cfl > CFL_LIMIT {
        return Err(Error::Cfl {
            cfl,
            limit: CFL_LIMIT,
        });
    }
    let mut r = s.fields();
    let e = explicit_rhs(&r, h, params);
    r.axpy(dt, &e);
    let imp = implicit_solve(&r, dt, params, opts)?;
    if !imp.y.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    let p = imp.potential.scaled(1.0 / dt);
    Ok((State::from_fields(imp.y, p, s.t + dt), imp.report))
}

/// Number of steps `T/dt`, which must be a whole number.
pub fn steps_for(t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t_final > 0.0) {
        return Err(Error::Usage(format!("need T > 0 and dt > 0, got T={t_final}, dt={dt}")));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final.max(1.0) || n < 1.0 {
        return Err(Error::Usage(format!("T={t_final} is not a multiple of dt={dt}")));
    }
    Ok(n as usize)
}

/// Time-trapezoid weights for `n` steps of size `dt`.
pub fn time_weights(n: usize, dt: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| if k == 0 || k == n { 0.5 * dt } else { dt })
        .collect()
}

/// States at `t_k = k·dt` together with the control samples.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub params: PhysParams,
    pub dt: f64,
    /// Number of time steps `n`; a full trajectory holds `n + 1` states.
    pub steps: usize,
    /// Stored states; every `save_stride`-th step.
    pub states: Vec<State>,
    /// Control samples aligned with `states`.
    pub h_samples: Vec<Vector3Field>,
    /// Inner-solver statistics per step (empty for loaded trajectories).
    pub reports: Vec<SolveReport>,
    pub save_stride: usize,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn t_final(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Fails unless every step `0..=steps` is present.
    pub fn require_full(&self) -> Result<()> {
        for k in 0..=self.steps {
            let ok = self
                .states
                .get(k)
                .map(|s| (s.t - k as f64 * self.dt).abs() <= 1e-9 * self.dt.max(1.0) + 1e-12)
                .unwrap_or(false);
            if !ok || self.h_samples.len() <= k {
                return Err(Error::Structural(format!(
                    "trajectory is missing the checkpoint for step {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn time_weights(&self) -> Vec<f64> {
        time_weights(self.steps, self.dt)
    }
}

/// Runs `T/dt` steps. `h` must hold one sample per time level `t_0..t_n`.
pub fn solve_state(
    init: &State,
    h: &[Vector3Field],
    t_final: f64,
    dt: f64,
    params: &PhysParams,
    opts: SolverOptions,
) -> Result<Trajectory> {
    params.validate()?;
    let n = steps_for(t_final, dt)?;
    if h.len() != n + 1 {
        return Err(Error::Structural(format!(
            "control has {} samples, need {}",
            h.len(),
            n + 1
        )));
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut reports = Vec::with_capacity(n);
    let mut s = init.clone();
    s.t = 0.0;
    states.push(s);
    for k in 0..n {
        let (next, rep) =
            step_state(&states[k], &h[k], dt, params, opts).map_err(|e| e.at_step("state", k))?;
        let mut next = next;
        // avoid drift from repeated additions
        next.t = (k + 1) as f64 * dt;
        states.push(next);
        reports.push(rep);
    }
    Ok(Trajectory {
        params: *params,
        dt,
        steps: n,
        states,
        h_samples: h.to_vec(),
        reports,
        save_stride: 1,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub exchange: f64,
    pub penalty: f64,
    pub zeeman: f64,
    pub elastic: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    /// Everything except the Zeeman term.
    pub fn intrinsic(&self) -> f64 {
        self.kinetic + self.exchange + self.penalty + self.elastic
    }
}

/// Kinetic energy plus the free energy of `(F, M)` in the field `h`, with
/// penalty scale `alpha`.
pub fn total_energy(s: &State, h: &Vector3Field, alpha: f64) -> EnergyBreakdown {
    let g = *s.grid();
    let n = g.len();
    let mut dens = vec![0.0; n];
    for k in 0..n {
        let q = s.m.comp(0)[k].powi(2) + s.m.comp(1)[k].powi(2) + s.m.comp(2)[k].powi(2) - 1.0;
        dens[k] = q * q;
    }
    let ones = ScalarField::uniform(g, Bc::None, [1.0]);
    let dens = ScalarField::from_data(g, Bc::None, dens).expect("sized");
    let kinetic = 0.5 * dot(&s.v, &s.v);
    let exchange = 0.5 * grad_seminorm_sq(&s.m);
    let penalty = dot(&dens, &ones) / (4.0 * alpha * alpha);
    let zeeman = -dot(&s.m, h);
    let elastic = 0.5 * dot(&s.f, &s.f);
    EnergyBreakdown {
        kinetic,
        exchange,
        penalty,
        zeeman,
        elastic,
        total: kinetic + exchange + penalty + zeeman + elastic,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub energy: EnergyBreakdown,
    /// `kinetic + exchange + penalty + elastic`.
    pub intrinsic: f64,
    /// Change of `intrinsic` since the previous row.
    pub delta: f64,
    /// `∫ M·∂_t H` with a one-sided difference in time.
    pub zeeman_work: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub max_increase: f64,
}

impl EnergyReport {
    /// Rows whose intrinsic energy rose by more than `rel·(1 + E_0)`.
    pub fn violations(&self, rel: f64) -> Vec<usize> {
        let e0 = self.rows.first().map(|r| r.intrinsic).unwrap_or(0.0);
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.delta > rel * (1.0 + e0))
            .map(|(k, _)| k)
            .collect()
    }
}

pub fn energy_report(traj: &Trajectory) -> EnergyReport {
    let alpha = traj.params.alpha;
    let mut rows: Vec<EnergyRow> = Vec::with_capacity(traj.states.len());
    let last = traj.states.len() - 1;
    for (k, s) in traj.states.iter().enumerate() {
        let h = &traj.h_samples[k];
        let e = total_energy(s, h, alpha);
        let (a, b) = if k < last { (k, k + 1) } else { (k.saturating_sub(1), k) };
        let zeeman_work = if a == b {
            0.0
        } else {
            let dt = traj.states[b].t - traj.states[a].t;
            let dh = traj.h_samples[b].sub(&traj.h_samples[a]);
            dot(&s.m, &dh) / dt
        };
        let intrinsic = e.intrinsic();
        let delta = rows.last().map(|r| intrinsic - r.intrinsic).unwrap_or(0.0);
        rows.push(EnergyRow {
            t: s.t,
            energy: e,
            intrinsic,
            delta,
            zeeman_work,
        });
    }
    let max_increase = rows.iter().skip(1).fold(f64::NEG_INFINITY, |m, r| m.max(r.delta));
    EnergyReport {
        rows,
        max_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StrongNorms {
    pub t: f64,
    pub a: f64,
    pub b: f64,
}

/// `𝒜 = ‖∇v‖² + ‖∇F‖² + ‖ΔM - f(M)‖²` and
/// `ℬ = ν²‖PΔv‖² + ‖ΔF‖² + ‖∇(ΔM - f(M))‖²` at every stored state.
pub fn strong_norm_monitor(traj: &Trajectory, opts: SolverOptions) -> Result<Vec<StrongNorms>> {
    let nu = traj.params.nu;
    traj.states
        .iter()
        .map(|s| {
            let mut mu = laplacian(&s.m)?;
            mu.axpy(-1.0, &penalty_force(&s.m, traj.params.alpha));
            let a = grad_seminorm_sq(&s.v) + grad_seminorm_sq(&s.f) + dot(&mu, &mu);
            let lv = laplacian(&s.v)?;
            let plv = leray_project(&lv, opts)?.u;
            let lf = laplacian(&s.f)?;
            let b = nu * nu * dot(&plv, &plv) + dot(&lf, &lf) + grad_seminorm_sq(&mu);
            Ok(StrongNorms { t: s.t, a, b })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub params: PhysParams,
    pub save_stride: usize,
    pub h_source: String,
    pub steps: usize,
    pub grid: Grid,
}

fn snap_name(k: usize, part: &str) -> String {
    format!("step_{k:06}_{part}.snap")
}

/// Writes every `stride`-th state (and the final one) plus `meta.json`.
pub fn write_checkpoint(dir: &Path, traj: &Trajectory, stride: usize, h_source: &str) -> Result<()> {
    let stride = stride.max(1);
    fs::create_dir_all(dir)?;
    for (k, s) in traj.states.iter().enumerate() {
        let step = k * traj.save_stride;
        if !step.is_multiple_of(stride) {
            continue;
        }
        write_snapshot(&dir.join(snap_name(step, "v")), &s.v, s.t)?;
        write_snapshot(&dir.join(snap_name(step, "p")), &s.p, s.t)?;
        write_snapshot(&dir.join(snap_name(step, "F")), &s.f, s.t)?;
        write_snapshot(&dir.join(snap_name(step, "M")), &s.m, s.t)?;
        write_snapshot(&dir.join(snap_name(step, "H")), &traj.h_samples[k], s.t)?;
    }
    let meta = CheckpointMeta {
        dt: traj.dt,
        t_final: traj.t_final(),
        params: traj.params,
        save_stride: stride * traj.save_stride,
        h_source: h_source.to_string(),
        steps: traj.steps,
        grid: *traj.grid(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join("meta.json"), &json)
}

pub fn read_checkpoint(dir: &Path) -> Result<Trajectory> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)
        .map_err(|e| Error::Format(format!("meta.json: {e}")))?;
    let mut states = Vec::new();
    let mut h_samples = Vec::new();
    let mut step = 0;
    while step <= meta.steps {
        let vp = dir.join(snap_name(step, "v"));
        if !vp.exists() {
            return Err(Error::Structural(format!(
                "checkpoint for step {step} is missing ({})",
                vp.display()
            )));
        }
        let (v, t) = read_snapshot::<2>(&vp)?;
        let (p, _) = read_snapshot::<1>(&dir.join(snap_name(step, "p")))?;
        let (f, _) = read_snapshot::<4>(&dir.join(snap_name(step, "F")))?;
        let (m, _) = read_snapshot::<3>(&dir.join(snap_name(step, "M")))?;
        let (h, _) = read_snapshot::<3>(&dir.join(snap_name(step, "H")))?;
        v.check_compatible(&m)?;
        states.push(State { v, p, f, m, t });
        h_samples.push(h);
        step += meta.save_stride;
    }
    Ok(Trajectory {
        params: meta.params,
        dt: meta.dt,
        steps: meta.steps,
        states,
        h_samples,
        reports: Vec::new(),
        save_stride: meta.save_stride,
    })
}
