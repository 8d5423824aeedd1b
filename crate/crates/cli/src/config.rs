//! Run configuration: a TOML file, overridden by `MVF_<SECTION>__<KEY>`
//! environment variables, then by command-line flags.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! configuration. `configs/default.toml` lists all keys with their defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for random controls and check directions.
    pub seed: u64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub params: ParamsConfig,
    pub initial: InitialConfig,
    pub control: ControlConfig,
    pub cost: CostConfig,
    pub solver: SolverConfig,
    pub optimizer: OptimizerConfig,
    pub check: CheckConfig,
    pub stability: StabilityConfig,
    pub energy: EnergyConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            params: ParamsConfig::default(),
            initial: InitialConfig::default(),
            control: ControlConfig::default(),
            cost: CostConfig::default(),
            solver: SolverConfig::default(),
            optimizer: OptimizerConfig::default(),
            check: CheckConfig::default(),
            stability: StabilityConfig::default(),
            energy: EnergyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nx: 32,
            ny: 32,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    /// Only every `save_stride`-th state goes into the trajectory directory.
    pub save_stride: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_final: 0.02,
            dt: 1e-3,
            save_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub nu: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            nu: 1.0,
            kappa: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPreset {
    Zero,
    ConstantM,
    Vortex,
    Snapshots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub preset: InitialPreset,
    /// Vortex strength for `vortex`.
    pub amplitude: f64,
    /// Magnetization for `constant_m`.
    pub m: [f64; 3],
    /// Snapshot files for `snapshots`; a missing one means zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_path: Option<String>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            preset: InitialPreset::Vortex,
            amplitude: 0.5,
            m: [0.0, 0.0, 1.0],
            v_path: None,
            f_path: None,
            m_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Zero,
    Uniform,
    Random,
    Snapshots,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Bumps,
    Harmonics,
    Snapshots,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Field,
    Coils,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Which problem `gradient-check` looks at.
    pub kind: ControlKind,
    /// Field control `H`, also the start of `optimize-field`.
    pub field: FieldSource,
    pub value: [f64; 3],
    pub amplitude: f64,
    /// One snapshot (constant in time) or a directory with one per step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub basis: BasisKind,
    pub coils: usize,
    pub coil_paths: Vec<String>,
    pub lower: f64,
    pub upper: f64,
    /// Constant start value for the intensities.
    pub u0: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kind: ControlKind::Field,
            field: FieldSource::Zero,
            value: [0.0, 0.0, 1.0],
            amplitude: 1.0,
            path: None,
            basis: BasisKind::Bumps,
            coils: 2,
            coil_paths: Vec::new(),
            lower: -1.0,
            upper: 1.0,
            u0: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Zero,
    Constant,
    Snapshots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    /// Node value for `constant`, one entry per component.
    pub value: Vec<f64>,
    /// One snapshot or a directory with one per step, for `snapshots`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            kind: TargetKind::Zero,
            value: Vec::new(),
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub lambda: f64,
    pub v_target: TargetConfig,
    pub f_target: TargetConfig,
    pub m_target: TargetConfig,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            a1: 1.0,
            a2: 0.5,
            a3: 1.0,
            lambda: 1e-2,
            v_target: TargetConfig::default(),
            f_target: TargetConfig::default(),
            m_target: TargetConfig {
                kind: TargetKind::Constant,
                value: vec![0.6, 0.0, 0.8],
                path: None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub poisson_tol: f64,
    pub max_cg_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            poisson_tol: 1e-12,
            max_cg_iters: 20000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iter: 50,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Step sizes of the Taylor test.
    pub epsilons: Vec<f64>,
    /// Size of the random direction.
    pub amplitude: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            epsilons: vec![1e-1, 1e-2, 1e-3, 1e-4],
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// `H2 = H1 + ε D` for each entry.
    pub epsilons: Vec<f64>,
    /// Field whose difference to `H1` is `D`; a random direction otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2_path: Option<String>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            epsilons: vec![1e-1, 1e-2, 1e-3],
            h2_path: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Trajectory directory written by `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.key.is_empty()) {
            (Some(l), false) => write!(f, "config line {l}: {}: {}", self.key, self.message),
            (Some(l), true) => write!(f, "config line {l}: {}", self.message),
            (None, false) => write!(f, "config: {}: {}", self.key, self.message),
            (None, true) => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A validated configuration together with where it came from.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    /// Relative paths in the config resolve against this directory.
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &str) -> PathBuf {
        resolve(&self.base, p)
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// 1-based line of `[section] key = ...`, or of the section header when the
/// key is not spelled out.
pub fn line_of(src: &str, key: &str) -> Option<usize> {
    let (section, name) = match key.rfind('.') {
        Some(i) => (&key[..i], &key[i + 1..]),
        None => ("", key),
    };
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(name) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

pub fn parse(src: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(src).map_err(|e| ConfigError {
        line: e.span().map(|s| line_at(src, s.start)),
        key: String::new(),
        message: e.message().trim().to_string(),
    })
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

/// Applies `MVF_<SECTION>__<KEY>=<value>` pairs; other variables are ignored.
/// Values are read as TOML literals, falling back to a plain string.
pub fn apply_env<I>(cfg: RunConfig, vars: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with("MVF_"))
        .collect();
    if vars.is_empty() {
        return Ok(cfg);
    }
    vars.sort();
    let mut tree = toml::Value::try_from(&cfg).expect("config serializes");
    for (name, raw) in &vars {
        let path: Vec<&str> = name["MVF_".len()..].split("__").collect();
        set_path(&mut tree, &path, literal(raw))
            .map_err(|m| ConfigError::new(name.clone(), m))?;
    }
    tree.try_into().map_err(|e: toml::de::Error| {
        let names: Vec<&str> = vars.iter().map(|(k, _)| k.as_str()).collect();
        ConfigError::new(names.join(", "), e.message().trim().to_string())
    })
}

fn literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("x = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &[&str], value: toml::Value) -> Result<(), String> {
    let table = tree.as_table_mut().ok_or("not a table")?;
    let (head, rest) = path.split_first().ok_or("empty key")?;
    let key = table
        .keys()
        .find(|k| k.eq_ignore_ascii_case(head))
        .cloned()
        .unwrap_or_else(|| head.to_ascii_lowercase());
    if rest.is_empty() {
        table.insert(key, value);
        return Ok(());
    }
    let child = table
        .entry(key.clone())
        .or_insert_with(|| toml::Value::Table(Default::default()));
    if !child.is_table() {
        return Err(format!("{key} is not a section"));
    }
    set_path(child, rest, value)
}

/// Reads, overrides and validates. `path = None` starts from the defaults.
pub fn load<I>(path: Option<&Path>, env: I) -> Result<Loaded, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let (src, base) = match path {
        Some(p) => {
            let src = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (src, base)
        }
        None => (String::new(), PathBuf::new()),
    };
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    let cfg = apply_env(parse(&src)?, env)?;
    validate(&cfg, &base).map_err(|mut e| {
        e.line = line_of(&src, &e.key);
        e
    })?;
    Ok(Loaded { config: cfg, base })
}

fn unit_interval(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must lie in (0, 1), got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be positive, got {v}")))
    }
}

fn existing(base: &Path, key: &str, p: &Option<String>) -> Result<(), ConfigError> {
    match p {
        None => Err(ConfigError::new(key, "a path is required")),
        Some(s) => {
            let r = resolve(base, s);
            if r.exists() {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("{} does not exist", r.display())))
            }
        }
    }
}

fn check_target(base: &Path, key: &str, t: &TargetConfig, comps: usize) -> Result<(), ConfigError> {
    match t.kind {
        TargetKind::Zero => Ok(()),
        TargetKind::Constant => {
            if t.value.len() != comps {
                return Err(ConfigError::new(
                    format!("{key}.value"),
                    format!("needs {comps} components, got {}", t.value.len()),
                ));
            }
            Ok(())
        }
        TargetKind::Snapshots => existing(base, &format!("{key}.path"), &t.path),
    }
}

/// Checks ranges and that referenced files exist. Error keys are dotted
/// paths like `time.dt`.
pub fn validate(c: &RunConfig, base: &Path) -> Result<(), ConfigError> {
    if c.grid.nx < 8 {
        return Err(ConfigError::new("grid.nx", format!("need at least 8 cells, got {}", c.grid.nx)));
    }
    if c.grid.ny < 8 {
        return Err(ConfigError::new("grid.ny", format!("need at least 8 cells, got {}", c.grid.ny)));
    }
    positive("grid.lx", c.grid.lx)?;
    positive("grid.ly", c.grid.ly)?;
    positive("time.T", c.time.t_final)?;
    positive("time.dt", c.time.dt)?;
    let ratio = c.time.t_final / c.time.dt;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(ConfigError::new("time.dt", format!("T/dt = {ratio} is not an integer")));
    }
    if c.time.save_stride == 0 {
        return Err(ConfigError::new("time.save_stride", "must be at least 1"));
    }
    positive("params.nu", c.params.nu)?;
    positive("params.kappa", c.params.kappa)?;
    positive("params.alpha", c.params.alpha)?;

    if c.initial.preset == InitialPreset::Snapshots {
        let paths = [
            ("initial.v_path", &c.initial.v_path),
            ("initial.f_path", &c.initial.f_path),
            ("initial.m_path", &c.initial.m_path),
        ];
        if paths.iter().all(|(_, p)| p.is_none()) {
            return Err(ConfigError::new("initial.m_path", "snapshot preset needs at least one path"));
        }
        for (k, p) in paths {
            if p.is_some() {
                existing(base, k, p)?;
            }
        }
    }

    let ctl = &c.control;
    if ctl.field == FieldSource::Snapshots {
        existing(base, "control.path", &ctl.path)?;
    }
    if !ctl.amplitude.is_finite() {
        return Err(ConfigError::new("control.amplitude", "must be finite"));
    }
    match ctl.basis {
        BasisKind::Snapshots => {
            if ctl.coil_paths.is_empty() {
                return Err(ConfigError::new("control.coil_paths", "snapshot basis needs at least one file"));
            }
            for p in &ctl.coil_paths {
                existing(base, "control.coil_paths", &Some(p.clone()))?;
            }
        }
        _ => {
            if ctl.coils == 0 {
                return Err(ConfigError::new("control.coils", "need at least one coil"));
            }
        }
    }
    if !(ctl.lower <= ctl.upper) {
        return Err(ConfigError::new(
            "control.upper",
            format!("upper bound {} is below lower bound {}", ctl.upper, ctl.lower),
        ));
    }

    for (k, a) in [("cost.a1", c.cost.a1), ("cost.a2", c.cost.a2), ("cost.a3", c.cost.a3)] {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(ConfigError::new(k, format!("must be non-negative, got {a}")));
        }
    }
    positive("cost.lambda", c.cost.lambda)?;
    check_target(base, "cost.v_target", &c.cost.v_target, 2)?;
    check_target(base, "cost.f_target", &c.cost.f_target, 4)?;
    check_target(base, "cost.m_target", &c.cost.m_target, 3)?;

    unit_interval("solver.poisson_tol", c.solver.poisson_tol)?;
    if c.solver.max_cg_iters == 0 {
        return Err(ConfigError::new("solver.max_cg_iters", "must be at least 1"));
    }
    if c.optimizer.max_iter == 0 {
        return Err(ConfigError::new("optimizer.max_iter", "must be at least 1"));
    }
    unit_interval("optimizer.grad_tol", c.optimizer.grad_tol)?;
    unit_interval("optimizer.armijo_c", c.optimizer.armijo_c)?;
    unit_interval("optimizer.armijo_shrink", c.optimizer.armijo_shrink)?;

    if c.check.epsilons.len() < 2 || c.check.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(ConfigError::new("check.epsilons", "need at least two positive step sizes"));
    }
    if c.stability.epsilons.is_empty()
        || c.stability.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite()))
    {
        return Err(ConfigError::new("stability.epsilons", "need non-negative perturbation sizes"));
    }
    if c.stability.h2_path.is_some() {
        existing(base, "stability.h2_path", &c.stability.h2_path)?;
    }
    if c.energy.trajectory.is_some() {
        existing(base, "energy.trajectory", &c.energy.trajectory)?;
    }
    if c.output.directory.is_empty() {
        return Err(ConfigError::new("output.directory", "must not be empty"));
    }
    Ok(())
}
