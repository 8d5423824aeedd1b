use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvf_cli::output::RunManifest;

const SMALL: &str = "[grid]\nnx = 16\nny = 16\n[time]\nT = 0.01\ndt = 0.001\n";

fn mvf(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_mvf"))
        .current_dir(dir)
        .env_clear()
        .arg("--config")
        .arg(&cfg)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: PathBuf) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn zero_data_energy_is_constant() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[initial]\npreset = \"zero\"\n");
    let o = mvf(d.path(), &cfg, &["--output", "run", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = rows(d.path().join("run/energy.csv"));
    assert_eq!(e.len(), 11);
    for r in &e {
        assert_eq!(r[1..], e[0][1..]);
    }
    assert_eq!(e[0][3], 0.25);
    let m = manifest(&d.path().join("run"));
    assert_eq!(m.command, "simulate");
    assert!(m.artifacts.iter().all(|a| d.path().join("run").join(a).exists()));
    assert_eq!(m.artifacts.len(), 3);
}

#[test]
fn csv_numbers_have_17_significant_digits() {
    let d = tempfile::tempdir().unwrap();
    let o = mvf(d.path(), SMALL, &["--output", "run", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(d.path().join("run/energy.csv")).unwrap();
    for field in text.lines().nth(2).unwrap().split(',') {
        let mantissa = field.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.replace('.', "").len(), 17, "{field}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[control]\nfield = \"random\"\n");
    for out in ["a", "b"] {
        let o = mvf(d.path(), &cfg, &["--output", out, "simulate"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["energy.csv", "norms.csv", "trajectory/step_000010_M.snap"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(manifest(&d.path().join("a")).config_hash, manifest(&d.path().join("b")).config_hash);
}

#[test]
fn missing_snapshot_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[initial]\npreset = \"snapshots\"\nm_path = \"nowhere.snap\"\n");
    let o = mvf(d.path(), &cfg, &["simulate"]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("initial.m_path") && msg.contains("line 9"), "{msg}");
}

#[test]
fn solver_failure_names_module_and_step() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[initial]\namplitude = 1e5\n");
    let o = mvf(d.path(), &cfg, &["--output", "run", "simulate"]);
    assert_eq!(code(&o), 3);
    let msg = stderr(&o);
    assert!(msg.contains("state step 0") && msg.contains("CFL"), "{msg}");
    assert_eq!(manifest(&d.path().join("run")).status, mvf_cli::output::Status::SolverFailure);
}

#[test]
fn pure_regularization_taylor_remainder_is_the_exact_quadratic_term() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[cost]\na1 = 0.0\na2 = 0.0\na3 = 0.0\nlambda = 0.5\n[control]\nfield = \"random\"\n");
    let o = mvf(d.path(), &cfg, &["--output", "run", "gradient-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // remainder = λ/2 ε² |D|², so remainder/ε² is the same at every ε
    let r = rows(d.path().join("run/gradient_check.csv"));
    let c0 = r[0][2] / (r[0][0] * r[0][0]);
    for row in &r {
        let c = row[2] / (row[0] * row[0]);
        assert!((c - c0).abs() <= 1e-6 * c0, "{c} vs {c0}");
    }
}

#[test]
fn gradient_check_passes_and_detects_a_corrupted_adjoint() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[control]\nfield = \"random\"\n");
    let o = mvf(d.path(), &cfg, &["--output", "good", "gradient-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = rows(d.path().join("good/gradient_summary.csv"));
    assert!((1.6..=2.4).contains(&s[0][5]) && s[0][6] == 1.0);

    let o = mvf(d.path(), &cfg, &["--output", "bad", "gradient-check", "--corrupt-adjoint"]);
    assert_eq!(code(&o), 4);
    let s = rows(d.path().join("bad/gradient_summary.csv"));
    assert!(s[0][5] < 1.6 && s[0][6] == 0.0);
    assert_eq!(manifest(&d.path().join("bad")).status, mvf_cli::output::Status::CheckFailed);

    let coils = format!("{cfg}kind = \"coils\"\nu0 = 0.3\n");
    let o = mvf(d.path(), &coils, &["--output", "coils", "gradient-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = mvf(d.path(), &coils, &["--output", "coils_bad", "gradient-check", "--corrupt-adjoint"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn coils_with_lower_bound_one_saturate() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{SMALL}[cost]\na1 = 0.0\na2 = 0.0\na3 = 0.0\n[control]\nlower = 1.0\nupper = 2.0\nu0 = 1.5\n"
    );
    let o = mvf(d.path(), &cfg, &["--output", "run", "optimize-coils"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for r in rows(d.path().join("run/coils.csv")) {
        assert_eq!(&r[1..], &[1.0, 1.0]);
    }
    let hist = rows(d.path().join("run/optimize.csv"));
    assert!(hist.last().unwrap()[4] <= 1e-8);
}

#[test]
fn stability_of_equal_controls_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[control]\nfield = \"random\"\n[stability]\nepsilons = [0.0]\n");
    let o = mvf(d.path(), &cfg, &["--output", "run", "stability-probe"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = rows(d.path().join("run/stability.csv"));
    assert_eq!(r.len(), 1);
    assert!(r[0].iter().all(|v| *v == 0.0), "{:?}", r[0]);
}

#[test]
fn optimum_and_gradient_check_agree() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[optimizer]\ngrad_tol = 1e-8\n");
    let o = mvf(d.path(), &cfg, &["--output", "opt", "optimize-field"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let last = rows(d.path().join("opt/optimize.csv")).pop().unwrap();
    assert!(last[2] <= 1e-8);
    assert_eq!(fs::read_dir(d.path().join("opt/control")).unwrap().count(), 11);

    let at = format!("{cfg}[control]\nfield = \"snapshots\"\npath = \"opt/control\"\n");
    let o = mvf(d.path(), &at, &["--output", "check", "gradient-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = rows(d.path().join("check/gradient_summary.csv"));
    assert_eq!(s[0][1], last[2], "grad norm differs between outputs");
    assert_eq!(s[0][0], last[1]);
}

#[test]
fn optimizer_out_of_iterations_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[control]\nfield = \"random\"\n[optimizer]\nmax_iter = 1\ngrad_tol = 1e-12\n");
    let o = mvf(d.path(), &cfg, &["--output", "run", "optimize-field"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let m = manifest(&d.path().join("run"));
    assert_eq!(m.status, mvf_cli::output::Status::NotConverged);
    assert!(m.artifacts.contains(&"optimize.csv".to_string()));
}

#[test]
fn energy_report_recomputes_simulation_output() {
    let d = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}[control]\nfield = \"uniform\"\n");
    let o = mvf(d.path(), &cfg, &["--output", "sim", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = format!("{cfg}[energy]\ntrajectory = \"sim/trajectory\"\n");
    let o = mvf(d.path(), &cfg, &["--output", "rep", "energy-report"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["energy.csv", "norms.csv"] {
        assert_eq!(fs::read(d.path().join("sim").join(f)).unwrap(), fs::read(d.path().join("rep").join(f)).unwrap());
    }
    let o = mvf(d.path(), SMALL, &["--output", "none", "energy-report"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("energy.trajectory"));
}

#[test]
fn environment_and_flags_override_the_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mvf"))
        .current_dir(d.path())
        .env_clear()
        .env("MVF_TIME__T", "0.005")
        .args(["--config", "run.toml", "--seed", "11", "--output", "run", "--quiet", "simulate"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert_eq!(rows(d.path().join("run/energy.csv")).len(), 6);
    assert_eq!(manifest(&d.path().join("run")).seed, 11);
}
