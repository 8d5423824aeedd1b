use std::fs;
use std::path::Path;

use mvf_cli::config::{apply_env, line_of, load, parse, to_toml, InitialPreset, RunConfig, TargetKind};

fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn default_file() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml")
}

#[test]
fn shipped_defaults_match_the_built_in_ones() {
    let loaded = load(Some(&default_file()), Vec::new()).unwrap();
    assert_eq!(loaded.config, RunConfig::default());
    assert_eq!(parse("").unwrap(), RunConfig::default());
}

#[test]
fn round_trip_is_identity() {
    let mut c = RunConfig { seed: 7, ..RunConfig::default() };
    c.time.t_final = 0.3;
    c.time.dt = 1e-3 / 3.0;
    c.initial.preset = InitialPreset::Snapshots;
    c.initial.m_path = Some("m.snap".into());
    c.cost.v_target.kind = TargetKind::Snapshots;
    c.cost.v_target.path = Some("targets/v".into());
    c.control.coil_paths = vec!["a.snap".into(), "b.snap".into()];
    c.check.epsilons = vec![0.1 + 0.2, 1e-300];
    for cfg in [RunConfig::default(), c] {
        let text = to_toml(&cfg);
        let back = parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(to_toml(&back), text);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let e = parse("seed = 1\n\n[grid]\nnx = 16\nnz = 3\n").unwrap_err();
    assert_eq!(e.line, Some(5), "{e}");
    assert!(e.message.contains("nz"), "{e}");
    let e = parse("[time]\ndt = \"fast\"\n").unwrap_err();
    assert_eq!(e.line, Some(2), "{e}");
    let e = parse("[grid\n").unwrap_err();
    assert_eq!(e.line, Some(1), "{e}");
}

#[test]
fn validation_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "seed = 3\n[time]\nT = 0.01\ndt = 0.003\n").unwrap();
    let e = load(Some(&path), Vec::new()).unwrap_err();
    assert_eq!(e.key, "time.dt");
    assert_eq!(e.line, Some(4));
    assert!(e.to_string().contains("line 4"), "{e}");

    fs::write(&path, "[initial]\npreset = \"snapshots\"\nm_path = \"missing.snap\"\n").unwrap();
    let e = load(Some(&path), Vec::new()).unwrap_err();
    assert_eq!(e.key, "initial.m_path");
    assert_eq!(e.line, Some(3));
    assert!(e.message.contains("missing.snap"), "{e}");

    fs::write(&path, "[solver]\npoisson_tol = 1.5\n").unwrap();
    let e = load(Some(&path), Vec::new()).unwrap_err();
    assert_eq!((e.key.as_str(), e.line), ("solver.poisson_tol", Some(2)));

    fs::write(&path, "[optimizer]\ngrad_tol = 0.0\n").unwrap();
    assert_eq!(load(Some(&path), Vec::new()).unwrap_err().key, "optimizer.grad_tol");

    fs::write(&path, "[cost.m_target]\nkind = \"constant\"\nvalue = [1.0]\n").unwrap();
    let e = load(Some(&path), Vec::new()).unwrap_err();
    assert_eq!((e.key.as_str(), e.line), ("cost.m_target.value", Some(3)));

    fs::write(&path, "[control]\nlower = 2.0\n").unwrap();
    let e = load(Some(&path), Vec::new()).unwrap_err();
    assert_eq!(e.key, "control.upper");
    // key absent from the file: the section header is the best pointer
    assert_eq!(e.line, Some(1));
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("sub")).unwrap();
    fs::write(dir.path().join("sub/m.snap"), b"").unwrap();
    let path = dir.path().join("sub/run.toml");
    fs::write(&path, "[initial]\npreset = \"snapshots\"\nm_path = \"m.snap\"\n").unwrap();
    let loaded = load(Some(&path), Vec::new()).unwrap();
    assert_eq!(loaded.resolve("m.snap"), dir.path().join("sub/m.snap"));
}

#[test]
fn environment_overrides() {
    let c = apply_env(
        RunConfig::default(),
        env(&[
            ("MVF_TIME__DT", "5e-4"),
            ("MVF_TIME__T", "0.01"),
            ("MVF_INITIAL__PRESET", "zero"),
            ("MVF_SEED", "9"),
            ("MVF_COST__M_TARGET__VALUE", "[1.0, 0.0, 0.0]"),
            ("MVF_OUTPUT__DIRECTORY", "elsewhere"),
            ("HOME", "/root"),
        ]),
    )
    .unwrap();
    assert_eq!(c.time.dt, 5e-4);
    assert_eq!(c.time.t_final, 0.01);
    assert_eq!(c.initial.preset, InitialPreset::Zero);
    assert_eq!(c.seed, 9);
    assert_eq!(c.cost.m_target.value, vec![1.0, 0.0, 0.0]);
    assert_eq!(c.output.directory, "elsewhere");

    let e = apply_env(RunConfig::default(), env(&[("MVF_GRID__NZ", "3")])).unwrap_err();
    assert!(e.key.contains("MVF_GRID__NZ"), "{e}");
    let e = apply_env(RunConfig::default(), env(&[("MVF_GRID__NX", "many")])).unwrap_err();
    assert!(e.key.contains("MVF_GRID__NX"), "{e}");
    assert_eq!(apply_env(RunConfig::default(), Vec::new()).unwrap(), RunConfig::default());
}

#[test]
fn overrides_are_validated() {
    let e = load(None, env(&[("MVF_GRID__NX", "4")])).unwrap_err();
    assert_eq!(e.key, "grid.nx");
}

#[test]
fn line_lookup() {
    let src = "seed = 1\n[cost]\na1 = 2\n[cost.m_target]\nkind = \"zero\"\n";
    assert_eq!(line_of(src, "seed"), Some(1));
    assert_eq!(line_of(src, "cost.a1"), Some(3));
    assert_eq!(line_of(src, "cost.m_target.kind"), Some(5));
    assert_eq!(line_of(src, "cost.a2"), Some(2));
    assert_eq!(line_of(src, "grid.nx"), None);
}
