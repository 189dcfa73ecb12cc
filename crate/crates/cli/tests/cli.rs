use std::path::Path;
use std::process::{Command, Output};

fn vcdown(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcdown")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
seed = 9
models = ["m0", "m1"]
replications = 2

[scenario]
name = "tiny"
periods = 6
train_fraction = 0.8333333333333334
replications = 2
seed = 0

[scenario.grid]
fine_side = 4
coarse_side = 2
[scenario.grid.extent]
x_min = 0.0
x_max = 4.0
y_min = 0.0
y_max = 4.0

[scenario.global]
alpha = 1.0
zeta_sq = 0.01

[scenario.regional]
beta0 = 1.0
tau_sq = 0.001
temporal = "Iid"
[scenario.regional.theta0]
family = "matern"
range = 1.0
sd = 0.1
smoothness = 1.0
"#;

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = vcdown(&["simulate", "--preset", "sim2-res1-s1", "--out", out]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error=config command=simulate message="), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn unknown_preset_lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = vcdown(&["simulate", "--seed", "1", "--preset", "sim7", "--out", out]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("error=config") && err.contains("sim2-res1-s1") && err.contains("simA-res3-exp"), "{err}");
}

#[test]
fn simulate_twice_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = vcdown(&["simulate", "--seed", "4", "--preset", "simA-res1-matern", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["coarse.csv", "fine.csv", "response.csv"] {
        let rel = Path::new("simA-res1-matern").join("rep_000").join(f);
        assert_eq!(std::fs::read(a.path().join(&rel)).unwrap(), std::fs::read(b.path().join(&rel)).unwrap());
    }
}

#[test]
fn study_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("study");
    let o = vcdown(&["study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t2 = std::fs::read_to_string(out.join("table2.csv")).unwrap();
    assert_eq!(t2.lines().next().unwrap(), "model,scenario,resolution,split,mse,rmse,is95,scale");
    assert_eq!(t2.lines().count(), 5);
    let t3 = std::fs::read_to_string(out.join("table3.csv")).unwrap();
    assert_eq!(t3.lines().next().unwrap(), "model,scenario,resolution,minutes");
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_hash = ") && manifest.contains("version = "));
}

#[test]
fn bad_config_reports_parse_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nbackend = \"exact\"\nnot_a_key = 3\n").unwrap();
    let o = vcdown(&["fit", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error=parse command=fit") && err.contains("bad.toml:3"), "{err}");
}

#[test]
fn tapered_backend_without_range_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = vcdown(&[
        "study",
        "--seed",
        "1",
        "--preset",
        "sim2-res1-s1",
        "--backend",
        "tapered",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("taper_range"));
    assert!(!dir.path().join("table2.csv").exists());
}

#[test]
fn intercept_model_ignores_extra_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let out = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    let sim = out("sim");
    assert!(vcdown(&["simulate", "--seed", "3", "--preset", "simA-res1-exp", "--replications", "1", "--out", &sim]).status.success());
    let rep = Path::new(&sim).join("simA-res1-exp/rep_000");
    let coarse = rep.join("coarse.csv").to_string_lossy().into_owned();
    let fine = rep.join("fine.csv").to_string_lossy().into_owned();
    let fit = vcdown(&["fit", "--seed", "3", "--model", "m1", "--coarse", &coarse, "--fine", &fine, "--train-end", "10", "--out", &out("fit")]);
    assert!(fit.status.success(), "{}", stderr(&fit));
    let fit_file = out("fit/fit.toml");
    let pred = vcdown(&[
        "predict", "--seed", "3", "--fit", &fit_file, "--coarse", &coarse, "--fine", &fine, "--train-end", "10", "--out", &out("pred"),
    ]);
    assert!(pred.status.success(), "{}", stderr(&pred));
    let rows = std::fs::read_to_string(out("pred/prediction.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 625 * 2);
}
