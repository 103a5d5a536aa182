//! End-to-end runs of the `restraj` binary on a small pendulum problem.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn restraj(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_restraj"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env_remove("RESTRAJ_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).expect("write input");
    path.to_str().expect("utf-8 path").to_string()
}

/// Inputs for a fast pipeline: 4 trajectories sampled at 25 Hz and tiny regressors.
struct Inputs {
    model: String,
    grid: String,
    nn: String,
    gp: String,
    spec: String,
    outside: String,
}

fn inputs(dir: &Path) -> Inputs {
    Inputs {
        model: configs().join("pendulum.json").to_str().expect("utf-8").to_string(),
        grid: write(
            dir,
            "grid.json",
            r#"{"t_f": {"min": 1.0, "max": 1.4, "samples": 2},
                "q_0": [{"min": -0.2, "max": 0.2, "samples": 2}],
                "q_f": [{"min": -0.8, "max": 0.8, "samples": 2}],
                "frequency_hz": 25.0,
                "filters": [{"kind": "monotone_magnitude", "joint": 0}],
                "test_fraction": 0.25}"#,
        ),
        nn: write(
            dir,
            "nn.json",
            r#"{"members": 3, "hidden_width": 8, "epochs": 30, "fine_tune_epochs": 5}"#,
        ),
        gp: write(dir, "gp.json", r#"{"epochs": 5, "samples": 4}"#),
        spec: write(dir, "spec.json", r#"{"t_f": 1.2, "q_0": [-0.1], "q_f": [0.5]}"#),
        outside: write(dir, "outside.json", r#"[{"t_f": 1.6, "q_0": [0.3], "q_f": [-0.6]}]"#),
    }
}

/// Runs the whole pipeline into `out` and returns the output directory.
fn pipeline(root: &Path) -> PathBuf {
    let inp = inputs(root);
    let out = root.join("out");
    let o = out.to_str().expect("utf-8");
    let data = format!("{o}/dataset");
    let nn = format!("{o}/nn.json");
    let gp = format!("{o}/gp.json");
    ok(restraj(&out, &["gen-dataset", "--model", &inp.model, "--grid", &inp.grid]));
    ok(restraj(&out, &["train-nn", "--data", &data, "--config", &inp.nn]));
    ok(restraj(&out, &["train-gp", "--data", &data, "--config", &inp.gp]));
    for reg in [&nn, &gp] {
        let name = format!("{o}/plan_{}.csv", if reg == &nn { "nn" } else { "gp" });
        ok(restraj(
            &out,
            &["plan", "--model", &inp.model, "--regressor", reg, "--spec", &inp.spec, "--resolution", "40", "--out", &name],
        ));
    }
    ok(restraj(
        &out,
        &[
            "eval", "--model", &inp.model, "--data", &data, "--regressor", &nn, "--regressor", &gp, "--outside",
            &inp.outside, "--frequency", "25",
        ],
    ));
    ok(restraj(
        &out,
        &[
            "active-learn", "--model", &inp.model, "--data", &data, "--regressor", &gp, "--candidates", &inp.outside,
            "-k", "1",
        ],
    ));
    out
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(restraj(dir.path(), &["--help"]));
    assert!(stdout.contains("Usage"));
    assert!(stdout.contains("gen-dataset"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = restraj(dir.path(), &["plan", "--bogus"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn missing_model_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", r#"{"t_f": 1.0, "q_0": [0.0], "q_f": [0.5]}"#);
    let missing = dir.path().join("nowhere/model.json");
    let out = restraj(dir.path(), &["ocp", "--model", missing.to_str().unwrap(), "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(missing.to_str().unwrap()), "{stderr}");
}

#[test]
fn malformed_spec_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let model = configs().join("pendulum.json");
    for (i, text) in [
        r#"{"t_f": 1.0, "q_0": [0.0]}"#,
        r#"{"t_f": 1.0, "q_0": [0.0], "q_f": [0.5], "extra": 1}"#,
        r#"{"t_f": -1.0, "q_0": [0.0], "q_f": [0.5]}"#,
    ]
    .iter()
    .enumerate()
    {
        let spec = write(dir.path(), &format!("spec{i}.json"), text);
        let out = restraj(dir.path(), &["ocp", "--model", model.to_str().unwrap(), "--spec", &spec]);
        assert_eq!(out.status.code(), Some(3), "{text}");
    }
}

#[test]
fn ocp_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = configs().join("pendulum.json");
    let spec = configs().join("pendulum_spec.json");
    let stdout = ok(restraj(
        dir.path(),
        &["ocp", "--model", model.to_str().unwrap(), "--spec", spec.to_str().unwrap(), "--intervals", "40"],
    ));
    assert!(stdout.contains("true"));
    let csv = fs::read_to_string(dir.path().join("ocp.csv")).unwrap();
    assert!(csv.starts_with("variant,t,q_1,v_1,u_1\n"));
    assert_eq!(csv.lines().count(), 42);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ocp.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "ocp");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn pendulum_pipeline_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = pipeline(a.path());
    let out_b = pipeline(b.path());

    let savings = fs::read_to_string(out_a.join("savings.csv")).unwrap();
    let header = savings.lines().next().unwrap();
    assert_eq!(header, "set,regressor,t_f,q0_1,qf_1,variant,savings_pct,uncertainty");
    for set in ["train", "test", "outside"] {
        assert!(savings.lines().any(|l| l.starts_with(&format!("{set},"))), "no {set} rows");
    }
    let plan = fs::read_to_string(out_a.join("plan_gp.csv")).unwrap();
    assert_eq!(plan.lines().count(), 1 + 3 * 40);
    assert!(out_a.join("active_learning.csv").exists());
    assert!(out_a.join("gp_al.json").exists());

    for name in [
        "dataset/residuals.csv",
        "dataset/metadata.json",
        "nn.json",
        "gp.json",
        "plan_nn.csv",
        "plan_gp.csv",
        "savings.csv",
        "active_learning.csv",
        "gp_al.json",
    ] {
        assert_eq!(fs::read(out_a.join(name)).unwrap(), fs::read(out_b.join(name)).unwrap(), "{name} differs");
    }
}
