use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const HEADER: &str =
    "iter,loss,v_perp,v_par,dist_minnorm_sq,dist_init_sq,max_unit_drift,sign_flips,wall_ms";

const SMALL_TRAIN: &str = r#"
seed = 7

[data]
n = 20
d = 3

[network]
width = 200

[train]
step_size = 0.01
max_iters = 300
record_every = 25
"#;

fn ntklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntklab"))
        .args(args)
        .env_remove("NTKLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_outputs_and_replays_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL_TRAIN);
    let out1 = tmp.path().join("a");
    let res = ntklab(&["train", "--config", &cfg, "--out", path_str(&out1)]);
    assert!(res.status.success(), "{}", stderr(&res));

    for f in [
        "trajectory.csv",
        "loss.svg",
        "trajectory.svg",
        "manifest.json",
    ] {
        assert!(out1.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out1.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let iters: Vec<usize> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(iters.len() > 2);
    assert!(iters.windows(2).all(|w| w[0] < w[1]));

    let manifest = read_json(&out1.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["seed"], 7);
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out1.join(f.as_str().unwrap()).is_file());
    }

    let out2 = tmp.path().join("b");
    let manifest_path = out1.join("manifest.json");
    let res = ntklab(&[
        "train",
        "--config",
        path_str(&manifest_path),
        "--out",
        path_str(&out2),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        fs::read(out1.join("trajectory.csv")).unwrap(),
        fs::read(out2.join("trajectory.csv")).unwrap()
    );
    assert_eq!(
        manifest["config_hash"],
        read_json(&out2.join("manifest.json"))["config_hash"]
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", SMALL_TRAIN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(ntklab(&[
        "train",
        "--config",
        &cfg,
        "--threads",
        "1",
        "--out",
        path_str(&a)
    ])
    .status
    .success());
    assert!(ntklab(&[
        "train",
        "--config",
        &cfg,
        "--threads",
        "3",
        "--out",
        path_str(&b)
    ])
    .status
    .success());
    assert_eq!(
        fs::read(a.join("trajectory.csv")).unwrap(),
        fs::read(b.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn negative_step_size_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[train]\nstep_size = -0.5\n");
    let res = ntklab(&[
        "train",
        "--config",
        &cfg,
        "--out",
        path_str(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("step_size"), "{}", stderr(&res));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "typo.toml", "[train]\nstep_sise = 0.1\n");
    let res = ntklab(&[
        "train",
        "--config",
        &cfg,
        "--out",
        path_str(&tmp.path().join("o")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("step_sise"), "{}", stderr(&res));
}

#[test]
fn usage_errors_exit_one() {
    let res = ntklab(&["train", "--no-such-flag"]);
    assert_eq!(res.status.code(), Some(1));
    let res = ntklab(&["--help"]);
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn figure1_honors_width_override() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "fig.toml",
        "[figure1.train]\nmax_iters = 200\nrecord_every = 50\n",
    );
    let out = tmp.path().join("fig");
    let res = ntklab(&[
        "figure1",
        "--config",
        &cfg,
        "--widths",
        "60,120",
        "--seeds",
        "2",
        "--out",
        path_str(&out),
    ]);
    // Unconverged cells are reported, not failed.
    assert!(res.status.success(), "{}", stderr(&res));
    for f in [
        "figure1.csv",
        "v_perp.svg",
        "dist_minnorm.svg",
        "dist_init.svg",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for svg in ["v_perp.svg", "dist_minnorm.svg", "dist_init.svg"] {
        let body = fs::read_to_string(out.join(svg)).unwrap();
        assert_eq!(body.matches("<polyline").count(), 2, "{svg}");
        assert!(body.contains("m=60") && body.contains("m=120"), "{svg}");
        assert!(!body.contains("href"));
    }
    let manifest = read_json(&out.join("manifest.json"));
    for key in [
        "v_perp_non_increasing",
        "dist_minnorm_non_increasing",
        "all_converged",
        "loss_monotone",
    ] {
        assert!(manifest["checks"][key].is_boolean(), "{key}");
    }
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn kernel_check_reports_and_rejects_zero_trials() {
    let tmp = TempDir::new().unwrap();
    let res = ntklab(&[
        "kernel-check",
        "--trials",
        "0",
        "--out",
        path_str(&tmp.path().join("z")),
    ]);
    assert_eq!(res.status.code(), Some(1));

    let cfg = write(
        tmp.path(),
        "k.toml",
        "[kernel_check]\nwidths = [500, 2000, 8000]\npairs_per_trial = 50\n",
    );
    let out = tmp.path().join("k");
    let res = ntklab(&[
        "kernel-check",
        "--config",
        &cfg,
        "--trials",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report = read_json(&out.join("report.json"));
    assert!(report["series_max_err"].as_f64().unwrap() < 1e-10);
    assert!(report["empirical"]["slope"].is_number());
    assert_eq!(report["empirical"]["seeds"].as_array().unwrap().len(), 3);
}

#[test]
fn eig_bounds_on_synthetic_and_hand_datasets() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("synth");
    let res = ntklab(&[
        "eig-bounds",
        "--n",
        "40",
        "--d",
        "5",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        read_json(&out.join("eig_bounds.json"))["sandwich_holds"],
        true
    );

    let r = 2f64.sqrt();
    let rows: String = (0..3)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 3.0;
            format!("{},{}\n", r * t.cos(), r * t.sin())
        })
        .collect();
    let data = write(tmp.path(), "three.csv", &format!("# x1,x2\n{rows}"));
    let out = tmp.path().join("three");
    let res = ntklab(&["eig-bounds", "--dataset", &data, "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let rep = read_json(&out.join("eig_bounds.json"));
    assert!((rep["exact_lambda_min"].as_f64().unwrap() - 1.5).abs() < 1e-10);
    assert!((rep["upper_bound"].as_f64().unwrap() - 1.5).abs() < 1e-10);

    let data = write(tmp.path(), "par.csv", "1.0,1.0\n1.0,-1.0\n-1.0,-1.0\n");
    let res = ntklab(&[
        "eig-bounds",
        "--dataset",
        &data,
        "--out",
        path_str(&tmp.path().join("p")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("parallel"), "{}", stderr(&res));
}

#[test]
fn generalize_constant_target_with_standardization_fails() {
    let tmp = TempDir::new().unwrap();
    let res = ntklab(&[
        "generalize",
        "--p",
        "0",
        "--normalize",
        "--out",
        path_str(&tmp.path().join("g")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("zero variance"), "{}", stderr(&res));
}

#[test]
fn generalize_small_sweep_records_slope() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let res = ntklab(&[
        "generalize",
        "--p",
        "1",
        "--ns",
        "10,20",
        "--seeds",
        "2",
        "--width",
        "200",
        "--out",
        path_str(&out),
    ]);
    assert!(
        res.status.success() || res.status.code() == Some(2),
        "{}",
        stderr(&res)
    );
    let manifest = read_json(&out.join("manifest.json"));
    assert!(manifest["summary"]["fitted_slope"].is_number());
    assert!(manifest["checks"]["slope_in_gate"].is_boolean());
    assert!(out.join("generalize.csv").is_file() && out.join("generalize.svg").is_file());
}
