use std::path::Path;
use std::process::{Command, Output};

fn windgrid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windgrid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = windgrid(&["embed", "--registry", "r.csv", "--out", "g.json", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = windgrid(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn embeds_three_turbines() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("r.csv"),
        "turbine_id,latitude,longitude\n12,10.0,20.7\n10,10.0,20.0\n11,10.5,20.0\n",
    )
    .unwrap();
    ok(&windgrid(&["embed", "--registry", "r.csv", "--out", "g.json"], dir.path()));
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(g["cells"], serde_json::json!([[0, 2], [1, -1]]));
    assert_eq!(g["row_coords"], serde_json::json!([10.0, 10.5]));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = windgrid(&["embed", "--registry", "missing.csv", "--out", "g.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));

    std::fs::write(dir.path().join("c.json"), r#"{"seed": 1, "output_dir": "o", "data": {"kind": "reference"}, "samples": {"horizon": -3}}"#).unwrap();
    let o = windgrid(&["run-all", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("samples.horizon"));

    let o = Command::new(env!("CARGO_BIN_EXE_windgrid"))
        .args(["embed", "--registry", "r.csv", "--out", "g.json"])
        .current_dir(dir.path())
        .env("WINDGRID_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn step_by_step_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("farm.json"),
        r#"{
            "field": {"height": 4, "width": 4, "steps": 60, "seed": 3,
                      "blobs": [{"amplitude": 4.0, "center": [1.0, 1.0], "width": 1.5}],
                      "drift": [1.0, 0.0], "ambient": 7.0, "noise_sd": 0.2},
            "curve": {"cut_in": 3.0, "rated_speed": 12.0, "rated_power": 2.0}
        }"#,
    )
    .unwrap();
    ok(&windgrid(&["synth", "--config", "farm.json", "--out-dir", "farm"], d));
    for f in ["registry.csv", "power.csv", "speed.csv", "grid.json"] {
        assert!(d.join("farm").join(f).exists(), "{f}");
    }

    let data = ["--registry", "farm/registry.csv", "--power", "farm/power.csv", "--speed", "farm/speed.csv"];
    let window = ["--window", "4", "--horizon", "2"];
    let mut scenes = vec!["scenes"];
    scenes.extend(data);
    scenes.extend(window);
    scenes.extend(["--variables", "power,speed", "--out", "s.stf"]);
    ok(&windgrid(&scenes, d));

    std::fs::write(d.join("e2e.json"), r#"{"depth": 2, "base_channels": 4}"#).unwrap();
    ok(&windgrid(
        &["train", "--samples", "s.stf", "--model", "e2e", "--model-config", "e2e.json", "--epochs", "3", "--seed", "1", "--out", "e2e.ckpt", "--loss-out", "loss.csv"],
        d,
    ));
    let loss = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4, "{loss}");
    ok(&windgrid(
        &["predict", "--checkpoint", "e2e.ckpt", "--samples", "s.stf", "--out", "e2e.csv"],
        d,
    ));

    let mut knn = vec!["baseline", "--method", "knn", "--feature", "lf", "--neighbors", "3"];
    knn.extend(data);
    knn.extend(window);
    knn.extend(["--out", "knn.csv"]);
    ok(&windgrid(&knn, d));

    let model_csv = std::fs::read_to_string(d.join("e2e.csv")).unwrap();
    let knn_csv = std::fs::read_to_string(d.join("knn.csv")).unwrap();
    assert!(model_csv.starts_with("timestamp,turbine_id,prediction,target\n"));
    // Same split, same rows: the target columns agree line by line, up to
    // the f32 storage of sample sets.
    let targets = |s: &str| s.lines().map(|l| l.rsplit(',').next().unwrap().to_string()).collect::<Vec<_>>();
    let keys = |s: &str| s.lines().map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect::<Vec<_>>();
    assert_eq!(keys(&model_csv), keys(&knn_csv));
    let (a, b) = (targets(&model_csv), targets(&knn_csv));
    for (x, y) in a.iter().zip(&b).skip(1) {
        let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
    }

    ok(&windgrid(
        &["eval", "--predictions", "E2E=e2e.csv", "--predictions", "LF+kNN=knn.csv", "--candidate", "E2E", "--out", "report"],
        d,
    ));
    let table = std::fs::read_to_string(d.join("report/table.csv")).unwrap();
    assert!(table.starts_with("stat,E2E,LF+kNN\nMAX,"), "{table}");
    assert!(d.join("report/improvement_summary.csv").exists());
}
