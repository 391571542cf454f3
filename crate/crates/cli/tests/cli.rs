use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_knee-scout"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path, count: &str, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--count",
        count,
        "--out-dir",
        dir.to_str().unwrap(),
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn version_flag() {
    let o = run(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("knee-scout "));
}

#[test]
fn unknown_flag_is_an_input_error_with_usage() {
    let o = run(&["identify", "--input", "x.csv", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["nonsense"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn identify_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let input = dir.path().join("knee-000.csv");
    let out = dir.path().join("report.json");
    let o = run(&[
        "identify",
        "--input",
        input.to_str().unwrap(),
        "--preset",
        "noisy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["cell_id"], "knee-000");
    assert_eq!(report["method"], "curvature_rea");
    assert!(report["onset_cycle"].as_u64().unwrap() < report["knee_cycle"].as_u64().unwrap());
}

#[test]
fn five_point_baconwatts_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("five.csv");
    std::fs::write(
        &input,
        "cycle,discharge_capacity_ah\n1,1.0\n2,0.99\n3,0.98\n4,0.97\n5,0.96\n",
    )
    .unwrap();
    let o = run(&[
        "baconwatts",
        "--input",
        input.to_str().unwrap(),
        "--q-nom",
        "1.0",
        "--json-errors",
    ]);
    assert_eq!(code(&o), 2);
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "TooShort");
}

#[test]
fn missing_input_is_an_input_error() {
    let o = run(&[
        "identify",
        "--input",
        "/nonexistent/cell.csv",
        "--json-errors",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"Io\""));
}

#[test]
fn batch_output_is_byte_identical_across_runs_and_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "5", &["--family", "fleet"]);
    let batch = |out: &str, jobs: &str| {
        let out = dir.path().join(out);
        let o = run(&[
            "batch",
            "--dir",
            data.to_str().unwrap(),
            "--methods",
            "curvature,baconwatts",
            "--preset",
            "noisy",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = batch("a", "1");
    let b = batch("b", "3");
    for f in [
        "batch.csv",
        "scatter_curvature_rea.csv",
        "scatter_double_bacon_watts.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let text = std::fs::read_to_string(a.join("batch.csv")).unwrap();
    assert!(text.starts_with("cell_id,method,onset_cycle,knee_cycle,eol_cycle,gap\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 10);
    assert!(text.contains("# curvature_rea.pearson_knee_eol="));
    assert!(text.contains("# improvement_onset_pct="));
}

#[test]
fn single_method_batch_has_one_section() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "3", &[]);
    let out = dir.path().join("out");
    let o = run(&[
        "batch",
        "--dir",
        data.to_str().unwrap(),
        "--methods",
        "curvature",
        "--preset",
        "noisy",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(out.join("batch.csv")).unwrap();
    assert!(!text.contains("double_bacon_watts"));
    assert!(!out.join("scatter_double_bacon_watts.csv").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", &[]);
    let input = dir.path().join("knee-000.csv");
    let cfg = dir.path().join("params.conf");
    std::fs::write(&cfg, "# smoothing\nsg_window = 41\nmp_window = 8\n").unwrap();
    let o = run(&[
        "identify",
        "--input",
        input.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--sg-window",
        "51",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["params"]["sg_window"], 51);
    assert_eq!(report["params"]["mp_window"], 8);

    std::fs::write(&cfg, "sg_window = 40\n").unwrap();
    let o = run(&[
        "identify",
        "--input",
        input.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn early_prediction_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fleet");
    synth(&data, "20", &["--with-records", "--record-cycles", "30"]);
    assert!(data.join("cell-000.cycles.csv").exists());
    assert!(data.join("labels.csv").exists());

    let mut cycles: Vec<String> = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .filter(|p| p.ends_with(".cycles.csv"))
        .collect();
    cycles.sort();
    let feats = dir.path().join("f.csv");
    let mut args = vec!["features".to_string()];
    for c in &cycles {
        args.push("--cycles".into());
        args.push(c.clone());
    }
    args.extend(["--budget", "30", "--out", feats.to_str().unwrap()].map(String::from));
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let model = dir.path().join("model.json");
    let labels = data.join("labels.csv");
    let o = run(&[
        "train",
        "--features",
        feats.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--set",
        "n_trees=40",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["trees"].as_array().unwrap().len(), 40);

    let o = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("cell_id,predicted_onset_cycle\n"));

    let sweep = dir.path().join("sweep.csv");
    let o = run(&[
        "sensitivity",
        "--dir",
        data.to_str().unwrap(),
        "--budgets",
        "15,30",
        "--repeats",
        "1",
        "--set",
        "n_trees=20",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 3);

    let o = run(&[
        "features",
        "--cycles",
        &cycles[0],
        "--budget",
        "10",
        "--out",
        feats.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "2", &["--family", "convex"]);
    synth(&b, "2", &["--family", "convex"]);
    for f in [
        "convex-000.csv",
        "convex-001.truth.json",
        "convex-001.meta.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
}
