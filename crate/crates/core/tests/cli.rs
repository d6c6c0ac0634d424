use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use serde_json::Value;

use zonotrain::experiment::{self, dataset_from_csv, ExperimentConfig};
use zonotrain::training::Certification;
use zonotrain::{ConstrainedZonotope, Network};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zonotrain"))
        .args(args)
        .output()
        .expect("run zonotrain")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_seeded_bounded_and_labelled() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"train": {"dataset_size": 200}}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(cli(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        path(&a)
    ])
    .status
    .success());
    assert!(cli(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        path(&b)
    ])
    .status
    .success());
    let text = fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("dataset.csv")).unwrap());
    assert!(text.starts_with("x1,x2,y1,y2\n"));

    let data = dataset_from_csv(&text).unwrap();
    assert_eq!(data.len(), 200);
    for j in 0..data.len() {
        let (x1, x2) = (data.inputs[(0, j)], data.inputs[(1, j)]);
        assert!(x1.abs() <= 1.0 && x2.abs() <= 1.0);
        assert!((data.labels[(0, j)] - (x1.powi(2) + x2.sin())).abs() <= 1e-12);
        assert!((data.labels[(1, j)] - (x2.powi(2) + x1.sin())).abs() <= 1e-12);
    }
}

#[test]
fn single_sample_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"train": {"dataset_size": 1}}"#);
    let out = tmp.path().join("one");
    cli(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--out",
        path(&out),
    ]);
    let first = fs::read_to_string(out.join("dataset.csv")).unwrap();
    cli(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--out",
        path(&out),
    ]);
    assert_eq!(first, fs::read_to_string(out.join("dataset.csv")).unwrap());
    assert_eq!(first.lines().count(), 2);
}

#[test]
fn zero_iterations_summarise_the_initial_network() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(
        tmp.path(),
        r#"{"train": {"iterations": 0, "dataset_size": 100}}"#,
    );
    let out = tmp.path().join("run");
    cli(&["train", "--config", &cfg_path, "--out", path(&out)]);
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();

    let cfg = ExperimentConfig::load(Path::new(&cfg_path)).unwrap();
    let net = cfg.initial_network().unwrap();
    let saved: Network =
        serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(saved, net);
    let data = experiment::generate_dataset(&cfg).unwrap();
    let loss = net.objective_loss(&data.inputs, &data.labels).unwrap();
    assert_eq!(summary["final_objective_loss"].as_f64().unwrap(), loss);
    assert_eq!(summary["table"][0]["quantity"], "final objective loss");
    assert_eq!(fs::read_to_string(out.join("report.jsonl")).unwrap(), "");
    assert!(out.join("timing.json").is_file());
    assert!(!fs::read_to_string(out.join("summary.json"))
        .unwrap()
        .contains("wall_time"));
}

fn identity_model(dir: &Path) -> String {
    let p = dir.join("identity.json");
    fs::write(
        &p,
        r#"{"layers":[{"W":[[1.0,0.0],[0.0,1.0]],"w":[0.0,0.0]}]}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn verify_far_unsafe_set_is_safe() {
    let tmp = tempfile::tempdir().unwrap();
    let model = identity_model(tmp.path());
    let cfg = write_config(
        tmp.path(),
        r#"{"unsafe_sets": [{"c": [100.0, 100.0], "G": [[0.5, 0.0], [0.0, 0.5]]}]}"#,
    );
    let out = tmp.path().join("v.json");
    let res = cli(&[
        "verify",
        "--config",
        &cfg,
        "--model",
        &model,
        "--out",
        path(&out),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let cert: Certification = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!(cert.safe);
    assert!(cert.pieces[0].checks[0].witness.is_none());
}

#[test]
fn verify_identical_sets_is_unsafe_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let model = identity_model(tmp.path());
    let cfg = write_config(
        tmp.path(),
        r#"{"unsafe_sets": [{"c": [0.0, 0.0], "G": [[1.0, 0.0], [0.0, 1.0]]}]}"#,
    );
    let res = cli(&["verify", "--config", &cfg, "--model", &model]);
    assert_eq!(res.status.code(), Some(1));
    let cert: Certification =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("verify.json")).unwrap()).unwrap();
    assert!(!cert.safe);
    let w = DVector::from_vec(cert.pieces[0].checks[0].witness.clone().unwrap());
    let unit = ConstrainedZonotope::unit_box(2);
    assert!(zonotrain::conzono::contains_point(&unit, &w, 1e-9).unwrap());
}

#[test]
fn reach_writes_pieces() {
    let tmp = tempfile::tempdir().unwrap();
    let model = identity_model(tmp.path());
    let res = cli(&["reach", "--model", &model]);
    assert!(res.status.success());
    let r: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("reach.json")).unwrap()).unwrap();
    assert_eq!(r["pieces"].as_array().unwrap().len(), 1);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli(&["train"]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let res = cli(&["train", "--preset", "slow", "--out", path(tmp.path())]);
    assert_eq!(res.status.code(), Some(2));
    let bad = write_config(tmp.path(), r#"{"widths": [3, 4, 2]}"#);
    assert_eq!(
        cli(&["gen-data", "--config", &bad, "--out", path(tmp.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn export_plot_on_empty_directory_is_a_structured_error() {
    let tmp = tempfile::tempdir().unwrap();
    let res = cli(&["export-plot", path(tmp.path())]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("missing config.json"), "{err}");
}

fn in_unsafe_count(run: &Path) -> usize {
    fs::read_to_string(run.join("plots/outputs.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",1"))
        .count()
}

#[test]
fn exported_plots_separate_constrained_and_unconstrained_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (u, c) = (tmp.path().join("u"), tmp.path().join("c"));
    let res = cli(&[
        "train",
        "--preset",
        "quick",
        "--unconstrained",
        "--out",
        path(&u),
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(
        cli(&["train", "--preset", "quick", "--out", path(&c)])
            .status
            .code(),
        Some(0)
    );
    for run in [&u, &c] {
        assert!(cli(&["export-plot", path(run)]).status.success());
        for f in [
            "outputs.csv",
            "pieces.csv",
            "unsafe.csv",
            "loss.csv",
            "outputs.svg",
            "loss.svg",
        ] {
            assert!(run.join("plots").join(f).is_file(), "{f}");
        }
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(u.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_constraint_loss"].as_f64().unwrap() > 0.0);
    assert!(in_unsafe_count(&u) > 0);
    assert_eq!(in_unsafe_count(&c), 0);

    // Every exported output point lies in some reach piece.
    let cfg = ExperimentConfig::load(&c.join("config.json")).unwrap();
    let net = experiment::load_network(&c.join("model.json")).unwrap();
    let r = experiment::compute_reach(&net, &cfg).unwrap();
    let data = dataset_from_csv(&fs::read_to_string(c.join("dataset.csv")).unwrap()).unwrap();
    for p in experiment::output_points(&net, &data, &cfg.unsafe_sets)
        .unwrap()
        .iter()
        .step_by(10)
    {
        assert!(!r.pieces_containing(&p.output, 1e-6).unwrap().is_empty());
    }
    let svg = fs::read_to_string(c.join("plots/outputs.svg")).unwrap();
    assert!(svg.contains("version=\"1.1\"") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn export_plot_rejects_model_config_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    fs::create_dir_all(&run).unwrap();
    let cfg = ExperimentConfig::default();
    fs::write(
        run.join("config.json"),
        serde_json::to_string(&cfg).unwrap(),
    )
    .unwrap();
    // 3-D outputs against a 2-D unsafe set.
    let net = Network::init(&[2, 3], 0).unwrap();
    fs::write(run.join("model.json"), serde_json::to_string(&net).unwrap()).unwrap();
    fs::write(run.join("dataset.csv"), "x1,x2,y1,y2\n0.5,0.5,0.1,0.1\n").unwrap();
    fs::write(run.join("report.jsonl"), "").unwrap();
    let err = experiment::export_plot(&run).unwrap_err();
    assert!(
        matches!(err, zonotrain::Error::DimensionMismatch(_)),
        "{err}"
    );
    assert_eq!(cli(&["export-plot", path(&run)]).status.code(), Some(2));
}
