use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn edgemask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgemask"))
        .args(args)
        .env_remove("EDGEMASK_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generates the default synthetic domains under `dir/data`.
fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = edgemask(&["synth", "--out-dir", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

const FAST: [&str; 14] = [
    "--epochs",
    "4",
    "--mask-proj-dim",
    "8",
    "--mask-hidden",
    "8",
    "--enrich.k",
    "4",
    "--enrich.clusters",
    "4",
    "--tasknet.heads",
    "2",
    "--tasknet.hidden",
    "4",
];

fn train(sources: &str, target: &Path, out: &Path) -> Output {
    let mut args = vec![
        "train",
        "--sources",
        sources,
        "--target",
        p(target),
        "--out-dir",
        p(out),
    ];
    args.extend(FAST);
    edgemask(&args)
}

#[test]
fn missing_feature_file_is_a_config_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let dom = tmp.path().join("dom");
    fs::create_dir(&dom).unwrap();
    fs::write(dom.join("edges.txt"), "0 1\n").unwrap();
    fs::write(dom.join("labels.txt"), "0\n1\n").unwrap();
    let o = edgemask(&[
        "train",
        "--sources",
        p(&dom),
        "--out-dir",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains(p(&dom.join("features.csv"))),
        "{}",
        stderr(&o)
    );
}

#[test]
fn oracle_surrogate_passes_on_builtin_fixtures() {
    let tmp = TempDir::new().unwrap();
    let o = edgemask(&["oracle", "--surrogate", "--out-dir", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("surrogate") && out.contains("PASS"), "{out}");
    assert!(tmp.path().join("oracle.json").exists());
}

#[test]
fn gradcheck_prints_a_table_and_fails_with_code_3_on_impossible_tolerance() {
    let tmp = TempDir::new().unwrap();
    let ok = edgemask(&["gradcheck", "--out-dir", p(tmp.path())]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let out = String::from_utf8_lossy(&ok.stdout);
    assert!(
        out.contains("mask.out_bias") && out.contains("max-rel"),
        "{out}"
    );
    let bad = edgemask(&["gradcheck", "--tol", "1e-30", "--out-dir", p(tmp.path())]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn unknown_config_key_exits_1() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "epochz = 3\nsources = [\"x.json\"]\n").unwrap();
    let o = edgemask(&["train", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_2() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let mut args = vec![
        "train",
        "--sources",
        data.join("domain0.json").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("r").to_str().unwrap(),
        "--lr-task",
        "1e200",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(FAST.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = edgemask(&refs);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn synth_train_eval_pipeline_reports_held_out_scores() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let sources = format!(
        "{},{}",
        p(&data.join("domain0.json")),
        p(&data.join("domain1"))
    );
    let run = tmp.path().join("run");
    let o = train(&sources, &data.join("domain2.json"), &run);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "manifest.json",
        "checkpoint.json",
        "history.csv",
        "mask.csv",
        "metrics.json",
        "timings.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["schema"], "edgemask-metrics/1");
    assert_eq!(metrics["split"], "held-out");
    let d = &metrics["metrics"]["domains"][0];
    assert_eq!(d["domain"], "domain2");
    assert!(d["micro_f1"].as_f64().unwrap() > 0.0);
    assert!(d["macro_f1"].as_f64().is_some());
    assert!(metrics["masknet"]["domains"][0]["micro_f1"]
        .as_f64()
        .is_some());
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);

    let ev = tmp.path().join("ev");
    let o = edgemask(&[
        "eval",
        "--checkpoint",
        p(&run.join("checkpoint.json")),
        "--graphs",
        p(&data.join("domain2.json")),
        "--out-dir",
        p(&ev),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(again["metrics"]["domains"][0]["micro_f1"], d["micro_f1"]);
}

#[test]
fn same_manifest_gives_byte_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let target = data.join("domain2.json");
    let sources = format!(
        "{},{}",
        p(&data.join("domain0.json")),
        p(&data.join("domain1.json"))
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(train(&sources, &target, &a).status.success());
    assert!(train(&sources, &target, &b).status.success());
    for f in [
        "manifest.json",
        "metrics.json",
        "checkpoint.json",
        "history.csv",
        "mask.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn target_labels_are_not_read_during_training() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let sources = format!(
        "{},{}",
        p(&data.join("domain0.json")),
        p(&data.join("domain1.json"))
    );
    let clean = tmp.path().join("clean");
    assert!(train(&sources, &data.join("domain2"), &clean)
        .status
        .success());

    // relabelled target: training output identical, scores differ
    let relabelled = tmp.path().join("domain2");
    fs::create_dir(&relabelled).unwrap();
    for f in ["features.csv", "edges.txt"] {
        fs::copy(data.join("domain2").join(f), relabelled.join(f)).unwrap();
    }
    let labels: String = fs::read_to_string(data.join("domain2/labels.txt"))
        .unwrap()
        .lines()
        .map(|l| format!("{}\n", (l.parse::<i64>().unwrap() + 1) % 3))
        .collect();
    fs::write(relabelled.join("labels.txt"), labels).unwrap();
    let moved = tmp.path().join("moved");
    assert!(train(&sources, &relabelled, &moved).status.success());
    for f in ["checkpoint.json", "history.csv", "mask.csv"] {
        assert_eq!(
            fs::read(clean.join(f)).unwrap(),
            fs::read(moved.join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_ne!(
        fs::read(clean.join("metrics.json")).unwrap(),
        fs::read(moved.join("metrics.json")).unwrap()
    );

    // unreadable target labels: training completes and checkpoints before
    // the target is touched, then the run fails
    fs::write(relabelled.join("labels.txt"), "not a label\n").unwrap();
    let broken = tmp.path().join("broken");
    let o = train(&sources, &relabelled, &broken);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("labels.txt"), "{}", stderr(&o));
    assert_eq!(
        fs::read(clean.join("checkpoint.json")).unwrap(),
        fs::read(broken.join("checkpoint.json")).unwrap()
    );
    assert!(!broken.join("metrics.json").exists());
}

#[test]
fn out_dir_env_variable_is_honoured() {
    let tmp = TempDir::new().unwrap();
    let target = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_edgemask"))
        .args(["oracle", "--kkt"])
        .env("EDGEMASK_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("oracle.json").exists());
    assert!(target.join("manifest.json").exists());
}

#[test]
fn enrich_writes_graph_and_origin_counts() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let out = tmp.path().join("enriched");
    let o = edgemask(&[
        "enrich",
        "--graph",
        p(&data.join("domain0.json")),
        "--k",
        "3",
        "--clusters",
        "4",
        "--gamma-knn",
        "1.0",
        "--gamma-spec",
        "0.5",
        "--seed",
        "7",
        "--out-dir",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("edge_stats.json")).unwrap()).unwrap();
    assert!(stats["counts"]["knn"].as_u64().unwrap() > 0);
    assert!(stats["enriched_edges"].as_u64() > stats["base_edges"].as_u64());
    let g: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("enriched.json")).unwrap()).unwrap();
    assert_eq!(
        g["edges"].as_array().unwrap().len() as u64,
        stats["enriched_edges"].as_u64().unwrap()
    );
}

#[test]
fn ablations_emit_tables() {
    let tmp = TempDir::new().unwrap();
    let data = synth(tmp.path());
    let sources = format!(
        "{},{},{}",
        p(&data.join("domain0.json")),
        p(&data.join("domain1.json")),
        p(&data.join("domain2.json"))
    );
    let out = tmp.path().join("lam");
    let mut args = vec![
        "ablate-lambda",
        "--sources",
        &sources,
        "--grid",
        "0,0.1",
        "--out-dir",
        p(&out),
        "--epochs",
        "2",
    ];
    args.extend(&FAST[2..]);
    let o = edgemask(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("lambda.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out = tmp.path().join("grid");
    let mut args = vec![
        "ablate-2x2",
        "--sources",
        &sources,
        "--seeds",
        "0",
        "--out-dir",
        p(&out),
        "--epochs",
        "2",
    ];
    args.extend(&FAST[2..]);
    let o = edgemask(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows["protocol"], "leave-one-out");
    assert_eq!(rows["rows"].as_array().unwrap().len(), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("union"));
}
