use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use uqsup_core::analysis::{neighborhood_stats, sample_size_sweep};
use uqsup_core::io;
use uqsup_core::metrics::EvaluationOptions;
use uqsup_core::quantifiers::QuantifierId;
use uqsup_core::supervisor::CalibrationMode;

fn uqsup(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqsup"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(o), stderr(o));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const POINT_FILE: &str = r#"{"version":1,"task":"classification","num_classes":3,"samples_per_record":1}
{"id":"a","outputs":[[0.7,0.2,0.1]],"label":0,"split":"test","source":"nominal"}
{"id":"b","outputs":[[0.1,0.3,0.6]],"label":1,"split":"test","source":"nominal"}
"#;

/// Ten correct validation predictions with SM confidences 0.55, 0.60, ..., 1.0.
fn decile_file() -> String {
    let mut text =
        String::from(r#"{"version":1,"task":"classification","num_classes":2,"samples_per_record":1}"#);
    text.push('\n');
    for i in 0..10 {
        let c = 0.55 + 0.05 * i as f64;
        text.push_str(&format!(
            r#"{{"id":"v{i}","outputs":[[{c},{}]],"label":0,"split":"validation","source":"nominal"}}"#,
            1.0 - c
        ));
        text.push('\n');
    }
    for i in 0..4 {
        let c = 0.6 + 0.1 * i as f64;
        let label = i % 2;
        text.push_str(&format!(
            r#"{{"id":"t{i}","outputs":[[{c},{}]],"label":{label},"split":"test","source":"nominal"}}"#,
            1.0 - c
        ));
        text.push('\n');
    }
    text
}

fn synth(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let mut all = vec!["synth", "--out", name];
    all.extend_from_slice(args);
    assert_ok(&uqsup(dir, &all));
    dir.join(name)
}

#[test]
fn quantify_max_softmax_to_stdout() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.jsonl", POINT_FILE);
    let out = uqsup(tmp.path(), &["quantify", "p.jsonl", "-q", "SM"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.starts_with("id,predicted,score,orientation"), "{text}");
    assert!(text.contains("a,0,0.7,confidence"), "{text}");
    assert!(text.contains("b,2,0.6,confidence"), "{text}");
}

#[test]
fn sampling_quantifier_on_point_predictions_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.jsonl", POINT_FILE);
    let out = uqsup(tmp.path(), &["quantify", "p.jsonl", "-q", "VR"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("VR"), "{}", stderr(&out));
}

#[test]
fn quantify_all_writes_one_file_per_applicable_quantifier() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.jsonl", POINT_FILE);
    assert_ok(&uqsup(tmp.path(), &["quantify", "p.jsonl", "-q", "all", "--out", "scores"]));
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("scores"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["PCS.csv", "SM.csv", "SME.csv"]);
}

#[test]
fn invalid_record_file_names_the_line() {
    let tmp = TempDir::new().unwrap();
    let bad = POINT_FILE.replace("[0.1,0.3,0.6]", "[0.1,0.3,0.9]");
    write(tmp.path(), "bad.jsonl", &bad);
    let out = uqsup(tmp.path(), &["validate", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn calibrate_hits_an_exact_decile() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "d.jsonl", &decile_file());
    let out = uqsup(tmp.path(), &["calibrate", "d.jsonl", "-q", "SM", "-e", "0.1", "--out", "c.toml"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("achieved_fpr 0.1 on 10 benign scores"), "{}", stdout(&out));
    let config = io::read_config(&tmp.path().join("c.toml")).unwrap();
    assert_eq!(config.achieved_fpr, Some(0.1));
    assert_eq!(config.quantifier, Some(QuantifierId::MaxSoftmax));
}

#[test]
fn calibrate_without_validation_records_fails() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.jsonl", POINT_FILE);
    let out = uqsup(tmp.path(), &["calibrate", "p.jsonl", "-q", "SM", "-e", "0.1", "--out", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("c.toml").exists());
}

#[test]
fn accept_all_config_leaves_accuracy_unchanged() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "d.jsonl", &decile_file());
    assert_ok(&uqsup(
        tmp.path(),
        &["calibrate", "d.jsonl", "-q", "SM", "-e", "0.01", "--mode", "at-most", "--out", "c.toml"],
    ));
    let out = uqsup(tmp.path(), &["evaluate", "d.jsonl", "-c", "c.toml", "--out", "r.json"]);
    assert_ok(&out);
    let report = io::read_report(&tmp.path().join("r.json")).unwrap();
    assert_eq!(report.acceptance_rate.value(), Some(1.0));
    assert_eq!(report.supervised_objective, report.unsupervised_objective);
    assert_eq!(report.metadata.get("source").map(String::as_str), Some("nominal"));
}

#[test]
fn reject_all_config_reports_undefined_accuracy() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "p.jsonl", POINT_FILE);
    write(
        tmp.path(),
        "rej.toml",
        "quantifier = \"SM\"\nthreshold = \"inf\"\norientation = \"confidence\"\n",
    );
    let out = uqsup(tmp.path(), &["evaluate", "p.jsonl", "-c", "rej.toml"]);
    assert_ok(&out);
    let row = stdout(&out).lines().nth(1).unwrap().to_string();
    assert_eq!(row, "0.5000 | n.a. | 0.0000 | 0.0000");
}

#[test]
fn compare_ranks_reports_with_midrank_ties() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "d.jsonl", &decile_file());
    fs::create_dir(tmp.path().join("results")).unwrap();
    // With two classes PCS = 2·SM − 1, so both supervisors decide alike and tie.
    for q in ["SM", "PCS", "SME"] {
        let config = format!("{q}.toml");
        assert_ok(&uqsup(
            tmp.path(),
            &["calibrate", "d.jsonl", "-q", q, "-e", "0.1", "--out", &config],
        ));
        let report = format!("results/{q}.json");
        assert_ok(&uqsup(tmp.path(), &["evaluate", "d.jsonl", "-c", &config, "--out", &report]));
    }
    let out = uqsup(tmp.path(), &["compare", "results", "--out", "ranks.csv"]);
    assert_ok(&out);
    let csv = fs::read_to_string(tmp.path().join("ranks.csv")).unwrap();
    let rank = |q: &str| -> f64 {
        let line = csv.lines().find(|l| l.starts_with(&format!("{q},"))).unwrap();
        line.split(',').nth_back(1).unwrap().parse().unwrap()
    };
    assert_eq!(rank("SM"), rank("PCS"));
    let total = rank("SM") + rank("PCS") + rank("SME");
    assert_eq!(total, 6.0, "{csv}");
}

#[test]
fn sweep_matches_the_library_and_feeds_sensitivity() {
    let tmp = TempDir::new().unwrap();
    let mut files = Vec::new();
    for epoch in 1..=3 {
        let name = format!("e{epoch}.jsonl");
        let seed = epoch.to_string();
        let meta = format!("epoch={epoch}");
        synth(
            tmp.path(),
            &name,
            &["--seed", &seed, "--samples", "6", "--validation", "120", "--test", "120", "--meta", &meta],
        );
        files.push(name);
    }
    let mut args = vec!["sweep"];
    args.extend(files.iter().map(String::as_str));
    args.extend(["-q", "VR", "-e", "0.1", "--sizes", "2..6", "--out", "sweep"]);
    assert_ok(&uqsup(tmp.path(), &args));

    let grid = io::read_grid(&tmp.path().join("sweep/s1.csv")).unwrap();
    assert_eq!(grid.axis1, [1, 2, 3]);
    assert_eq!(grid.axis2, [2, 3, 4, 5, 6]);
    for (row, file) in files.iter().enumerate() {
        let dataset = io::read_records(&tmp.path().join(file)).unwrap();
        let expected = sample_size_sweep(
            &dataset,
            QuantifierId::VariationRatio,
            0.1,
            &[2, 3, 4, 5, 6],
            CalibrationMode::Above,
            &EvaluationOptions::default(),
        )
        .unwrap();
        for (col, point) in expected.values().enumerate() {
            assert_eq!(grid.values[row][col], point.s1.value());
        }
    }

    let out = uqsup(tmp.path(), &["sensitivity", "sweep", "--window", "3", "--out", "sens"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("s1: r = "), "{}", stdout(&out));
    let std = io::read_grid(&tmp.path().join("sens/s1.std.csv")).unwrap();
    let (_, expected_std) = neighborhood_stats(&grid, 3).unwrap();
    assert_eq!(std.values, expected_std.values);
    let pgm = fs::read_to_string(tmp.path().join("sens/s1.std.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n5 3\n255\n"), "{pgm}");
}

#[test]
fn constant_grid_has_undefined_correlation() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("epoch/samples,2,3,4,5,6\n");
    for epoch in 1..=5 {
        text.push_str(&format!("{epoch},0.8,0.8,0.8,0.8,0.8\n"));
    }
    write(tmp.path(), "flat.csv", &text);
    let out = uqsup(tmp.path(), &["sensitivity", "flat.csv", "--out", "sens"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("flat: r undefined"), "{}", stdout(&out));
    let std = io::read_grid(&tmp.path().join("sens/flat.std.csv")).unwrap();
    assert!(std.values.iter().flatten().all(|v| *v == Some(0.0)));
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), "a.jsonl", &["--seed", "9", "--validation", "200", "--test", "200"]);
    synth(tmp.path(), "b.jsonl", &["--seed", "9", "--validation", "200", "--test", "200"]);
    assert_eq!(
        fs::read(tmp.path().join("a.jsonl")).unwrap(),
        fs::read(tmp.path().join("b.jsonl")).unwrap()
    );
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_uqsup"))
            .current_dir(tmp.path())
            .env("UQSUP_THREADS", threads)
            .args(["sweep", "a.jsonl", "-q", "MI", "-e", "0.05", "--sizes", "2,5,10", "--out", out])
            .output()
            .unwrap();
        assert_ok(&o);
    };
    run("1", "one");
    run("4", "four");
    for name in ["s1.csv", "acceptance_rate.csv", "supervised_objective.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("one").join(name)).unwrap(),
            fs::read(tmp.path().join("four").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_uqsup"))
        .current_dir(tmp.path())
        .env("UQSUP_THREADS", "zero")
        .args(["validate", "missing.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
