mod common;

use std::process::Command;

use common::{fixture, golden, pipeline, run, run_ok, BIN};
use xai_eval_core::aggregate::parse_reports;
use xai_eval_core::ingest::{parse_line, Locator, Record};

fn digest_of(stderr: &str) -> &str {
    let line = stderr.lines().next().unwrap();
    line.split("config_digest=").nth(1).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let r = run(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("verify-paper"));
    let r = run(&["--version"]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn unknown_flag_is_usage_error() {
    let r = run(&["ha", "--bogus"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--bogus"));
}

#[test]
fn bad_weights_exit_two() {
    let out = Command::new(BIN)
        .args(["cws", "--weights", "0.3,0.3,0.3,0.2", "whatever.jsonl"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("weights must sum to 1"), "{stderr}");
    assert!(stderr.contains("--weights"));
}

#[test]
fn flags_checked_before_files() {
    // the input does not exist; the bad epsilon must win
    let r = run(&["contrastivity", "/nonexistent.jsonl", "--epsilon", "0"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--epsilon"));
}

#[test]
fn no_inputs_is_usage_error() {
    assert_eq!(run(&["ha"]).code, 2);
}

#[test]
fn every_run_prints_version_and_digest() {
    let r = run_ok(&["verify-paper"]);
    let first = r.stderr.lines().next().unwrap();
    assert!(first.starts_with(&format!("xai-eval {} config_digest=", env!("CARGO_PKG_VERSION"))));
    assert_eq!(digest_of(&r.stderr).len(), 16);
}

#[test]
fn validate_bundled_fixtures() {
    let mut args = vec!["validate".to_string()];
    for name in [
        "explanations.jsonl",
        "contrast_explanations.jsonl",
        "seed_explanations.jsonl",
        "annotations.jsonl",
        "attention.jsonl",
        "pairs.jsonl",
    ] {
        args.push(fixture(name));
    }
    let r = run_ok(&args);
    assert_eq!(r.stdout, "ok: 87 records, 0 errors, 0 warnings\n");
}

#[test]
fn validate_reports_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        concat!(
            r#"{"record_type":"annotation","dataset_id":"d","instance_id":"1","annotator_id":"a","rationale_words":["x"]}"#,
            "\n",
            r#"{"record_type":"explanation","schema_version":1,"dataset_id":"d","instance_id":"1","model_id":"m","method_id":"lime","predicted_class":"pos","tokens":["a","b"],"scores":[1.0]}"#,
            "\n"
        ),
    )
    .unwrap();
    let r = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains(&format!("{}:2: error [invalid_record]", bad.display())), "{}", r.stdout);
    assert!(r.stdout.ends_with("rejected: 1 errors, 0 warnings\n"));
}

#[test]
fn lenient_drops_dangling_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    let text = std::fs::read_to_string(fixture("pairs.jsonl")).unwrap();
    std::fs::write(&pairs, text.replace(r#""instance_id": "2", "method_id": "lime", "model_id": "tinybert", "predicted_class": "pos""#, r#""instance_id": "9", "method_id": "lime", "model_id": "tinybert", "predicted_class": "pos""#)).unwrap();
    let args = |lenient: bool| {
        let mut v = vec![
            "robustness".to_string(),
            fixture("explanations.jsonl"),
            fixture("contrast_explanations.jsonl"),
            pairs.display().to_string(),
        ];
        if lenient {
            v.push("--lenient".into());
        }
        v
    };
    let strict = run(&args(false));
    assert_eq!(strict.code, 1);
    assert!(strict.stderr.contains("dangling_reference"));
    let lenient = run_ok(&args(true));
    assert!(lenient.stderr.contains("warning [dangling_reference]"));
    let reports = parse_reports(&lenient.stdout, "out").unwrap();
    let tiny_lime = reports.iter().find(|r| r.model_id == "tinybert" && r.method_id == "lime").unwrap();
    assert_eq!(tiny_lime.instance_count_per_metric.values().next(), Some(&2));
}

#[test]
fn ha_on_three_instance_fixture() {
    let r = run_ok(&[
        "ha",
        "--explanations",
        &fixture("explanations.jsonl"),
        "--annotations",
        &fixture("annotations.jsonl"),
    ]);
    let reports = parse_reports(&r.stdout, "stdout").unwrap();
    assert_eq!(reports.len(), 4);
    let cell = reports.iter().find(|r| r.model_id == "tinybert" && r.method_id == "lime").unwrap();
    // APs 5/9, 1, 0
    assert!((cell.ha.unwrap() - 14.0 / 27.0).abs() < 1e-12);
    assert!(r.stderr.contains("ha imdb/tinybert/lime: MAP = 0.5185 over 3 instances"));
}

#[test]
fn ha_top_k_override() {
    let r = run_ok(&["ha", &fixture("explanations.jsonl"), &fixture("annotations.jsonl"), "--top-k", "1"]);
    let reports = parse_reports(&r.stdout, "stdout").unwrap();
    let cell = reports.iter().find(|r| r.model_id == "tinybert" && r.method_id == "lime").unwrap();
    // top word per instance: good (hit), great (hit), plot (miss)
    assert!((cell.ha.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(run(&["ha", &fixture("explanations.jsonl"), "--top-k", "0"]).code, 2);
}

#[test]
fn robustness_without_pairs_fails() {
    let r = run(&["robustness", &fixture("explanations.jsonl")]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no perturbation pairs"));
}

#[test]
fn consistency_fragments_use_base_model() {
    let r = run_ok(&[
        "consistency",
        &fixture("explanations.jsonl"),
        &fixture("seed_explanations.jsonl"),
        &fixture("attention.jsonl"),
        "--model",
        "tinybert",
        "--seed-a",
        "s1",
        "--seed-b",
        "s2",
        "--method",
        "lime",
    ]);
    let reports = parse_reports(&r.stdout, "stdout").unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].model_id, "tinybert");
    assert_eq!(reports[0].consistency, Some(1.0));
}

#[test]
fn consistency_degenerate_series_leaves_value_absent() {
    let dir = tempfile::tempdir().unwrap();
    // identical attention for both seeds: every attention distance is 0
    let att = std::fs::read_to_string(fixture("attention.jsonl")).unwrap();
    let mut lines = Vec::new();
    for line in att.lines().filter(|l| l.contains(r#""seed_id": "s1""#)) {
        lines.push(line.to_string());
        lines.push(line.replace(r#""seed_id": "s1""#, r#""seed_id": "s2""#));
    }
    let att_path = dir.path().join("attention.jsonl");
    std::fs::write(&att_path, lines.join("\n")).unwrap();
    let r = run_ok(&[
        "consistency",
        &fixture("explanations.jsonl"),
        &fixture("seed_explanations.jsonl"),
        att_path.to_str().unwrap(),
        "--model",
        "tinybert",
        "--seed-a",
        "s1",
        "--seed-b",
        "s2",
        "--distance",
        "euclidean",
    ]);
    let reports = parse_reports(&r.stdout, "stdout").unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.consistency.is_none()));
    assert!(r.stderr.contains("correlation undefined"));
}

#[test]
fn consistency_needs_three_instances() {
    let r = run(&[
        "consistency",
        &fixture("seed_explanations.jsonl"),
        &fixture("attention.jsonl"),
        "--model",
        "tinybert",
        "--seed-a",
        "s1",
        "--seed-b",
        "s3",
        "--method",
        "lime",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("need at least 3"), "{}", r.stderr);
    let same = run(&["consistency", &fixture("attention.jsonl"), "--model", "m", "--seed-a", "s", "--seed-b", "s"]);
    assert_eq!(same.code, 2);
}

#[test]
fn contrastivity_fragments() {
    let r = run_ok(&[
        "contrastivity",
        &fixture("explanations.jsonl"),
        &fixture("contrast_explanations.jsonl"),
        &fixture("pairs.jsonl"),
    ]);
    let reports = parse_reports(&r.stdout, "stdout").unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r.contrastivity.unwrap() > 0.0));
}

#[test]
fn plan_emits_exporter_records() {
    let args = |seed: &str| {
        run_ok(&[
            "plan",
            &fixture("explanations.jsonl"),
            "--model",
            "tinybert",
            "--method",
            "lime",
            "--fraction",
            "0.25",
            "--seed",
            seed,
        ])
    };
    let r = args("7");
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    let loc = Locator {
        file: "plan".into(),
        line: 1,
    };
    let (record, warnings) = parse_line(lines[0], &loc).unwrap();
    assert!(warnings.is_empty());
    let Record::PerturbationPlan(plan) = record else {
        panic!("expected a perturbation plan")
    };
    assert_eq!(plan.instance_id, "1");
    // K = 8, ceil(0.25·8) = 2: "good" (0.9) then "movie" (0.7)
    let picked: Vec<usize> = plan.actions.iter().map(|a| a.original_index).collect();
    assert_eq!(picked, vec![3, 1]);
    assert!(lines[0].contains(r#""record_type":"perturbation_plan""#));
    assert_eq!(args("7").stdout, r.stdout);
    assert_ne!(args("8").stdout, r.stdout);
}

#[test]
fn plan_requires_a_single_cell() {
    let r = run(&["plan", &fixture("explanations.jsonl")]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--model"));
    let r = run(&["plan", &fixture("explanations.jsonl"), "--model", "nope", "--method", "lime"]);
    assert_eq!(r.code, 1);
    assert_eq!(run(&["plan", &fixture("explanations.jsonl"), "--fraction", "1.5"]).code, 2);
}

#[test]
fn cws_merges_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let merged = pipeline(dir.path(), "0");
    let reports = parse_reports(&std::fs::read_to_string(&merged).unwrap(), "merged").unwrap();
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert!(r.cws.is_some());
        assert_eq!(r.instance_count_per_metric.len(), 4);
    }
}

#[test]
fn cws_rejects_conflicting_fragments() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.frag");
    let b = dir.path().join("b.frag");
    let ha = run_ok(&["ha", &fixture("explanations.jsonl"), &fixture("annotations.jsonl")]).stdout;
    std::fs::write(&a, &ha).unwrap();
    std::fs::write(&b, ha.replace("0.5185185185185185", "0.5")).unwrap();
    let r = run(&["cws", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("conflicting fragments"));
}

#[test]
fn output_flag_writes_file_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.csv");
    let r = run_ok(&["verify-paper", "-o", out.to_str().unwrap()]);
    assert!(r.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), run_ok(&["verify-paper"]).stdout);
}

#[test]
fn digest_tracks_settings_not_jobs_or_output() {
    let base = ["ha", "--top-k", "2"].map(String::from).to_vec();
    let mut with = base.clone();
    with.push(fixture("explanations.jsonl"));
    with.push(fixture("annotations.jsonl"));
    let mut jobs = vec!["--jobs".to_string(), "3".to_string()];
    jobs.extend(with.clone());
    jobs.extend(["-o".to_string(), "/dev/null".to_string()]);
    let a = run_ok(&with);
    let b = run_ok(&jobs);
    assert_eq!(digest_of(&a.stderr), digest_of(&b.stderr));
    let mut other = with.clone();
    other[2] = "3".into();
    assert_ne!(digest_of(&a.stderr), digest_of(&run_ok(&other).stderr));
}

#[test]
fn input_order_does_not_matter() {
    let a = run_ok(&["ha", &fixture("annotations.jsonl"), &fixture("explanations.jsonl")]);
    let b = run_ok(&["ha", &fixture("explanations.jsonl"), &fixture("annotations.jsonl")]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn report_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let merged = pipeline(dir.path(), "0").display().to_string();
    for (metric, format, name) in [
        ("cws", "csv", "cws.csv"),
        ("cws", "markdown", "cws.md"),
        ("ha", "csv", "ha.csv"),
        ("ha", "markdown", "ha.md"),
    ] {
        let r = run_ok(&["report", &merged, "--metric", metric, "--format", format]);
        assert_eq!(r.stdout, golden(name), "{name}");
    }
}

#[test]
fn report_from_reference_tables() {
    let r = run_ok(&["report", "--paper-fixture", "--metric", "cws", "--dataset", "IMDB", "--format", "markdown"]);
    assert_eq!(r.stdout, golden("paper_imdb_cws.md"));
    let r = run(&["report", "--paper-fixture", "--metric", "cws"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--dataset"));
    let plot = run_ok(&["report", "--paper-fixture", "--metric", "robustness", "--format", "plot"]);
    assert_eq!(plot.stdout.lines().count(), 50);
    assert!(plot.stdout.lines().all(|l| l.contains(r#""lower_is_better":true"#)));
}

#[test]
fn report_order_flags() {
    let r = run_ok(&[
        "report",
        "--paper-fixture",
        "--metric",
        "ha",
        "--dataset",
        "TSE",
        "--method-order",
        "AMV,LIME",
        "--model-order",
        "XLM-R",
    ]);
    let rows: Vec<&str> = r.stdout.lines().skip(1).collect();
    assert!(rows[0].starts_with("AMV,XLM-R,"));
    assert!(rows[1].starts_with("AMV,BERTbase,"));
    assert!(rows[5].starts_with("LIME,XLM-R,"));
}

#[test]
fn verify_paper_default_run() {
    let r = run_ok(&["verify-paper"]);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(r.stderr.contains("13 of 50 cells match within 0.0005; required cells matching: 7/7"));
    assert!(r.stderr.contains("mismatch IMDB/TinyBERT/Integrated Gradients: recomputed 0.6222, published 0.6982, delta 0.0760"));
}

#[test]
fn verify_paper_strict() {
    assert_eq!(run(&["verify-paper", "--strict"]).code, 0);
    // the published table is rounded, so an exact match is impossible
    let r = run(&["verify-paper", "--strict", "--tolerance", "0"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("required cell(s) do not match"));
}

#[test]
fn verify_paper_json() {
    let r = run_ok(&["verify-paper", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["entries"].as_array().unwrap().len(), 50);
    assert_eq!(v["weights"], serde_json::json!([0.25, 0.25, 0.25, 0.25]));
}
