#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const BIN: &str = env!("CARGO_BIN_EXE_xai-eval");

pub fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}"))).expect("golden file")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Run the CLI in-process. `args` excludes the program name.
pub fn run<S: AsRef<str>>(args: &[S]) -> Run {
    let mut argv = vec!["xai-eval".to_string()];
    argv.extend(args.iter().map(|s| s.as_ref().to_string()));
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = xai_eval_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn run_ok<S: AsRef<str>>(args: &[S]) -> Run {
    let r = run(args);
    assert_eq!(r.code, 0, "args {:?}\nstderr:\n{}", args.iter().map(|s| s.as_ref()).collect::<Vec<_>>(), r.stderr);
    r
}

/// Every metric subcommand over the bundled corpus, writing fragments into
/// `dir`, then `cws` into `dir/merged.jsonl`. Returns the merged path.
pub fn pipeline(dir: &Path, jobs: &str) -> PathBuf {
    let f = fixture;
    let o = |name: &str| dir.join(name).display().to_string();
    run_ok(&["--jobs", jobs, "ha", &f("explanations.jsonl"), &f("annotations.jsonl"), "-o", &o("ha.frag")]);
    run_ok(&[
        "--jobs", jobs, "robustness", &f("explanations.jsonl"), &f("contrast_explanations.jsonl"), &f("pairs.jsonl"),
        "-o", &o("rb.frag"),
    ]);
    for model in ["tinybert", "bertbase"] {
        run_ok(&[
            "--jobs", jobs, "consistency", &f("explanations.jsonl"), &f("seed_explanations.jsonl"),
            &f("attention.jsonl"), "--model", model, "--seed-a", "s1", "--seed-b", "s2",
            "-o", &o(&format!("cn_{model}.frag")),
        ]);
    }
    run_ok(&[
        "--jobs", jobs, "contrastivity", &f("explanations.jsonl"), &f("contrast_explanations.jsonl"),
        &f("pairs.jsonl"), "-o", &o("ct.frag"),
    ]);
    let merged = dir.join("merged.jsonl");
    run_ok(&[
        "--jobs", jobs, "cws", &o("ha.frag"), &o("rb.frag"), &o("cn_tinybert.frag"), &o("cn_bertbase.frag"),
        &o("ct.frag"), "-o", &merged.display().to_string(),
    ]);
    merged
}
