//! `xai-eval` command-line front end.
//!
//! [`run`] is the whole program minus process setup, so tests can drive it
//! in-process with captured output.

pub mod args;
mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

pub use args::Cli;
use xai_eval_core::Execution;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag combination discovered after parsing.
    #[error("{0}")]
    Usage(String),
    /// Input data rejected or a metric could not be computed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Primary output, written to `--output` or stdout.
    pub output: String,
    /// Human-readable notes for stderr.
    pub notes: Vec<String>,
    pub exit_code: i32,
}

/// Parse `argv` (including the program name), execute, and return the exit
/// code: 0 success, 1 validation or runtime failure, 2 usage error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    2
                }
            };
        }
    };

    let digest = commands::digest(&cli);
    let _ = writeln!(
        stderr,
        "xai-eval {} config_digest={digest}",
        xai_eval_core::TOOL_VERSION
    );

    let result = with_jobs(cli.jobs, |exec| commands::execute(&cli, &digest, exec));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    for note in &outcome.notes {
        let _ = writeln!(stderr, "{note}");
    }
    if let Err(e) = emit(cli.output.as_deref(), &outcome.output, stdout) {
        let _ = writeln!(stderr, "error: {e}");
        return 1;
    }
    outcome.exit_code
}

fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => stdout.write_all(text.as_bytes()).map_err(|e| format!("stdout: {e}")),
    }
}

#[cfg(feature = "parallel")]
fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce(Execution) -> R + Send) -> R {
    if jobs == 1 {
        return f(Execution::Sequential);
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| f(Execution::Parallel)),
        Err(e) => {
            log::warn!("could not build a {jobs}-thread pool ({e}); running sequentially");
            f(Execution::Sequential)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<R>(_jobs: usize, f: impl FnOnce(Execution) -> R) -> R {
    f(Execution::Sequential)
}
