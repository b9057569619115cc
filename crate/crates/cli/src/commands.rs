use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::Serialize;
use xai_eval_core::aggregate::{
    emit_plot_data_ordered, merge_fragments, parse_reports, render_report, reports_to_jsonl, verify_paper_tables,
    DisplayOrder, PaperFixture, TableFormat, Verdict, WeightVector,
};
use xai_eval_core::consistency::{self, ConsistencyError, SeedPair};
use xai_eval_core::digest::config_digest;
use xai_eval_core::ingest::{load_corpus, CorpusIndex, LoadOptions, Record, Severity, ValidationIssue};
use xai_eval_core::robustness::{self, PlanSettings};
use xai_eval_core::{contrastivity, ha, Execution, MetricKind, MetricReport};

use crate::args::*;
use crate::{CliError, Outcome};

/// Canonical form of a run's settings. The output path and `--jobs` are
/// left out: neither changes the result.
#[derive(Debug, Default, Serialize)]
struct RunConfig {
    subcommand: &'static str,
    inputs: Vec<String>,
    top_n: Option<u64>,
    distance_kind: Option<&'static str>,
    epsilon: Option<f64>,
    weights: Option<WeightVector>,
    tolerance: Option<f64>,
    lenient: bool,
    seed: Option<u64>,
    format: Option<&'static str>,
    selection: BTreeMap<&'static str, String>,
}

fn path_strings(paths: &[PathBuf]) -> Vec<String> {
    let mut v: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    v.sort();
    v.dedup();
    v
}

fn corpus_config(subcommand: &'static str, c: &CorpusArgs) -> RunConfig {
    let mut selection = BTreeMap::new();
    if c.annotation_fallback == FallbackArg::Union {
        selection.insert("annotation_fallback", "union".to_string());
    }
    RunConfig {
        subcommand,
        inputs: path_strings(&c.paths()),
        lenient: c.lenient,
        selection,
        ..Default::default()
    }
}

fn run_config(cli: &Cli) -> RunConfig {
    match &cli.command {
        Command::Validate(c) => corpus_config("validate", c),
        Command::Ha(a) => RunConfig {
            top_n: a.top_k,
            ..corpus_config("ha", &a.corpus)
        },
        Command::Robustness(c) => corpus_config("robustness", c),
        Command::Consistency(a) => {
            let mut cfg = corpus_config("consistency", &a.corpus);
            cfg.distance_kind = Some(match a.distance {
                DistanceArg::Cosine => "cosine",
                DistanceArg::Euclidean => "euclidean",
            });
            cfg.selection.insert("model", a.model.clone());
            cfg.selection.insert("seed_a", a.seed_a.clone());
            cfg.selection.insert("seed_b", a.seed_b.clone());
            if let Some(m) = &a.method {
                cfg.selection.insert("method", m.clone());
            }
            if let Some(d) = &a.dataset {
                cfg.selection.insert("dataset", d.clone());
            }
            cfg
        }
        Command::Contrastivity(a) => RunConfig {
            epsilon: Some(a.epsilon),
            ..corpus_config("contrastivity", &a.corpus)
        },
        Command::Plan(a) => {
            let mut cfg = corpus_config("plan", &a.corpus);
            cfg.seed = Some(a.seed);
            cfg.selection.insert("kind", format!("{:?}", a.kind).to_lowercase());
            cfg.selection.insert("tier", format!("{:?}", a.tier).to_lowercase());
            cfg.selection.insert("fraction", a.fraction.to_string());
            if let Some(m) = &a.model {
                cfg.selection.insert("model", m.clone());
            }
            if let Some(m) = &a.method {
                cfg.selection.insert("method", m.clone());
            }
            cfg
        }
        Command::Cws(a) => RunConfig {
            subcommand: "cws",
            inputs: path_strings(&a.fragments),
            weights: Some(a.weights),
            ..Default::default()
        },
        Command::Report(a) => {
            let mut selection = BTreeMap::new();
            selection.insert("metric", a.metric.as_str().to_string());
            if let Some(d) = &a.dataset {
                selection.insert("dataset", d.clone());
            }
            if a.paper_fixture {
                selection.insert("source", "paper_fixture".to_string());
            }
            if !a.method_order.is_empty() {
                selection.insert("method_order", a.method_order.join(","));
            }
            if !a.model_order.is_empty() {
                selection.insert("model_order", a.model_order.join(","));
            }
            RunConfig {
                subcommand: "report",
                inputs: path_strings(&a.reports),
                format: Some(match a.format {
                    ReportFormat::Csv => "csv",
                    ReportFormat::Markdown => "markdown",
                    ReportFormat::Plot => "plot",
                }),
                selection,
                ..Default::default()
            }
        }
        Command::VerifyPaper(a) => {
            let mut selection = BTreeMap::new();
            if a.strict {
                selection.insert("strict", "true".to_string());
            }
            RunConfig {
                subcommand: "verify-paper",
                weights: Some(a.weights),
                tolerance: Some(a.tolerance),
                format: Some(match a.format {
                    VerifyFormat::Csv => "csv",
                    VerifyFormat::Json => "json",
                }),
                selection,
                ..Default::default()
            }
        }
    }
}

pub(crate) fn digest(cli: &Cli) -> String {
    config_digest(&run_config(cli))
}

pub(crate) fn execute(cli: &Cli, digest: &str, exec: Execution) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Validate(c) => validate(c, exec),
        Command::Ha(a) => run_ha(a, digest, exec),
        Command::Robustness(c) => run_robustness(c, digest, exec),
        Command::Consistency(a) => run_consistency(a, digest, exec),
        Command::Contrastivity(a) => run_contrastivity(a, digest, exec),
        Command::Plan(a) => run_plan(a, exec),
        Command::Cws(a) => run_cws(a, digest),
        Command::Report(a) => run_report(a, digest),
        Command::VerifyPaper(a) => run_verify(a),
    }
}

fn load_options(c: &CorpusArgs, exec: Execution) -> LoadOptions {
    LoadOptions {
        lenient: c.lenient,
        fallback: c.annotation_fallback.into(),
        execution: exec,
    }
}

fn require_inputs(c: &CorpusArgs) -> Result<Vec<PathBuf>, CliError> {
    let paths = c.paths();
    if paths.is_empty() {
        return Err(CliError::Usage(
            "no input files; pass record files or --explanations/--annotations/--pairs/--attention".into(),
        ));
    }
    Ok(paths)
}

fn issue_lines(issues: &[ValidationIssue]) -> Vec<String> {
    issues.iter().map(ToString::to_string).collect()
}

/// Load the corpus; on rejection every issue goes to stderr.
fn corpus(c: &CorpusArgs, exec: Execution, notes: &mut Vec<String>) -> Result<CorpusIndex, CliError> {
    let paths = require_inputs(c)?;
    match load_corpus(&paths, load_options(c, exec)) {
        Ok((corpus, issues)) => {
            notes.extend(issue_lines(&issues));
            Ok(corpus)
        }
        Err(xai_eval_core::ingest::IngestError::Rejected { issues }) => {
            let errors = issues.iter().filter(|i| i.severity == Severity::Error).count();
            let mut msg = format!("corpus rejected with {errors} error(s)");
            for line in issue_lines(&issues) {
                msg.push_str("\n  ");
                msg.push_str(&line);
            }
            Err(CliError::Failed(msg))
        }
    }
}

fn validate(c: &CorpusArgs, exec: Execution) -> Result<Outcome, CliError> {
    let paths = require_inputs(c)?;
    let (issues, summary, code) = match load_corpus(&paths, load_options(c, exec)) {
        Ok((corpus, issues)) => {
            let warnings = issues.len();
            let summary = format!("ok: {} records, 0 errors, {warnings} warnings", corpus.len());
            (issues, summary, 0)
        }
        Err(xai_eval_core::ingest::IngestError::Rejected { issues }) => {
            let errors = issues.iter().filter(|i| i.severity == Severity::Error).count();
            let summary = format!(
                "rejected: {errors} errors, {} warnings",
                issues.len() - errors
            );
            (issues, summary, 1)
        }
    };
    let mut output = String::new();
    for line in issue_lines(&issues) {
        output.push_str(&line);
        output.push('\n');
    }
    output.push_str(&summary);
    output.push('\n');
    Ok(Outcome {
        output,
        notes: Vec::new(),
        exit_code: code,
    })
}

fn fragment(
    cell: (&str, &str, &str),
    metric: MetricKind,
    value: Option<f64>,
    count: usize,
    digest: &str,
) -> MetricReport {
    let (dataset, model, method) = cell;
    let mut r = MetricReport::empty(dataset, model, method, digest);
    *r.slot_mut(metric) = value;
    r.instance_count_per_metric.insert(metric, count);
    r
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn run_ha(a: &HaArgs, digest: &str, exec: Execution) -> Result<Outcome, CliError> {
    let mut notes = Vec::new();
    let corpus = corpus(&a.corpus, exec, &mut notes)?;
    let top_n = a.top_k.map(|k| usize::try_from(k).unwrap_or(usize::MAX));
    let summaries = ha::evaluate_corpus(&corpus, top_n, exec).map_err(failed)?;
    if summaries.is_empty() {
        return Err(CliError::Failed("no explanation has a matching rationale annotation".into()));
    }
    let mut reports = Vec::new();
    for s in &summaries {
        notes.push(format!(
            "ha {}/{}/{}: MAP = {:.4} over {} instances ({} without rationale)",
            s.dataset_id,
            s.model_id,
            s.method_id,
            s.map,
            s.per_instance.len(),
            s.skipped
        ));
        reports.push(fragment(
            (&s.dataset_id, &s.model_id, &s.method_id),
            MetricKind::Ha,
            Some(s.map),
            s.per_instance.len(),
            digest,
        ));
    }
    Ok(Outcome {
        output: reports_to_jsonl(&reports),
        notes,
        exit_code: 0,
    })
}

fn run_robustness(c: &CorpusArgs, digest: &str, exec: Execution) -> Result<Outcome, CliError> {
    let mut notes = Vec::new();
    let corpus = corpus(c, exec, &mut notes)?;
    if corpus.perturbation_pairs.is_empty() {
        return Err(CliError::Failed("no perturbation pairs in the input".into()));
    }
    let summaries = robustness::evaluate_corpus(&corpus, exec).map_err(failed)?;
    let mut reports = Vec::new();
    for s in &summaries {
        notes.push(format!(
            "robustness {}/{}/{}: MAD = {:.4} over {} pairs",
            s.dataset_id,
            s.model_id,
            s.method_id,
            s.mad,
            s.per_instance.len()
        ));
        reports.push(fragment(
            (&s.dataset_id, &s.model_id, &s.method_id),
            MetricKind::Robustness,
            Some(s.mad),
            s.per_instance.len(),
            digest,
        ));
    }
    Ok(Outcome {
        output: reports_to_jsonl(&reports),
        notes,
        exit_code: 0,
    })
}

fn run_consistency(a: &ConsistencyArgs, digest: &str, exec: Execution) -> Result<Outcome, CliError> {
    if a.seed_a == a.seed_b {
        return Err(CliError::Usage("--seed-a and --seed-b must differ".into()));
    }
    let mut notes = Vec::new();
    let corpus = corpus(&a.corpus, exec, &mut notes)?;
    let seeds = SeedPair::new(a.model.clone(), a.seed_a.clone(), a.seed_b.clone());
    let datasets: Vec<String> = match &a.dataset {
        Some(d) => vec![d.clone()],
        None => corpus
            .attention
            .keys()
            .filter(|k| k.model_id == a.model)
            .map(|k| k.dataset_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    if datasets.is_empty() {
        return Err(CliError::Failed(format!("no attention records for model {}", a.model)));
    }
    let mut reports = Vec::new();
    for dataset in &datasets {
        let methods = match &a.method {
            Some(m) => vec![m.clone()],
            None => consistency::methods_for(&corpus, dataset, &seeds),
        };
        if methods.is_empty() {
            return Err(CliError::Failed(format!(
                "{dataset}: no method has explanations for both {} and {}",
                consistency::seed_model_id(&a.model, &a.seed_a),
                consistency::seed_model_id(&a.model, &a.seed_b)
            )));
        }
        for method in &methods {
            let cell = (dataset.as_str(), a.model.as_str(), method.as_str());
            match consistency::consistency(&corpus, dataset, &seeds, method, a.distance.into(), exec) {
                Ok(r) => {
                    notes.push(format!(
                        "consistency {dataset}/{}/{method}: rho = {:.4} over {} instances",
                        a.model, r.rho, r.n_instances
                    ));
                    reports.push(fragment(cell, MetricKind::Consistency, Some(r.rho), r.n_instances, digest));
                }
                Err(ConsistencyError::DegenerateSeries) => {
                    notes.push(format!(
                        "warning: consistency {dataset}/{}/{method}: distances are constant, correlation undefined; value left absent",
                        a.model
                    ));
                    let mut r = MetricReport::empty(dataset, &a.model, method, digest);
                    r.consistency = None;
                    reports.push(r);
                }
                Err(e) => return Err(CliError::Failed(format!("{dataset}/{}/{method}: {e}", a.model))),
            }
        }
    }
    Ok(Outcome {
        output: reports_to_jsonl(&reports),
        notes,
        exit_code: 0,
    })
}

fn run_contrastivity(a: &ContrastivityArgs, digest: &str, exec: Execution) -> Result<Outcome, CliError> {
    let mut notes = Vec::new();
    let corpus = corpus(&a.corpus, exec, &mut notes)?;
    if corpus.contrast_pairs.is_empty() {
        return Err(CliError::Failed("no class contrast pairs in the input".into()));
    }
    let summaries = contrastivity::evaluate_pairs(&corpus.contrast_pairs, a.epsilon, exec).map_err(failed)?;
    let mut reports = Vec::new();
    for s in &summaries {
        notes.push(format!(
            "contrastivity {}/{}/{}: mean KL = {:.4} nats over {} pairs",
            s.dataset_id,
            s.model_id,
            s.method_id,
            s.mean_kl,
            s.per_instance.len()
        ));
        reports.push(fragment(
            (&s.dataset_id, &s.model_id, &s.method_id),
            MetricKind::Contrastivity,
            Some(s.mean_kl),
            s.per_instance.len(),
            digest,
        ));
    }
    Ok(Outcome {
        output: reports_to_jsonl(&reports),
        notes,
        exit_code: 0,
    })
}

fn pick_one(found: BTreeSet<&str>, wanted: Option<&String>, flag: &str) -> Result<String, CliError> {
    match wanted {
        Some(w) if found.contains(w.as_str()) => Ok(w.clone()),
        Some(w) => Err(CliError::Failed(format!(
            "{flag} {w}: no such explanations (available: {})",
            found.into_iter().collect::<Vec<_>>().join(", ")
        ))),
        None if found.len() == 1 => Ok(found.into_iter().next().unwrap_or_default().to_string()),
        None => Err(CliError::Usage(format!(
            "explanations span several values ({}); choose one with {flag}",
            found.into_iter().collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn run_plan(a: &PlanArgs, exec: Execution) -> Result<Outcome, CliError> {
    let mut notes = Vec::new();
    let corpus = corpus(&a.corpus, exec, &mut notes)?;
    let primary = corpus.primary_explanations();
    if primary.is_empty() {
        return Err(CliError::Failed("no explanations in the input".into()));
    }
    let model = pick_one(primary.iter().map(|e| e.model_id.as_str()).collect(), a.model.as_ref(), "--model")?;
    let for_model: Vec<_> = primary.into_iter().filter(|e| e.model_id == model).collect();
    let method = pick_one(for_model.iter().map(|e| e.method_id.as_str()).collect(), a.method.as_ref(), "--method")?;
    let records: Vec<_> = for_model.into_iter().filter(|e| e.method_id == method).collect();
    let settings = PlanSettings {
        kind: a.kind.into(),
        fraction: a.fraction,
        tier: a.tier.into(),
    };
    let plans = robustness::plan_corpus(&records, settings, a.seed, exec).map_err(failed)?;
    notes.push(format!("plan: {} instances from {model}/{method}", plans.len()));
    let mut output = String::new();
    for p in plans {
        output.push_str(&Record::PerturbationPlan(p).to_json_line());
        output.push('\n');
    }
    Ok(Outcome {
        output,
        notes,
        exit_code: 0,
    })
}

fn read_reports(paths: &[PathBuf]) -> Result<Vec<MetricReport>, CliError> {
    let mut sorted = paths.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out = Vec::new();
    for p in &sorted {
        let name = p.display().to_string();
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Failed(format!("{name}: {e}")))?;
        out.extend(parse_reports(&text, &name).map_err(failed)?);
    }
    Ok(out)
}

fn run_cws(a: &CwsArgs, digest: &str) -> Result<Outcome, CliError> {
    let fragments = read_reports(&a.fragments)?;
    if fragments.is_empty() {
        return Err(CliError::Failed("fragment files contain no metric reports".into()));
    }
    let merged = merge_fragments(&fragments, &a.weights, digest).map_err(failed)?;
    let notes = merged
        .iter()
        .map(|r| match r.cws {
            Some(v) => format!("cws {}/{}/{}: {v:.4}", r.dataset_id, r.model_id, r.method_id),
            None => {
                let missing: Vec<&str> = [
                    MetricKind::Ha,
                    MetricKind::Robustness,
                    MetricKind::Consistency,
                    MetricKind::Contrastivity,
                ]
                .into_iter()
                .filter(|m| r.get(*m).is_none())
                .map(MetricKind::as_str)
                .collect();
                format!(
                    "cws {}/{}/{}: absent (missing {})",
                    r.dataset_id,
                    r.model_id,
                    r.method_id,
                    missing.join(", ")
                )
            }
        })
        .collect();
    Ok(Outcome {
        output: reports_to_jsonl(&merged),
        notes,
        exit_code: 0,
    })
}

fn run_report(a: &ReportArgs, digest: &str) -> Result<Outcome, CliError> {
    let (reports, default_order) = if a.paper_fixture {
        let fixture = PaperFixture::embedded();
        let datasets: Vec<String> = match &a.dataset {
            Some(d) if fixture.datasets.contains(d) => vec![d.clone()],
            Some(d) => {
                return Err(CliError::Failed(format!(
                    "dataset {d} not in the reference tables (available: {})",
                    fixture.datasets.join(", ")
                )))
            }
            None => fixture.datasets.clone(),
        };
        let reports = datasets.iter().flat_map(|d| fixture.reports(d, digest)).collect();
        let order = DisplayOrder {
            methods: fixture.methods.clone(),
            models: fixture.models.clone(),
        };
        (reports, order)
    } else {
        if a.reports.is_empty() {
            return Err(CliError::Usage("no report files; pass REPORT paths or --paper-fixture".into()));
        }
        let mut reports = read_reports(&a.reports)?;
        if let Some(d) = &a.dataset {
            reports.retain(|r| &r.dataset_id == d);
        }
        if reports.is_empty() {
            return Err(CliError::Failed("no reports to render".into()));
        }
        (reports, DisplayOrder::default())
    };
    let order = DisplayOrder {
        methods: if a.method_order.is_empty() { default_order.methods } else { a.method_order.clone() },
        models: if a.model_order.is_empty() { default_order.models } else { a.model_order.clone() },
    };
    let table = |format| {
        let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset_id.as_str()).collect();
        if datasets.len() > 1 {
            return Err(CliError::Usage(format!(
                "reports span several datasets ({}); choose one with --dataset",
                datasets.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        render_report(&reports, a.metric, format, &order).map_err(failed)
    };
    let output = match a.format {
        ReportFormat::Csv => table(TableFormat::Csv)?,
        ReportFormat::Markdown => table(TableFormat::Markdown)?,
        ReportFormat::Plot => emit_plot_data_ordered(&reports, a.metric, &order).map_err(failed)?,
    };
    Ok(Outcome {
        output,
        notes: Vec::new(),
        exit_code: 0,
    })
}

fn run_verify(a: &VerifyArgs) -> Result<Outcome, CliError> {
    let fixture = PaperFixture::embedded();
    let report = verify_paper_tables(&fixture, &a.weights, a.tolerance).map_err(failed)?;
    let mut notes = vec![report.summary()];
    for e in report.mismatches() {
        notes.push(format!(
            "mismatch {}/{}/{}: recomputed {:.4}, published {:.4}, delta {:.4}{}",
            e.dataset_id,
            e.model_id,
            e.method_id,
            e.recomputed_cws,
            e.paper_cws,
            e.abs_delta,
            if e.flags.is_empty() { String::new() } else { format!(" [{}]", e.flags.join(", ")) }
        ));
    }
    let output = match a.format {
        VerifyFormat::Csv => report.to_csv(),
        VerifyFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report).map_err(failed)?;
            s.push('\n');
            s
        }
    };
    let required_failures: Vec<_> = report.required().filter(|e| e.verdict == Verdict::Mismatch).collect();
    let exit_code = if a.strict && !required_failures.is_empty() {
        notes.push(format!("strict: {} required cell(s) do not match", required_failures.len()));
        1
    } else {
        0
    };
    Ok(Outcome {
        output,
        notes,
        exit_code,
    })
}
