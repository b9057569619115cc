//! Combined weighted score, report merging, rendering and the reference
//! table check.

mod fixture;
mod render;
mod weights;

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::model::{MetricKind, MetricReport};

pub use fixture::{verify_paper_tables, CellFlag, Discrepancy, DiscrepancyReport, PaperFixture, Verdict, REQUIRED_CELLS};
pub use render::{emit_plot_data, emit_plot_data_ordered, parse_report_csv, render_report, CsvRow, DisplayOrder, TableFormat};
pub use weights::WeightVector;

/// Default match tolerance for reference-table cells (4-decimal tables).
pub const DEFAULT_TOLERANCE: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("{0}")]
    WeightInvalid(String),
    #[error("{metric} value {value} is not finite")]
    NonFinite { metric: &'static str, value: f64 },
    #[error("reference fixture incomplete: {0}")]
    FixtureIncomplete(String),
    #[error("inconsistent report grid: {0}")]
    InconsistentGrid(String),
    #[error("no reports")]
    EmptyInput,
    #[error("conflicting fragments for {cell}: {metric} = {a} vs {b}")]
    ConflictingFragments {
        cell: String,
        metric: MetricKind,
        a: f64,
        b: f64,
    },
    #[error("{locator}: {message}")]
    Parse { locator: String, message: String },
}

fn clamp_unit(metric: &'static str, value: f64) -> Result<f64, AggregateError> {
    if !value.is_finite() {
        return Err(AggregateError::NonFinite { metric, value });
    }
    let clamped = value.clamp(0.0, 1.0);
    if clamped != value {
        log::warn!("{metric} value {value} outside [0, 1]; clamped to {clamped}");
    }
    Ok(clamped)
}

/// `ω_HA·HA + ω_Cn·Cn + ω_Ct·Ct + ω_R·(1 − R)`.
///
/// Inputs outside [0, 1] are clamped with a logged warning; this covers
/// negative rank correlations and divergences above one nat.
pub fn combined_weighted_score(ha: f64, r: f64, cn: f64, ct: f64, weights: &WeightVector) -> Result<f64, AggregateError> {
    let ha = clamp_unit("ha", ha)?;
    let r = clamp_unit("robustness", r)?;
    let cn = clamp_unit("consistency", cn)?;
    let ct = clamp_unit("contrastivity", ct)?;
    Ok(weights.ha() * ha + weights.cn() * cn + weights.ct() * ct + weights.r() * (1.0 - r))
}

/// Join single-metric fragments by (dataset, model, method) and fill in the
/// combined score wherever all four metrics are present.
///
/// The same metric appearing in two fragments for one cell is accepted only
/// if the values are identical.
pub fn merge_fragments(
    fragments: &[MetricReport],
    weights: &WeightVector,
    config_digest: &str,
) -> Result<Vec<MetricReport>, AggregateError> {
    let mut cells: BTreeMap<(String, String, String), MetricReport> = BTreeMap::new();
    for f in fragments {
        let key = (f.dataset_id.clone(), f.model_id.clone(), f.method_id.clone());
        let merged = cells
            .entry(key)
            .or_insert_with(|| MetricReport::empty(&f.dataset_id, &f.model_id, &f.method_id, config_digest));
        for metric in [MetricKind::Ha, MetricKind::Robustness, MetricKind::Consistency, MetricKind::Contrastivity] {
            let Some(v) = f.get(metric) else { continue };
            let slot = merged.slot_mut(metric);
            match *slot {
                Some(existing) if existing.to_bits() != v.to_bits() => {
                    return Err(AggregateError::ConflictingFragments {
                        cell: format!("{}/{}/{}", f.dataset_id, f.model_id, f.method_id),
                        metric,
                        a: existing,
                        b: v,
                    });
                }
                _ => *slot = Some(v),
            }
        }
        for (metric, count) in &f.instance_count_per_metric {
            if *metric != MetricKind::Cws {
                merged.instance_count_per_metric.insert(*metric, *count);
            }
        }
    }
    cells
        .into_values()
        .map(|mut r| {
            r.weights = *weights;
            r.cws = match (r.ha, r.robustness, r.consistency, r.contrastivity) {
                (Some(ha), Some(rb), Some(cn), Some(ct)) => Some(combined_weighted_score(ha, rb, cn, ct, weights)?),
                _ => None,
            };
            Ok(r)
        })
        .collect()
}

/// One `metric_report` line, keys sorted.
pub fn report_to_json_line(report: &MetricReport) -> String {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    if let Value::Object(m) = &mut v {
        m.insert("record_type".into(), Value::String("metric_report".into()));
    }
    serde_json::to_string(&v).expect("JSON value serializes")
}

pub fn reports_to_jsonl(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&report_to_json_line(r));
        s.push('\n');
    }
    s
}

/// Parse a stream of `metric_report` lines.
pub fn parse_reports(text: &str, source: &str) -> Result<Vec<MetricReport>, AggregateError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let locator = format!("{source}:{}", i + 1);
        let parse_err = |message: String| AggregateError::Parse {
            locator: locator.clone(),
            message,
        };
        let mut v: Value = serde_json::from_str(line).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| parse_err("record must be a JSON object".into()))?;
        match obj.remove("record_type") {
            Some(Value::String(t)) if t == "metric_report" => {}
            other => return Err(parse_err(format!("expected record_type \"metric_report\", got {other:?}"))),
        }
        out.push(serde_json::from_value(v).map_err(|e| parse_err(format!("malformed metric_report: {e}")))?);
    }
    Ok(out)
}
