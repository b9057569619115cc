//! Table and plot-data rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use super::AggregateError;
use crate::model::{MetricKind, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Preferred row/column order. Ids listed here come first in the given
/// order; anything else follows lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisplayOrder {
    pub methods: Vec<String>,
    pub models: Vec<String>,
}

impl DisplayOrder {
    fn sort(list: &[String], ids: impl IntoIterator<Item = String>) -> Vec<String> {
        let mut ids: Vec<String> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        ids.sort_by_key(|id| (list.iter().position(|x| x == id).unwrap_or(list.len()), id.clone()));
        ids
    }

    pub fn sort_methods(&self, ids: impl IntoIterator<Item = String>) -> Vec<String> {
        Self::sort(&self.methods, ids)
    }

    pub fn sort_models(&self, ids: impl IntoIterator<Item = String>) -> Vec<String> {
        Self::sort(&self.models, ids)
    }
}

fn fmt4(v: f64) -> String {
    // avoid "-0.0000"
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn check_grid(reports: &[MetricReport]) -> Result<(), AggregateError> {
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset_id.as_str()).collect();
    if datasets.len() > 1 {
        return Err(AggregateError::InconsistentGrid(format!(
            "reports span several datasets: {datasets:?}"
        )));
    }
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert((&r.method_id, &r.model_id)) {
            return Err(AggregateError::InconsistentGrid(format!(
                "duplicate cell {}/{}",
                r.method_id, r.model_id
            )));
        }
    }
    Ok(())
}

/// Render one metric of a single-dataset report set.
///
/// CSV is long-form (`method,model,value`); markdown pivots methods into
/// rows and models into columns. Values use 4 decimals; absent values are
/// an empty CSV field or `-` in markdown.
pub fn render_report(
    reports: &[MetricReport],
    metric: MetricKind,
    format: TableFormat,
    order: &DisplayOrder,
) -> Result<String, AggregateError> {
    check_grid(reports)?;
    let methods = order.sort_methods(reports.iter().map(|r| r.method_id.clone()));
    let models = order.sort_models(reports.iter().map(|r| r.model_id.clone()));
    let lookup = |method: &str, model: &str| {
        reports
            .iter()
            .find(|r| r.method_id == method && r.model_id == model)
    };
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(["method", "model", "value"]).map_err(csv_err)?;
            for method in &methods {
                for model in &models {
                    if let Some(r) = lookup(method, model) {
                        let value = r.get(metric).map(fmt4).unwrap_or_default();
                        w.write_record([method.as_str(), model.as_str(), value.as_str()])
                            .map_err(csv_err)?;
                    }
                }
            }
            let bytes = w.into_inner().map_err(|e| csv_err(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
        }
        TableFormat::Markdown => {
            let mut s = String::new();
            write!(s, "| method |").unwrap();
            for m in &models {
                write!(s, " {m} |").unwrap();
            }
            s.push('\n');
            s.push_str("|---|");
            for _ in &models {
                s.push_str("---:|");
            }
            s.push('\n');
            for method in &methods {
                write!(s, "| {method} |").unwrap();
                for model in &models {
                    let cell = lookup(method, model)
                        .and_then(|r| r.get(metric))
                        .map(fmt4)
                        .unwrap_or_else(|| "-".to_string());
                    write!(s, " {cell} |").unwrap();
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

fn csv_err(e: impl std::fmt::Display) -> AggregateError {
    AggregateError::Parse {
        locator: "csv".into(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub method: String,
    pub model: String,
    pub value: Option<f64>,
}

/// Read back a CSV produced by [`render_report`].
pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, AggregateError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["method", "model", "value"] {
        return Err(csv_err(format!("unexpected header {headers:?}")));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            let value = match &rec[2] {
                "" => None,
                v => Some(v.parse::<f64>().map_err(csv_err)?),
            };
            Ok(CsvRow {
                method: rec[0].to_string(),
                model: rec[1].to_string(),
                value,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct PlotPoint<'a> {
    record_type: &'static str,
    dataset_id: &'a str,
    metric: MetricKind,
    method_id: &'a str,
    model_id: &'a str,
    value: Option<f64>,
    lower_is_better: bool,
}

/// Grouped-bar plot data: one JSON line per (dataset, method, model).
pub fn emit_plot_data(reports: &[MetricReport], metric: MetricKind) -> Result<String, AggregateError> {
    emit_plot_data_ordered(reports, metric, &DisplayOrder::default())
}

pub fn emit_plot_data_ordered(
    reports: &[MetricReport],
    metric: MetricKind,
    order: &DisplayOrder,
) -> Result<String, AggregateError> {
    if reports.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let methods = order.sort_methods(reports.iter().map(|r| r.method_id.clone()));
    let models = order.sort_models(reports.iter().map(|r| r.model_id.clone()));
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset_id.as_str()).collect();
    let mut s = String::new();
    for dataset in datasets {
        for method in &methods {
            for model in &models {
                let found = reports
                    .iter()
                    .find(|r| r.dataset_id == dataset && &r.method_id == method && &r.model_id == model);
                if let Some(r) = found {
                    let point = PlotPoint {
                        record_type: "plot_point",
                        dataset_id: dataset,
                        metric,
                        method_id: method,
                        model_id: model,
                        value: r.get(metric),
                        lower_is_better: metric.lower_is_better(),
                    };
                    s.push_str(&serde_json::to_string(&point).expect("plot point serializes"));
                    s.push('\n');
                }
            }
        }
    }
    Ok(s)
}
