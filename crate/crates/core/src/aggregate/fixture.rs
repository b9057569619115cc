//! Embedded reference tables and the coherence check that recomputes the
//! combined-score table from the four per-metric tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{combined_weighted_score, AggregateError, WeightVector};
use crate::model::{MetricKind, MetricReport};

const EMBEDDED: &str = include_str!("../../data/reference_tables.json");

/// Cells that must reproduce at equal weights within the default tolerance:
/// `(dataset, model, method, published combined score)`.
pub const REQUIRED_CELLS: [(&str, &str, &str, f64); 7] = [
    ("IMDB", "TinyBERT", "LIME", 0.8862),
    ("IMDB", "TinyBERT", "SHAP", 0.7308),
    ("IMDB", "TinyBERT", "LRP", 0.7588),
    ("IMDB", "TinyBERT", "AMV", 0.5796),
    ("IMDB", "XLM-R", "LIME", 0.8873),
    ("TSE", "TinyBERT", "LIME", 0.7989),
    ("TSE", "TinyBERT", "AMV", 0.5991),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFlag {
    pub table: MetricKind,
    pub dataset: String,
    pub model: String,
    pub method: String,
    pub flag: String,
    pub note: String,
}

/// dataset → method → one value per model, in `models` order.
pub type Grid = BTreeMap<String, BTreeMap<String, Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperFixture {
    pub schema_version: u32,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub methods: Vec<String>,
    pub tables: BTreeMap<MetricKind, Grid>,
    pub flags: Vec<CellFlag>,
}

impl PaperFixture {
    pub fn embedded() -> Self {
        let fixture: Self = serde_json::from_str(EMBEDDED).expect("embedded fixture parses");
        fixture.validate().expect("embedded fixture is complete");
        fixture
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        let incomplete = |m: String| Err(AggregateError::FixtureIncomplete(m));
        if self.schema_version != crate::SCHEMA_VERSION {
            return incomplete(format!("schema_version {} unsupported", self.schema_version));
        }
        for table in MetricKind::ALL {
            let Some(grid) = self.tables.get(&table) else {
                return incomplete(format!("missing table {table}"));
            };
            for dataset in &self.datasets {
                let Some(rows) = grid.get(dataset) else {
                    return incomplete(format!("{table}: missing dataset {dataset}"));
                };
                for method in &self.methods {
                    match rows.get(method) {
                        Some(v) if v.len() == self.models.len() && v.iter().all(|x| x.is_finite()) => {}
                        Some(v) => {
                            return incomplete(format!(
                                "{table}/{dataset}/{method}: {} values, expected {} finite values",
                                v.len(),
                                self.models.len()
                            ));
                        }
                        None => return incomplete(format!("{table}/{dataset}: missing method {method}")),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, table: MetricKind, dataset: &str, model: &str, method: &str) -> Option<f64> {
        let col = self.models.iter().position(|m| m == model)?;
        self.tables.get(&table)?.get(dataset)?.get(method)?.get(col).copied()
    }

    pub fn flags_for(&self, dataset: &str, model: &str, method: &str) -> Vec<&CellFlag> {
        self.flags
            .iter()
            .filter(|f| f.dataset == dataset && f.model == model && f.method == method)
            .collect()
    }

    /// The published values of one dataset as metric reports, for
    /// rendering and plotting.
    pub fn reports(&self, dataset: &str, config_digest: &str) -> Vec<MetricReport> {
        let mut out = Vec::new();
        for method in &self.methods {
            for model in &self.models {
                let mut r = MetricReport::empty(dataset, model, method, config_digest);
                for metric in MetricKind::ALL {
                    *r.slot_mut(metric) = self.value(metric, dataset, model, method);
                }
                out.push(r);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub recomputed_cws: f64,
    pub paper_cws: f64,
    pub abs_delta: f64,
    pub verdict: Verdict,
    pub required: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub tolerance: f64,
    pub weights: WeightVector,
    pub entries: Vec<Discrepancy>,
}

impl DiscrepancyReport {
    pub fn match_count(&self) -> usize {
        self.entries.iter().filter(|e| e.verdict == Verdict::Match).count()
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &Discrepancy> {
        self.entries.iter().filter(|e| e.verdict == Verdict::Mismatch)
    }

    pub fn required(&self) -> impl Iterator<Item = &Discrepancy> {
        self.entries.iter().filter(|e| e.required)
    }

    pub fn required_all_match(&self) -> bool {
        self.required().all(|e| e.verdict == Verdict::Match)
    }

    pub fn find(&self, dataset: &str, model: &str, method: &str) -> Option<&Discrepancy> {
        self.entries
            .iter()
            .find(|e| e.dataset_id == dataset && e.model_id == model && e.method_id == method)
    }

    /// CSV listing, one row per cell in fixture order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,model,method,recomputed_cws,paper_cws,abs_delta,verdict,required,flags\n");
        for e in &self.entries {
            let verdict = match e.verdict {
                Verdict::Match => "match",
                Verdict::Mismatch => "mismatch",
            };
            writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{},{},{}",
                e.dataset_id,
                e.model_id,
                e.method_id,
                e.recomputed_cws,
                e.paper_cws,
                e.abs_delta,
                verdict,
                e.required,
                e.flags.join(";")
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn summary(&self) -> String {
        let required_ok = self.required().filter(|e| e.verdict == Verdict::Match).count();
        format!(
            "{} of {} cells match within {}; required cells matching: {}/{}",
            self.match_count(),
            self.entries.len(),
            self.tolerance,
            required_ok,
            REQUIRED_CELLS.len()
        )
    }
}

/// Recompute every combined-score cell from the four metric tables and
/// diff against the published combined-score table.
pub fn verify_paper_tables(
    fixture: &PaperFixture,
    weights: &WeightVector,
    tolerance: f64,
) -> Result<DiscrepancyReport, AggregateError> {
    fixture.validate()?;
    let mut entries = Vec::new();
    for dataset in &fixture.datasets {
        for method in &fixture.methods {
            for model in &fixture.models {
                let get = |t| {
                    fixture
                        .value(t, dataset, model, method)
                        .ok_or_else(|| AggregateError::FixtureIncomplete(format!("{t}/{dataset}/{method}/{model}")))
                };
                let recomputed = combined_weighted_score(
                    get(MetricKind::Ha)?,
                    get(MetricKind::Robustness)?,
                    get(MetricKind::Consistency)?,
                    get(MetricKind::Contrastivity)?,
                    weights,
                )?;
                let paper = get(MetricKind::Cws)?;
                let abs_delta = (recomputed - paper).abs();
                entries.push(Discrepancy {
                    dataset_id: dataset.clone(),
                    model_id: model.clone(),
                    method_id: method.clone(),
                    recomputed_cws: recomputed,
                    paper_cws: paper,
                    abs_delta,
                    verdict: if abs_delta <= tolerance { Verdict::Match } else { Verdict::Mismatch },
                    required: REQUIRED_CELLS
                        .iter()
                        .any(|(d, m, me, _)| d == dataset && m == model && me == method),
                    flags: fixture
                        .flags_for(dataset, model, method)
                        .into_iter()
                        .map(|f| format!("{}:{}", f.table, f.flag))
                        .collect(),
                });
            }
        }
    }
    Ok(DiscrepancyReport {
        tolerance,
        weights: *weights,
        entries,
    })
}
