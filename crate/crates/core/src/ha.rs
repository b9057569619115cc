//! Human-reasoning agreement: ranked average precision of explanation
//! tokens against a human rationale, averaged over instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CorpusIndex;
use crate::model::{normalize_word, rank_tokens, ExplanationRecord, ModelError, RationaleAnnotation};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HaError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("explanation {explanation} and rationale {rationale} are for different instances")]
    InstanceMismatch { explanation: String, rationale: String },
    #[error("no instances to average")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStep {
    pub rank: usize,
    pub precision: f64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub instance_id: String,
    pub n: usize,
    pub ap: f64,
    pub per_rank: Vec<RankStep>,
}

/// Average precision of the top-`n` ranked tokens against `rationale`.
///
/// `top_n = None` uses the rationale size capped at the token count. The
/// sum of `P(k)·rel(k)` is divided by `n`, not by the number of relevant
/// hits, so missing a rationale word inside the window lowers the score.
pub fn average_precision(
    explanation: &ExplanationRecord,
    rationale: &RationaleAnnotation,
    top_n: Option<usize>,
) -> Result<ApResult, HaError> {
    if explanation.dataset_id != rationale.dataset_id || explanation.instance_id != rationale.instance_id {
        return Err(HaError::InstanceMismatch {
            explanation: format!("{}/{}", explanation.dataset_id, explanation.instance_id),
            rationale: format!("{}/{}", rationale.dataset_id, rationale.instance_id),
        });
    }
    let n = top_n.unwrap_or_else(|| rationale.rationale_words.len().min(explanation.len()));
    let ranked = rank_tokens(explanation, n)?;

    let mut hits = 0usize;
    let mut acc = 0.0;
    let mut per_rank = Vec::with_capacity(n);
    for (i, t) in ranked.iter().enumerate() {
        let rank = i + 1;
        let relevant = rationale.rationale_words.contains(&normalize_word(&t.token));
        hits += usize::from(relevant);
        let precision = hits as f64 / rank as f64;
        if relevant {
            acc += precision;
        }
        per_rank.push(RankStep {
            rank,
            precision,
            relevant,
        });
    }
    Ok(ApResult {
        instance_id: explanation.instance_id.clone(),
        n,
        ap: acc / n as f64,
        per_rank,
    })
}

/// Mean AP over instances, accumulated in sorted `instance_id` order.
pub fn mean_average_precision(results: &[ApResult]) -> Result<f64, HaError> {
    if results.is_empty() {
        return Err(HaError::EmptyInput);
    }
    let mut sorted: Vec<&ApResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(par::ordered_sum(sorted.iter().map(|r| r.ap)) / sorted.len() as f64)
}

/// HA for one (dataset, model, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HaSummary {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub map: f64,
    pub per_instance: Vec<ApResult>,
    /// Explanations with no rationale in the corpus.
    pub skipped: usize,
}

/// Evaluate every (dataset, model, method) cell that has at least one
/// annotated instance.
pub fn evaluate_corpus(
    corpus: &CorpusIndex,
    top_n: Option<usize>,
    exec: Execution,
) -> Result<Vec<HaSummary>, HaError> {
    let explanations = corpus.primary_explanations();
    let outcomes = par::map(exec, &explanations, |e| {
        corpus
            .annotation(&e.dataset_id, &e.instance_id)
            .map(|ann| average_precision(e, ann, top_n.map(|n| n.min(e.len()))))
    });

    let mut cells: BTreeMap<(String, String, String), (Vec<ApResult>, usize)> = BTreeMap::new();
    for (e, outcome) in explanations.iter().zip(outcomes) {
        let cell = cells
            .entry((e.dataset_id.clone(), e.model_id.clone(), e.method_id.clone()))
            .or_default();
        match outcome {
            Some(r) => cell.0.push(r?),
            None => cell.1 += 1,
        }
    }
    cells
        .into_iter()
        .filter(|(_, (results, _))| !results.is_empty())
        .map(|((dataset_id, model_id, method_id), (per_instance, skipped))| {
            Ok(HaSummary {
                map: mean_average_precision(&per_instance)?,
                dataset_id,
                model_id,
                method_id,
                per_instance,
                skipped,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expl(instance: &str, tokens: &[&str], scores: &[f64]) -> ExplanationRecord {
        ExplanationRecord::new(
            "d",
            instance,
            "m",
            "lime",
            "pos",
            tokens.iter().map(|s| s.to_string()).collect(),
            scores.to_vec(),
        )
        .unwrap()
    }

    fn rationale(instance: &str, words: &[&str]) -> RationaleAnnotation {
        RationaleAnnotation::new("d", instance, "a", words).unwrap()
    }

    fn ap_result(id: &str, ap: f64) -> ApResult {
        ApResult {
            instance_id: id.into(),
            n: 1,
            ap,
            per_rank: vec![],
        }
    }

    #[test]
    fn hand_evaluated_ap() {
        let e = expl("1", &["good", "movie", "bad"], &[0.5, 0.3, -0.2]);
        let r = average_precision(&e, &rationale("1", &["good", "bad"]), Some(3)).unwrap();
        let p: Vec<f64> = r.per_rank.iter().map(|s| s.precision).collect();
        let rel: Vec<bool> = r.per_rank.iter().map(|s| s.relevant).collect();
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0]);
        assert_eq!(rel, vec![true, false, true]);
        // (1 + 0 + 2/3) / 3
        assert!((r.ap - 5.0 / 9.0).abs() < 1e-15);
        assert!((r.ap - 0.5556).abs() < 1e-4);
    }

    #[test]
    fn all_relevant_is_one() {
        let e = expl("1", &["a", "b", "c"], &[0.5, 0.3, 0.2]);
        let r = average_precision(&e, &rationale("1", &["a", "b", "c"]), Some(3)).unwrap();
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn none_relevant_is_zero() {
        let e = expl("1", &["a", "b", "c"], &[0.5, 0.3, 0.2]);
        let r = average_precision(&e, &rationale("1", &["z"]), Some(3)).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn default_top_n_is_rationale_size() {
        let e = expl("1", &["a", "b", "c"], &[0.5, 0.3, 0.2]);
        let r = average_precision(&e, &rationale("1", &["a", "c"]), None).unwrap();
        assert_eq!(r.n, 2);
        // capped at K
        let r = average_precision(&expl("1", &["a"], &[1.0]), &rationale("1", &["a", "b"]), None).unwrap();
        assert_eq!(r.n, 1);
    }

    #[test]
    fn duplicates_judged_independently() {
        let e = expl("1", &["good", "good", "x"], &[0.5, 0.4, 0.1]);
        let r = average_precision(&e, &rationale("1", &["good"]), Some(2)).unwrap();
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn matching_is_case_insensitive() {
        let e = expl("1", &["GOOD"], &[1.0]);
        assert_eq!(average_precision(&e, &rationale("1", &["good"]), None).unwrap().ap, 1.0);
    }

    #[test]
    fn instance_mismatch() {
        let e = expl("1", &["a"], &[1.0]);
        assert!(matches!(
            average_precision(&e, &rationale("2", &["a"]), None),
            Err(HaError::InstanceMismatch { .. })
        ));
    }

    #[test]
    fn top_n_out_of_range() {
        let e = expl("1", &["a"], &[1.0]);
        assert!(matches!(
            average_precision(&e, &rationale("1", &["a"]), Some(2)),
            Err(HaError::Model(ModelError::TopNOutOfRange { .. }))
        ));
    }

    #[test]
    fn map_examples() {
        assert_eq!(mean_average_precision(&[ap_result("a", 1.0), ap_result("b", 0.0)]).unwrap(), 0.5);
        assert_eq!(mean_average_precision(&[ap_result("a", 0.5556)]).unwrap(), 0.5556);
        let m = mean_average_precision(&[ap_result("a", 0.5556), ap_result("b", 1.0), ap_result("c", 0.0)]).unwrap();
        let oracle = (0.5556 + 1.0 + 0.0) / 3.0;
        assert!((m - oracle).abs() < 1e-15);
        assert!((m - 0.5185).abs() < 1e-4);
        assert_eq!(mean_average_precision(&[]), Err(HaError::EmptyInput));
    }

    #[test]
    fn corpus_evaluation_groups_and_skips() {
        let mut corpus = CorpusIndex::default();
        for (id, toks, sc) in [("1", ["a", "b"], [0.9, 0.1]), ("2", ["c", "d"], [0.2, 0.8])] {
            let e = expl(id, &toks, &sc);
            corpus.explanations.insert(e.key(), e);
        }
        corpus
            .annotations
            .insert(("d".into(), "1".into()), rationale("1", &["a"]));
        let out = evaluate_corpus(&corpus, None, Execution::Sequential).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].map, 1.0);
        assert_eq!(out[0].skipped, 1);
    }
}
