//! Explanation stability under input perturbation.
//!
//! For each word of the original explanation, `d(k)` is the absolute change
//! of its L1-normalized saliency when the word survives the perturbation,
//! and its full original magnitude when it does not. AD averages `d` over
//! the original's words; MAD averages AD over instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::derive_seed;
use crate::ingest::CorpusIndex;
use crate::model::{align_tokens, magnitude_ranking, normalize_scores, ExplanationRecord, ModelError, PerturbationKind, PerturbationPair};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fraction {0} must lie in (0, 1]")]
    FractionOutOfRange(f64),
    #[error("word index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no instances to average")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SalienceTier {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAction {
    pub original_index: usize,
    pub kind: PerturbationKind,
    pub salience_tier: SalienceTier,
}

/// Instructions for the exporter: which words of an instance to perturb.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub dataset_id: String,
    pub instance_id: String,
    pub actions: Vec<PlanAction>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanSettings {
    pub kind: PerturbationKind,
    pub fraction: f64,
    pub tier: SalienceTier,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            kind: PerturbationKind::Mask,
            fraction: 0.15,
            tier: SalienceTier::High,
        }
    }
}

/// Select `ceil(fraction·K)` words from the top or bottom of the magnitude
/// ranking. Actions are listed in ranking order. The plan carries a seed
/// derived from `seed` and the instance identity, which the exporter uses
/// for any random choice it makes (synonym picks).
pub fn make_perturbation_plan(
    record: &ExplanationRecord,
    kind: PerturbationKind,
    fraction: f64,
    tier: SalienceTier,
    seed: u64,
) -> Result<PerturbationPlan, RobustnessError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RobustnessError::FractionOutOfRange(fraction));
    }
    record.validate()?;
    let k = record.len();
    let count = ((fraction * k as f64).ceil() as usize).clamp(1, k);
    let ranking = magnitude_ranking(record);
    let picked: Vec<usize> = match tier {
        SalienceTier::High => ranking[..count].to_vec(),
        SalienceTier::Low => ranking[k - count..].iter().rev().copied().collect(),
    };
    Ok(PerturbationPlan {
        dataset_id: record.dataset_id.clone(),
        instance_id: record.instance_id.clone(),
        actions: picked
            .into_iter()
            .map(|original_index| PlanAction {
                original_index,
                kind,
                salience_tier: tier,
            })
            .collect(),
        rng_seed: derive_seed(seed, &[&record.dataset_id, &record.instance_id]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordDifference {
    pub index: usize,
    pub rel: bool,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub instance_id: String,
    pub ad: f64,
    pub per_word: Vec<WordDifference>,
}

fn word_differences(original: &ExplanationRecord, perturbed: &ExplanationRecord) -> Vec<WordDifference> {
    align_tokens(original, perturbed)
        .into_iter()
        .enumerate()
        .map(|(index, matched)| match matched {
            Some(j) => WordDifference {
                index,
                rel: true,
                d: (original.scores[index] - perturbed.scores[j]).abs(),
            },
            None => WordDifference {
                index,
                rel: false,
                d: original.scores[index].abs(),
            },
        })
        .collect()
}

/// `d(k)` on the pair as given. Callers normalize first; see
/// [`average_difference`].
pub fn word_difference(pair: &PerturbationPair, k: usize) -> Result<f64, RobustnessError> {
    let len = pair.original.len();
    if k >= len {
        return Err(RobustnessError::IndexOutOfRange { index: k, len });
    }
    Ok(word_differences(&pair.original, &pair.perturbed)[k].d)
}

/// AD for one pair, after L1-normalizing both explanations.
pub fn average_difference(pair: &PerturbationPair) -> Result<RobustnessResult, RobustnessError> {
    let original = normalize_scores(&pair.original)?;
    let perturbed = normalize_scores(&pair.perturbed)?;
    let per_word = word_differences(&original, &perturbed);
    let ad = par::ordered_sum(per_word.iter().map(|w| w.d)) / per_word.len() as f64;
    Ok(RobustnessResult {
        instance_id: pair.original.instance_id.clone(),
        ad,
        per_word,
    })
}

/// Mean AD over instances, accumulated in sorted `instance_id` order.
pub fn mean_average_difference(results: &[RobustnessResult]) -> Result<f64, RobustnessError> {
    if results.is_empty() {
        return Err(RobustnessError::EmptyInput);
    }
    let mut sorted: Vec<&RobustnessResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(par::ordered_sum(sorted.iter().map(|r| r.ad)) / sorted.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSummary {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub mad: f64,
    pub per_instance: Vec<RobustnessResult>,
}

/// MAD for every (dataset, model, method) cell with perturbation pairs.
pub fn evaluate_corpus(corpus: &CorpusIndex, exec: Execution) -> Result<Vec<RobustnessSummary>, RobustnessError> {
    let pairs = &corpus.perturbation_pairs;
    let results = par::map(exec, pairs, average_difference);
    let mut cells: BTreeMap<(String, String, String), Vec<RobustnessResult>> = BTreeMap::new();
    for (p, r) in pairs.iter().zip(results) {
        cells
            .entry((p.original.dataset_id.clone(), p.original.model_id.clone(), p.original.method_id.clone()))
            .or_default()
            .push(r?);
    }
    cells
        .into_iter()
        .map(|((dataset_id, model_id, method_id), per_instance)| {
            Ok(RobustnessSummary {
                mad: mean_average_difference(&per_instance)?,
                dataset_id,
                model_id,
                method_id,
                per_instance,
            })
        })
        .collect()
}

/// Plans for a set of explanations, in input order.
pub fn plan_corpus(
    records: &[&ExplanationRecord],
    settings: PlanSettings,
    seed: u64,
    exec: Execution,
) -> Result<Vec<PerturbationPlan>, RobustnessError> {
    par::map(exec, records, |r| {
        make_perturbation_plan(r, settings.kind, settings.fraction, settings.tier, seed)
    })
    .into_iter()
    .collect()
}
