//! Class contrast: KL divergence between the importance distributions an
//! explanation method assigns to the same input for two different classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassContrastPair, ExplanationRecord, ModelError};
use crate::par::{self, Execution};

/// Additive smoothing applied to |score| before normalization.
pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContrastError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("not a strictly positive distribution summing to 1: {0}")]
    NotADistribution(String),
    #[error("no contrast pairs")]
    EmptyInput,
    #[error("instance {0}: explanations for the two classes have different token lists")]
    TokenOrderMismatch(String),
}

/// `p_i = (|s_i| + ε) / Σ_j (|s_j| + ε)`.
pub fn to_distribution(record: &ExplanationRecord, epsilon: f64) -> Result<Vec<f64>, ContrastError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ContrastError::InvalidEpsilon(epsilon));
    }
    record.validate()?;
    let mass: Vec<f64> = record.scores.iter().map(|s| s.abs() + epsilon).collect();
    let total: f64 = mass.iter().sum();
    Ok(mass.into_iter().map(|m| m / total).collect())
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), ContrastError> {
    if let Some(i) = p.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(ContrastError::NotADistribution(format!("{name}[{i}] = {}", p[i])));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ContrastError::NotADistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// `KL(p ∥ q) = Σ p_i ln(p_i / q_i)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ContrastError> {
    if p.len() != q.len() {
        return Err(ContrastError::LengthMismatch(p.len(), q.len()));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let kl: f64 = p.iter().zip(q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
    // Gibbs: negative values are rounding noise
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub instance_id: String,
    pub kl: f64,
    pub epsilon_used: f64,
}

fn pair_kl(pair: &ClassContrastPair, epsilon: f64) -> Result<ContrastResult, ContrastError> {
    if pair.explanation_p.normalized_tokens() != pair.explanation_q.normalized_tokens() {
        return Err(ContrastError::TokenOrderMismatch(pair.instance_id.clone()));
    }
    let p = to_distribution(&pair.explanation_p, epsilon)?;
    let q = to_distribution(&pair.explanation_q, epsilon)?;
    Ok(ContrastResult {
        instance_id: pair.instance_id.clone(),
        kl: kl_divergence(&p, &q)?,
        epsilon_used: epsilon,
    })
}

/// Mean `KL(target ∥ contrast)` over pairs, accumulated in sorted
/// `instance_id` order. Per-instance results are returned in that order.
pub fn contrastivity(
    pairs: &[ClassContrastPair],
    epsilon: f64,
    exec: Execution,
) -> Result<(f64, Vec<ContrastResult>), ContrastError> {
    if pairs.is_empty() {
        return Err(ContrastError::EmptyInput);
    }
    let mut results = par::map(exec, pairs, |p| pair_kl(p, epsilon))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let mean = par::ordered_sum(results.iter().map(|r| r.kl)) / results.len() as f64;
    Ok((mean, results))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSummary {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub mean_kl: f64,
    pub per_instance: Vec<ContrastResult>,
}

/// Contrastivity per (dataset, model, method) cell of the corpus.
pub fn evaluate_pairs(
    pairs: &[ClassContrastPair],
    epsilon: f64,
    exec: Execution,
) -> Result<Vec<ContrastSummary>, ContrastError> {
    let mut cells: BTreeMap<(String, String, String), Vec<ClassContrastPair>> = BTreeMap::new();
    for p in pairs {
        cells
            .entry((p.dataset_id.clone(), p.model_id.clone(), p.method_id.clone()))
            .or_default()
            .push(p.clone());
    }
    cells
        .into_iter()
        .map(|((dataset_id, model_id, method_id), ps)| {
            let (mean_kl, per_instance) = contrastivity(&ps, epsilon, exec)?;
            Ok(ContrastSummary {
                dataset_id,
                model_id,
                method_id,
                mean_kl,
                per_instance,
            })
        })
        .collect()
}
