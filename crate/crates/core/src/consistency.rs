//! Cross-seed consistency.
//!
//! Two models of the same architecture trained from different seeds are
//! compared per instance twice: once on their layer-averaged attention and
//! once on a method's explanation scores. The Spearman correlation between
//! the two distance series over instances is the consistency score.
//!
//! Explanation records for a seed variant use the model id
//! `"<model>@<seed>"` (see [`seed_model_id`]); attention records carry the
//! bare model id and the seed separately.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CorpusIndex;
use crate::model::{normalize_scores, AttentionSummary, ExplanationRecord, ModelError};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsistencyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cosine distance undefined for an all-zero vector")]
    ZeroVector,
    #[error("series of length {0} is too short; need at least 3")]
    TooShort(usize),
    #[error("rank series is constant; correlation undefined")]
    DegenerateSeries,
    #[error("only {found} instances have attention and explanations for both seeds; need at least 3")]
    InsufficientInstances { found: usize },
    #[error("instance {instance_id}: {what} length differs between seeds ({a} vs {b})")]
    AlignmentError {
        instance_id: String,
        what: &'static str,
        a: usize,
        b: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Euclidean,
}

impl std::str::FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "euclidean" => Ok(DistanceKind::Euclidean),
            other => Err(format!("unknown distance kind {other:?} (expected cosine or euclidean)")),
        }
    }
}

/// Element-wise mean over layers. A single stored layer is returned as is.
pub fn average_attention(summary: &AttentionSummary) -> Vec<f64> {
    let layers = &summary.per_token_attention;
    if layers.len() == 1 {
        return layers[0].clone();
    }
    let width = summary.token_count();
    let l = layers.len() as f64;
    (0..width)
        .map(|t| par::ordered_sum(layers.iter().map(|v| v[t])) / l)
        .collect()
}

pub fn vector_distance(u: &[f64], v: &[f64], kind: DistanceKind) -> Result<f64, ConsistencyError> {
    if u.len() != v.len() {
        return Err(ConsistencyError::LengthMismatch(u.len(), v.len()));
    }
    match kind {
        DistanceKind::Cosine => {
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(ConsistencyError::ZeroVector);
            }
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
        }
        DistanceKind::Euclidean => Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
    }
}

/// 1-based ranks; tied values share the mean of the positions they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean((i+1)..=(j+1))
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ConsistencyError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ConsistencyError::DegenerateSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64, ConsistencyError> {
    if xs.len() != ys.len() {
        return Err(ConsistencyError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(ConsistencyError::TooShort(xs.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDistance {
    pub instance_id: String,
    pub d_attention: f64,
    pub d_explanation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub model_pair: (String, String),
    pub method_id: String,
    pub rho: f64,
    pub n_instances: usize,
    pub per_instance: Vec<InstanceDistance>,
}

/// The model and the two seeds being compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPair {
    pub model_id: String,
    pub seed_a: String,
    pub seed_b: String,
}

impl SeedPair {
    pub fn new(model_id: impl Into<String>, seed_a: impl Into<String>, seed_b: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            seed_a: seed_a.into(),
            seed_b: seed_b.into(),
        }
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.model_id.clone(), self.seed_b.clone(), self.seed_a.clone())
    }
}

/// Model id under which explanations for one seed variant are stored.
pub fn seed_model_id(model_id: &str, seed_id: &str) -> String {
    format!("{model_id}@{seed_id}")
}

struct InstanceInputs<'a> {
    instance_id: &'a str,
    attention: (&'a AttentionSummary, &'a AttentionSummary),
    explanation: (&'a ExplanationRecord, &'a ExplanationRecord),
}

fn instance_distance(inputs: &InstanceInputs<'_>, kind: DistanceKind) -> Result<InstanceDistance, ConsistencyError> {
    let (aa, ab) = inputs.attention;
    let (ea, eb) = inputs.explanation;
    if aa.token_count() != ab.token_count() {
        return Err(ConsistencyError::AlignmentError {
            instance_id: inputs.instance_id.to_string(),
            what: "attention",
            a: aa.token_count(),
            b: ab.token_count(),
        });
    }
    if ea.len() != eb.len() {
        return Err(ConsistencyError::AlignmentError {
            instance_id: inputs.instance_id.to_string(),
            what: "explanation",
            a: ea.len(),
            b: eb.len(),
        });
    }
    let d_attention = vector_distance(&average_attention(aa), &average_attention(ab), kind)?;
    let na = normalize_scores(ea)?;
    let nb = normalize_scores(eb)?;
    let d_explanation = vector_distance(&na.scores, &nb.scores, kind)?;
    Ok(InstanceDistance {
        instance_id: inputs.instance_id.to_string(),
        d_attention,
        d_explanation,
    })
}

/// Consistency of `method_id` between two seeds of one model on `dataset_id`.
pub fn consistency(
    corpus: &CorpusIndex,
    dataset_id: &str,
    seeds: &SeedPair,
    method_id: &str,
    kind: DistanceKind,
    exec: Execution,
) -> Result<ConsistencyResult, ConsistencyError> {
    let model_a = seed_model_id(&seeds.model_id, &seeds.seed_a);
    let model_b = seed_model_id(&seeds.model_id, &seeds.seed_b);
    let mut by_instance: BTreeMap<&str, (Option<&ExplanationRecord>, Option<&ExplanationRecord>)> = BTreeMap::new();
    for e in corpus.primary_explanations() {
        if e.dataset_id != dataset_id || e.method_id != method_id {
            continue;
        }
        if e.model_id == model_a {
            by_instance.entry(&e.instance_id).or_default().0 = Some(e);
        }
        if e.model_id == model_b {
            by_instance.entry(&e.instance_id).or_default().1 = Some(e);
        }
    }
    let inputs: Vec<InstanceInputs<'_>> = by_instance
        .into_iter()
        .filter_map(|(instance_id, pair)| {
            let (ea, eb) = (pair.0?, pair.1?);
            let aa = corpus.attention_for(dataset_id, instance_id, &seeds.model_id, &seeds.seed_a)?;
            let ab = corpus.attention_for(dataset_id, instance_id, &seeds.model_id, &seeds.seed_b)?;
            Some(InstanceInputs {
                instance_id,
                attention: (aa, ab),
                explanation: (ea, eb),
            })
        })
        .collect();
    if inputs.len() < 3 {
        return Err(ConsistencyError::InsufficientInstances { found: inputs.len() });
    }
    let per_instance = par::map(exec, &inputs, |i| instance_distance(i, kind))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let da: Vec<f64> = per_instance.iter().map(|d| d.d_attention).collect();
    let de: Vec<f64> = per_instance.iter().map(|d| d.d_explanation).collect();
    let rho = spearman_rho(&da, &de)?;
    Ok(ConsistencyResult {
        model_pair: (seeds.seed_a.clone(), seeds.seed_b.clone()),
        method_id: method_id.to_string(),
        rho,
        n_instances: per_instance.len(),
        per_instance,
    })
}

/// Methods for which both seed variants have explanations on `dataset_id`.
pub fn methods_for(corpus: &CorpusIndex, dataset_id: &str, seeds: &SeedPair) -> Vec<String> {
    let model_a = seed_model_id(&seeds.model_id, &seeds.seed_a);
    let model_b = seed_model_id(&seeds.model_id, &seeds.seed_b);
    let mut seen: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for k in corpus.explanations.keys() {
        if k.dataset_id != dataset_id {
            continue;
        }
        let e = seen.entry(&k.method_id).or_default();
        e.0 |= k.model_id == model_a;
        e.1 |= k.model_id == model_b;
    }
    seen.into_iter()
        .filter(|(_, (a, b))| *a && *b)
        .map(|(m, _)| m.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(seed: &str, instance: &str, layers: Vec<Vec<f64>>) -> AttentionSummary {
        AttentionSummary {
            dataset_id: "d".into(),
            instance_id: instance.into(),
            model_id: "m".into(),
            seed_id: seed.into(),
            layers: layers.len(),
            per_token_attention: layers,
        }
    }

    #[test]
    fn layer_mean() {
        let s = summary("a", "1", vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(average_attention(&s), vec![0.5, 0.5]);
        let one = summary("a", "1", vec![vec![0.2, 0.8]]);
        assert_eq!(average_attention(&one), vec![0.2, 0.8]);
        let v = vec![0.1, 0.7, 0.2];
        let three = summary("a", "1", vec![v.clone(), v.clone(), v.clone()]);
        for (a, b) in average_attention(&three).iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn distances() {
        assert!(vector_distance(&[1.0, 2.0], &[1.0, 2.0], DistanceKind::Cosine).unwrap().abs() < 1e-15);
        assert!((vector_distance(&[1.0, 0.0], &[0.0, 3.0], DistanceKind::Cosine).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(vector_distance(&[0.0, 0.0], &[3.0, 4.0], DistanceKind::Euclidean).unwrap(), 5.0);
        assert_eq!(
            vector_distance(&[0.0, 0.0], &[3.0, 4.0], DistanceKind::Cosine),
            Err(ConsistencyError::ZeroVector)
        );
        assert_eq!(
            vector_distance(&[1.0], &[3.0, 4.0], DistanceKind::Euclidean),
            Err(ConsistencyError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn cosine_scale_free_euclidean_not() {
        let u = [0.2, 0.5, 0.3];
        let v = [0.1, 0.1, 0.8];
        let v2: Vec<f64> = v.iter().map(|x| x * 7.0).collect();
        let c1 = vector_distance(&u, &v, DistanceKind::Cosine).unwrap();
        let c2 = vector_distance(&u, &v2, DistanceKind::Cosine).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
        let e1 = vector_distance(&u, &v, DistanceKind::Euclidean).unwrap();
        let e2 = vector_distance(&u, &v2, DistanceKind::Euclidean).unwrap();
        assert!((e1 - e2).abs() > 1e-3);
    }

    #[test]
    fn rho_examples() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rho_with_ties_average_rank() {
        // x ranks [1, 2.5, 2.5, 4], y ranks [1, 3, 2, 4]
        // deviations x: [-1.5, 0, 0, 1.5], y: [-1.5, 0.5, -0.5, 1.5]
        // rho = 4.5 / sqrt(4.5 * 5)
        let rho = spearman_rho(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 4.5 / (22.5f64).sqrt()).abs() < 1e-12);
        assert!((rho - 0.9487).abs() < 1e-4);
    }

    #[test]
    fn rho_errors() {
        assert_eq!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(ConsistencyError::DegenerateSeries));
        assert_eq!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]), Err(ConsistencyError::TooShort(2)));
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(ConsistencyError::LengthMismatch(3, 2)));
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
