//! Domain types shared by every metric, plus score normalization and
//! deterministic token ranking.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::aggregate::WeightVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("length mismatch: {tokens} tokens but {scores} scores")]
    LengthMismatch { tokens: usize, scores: usize },
    #[error("explanation has no tokens")]
    EmptyTokens,
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("all saliency scores are zero")]
    AllZeroScores,
    #[error("top_n {top_n} out of range 1..={len}")]
    TopNOutOfRange { top_n: usize, len: usize },
    #[error("rationale word set is empty")]
    EmptyRationale,
    #[error("attention summary: {0}")]
    AttentionShape(String),
    #[error("attention value at layer {layer}, position {index} is negative or not finite")]
    InvalidAttention { layer: usize, index: usize },
    #[error("pair records disagree on {field}: {left:?} vs {right:?}")]
    PairIdentityMismatch {
        field: &'static str,
        left: String,
        right: String,
    },
    #[error("contrast pair explanations share predicted class {0:?}")]
    SameContrastClass(String),
    #[error("contrast pair explanations have different token lists")]
    TokenOrderMismatch,
    #[error("relevance mask has length {mask} but original has {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("relevance mask value {value} at index {index} is not 0 or 1")]
    MaskValue { index: usize, value: u8 },
}

/// Canonical form used for every word comparison: NFC, lowercased, trimmed.
pub fn normalize_word(word: &str) -> String {
    word.trim().nfc().collect::<String>().to_lowercase()
}

/// Identity of an explanation within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExplanationKey {
    pub dataset_id: String,
    pub instance_id: String,
    pub model_id: String,
    pub method_id: String,
    pub predicted_class: String,
}

impl fmt::Display for ExplanationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}",
            self.dataset_id, self.instance_id, self.model_id, self.method_id, self.predicted_class
        )
    }
}

/// Per-word saliency for one instance under one (dataset, model, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub schema_version: u32,
    pub dataset_id: String,
    pub instance_id: String,
    pub model_id: String,
    pub method_id: String,
    pub predicted_class: String,
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
}

impl ExplanationRecord {
    pub fn new(
        dataset_id: impl Into<String>,
        instance_id: impl Into<String>,
        model_id: impl Into<String>,
        method_id: impl Into<String>,
        predicted_class: impl Into<String>,
        tokens: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let record = Self {
            schema_version: crate::SCHEMA_VERSION,
            dataset_id: dataset_id.into(),
            instance_id: instance_id.into(),
            model_id: model_id.into(),
            method_id: method_id.into(),
            predicted_class: predicted_class.into(),
            tokens,
            scores,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tokens.len() != self.scores.len() {
            return Err(ModelError::LengthMismatch {
                tokens: self.tokens.len(),
                scores: self.scores.len(),
            });
        }
        if self.tokens.is_empty() {
            return Err(ModelError::EmptyTokens);
        }
        if let Some(index) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(ModelError::NonFiniteScore { index });
        }
        Ok(())
    }

    pub fn key(&self) -> ExplanationKey {
        ExplanationKey {
            dataset_id: self.dataset_id.clone(),
            instance_id: self.instance_id.clone(),
            model_id: self.model_id.clone(),
            method_id: self.method_id.clone(),
            predicted_class: self.predicted_class.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Lowercased, NFC-normalized token list.
    pub fn normalized_tokens(&self) -> Vec<String> {
        self.tokens.iter().map(|t| normalize_word(t)).collect()
    }

    pub(crate) fn canonicalize(&mut self) {
        for t in &mut self.tokens {
            *t = normalize_word(t);
        }
    }
}

/// L1-normalize a record's scores, preserving sign and token order.
pub fn normalize_scores(record: &ExplanationRecord) -> Result<ExplanationRecord, ModelError> {
    let total: f64 = record.scores.iter().map(|s| s.abs()).sum();
    if total == 0.0 {
        return Err(ModelError::AllZeroScores);
    }
    let mut out = record.clone();
    for s in &mut out.scores {
        *s /= total;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedToken {
    pub token: String,
    pub score: f64,
    pub index: usize,
}

/// Descending |score|, ties by ascending position.
fn magnitude_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b]
        .abs()
        .total_cmp(&scores[a].abs())
        .then_with(|| a.cmp(&b))
}

/// Every position of the record in magnitude order.
pub fn magnitude_ranking(record: &ExplanationRecord) -> Vec<usize> {
    let mut order: Vec<usize> = (0..record.scores.len()).collect();
    order.sort_by(|&a, &b| magnitude_order(&record.scores, a, b));
    order
}

/// The `top_n` most salient tokens by |score|.
pub fn rank_tokens(record: &ExplanationRecord, top_n: usize) -> Result<Vec<RankedToken>, ModelError> {
    let len = record.len();
    if top_n < 1 || top_n > len {
        return Err(ModelError::TopNOutOfRange { top_n, len });
    }
    Ok(magnitude_ranking(record)
        .into_iter()
        .take(top_n)
        .map(|index| RankedToken {
            token: record.tokens[index].clone(),
            score: record.scores[index],
            index,
        })
        .collect())
}

/// Human-marked salient words for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleAnnotation {
    pub dataset_id: String,
    pub instance_id: String,
    pub annotator_id: String,
    pub rationale_words: BTreeSet<String>,
}

impl RationaleAnnotation {
    pub fn new(
        dataset_id: impl Into<String>,
        instance_id: impl Into<String>,
        annotator_id: impl Into<String>,
        words: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self, ModelError> {
        let mut ann = Self {
            dataset_id: dataset_id.into(),
            instance_id: instance_id.into(),
            annotator_id: annotator_id.into(),
            rationale_words: words.into_iter().map(|w| w.as_ref().to_string()).collect(),
        };
        ann.canonicalize();
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rationale_words.is_empty() {
            return Err(ModelError::EmptyRationale);
        }
        Ok(())
    }

    pub(crate) fn canonicalize(&mut self) {
        self.rationale_words = std::mem::take(&mut self.rationale_words)
            .into_iter()
            .map(|w| normalize_word(&w))
            .filter(|w| !w.is_empty())
            .collect();
    }

    pub fn contains(&self, word: &str) -> bool {
        self.rationale_words.contains(&normalize_word(word))
    }
}

/// Per-layer, per-token attention mass for one instance under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub dataset_id: String,
    pub instance_id: String,
    pub model_id: String,
    pub seed_id: String,
    pub layers: usize,
    pub per_token_attention: Vec<Vec<f64>>,
}

impl AttentionSummary {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers < 1 {
            return Err(ModelError::AttentionShape("layers must be at least 1".into()));
        }
        if self.per_token_attention.len() != self.layers {
            return Err(ModelError::AttentionShape(format!(
                "layers = {} but {} vectors supplied",
                self.layers,
                self.per_token_attention.len()
            )));
        }
        let width = self.per_token_attention[0].len();
        if width == 0 {
            return Err(ModelError::AttentionShape("attention vectors are empty".into()));
        }
        for (layer, v) in self.per_token_attention.iter().enumerate() {
            if v.len() != width {
                return Err(ModelError::AttentionShape(format!(
                    "layer {layer} has {} positions, expected {width}",
                    v.len()
                )));
            }
            if let Some(index) = v.iter().position(|a| !a.is_finite() || *a < 0.0) {
                return Err(ModelError::InvalidAttention { layer, index });
            }
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        self.per_token_attention.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Mask,
    Delete,
    Synonym,
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbationKind::Mask => "mask",
            PerturbationKind::Delete => "delete",
            PerturbationKind::Synonym => "synonym",
        })
    }
}

/// An explanation and its counterpart on a perturbed copy of the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPair {
    pub original: ExplanationRecord,
    pub perturbed: ExplanationRecord,
    pub perturbation_kind: PerturbationKind,
    pub relevance_mask: Vec<u8>,
}

fn check_same(field: &'static str, left: &str, right: &str) -> Result<(), ModelError> {
    if left != right {
        return Err(ModelError::PairIdentityMismatch {
            field,
            left: left.to_string(),
            right: right.to_string(),
        });
    }
    Ok(())
}

impl PerturbationPair {
    /// Builds a pair with the mask derived from the token lists.
    pub fn new(
        original: ExplanationRecord,
        perturbed: ExplanationRecord,
        perturbation_kind: PerturbationKind,
    ) -> Result<Self, ModelError> {
        let relevance_mask = relevance_mask(&original, &perturbed);
        let pair = Self {
            original,
            perturbed,
            perturbation_kind,
            relevance_mask,
        };
        pair.validate_shape()?;
        Ok(pair)
    }

    /// Structural checks. Does not compare the stored mask with the
    /// recomputed one; ingest reports that separately.
    pub fn validate_shape(&self) -> Result<(), ModelError> {
        self.original.validate()?;
        self.perturbed.validate()?;
        let (a, b) = (&self.original, &self.perturbed);
        check_same("dataset_id", &a.dataset_id, &b.dataset_id)?;
        check_same("instance_id", &a.instance_id, &b.instance_id)?;
        check_same("model_id", &a.model_id, &b.model_id)?;
        check_same("method_id", &a.method_id, &b.method_id)?;
        if self.relevance_mask.len() != a.len() {
            return Err(ModelError::MaskLength {
                mask: self.relevance_mask.len(),
                tokens: a.len(),
            });
        }
        if let Some(index) = self.relevance_mask.iter().position(|&m| m > 1) {
            return Err(ModelError::MaskValue {
                index,
                value: self.relevance_mask[index],
            });
        }
        Ok(())
    }

    /// Positions in the stored mask that disagree with the token sets.
    pub fn mask_mismatches(&self) -> Vec<usize> {
        let expected = relevance_mask(&self.original, &self.perturbed);
        expected
            .iter()
            .zip(&self.relevance_mask)
            .enumerate()
            .filter(|(_, (e, s))| e != s)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `mask[k] = 1` iff the k-th original word occurs anywhere in the perturbed
/// token list (set membership on normalized words).
pub fn relevance_mask(original: &ExplanationRecord, perturbed: &ExplanationRecord) -> Vec<u8> {
    let present: BTreeSet<String> = perturbed.normalized_tokens().into_iter().collect();
    original
        .normalized_tokens()
        .iter()
        .map(|t| u8::from(present.contains(t)))
        .collect()
}

/// One-to-one left-to-right alignment of original positions onto perturbed
/// positions. Each perturbed occurrence of a word is consumed at most once,
/// so the n-th occurrence of a word in the original pairs with the n-th
/// occurrence in the perturbed list.
pub fn align_tokens(original: &ExplanationRecord, perturbed: &ExplanationRecord) -> Vec<Option<usize>> {
    let mut slots: HashMap<String, VecDeque<usize>> = HashMap::new();
    for (i, t) in perturbed.normalized_tokens().into_iter().enumerate() {
        slots.entry(t).or_default().push_back(i);
    }
    original
        .normalized_tokens()
        .iter()
        .map(|t| slots.get_mut(t).and_then(VecDeque::pop_front))
        .collect()
}

/// Explanations of the same input for two different classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContrastPair {
    pub instance_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub explanation_p: ExplanationRecord,
    pub explanation_q: ExplanationRecord,
}

impl ClassContrastPair {
    pub fn new(explanation_p: ExplanationRecord, explanation_q: ExplanationRecord) -> Result<Self, ModelError> {
        let pair = Self {
            instance_id: explanation_p.instance_id.clone(),
            dataset_id: explanation_p.dataset_id.clone(),
            model_id: explanation_p.model_id.clone(),
            method_id: explanation_p.method_id.clone(),
            explanation_p,
            explanation_q,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (p, q) = (&self.explanation_p, &self.explanation_q);
        p.validate()?;
        q.validate()?;
        for e in [p, q] {
            check_same("dataset_id", &self.dataset_id, &e.dataset_id)?;
            check_same("instance_id", &self.instance_id, &e.instance_id)?;
            check_same("model_id", &self.model_id, &e.model_id)?;
            check_same("method_id", &self.method_id, &e.method_id)?;
        }
        if p.predicted_class == q.predicted_class {
            return Err(ModelError::SameContrastClass(p.predicted_class.clone()));
        }
        if p.normalized_tokens() != q.normalized_tokens() {
            return Err(ModelError::TokenOrderMismatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Ha,
    Robustness,
    Consistency,
    Contrastivity,
    Cws,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Ha,
        MetricKind::Robustness,
        MetricKind::Consistency,
        MetricKind::Contrastivity,
        MetricKind::Cws,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ha => "ha",
            MetricKind::Robustness => "robustness",
            MetricKind::Consistency => "consistency",
            MetricKind::Contrastivity => "contrastivity",
            MetricKind::Cws => "cws",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricKind::Robustness)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Metric values for one (dataset, model, method) cell.
///
/// Single-metric runs produce fragments with only one value filled in;
/// [`crate::aggregate::merge_fragments`] joins them and fills in `cws`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub ha: Option<f64>,
    pub robustness: Option<f64>,
    pub consistency: Option<f64>,
    pub contrastivity: Option<f64>,
    pub cws: Option<f64>,
    pub weights: WeightVector,
    pub instance_count_per_metric: BTreeMap<MetricKind, usize>,
    pub tool_version: String,
    pub config_digest: String,
}

impl MetricReport {
    pub fn empty(
        dataset_id: impl Into<String>,
        model_id: impl Into<String>,
        method_id: impl Into<String>,
        config_digest: impl Into<String>,
    ) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            model_id: model_id.into(),
            method_id: method_id.into(),
            ha: None,
            robustness: None,
            consistency: None,
            contrastivity: None,
            cws: None,
            weights: WeightVector::equal(),
            instance_count_per_metric: BTreeMap::new(),
            tool_version: crate::TOOL_VERSION.to_string(),
            config_digest: config_digest.into(),
        }
    }

    pub fn get(&self, metric: MetricKind) -> Option<f64> {
        match metric {
            MetricKind::Ha => self.ha,
            MetricKind::Robustness => self.robustness,
            MetricKind::Consistency => self.consistency,
            MetricKind::Contrastivity => self.contrastivity,
            MetricKind::Cws => self.cws,
        }
    }

    pub fn slot_mut(&mut self, metric: MetricKind) -> &mut Option<f64> {
        match metric {
            MetricKind::Ha => &mut self.ha,
            MetricKind::Robustness => &mut self.robustness,
            MetricKind::Consistency => &mut self.consistency,
            MetricKind::Contrastivity => &mut self.contrastivity,
            MetricKind::Cws => &mut self.cws,
        }
    }

    /// `(dataset, model, method)` sort key.
    pub fn cell(&self) -> (&str, &str, &str) {
        (&self.dataset_id, &self.model_id, &self.method_id)
    }
}
