//! Line-delimited record files: parsing, validation and corpus indexing.
//!
//! Each non-blank line is one JSON object with a `record_type`
//! discriminator. Pair records may carry their explanations inline or refer
//! to explanation records elsewhere in the corpus by their five-part key.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    AttentionSummary, ClassContrastPair, ExplanationKey, ExplanationRecord, PerturbationKind,
    PerturbationPair, RationaleAnnotation,
};
use crate::par::{self, Execution};
use crate::robustness::PerturbationPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Locator {
    pub file: String,
    /// 1-based; 0 when the issue concerns the whole file or a merged entity.
    pub line: usize,
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub record_locator: Locator,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl ValidationIssue {
    fn new(severity: Severity, locator: &Locator, code: &str, message: impl Into<String>) -> Self {
        Self {
            severity,
            record_locator: locator.clone(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn error(locator: &Locator, code: &str, message: impl Into<String>) -> Self {
        Self::new(Severity::Error, locator, code, message)
    }

    fn warning(locator: &Locator, code: &str, message: impl Into<String>) -> Self {
        Self::new(Severity::Warning, locator, code, message)
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{}: {sev} [{}] {}", self.record_locator, self.code, self.message)
    }
}

pub mod codes {
    pub const PARSE_ERROR: &str = "parse_error";
    pub const UNKNOWN_RECORD_TYPE: &str = "unknown_record_type";
    pub const UNKNOWN_FIELD: &str = "unknown_field";
    pub const SCHEMA_VERSION_UNSUPPORTED: &str = "schema_version_unsupported";
    pub const INVALID_RECORD: &str = "invalid_record";
    pub const DUPLICATE_KEY: &str = "duplicate_key";
    pub const DANGLING_REFERENCE: &str = "dangling_reference";
    pub const MASK_MISMATCH: &str = "mask_mismatch";
    pub const EMPTY_AFTER_MERGE: &str = "empty_after_merge";
    pub const MERGED_BY_UNION: &str = "merged_by_union";
    pub const RECORD_IGNORED: &str = "record_ignored";
    pub const IO_ERROR: &str = "io_error";
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus rejected with {} error(s)", count_errors(.issues))]
    Rejected { issues: Vec<ValidationIssue> },
}

fn count_errors(issues: &[ValidationIssue]) -> usize {
    issues.iter().filter(|i| i.severity == Severity::Error).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("no annotations to merge")]
    NoAnnotations,
    #[error("annotations refer to different instances")]
    InstanceMismatch,
    #[error("no word is chosen by a majority of annotators")]
    EmptyAfterMerge,
}

/// Majority-vote merge: a word survives iff more than half of the
/// annotators marked it.
pub fn merge_annotations(annotations: &[RationaleAnnotation]) -> Result<RationaleAnnotation, AnnotationError> {
    let first = annotations.first().ok_or(AnnotationError::NoAnnotations)?;
    if annotations
        .iter()
        .any(|a| a.dataset_id != first.dataset_id || a.instance_id != first.instance_id)
    {
        return Err(AnnotationError::InstanceMismatch);
    }
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for a in annotations {
        for w in &a.rationale_words {
            *votes.entry(w.as_str()).or_default() += 1;
        }
    }
    let n = annotations.len();
    let words: BTreeSet<String> = votes
        .into_iter()
        .filter(|&(_, c)| 2 * c > n)
        .map(|(w, _)| w.to_string())
        .collect();
    if words.is_empty() {
        return Err(AnnotationError::EmptyAfterMerge);
    }
    Ok(RationaleAnnotation {
        dataset_id: first.dataset_id.clone(),
        instance_id: first.instance_id.clone(),
        annotator_id: "merged".to_string(),
        rationale_words: words,
    })
}

/// Union of all annotators' words.
pub fn union_annotations(annotations: &[RationaleAnnotation]) -> Result<RationaleAnnotation, AnnotationError> {
    let first = annotations.first().ok_or(AnnotationError::NoAnnotations)?;
    Ok(RationaleAnnotation {
        dataset_id: first.dataset_id.clone(),
        instance_id: first.instance_id.clone(),
        annotator_id: "merged".to_string(),
        rationale_words: annotations
            .iter()
            .flat_map(|a| a.rationale_words.iter().cloned())
            .collect(),
    })
}

/// What to do when majority vote leaves an instance with no rationale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeFallback {
    #[default]
    Fail,
    Union,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub lenient: bool,
    pub fallback: MergeFallback,
    pub execution: Execution,
}

/// Either an inline explanation or a reference to one in the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExplanationRef {
    Inline(ExplanationRecord),
    Key(ExplanationKey),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPairRecord {
    pub original: ExplanationRef,
    pub perturbed: ExplanationRef,
    pub perturbation_kind: PerturbationKind,
    pub relevance_mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContrastPairRecord {
    pub instance_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub method_id: String,
    pub explanation_p: ExplanationRef,
    pub explanation_q: ExplanationRef,
}

/// One parsed line.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Explanation(ExplanationRecord),
    Annotation(RationaleAnnotation),
    Attention(AttentionSummary),
    PerturbationPair(PerturbationPairRecord),
    ClassContrastPair(ClassContrastPairRecord),
    PerturbationPlan(PerturbationPlan),
}

const EXPLANATION_FIELDS: &[&str] = &[
    "schema_version",
    "dataset_id",
    "instance_id",
    "model_id",
    "method_id",
    "predicted_class",
    "tokens",
    "scores",
];
const ANNOTATION_FIELDS: &[&str] = &["dataset_id", "instance_id", "annotator_id", "rationale_words"];
const ATTENTION_FIELDS: &[&str] = &[
    "dataset_id",
    "instance_id",
    "model_id",
    "seed_id",
    "layers",
    "per_token_attention",
];
const PERTURBATION_PAIR_FIELDS: &[&str] = &["original", "perturbed", "perturbation_kind", "relevance_mask"];
const CONTRAST_PAIR_FIELDS: &[&str] = &[
    "instance_id",
    "dataset_id",
    "model_id",
    "method_id",
    "explanation_p",
    "explanation_q",
];
const PLAN_FIELDS: &[&str] = &["dataset_id", "instance_id", "actions", "rng_seed"];

impl Record {
    pub fn record_type(&self) -> &'static str {
        match self {
            Record::Explanation(_) => "explanation",
            Record::Annotation(_) => "annotation",
            Record::Attention(_) => "attention",
            Record::PerturbationPair(_) => "perturbation_pair",
            Record::ClassContrastPair(_) => "class_contrast_pair",
            Record::PerturbationPlan(_) => "perturbation_plan",
        }
    }

    /// Serialize as one line (no trailing newline). Keys come out sorted.
    pub fn to_json_line(&self) -> String {
        let body = match self {
            Record::Explanation(r) => serde_json::to_value(r),
            Record::Annotation(r) => serde_json::to_value(r),
            Record::Attention(r) => serde_json::to_value(r),
            Record::PerturbationPair(r) => serde_json::to_value(r),
            Record::ClassContrastPair(r) => serde_json::to_value(r),
            Record::PerturbationPlan(r) => serde_json::to_value(r),
        }
        .expect("records serialize");
        let mut obj = match body {
            Value::Object(m) => m,
            _ => unreachable!("records serialize as objects"),
        };
        obj.insert("record_type".into(), Value::String(self.record_type().into()));
        serde_json::to_string(&Value::Object(obj)).expect("JSON value serializes")
    }
}

/// Parse one line. Unknown fields are stripped and reported as warnings.
pub fn parse_line(line: &str, locator: &Locator) -> Result<(Record, Vec<ValidationIssue>), ValidationIssue> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| ValidationIssue::error(locator, codes::PARSE_ERROR, format!("invalid JSON: {e}")))?;
    let Value::Object(mut obj) = value else {
        return Err(ValidationIssue::error(locator, codes::PARSE_ERROR, "record must be a JSON object"));
    };
    let record_type = match obj.remove("record_type") {
        Some(Value::String(s)) => s,
        Some(_) => {
            return Err(ValidationIssue::error(locator, codes::PARSE_ERROR, "record_type must be a string"));
        }
        None => {
            return Err(ValidationIssue::error(locator, codes::PARSE_ERROR, "missing field 'record_type'"));
        }
    };
    let fields = match record_type.as_str() {
        "explanation" => EXPLANATION_FIELDS,
        "annotation" => ANNOTATION_FIELDS,
        "attention" => ATTENTION_FIELDS,
        "perturbation_pair" => PERTURBATION_PAIR_FIELDS,
        "class_contrast_pair" => CONTRAST_PAIR_FIELDS,
        "perturbation_plan" => PLAN_FIELDS,
        other => {
            return Err(ValidationIssue::error(
                locator,
                codes::UNKNOWN_RECORD_TYPE,
                format!("unknown record_type {other:?}"),
            ));
        }
    };
    let mut warnings = Vec::new();
    let unknown: Vec<String> = obj.keys().filter(|k| !fields.contains(&k.as_str())).cloned().collect();
    for k in unknown {
        obj.remove(&k);
        warnings.push(ValidationIssue::warning(
            locator,
            codes::UNKNOWN_FIELD,
            format!("unknown field {k:?} in {record_type} record ignored"),
        ));
    }
    let record = decode(&record_type, obj).map_err(|e| {
        ValidationIssue::error(locator, codes::PARSE_ERROR, format!("malformed {record_type} record: {e}"))
    })?;
    Ok((record, warnings))
}

fn decode(record_type: &str, obj: Map<String, Value>) -> Result<Record, serde_json::Error> {
    let v = Value::Object(obj);
    Ok(match record_type {
        "explanation" => Record::Explanation(serde_json::from_value(v)?),
        "annotation" => Record::Annotation(serde_json::from_value(v)?),
        "attention" => Record::Attention(serde_json::from_value(v)?),
        "perturbation_pair" => Record::PerturbationPair(serde_json::from_value(v)?),
        "class_contrast_pair" => Record::ClassContrastPair(serde_json::from_value(v)?),
        "perturbation_plan" => Record::PerturbationPlan(serde_json::from_value(v)?),
        _ => unreachable!("record_type checked by caller"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttentionKey {
    pub dataset_id: String,
    pub instance_id: String,
    pub model_id: String,
    pub seed_id: String,
}

/// In-memory evaluation corpus. All maps are ordered so iteration is
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusIndex {
    pub explanations: BTreeMap<ExplanationKey, ExplanationRecord>,
    pub annotations: BTreeMap<(String, String), RationaleAnnotation>,
    pub attention: BTreeMap<AttentionKey, AttentionSummary>,
    pub perturbation_pairs: Vec<PerturbationPair>,
    pub contrast_pairs: Vec<ClassContrastPair>,
}

type PairSortKey = (ExplanationKey, PerturbationKind, String, Vec<String>);

fn pair_sort_key(p: &PerturbationPair) -> PairSortKey {
    (
        p.original.key(),
        p.perturbation_kind,
        p.perturbed.predicted_class.clone(),
        p.perturbed.tokens.clone(),
    )
}

fn contrast_sort_key(p: &ClassContrastPair) -> (ExplanationKey, String) {
    (p.explanation_p.key(), p.explanation_q.predicted_class.clone())
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.explanations.len()
            + self.annotations.len()
            + self.attention.len()
            + self.perturbation_pairs.len()
            + self.contrast_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn annotation(&self, dataset_id: &str, instance_id: &str) -> Option<&RationaleAnnotation> {
        self.annotations.get(&(dataset_id.to_string(), instance_id.to_string()))
    }

    pub fn attention_for(
        &self,
        dataset_id: &str,
        instance_id: &str,
        model_id: &str,
        seed_id: &str,
    ) -> Option<&AttentionSummary> {
        self.attention.get(&AttentionKey {
            dataset_id: dataset_id.into(),
            instance_id: instance_id.into(),
            model_id: model_id.into(),
            seed_id: seed_id.into(),
        })
    }

    /// One explanation per (dataset, instance, model, method).
    ///
    /// When several class-specific explanations exist for the same cell, the
    /// one used as the target side of a contrast pair wins; otherwise the
    /// lexicographically smallest class is taken.
    pub fn primary_explanations(&self) -> Vec<&ExplanationRecord> {
        let targets: BTreeSet<ExplanationKey> =
            self.contrast_pairs.iter().map(|p| p.explanation_p.key()).collect();
        let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<&ExplanationRecord>> = BTreeMap::new();
        for (k, r) in &self.explanations {
            groups
                .entry((&k.dataset_id, &k.instance_id, &k.model_id, &k.method_id))
                .or_default()
                .push(r);
        }
        groups
            .into_values()
            .map(|rs| {
                rs.iter()
                    .find(|r| targets.contains(&r.key()))
                    .copied()
                    .unwrap_or(rs[0])
            })
            .collect()
    }

    /// Records in canonical order: explanations, annotations, attention,
    /// perturbation pairs, contrast pairs. Pairs are written inline.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.explanations.values().cloned().map(Record::Explanation));
        out.extend(self.annotations.values().cloned().map(Record::Annotation));
        out.extend(self.attention.values().cloned().map(Record::Attention));
        out.extend(self.perturbation_pairs.iter().map(|p| {
            Record::PerturbationPair(PerturbationPairRecord {
                original: ExplanationRef::Inline(p.original.clone()),
                perturbed: ExplanationRef::Inline(p.perturbed.clone()),
                perturbation_kind: p.perturbation_kind,
                relevance_mask: p.relevance_mask.clone(),
            })
        }));
        out.extend(self.contrast_pairs.iter().map(|p| {
            Record::ClassContrastPair(ClassContrastPairRecord {
                instance_id: p.instance_id.clone(),
                dataset_id: p.dataset_id.clone(),
                model_id: p.model_id.clone(),
                method_id: p.method_id.clone(),
                explanation_p: ExplanationRef::Inline(p.explanation_p.clone()),
                explanation_q: ExplanationRef::Inline(p.explanation_q.clone()),
            })
        }));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.to_records() {
            s.push_str(&r.to_json_line());
            s.push('\n');
        }
        s
    }
}

struct ParsedFile {
    entries: Vec<(Locator, Record)>,
    issues: Vec<ValidationIssue>,
}

fn parse_file(path: &Path) -> ParsedFile {
    let file = path.display().to_string();
    let mut parsed = ParsedFile {
        entries: Vec::new(),
        issues: Vec::new(),
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            parsed.issues.push(ValidationIssue::error(
                &Locator { file, line: 0 },
                codes::IO_ERROR,
                format!("cannot read file: {e}"),
            ));
            return parsed;
        }
    };
    parse_text(&file, &text, &mut parsed);
    parsed
}

fn parse_text(file: &str, text: &str, parsed: &mut ParsedFile) {
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let locator = Locator {
            file: file.to_string(),
            line: i + 1,
        };
        match parse_line(line, &locator) {
            Ok((record, warnings)) => {
                parsed.issues.extend(warnings);
                parsed.entries.push((locator, record));
            }
            Err(issue) => parsed.issues.push(issue),
        }
    }
}

/// Load and index record files.
///
/// Paths are processed in sorted order so the result does not depend on
/// argument order. On success returns the corpus with all non-fatal issues;
/// any error-severity issue rejects the corpus. In lenient mode dangling
/// references and mask mismatches are downgraded to warnings and the
/// affected pairs dropped.
pub fn load_corpus(paths: &[PathBuf], options: LoadOptions) -> Result<(CorpusIndex, Vec<ValidationIssue>), IngestError> {
    let mut sorted: Vec<PathBuf> = paths.to_vec();
    sorted.sort();
    sorted.dedup();
    let parsed = par::map(options.execution, &sorted, |p| parse_file(p));
    build_corpus(parsed, options)
}

/// Same as [`load_corpus`] over in-memory `(name, contents)` sources.
pub fn load_corpus_from_strings(
    sources: &[(&str, &str)],
    options: LoadOptions,
) -> Result<(CorpusIndex, Vec<ValidationIssue>), IngestError> {
    let mut sorted: Vec<(&str, &str)> = sources.to_vec();
    sorted.sort();
    let parsed = sorted
        .iter()
        .map(|(name, text)| {
            let mut p = ParsedFile {
                entries: Vec::new(),
                issues: Vec::new(),
            };
            parse_text(name, text, &mut p);
            p
        })
        .collect();
    build_corpus(parsed, options)
}

fn check_schema(record: &ExplanationRecord, locator: &Locator, issues: &mut Vec<ValidationIssue>) -> bool {
    if record.schema_version != crate::SCHEMA_VERSION {
        issues.push(ValidationIssue::error(
            locator,
            codes::SCHEMA_VERSION_UNSUPPORTED,
            format!(
                "schema_version {} unsupported (expected {})",
                record.schema_version,
                crate::SCHEMA_VERSION
            ),
        ));
        return false;
    }
    true
}

fn check_explanation(record: &ExplanationRecord, locator: &Locator, issues: &mut Vec<ValidationIssue>) -> bool {
    if !check_schema(record, locator, issues) {
        return false;
    }
    if let Err(e) = record.validate() {
        issues.push(ValidationIssue::error(locator, codes::INVALID_RECORD, e.to_string()));
        return false;
    }
    true
}

fn resolve(
    r: &ExplanationRef,
    explanations: &BTreeMap<ExplanationKey, ExplanationRecord>,
    locator: &Locator,
    issues: &mut Vec<ValidationIssue>,
    dangling_severity: Severity,
) -> Option<ExplanationRecord> {
    match r {
        ExplanationRef::Inline(rec) => {
            let mut rec = rec.clone();
            rec.canonicalize();
            check_explanation(&rec, locator, issues).then_some(rec)
        }
        ExplanationRef::Key(k) => match explanations.get(k) {
            Some(rec) => Some(rec.clone()),
            None => {
                issues.push(ValidationIssue::new(
                    dangling_severity,
                    locator,
                    codes::DANGLING_REFERENCE,
                    format!("pair references missing explanation {k}"),
                ));
                None
            }
        },
    }
}

fn build_corpus(
    files: Vec<ParsedFile>,
    options: LoadOptions,
) -> Result<(CorpusIndex, Vec<ValidationIssue>), IngestError> {
    let mut issues = Vec::new();
    let mut corpus = CorpusIndex::default();
    let mut raw_annotations: BTreeMap<(String, String), Vec<(Locator, RationaleAnnotation)>> = BTreeMap::new();
    let mut pending_pairs = Vec::new();
    let mut pending_contrasts = Vec::new();

    for file in files {
        issues.extend(file.issues);
        for (loc, record) in file.entries {
            match record {
                Record::Explanation(mut rec) => {
                    rec.canonicalize();
                    if !check_explanation(&rec, &loc, &mut issues) {
                        continue;
                    }
                    let key = rec.key();
                    if corpus.explanations.contains_key(&key) {
                        issues.push(ValidationIssue::error(
                            &loc,
                            codes::DUPLICATE_KEY,
                            format!("duplicate explanation {key}"),
                        ));
                        continue;
                    }
                    corpus.explanations.insert(key, rec);
                }
                Record::Annotation(mut ann) => {
                    ann.canonicalize();
                    if let Err(e) = ann.validate() {
                        issues.push(ValidationIssue::error(&loc, codes::INVALID_RECORD, e.to_string()));
                        continue;
                    }
                    let group = raw_annotations
                        .entry((ann.dataset_id.clone(), ann.instance_id.clone()))
                        .or_default();
                    if group.iter().any(|(_, a)| a.annotator_id == ann.annotator_id) {
                        issues.push(ValidationIssue::error(
                            &loc,
                            codes::DUPLICATE_KEY,
                            format!(
                                "duplicate annotation by {:?} for {}/{}",
                                ann.annotator_id, ann.dataset_id, ann.instance_id
                            ),
                        ));
                        continue;
                    }
                    group.push((loc, ann));
                }
                Record::Attention(att) => {
                    if let Err(e) = att.validate() {
                        issues.push(ValidationIssue::error(&loc, codes::INVALID_RECORD, e.to_string()));
                        continue;
                    }
                    let key = AttentionKey {
                        dataset_id: att.dataset_id.clone(),
                        instance_id: att.instance_id.clone(),
                        model_id: att.model_id.clone(),
                        seed_id: att.seed_id.clone(),
                    };
                    if corpus.attention.contains_key(&key) {
                        issues.push(ValidationIssue::error(
                            &loc,
                            codes::DUPLICATE_KEY,
                            format!(
                                "duplicate attention {}/{}/{}/{}",
                                key.dataset_id, key.instance_id, key.model_id, key.seed_id
                            ),
                        ));
                        continue;
                    }
                    corpus.attention.insert(key, att);
                }
                Record::PerturbationPair(p) => pending_pairs.push((loc, p)),
                Record::ClassContrastPair(p) => pending_contrasts.push((loc, p)),
                Record::PerturbationPlan(_) => issues.push(ValidationIssue::warning(
                    &loc,
                    codes::RECORD_IGNORED,
                    "perturbation_plan records are exporter input and are not part of a corpus",
                )),
            }
        }
    }

    for ((dataset, instance), group) in raw_annotations {
        let anns: Vec<RationaleAnnotation> = group.iter().map(|(_, a)| a.clone()).collect();
        let loc = group[0].0.clone();
        let merged = match merge_annotations(&anns) {
            Ok(m) => m,
            Err(AnnotationError::EmptyAfterMerge) if options.fallback == MergeFallback::Union => {
                issues.push(ValidationIssue::warning(
                    &loc,
                    codes::MERGED_BY_UNION,
                    format!("no majority rationale for {dataset}/{instance}; using union"),
                ));
                union_annotations(&anns).expect("group is non-empty")
            }
            Err(e) => {
                issues.push(ValidationIssue::error(
                    &loc,
                    codes::EMPTY_AFTER_MERGE,
                    format!("{dataset}/{instance}: {e}"),
                ));
                continue;
            }
        };
        corpus.annotations.insert((dataset, instance), merged);
    }

    let soft = if options.lenient { Severity::Warning } else { Severity::Error };

    let mut seen_pairs = BTreeSet::new();
    for (loc, p) in pending_pairs {
        let original = resolve(&p.original, &corpus.explanations, &loc, &mut issues, soft);
        let perturbed = resolve(&p.perturbed, &corpus.explanations, &loc, &mut issues, soft);
        let (Some(original), Some(perturbed)) = (original, perturbed) else {
            continue;
        };
        let pair = PerturbationPair {
            original,
            perturbed,
            perturbation_kind: p.perturbation_kind,
            relevance_mask: p.relevance_mask,
        };
        if let Err(e) = pair.validate_shape() {
            issues.push(ValidationIssue::error(&loc, codes::INVALID_RECORD, e.to_string()));
            continue;
        }
        let bad = pair.mask_mismatches();
        if !bad.is_empty() {
            issues.push(ValidationIssue::new(
                soft,
                &loc,
                codes::MASK_MISMATCH,
                format!("stored relevance_mask disagrees with token sets at positions {bad:?}"),
            ));
            continue;
        }
        if !seen_pairs.insert(pair_sort_key(&pair)) {
            issues.push(ValidationIssue::error(
                &loc,
                codes::DUPLICATE_KEY,
                format!("duplicate perturbation pair for {}", pair.original.key()),
            ));
            continue;
        }
        corpus.perturbation_pairs.push(pair);
    }
    corpus.perturbation_pairs.sort_by_cached_key(pair_sort_key);

    let mut seen_contrasts = BTreeSet::new();
    for (loc, p) in pending_contrasts {
        let ep = resolve(&p.explanation_p, &corpus.explanations, &loc, &mut issues, soft);
        let eq = resolve(&p.explanation_q, &corpus.explanations, &loc, &mut issues, soft);
        let (Some(explanation_p), Some(explanation_q)) = (ep, eq) else {
            continue;
        };
        let pair = ClassContrastPair {
            instance_id: p.instance_id,
            dataset_id: p.dataset_id,
            model_id: p.model_id,
            method_id: p.method_id,
            explanation_p,
            explanation_q,
        };
        if let Err(e) = pair.validate() {
            issues.push(ValidationIssue::error(&loc, codes::INVALID_RECORD, e.to_string()));
            continue;
        }
        if !seen_contrasts.insert(contrast_sort_key(&pair)) {
            issues.push(ValidationIssue::error(
                &loc,
                codes::DUPLICATE_KEY,
                format!("duplicate class contrast pair for {}", pair.explanation_p.key()),
            ));
            continue;
        }
        corpus.contrast_pairs.push(pair);
    }
    corpus.contrast_pairs.sort_by_cached_key(contrast_sort_key);

    issues.sort();
    if issues.iter().any(|i| i.severity == Severity::Error) {
        return Err(IngestError::Rejected { issues });
    }
    Ok((corpus, issues))
}
