//! Deterministic behavior and complexity metrics.
//!
//! Everything here is a pure function. Label comparisons use pooled
//! micro-F1; knowledge usage uses clipped unigram precision and a word
//! compression ratio; task complexity combines a log-normalized turn count
//! with dialog-act diversity.
//!
//! ```
//! use behavior_gap::metrics;
//! use behavior_gap::LabelSet;
//!
//! let agent = vec![LabelSet::new(["inform"])];
//! let human = vec![LabelSet::new(["inform", "offerbook"])];
//! // one shared label, one missed: micro-F1 = 2/3, so the gap is 1/3
//! let gap = metrics::discrepancy(&agent, &human).unwrap();
//! assert!((gap - 1.0 / 3.0).abs() < 1e-12);
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::label::LabelSet;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {pred} predictions vs {gold} references")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("act diversity {d} exceeds maximum {d_max}")]
    DiversityOutOfRange { d: f64, d_max: usize },
    #[error("dialog `{dialog}` turn {turn} is missing an ISO annotation")]
    MissingAnnotation { dialog: String, turn: usize },
}

/// Pooled true/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_pair(pred: &LabelSet, gold: &LabelSet) -> Self {
        let tp = pred.labels.intersection(&gold.labels).count() as u64;
        ConfusionCounts {
            tp,
            fp: pred.labels.len() as u64 - tp,
            fn_: gold.labels.len() as u64 - tp,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// F1 over the pooled counts. All-zero counts (every set empty on both
    /// sides) count as perfect agreement.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 && self.fp == 0 && self.fn_ == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / (2.0 * self.tp as f64 + self.fp as f64 + self.fn_ as f64)
    }
}

/// Pool confusion counts over paired turns.
pub fn pooled_counts(
    pred: &[LabelSet],
    gold: &[LabelSet],
) -> Result<ConfusionCounts, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        counts.add(&ConfusionCounts::from_pair(p, g));
    }
    Ok(counts)
}

/// Micro-F1 over pooled counts across all turns and labels.
pub fn micro_f1(pred: &[LabelSet], gold: &[LabelSet]) -> Result<f64, MetricError> {
    Ok(pooled_counts(pred, gold)?.f1())
}

/// Behavior-gap discrepancy: `1 - micro_f1`.
pub fn discrepancy(pred: &[LabelSet], gold: &[LabelSet]) -> Result<f64, MetricError> {
    Ok(1.0 - micro_f1(pred, gold)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Aligned,
    Misaligned,
}

/// Per-turn F1 against a threshold; a turn with both sets empty is aligned.
pub fn turn_alignment(pred: &LabelSet, gold: &LabelSet, threshold: f64) -> Alignment {
    let f1 = ConfusionCounts::from_pair(pred, gold).f1();
    if f1 >= threshold {
        Alignment::Aligned
    } else {
        Alignment::Misaligned
    }
}

pub fn mean_labels_per_turn(sets: &[LabelSet]) -> Result<f64, MetricError> {
    if sets.is_empty() {
        return Err(MetricError::EmptyInput("label sets"));
    }
    Ok(sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64)
}

/// Tokenize for knowledge-overlap metrics: case-fold, split on whitespace,
/// strip leading/trailing non-alphanumeric characters, drop empties.
pub fn overlap_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|tok| !tok.is_empty())
        .collect()
}

/// Clipped unigram precision of `response` against `knowledge`: each
/// knowledge token can be consumed at most as many times as it occurs.
pub fn rouge1_precision(response: &str, knowledge: &str) -> f64 {
    let resp = overlap_tokens(response);
    if resp.is_empty() {
        return 0.0;
    }
    let mut budget: BTreeMap<&str, usize> = BTreeMap::new();
    let know = overlap_tokens(knowledge);
    for tok in &know {
        *budget.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut hits = 0usize;
    for tok in &resp {
        if let Some(n) = budget.get_mut(tok.as_str()) {
            if *n > 0 {
                *n -= 1;
                hits += 1;
            }
        }
    }
    hits as f64 / resp.len() as f64
}

/// `1 - response/knowledge`, in words. Negative when the response is longer
/// than the retrieved knowledge; not clamped. Turns with no retrieved
/// knowledge are excluded upstream, so a zero knowledge length is a caller
/// bug and returns `None`.
pub fn compression_ratio(response_words: usize, knowledge_words: usize) -> Option<f64> {
    if knowledge_words == 0 {
        return None;
    }
    Some(1.0 - response_words as f64 / knowledge_words as f64)
}

/// Length-based complexity: `ln(1+t) / ln(1+t+C)`.
pub fn normalized_turn_count(t: f64, c: f64) -> f64 {
    (1.0 + t).ln() / (1.0 + t + c).ln()
}

/// Dialog-act diversity: mean distinct acts per chat over the taxonomy size.
pub fn act_diversity(d: f64, d_max: usize) -> Result<f64, MetricError> {
    if d < 0.0 || d > d_max as f64 {
        return Err(MetricError::DiversityOutOfRange { d, d_max });
    }
    Ok(d / d_max as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub normalized_turn_count: f64,
    pub act_diversity: f64,
    pub composite: f64,
}

pub const DEFAULT_TURN_COUNT_C: f64 = 1000.0;
pub const DEFAULT_D_MAX: usize = 11;
pub const DEFAULT_ALIGNMENT_THRESHOLD: f64 = 0.5;

/// Composite task complexity over a corpus with per-turn ISO annotations
/// for every human-expert turn, keyed by `(dialog_id, turn_index)`.
pub fn task_complexity(
    corpus: &[Dialog],
    iso_annotations: &BTreeMap<(String, usize), LabelSet>,
    c: f64,
    d_max: usize,
) -> Result<ComplexityScore, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyInput("corpus"));
    }
    let t = corpus.iter().map(|d| d.turns.len() as f64).sum::<f64>() / corpus.len() as f64;
    let mut diversity_sum = 0.0;
    for dialog in corpus {
        let mut distinct: BTreeSet<&str> = BTreeSet::new();
        for turn in &dialog.turns {
            if turn.speaker == crate::corpus::Speaker::HumanExpert {
                let set = iso_annotations
                    .get(&(dialog.id.clone(), turn.index))
                    .ok_or_else(|| MetricError::MissingAnnotation {
                        dialog: dialog.id.clone(),
                        turn: turn.index,
                    })?;
                distinct.extend(set.labels.iter().map(|s| s.as_str()));
            }
        }
        diversity_sum += distinct.len() as f64;
    }
    let d = diversity_sum / corpus.len() as f64;
    let ntc = normalized_turn_count(t, c);
    let div = act_diversity(d, d_max)?;
    Ok(ComplexityScore {
        normalized_turn_count: ntc,
        act_diversity: div,
        composite: (ntc + div) / 2.0,
    })
}
