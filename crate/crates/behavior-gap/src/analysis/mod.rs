//! Statistics and experiment aggregation: bootstrap intervals, t-tests,
//! behavior-gap summaries, the alignment split, injection effects, and the
//! final experiment report.

pub mod stats;

mod report;

pub use report::{
    build_report, discrepancy_csv, injection_csv, knowledge_csv, knowledge_usage,
    ExperimentReport, KnowledgeItem, KnowledgeUsage, ReportInputs, ReportMetadata,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::judge::{Aspect, ResponseScore};
use crate::label::LabelSet;
use crate::metrics::{self, Alignment, MetricError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("empty group: {0}")]
    EmptyGroup(&'static str),
    #[error("report is missing the mandatory `{0}` section")]
    MissingSection(&'static str),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Acts,
    Tools,
}

impl Dimension {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dimension::Acts => "acts",
            Dimension::Tools => "tools",
        }
    }
}

/// Paired per-turn label sets for one dialog, agent vs human expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogLabels {
    pub dialog_id: String,
    pub agent: Vec<LabelSet>,
    pub human: Vec<LabelSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub dimension: Dimension,
    /// Pooled `1 - micro_f1` over all turns of all dialogs.
    pub discrepancy: f64,
    pub ci95: (f64, f64),
    pub mean_labels_agent: f64,
    pub mean_labels_human: f64,
    /// Welch p for the per-turn label-count difference.
    pub labels_delta_p: f64,
}

/// Summarize one behavior dimension. The bootstrap resamples whole dialogs,
/// recomputing the pooled discrepancy each time, so within-dialog
/// correlation is respected.
pub fn gap_summary(
    dimension: Dimension,
    dialogs: &[DialogLabels],
    resamples: usize,
    seed: u64,
) -> Result<GapSummary, AnalysisError> {
    if dialogs.is_empty() {
        return Err(AnalysisError::EmptyGroup("dialogs"));
    }
    for d in dialogs {
        if d.agent.len() != d.human.len() {
            return Err(AnalysisError::LengthMismatch {
                a: d.agent.len(),
                b: d.human.len(),
            });
        }
    }
    let agent_all: Vec<LabelSet> = dialogs.iter().flat_map(|d| d.agent.clone()).collect();
    let human_all: Vec<LabelSet> = dialogs.iter().flat_map(|d| d.human.clone()).collect();
    let discrepancy = metrics::discrepancy(&agent_all, &human_all)?;

    let pooled = |idx: &[usize]| {
        let mut counts = metrics::ConfusionCounts::default();
        for &i in idx {
            for (a, h) in dialogs[i].agent.iter().zip(&dialogs[i].human) {
                counts.add(&metrics::ConfusionCounts::from_pair(a, h));
            }
        }
        1.0 - counts.f1()
    };
    let ci95 = if dialogs.len() >= 2 {
        stats::bootstrap_statistic_ci(dialogs.len(), resamples, seed, pooled)?
    } else {
        (discrepancy, discrepancy)
    };

    let agent_counts: Vec<f64> = agent_all.iter().map(|s| s.len() as f64).collect();
    let human_counts: Vec<f64> = human_all.iter().map(|s| s.len() as f64).collect();
    let labels_delta_p = stats::welch_t_test(&agent_counts, &human_counts)?.p;
    Ok(GapSummary {
        dimension,
        discrepancy,
        ci95,
        mean_labels_agent: metrics::mean_labels_per_turn(&agent_all)?,
        mean_labels_human: metrics::mean_labels_per_turn(&human_all)?,
        labels_delta_p,
    })
}

/// One judged turn with its agent and human label sets on one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentObservation {
    pub agent: LabelSet,
    pub human: LabelSet,
    pub score: ResponseScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectSplit {
    pub aligned_mean: Option<f64>,
    pub misaligned_mean: Option<f64>,
    /// Welch p between groups; absent when a group has fewer than 2 turns.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSplit {
    pub threshold: f64,
    pub aligned_count: usize,
    pub misaligned_count: usize,
    pub per_aspect: BTreeMap<Aspect, AspectSplit>,
    /// Set when one partition is empty; means are still reported for the
    /// other.
    pub partition_empty: bool,
}

/// Partition judged turns by per-turn alignment and compare judge scores
/// between the partitions.
pub fn split_by_alignment(records: &[AlignmentObservation], threshold: f64) -> AlignmentSplit {
    let (aligned, misaligned): (Vec<_>, Vec<_>) = records.iter().partition(|r| {
        metrics::turn_alignment(&r.agent, &r.human, threshold) == Alignment::Aligned
    });
    let mut per_aspect = BTreeMap::new();
    for aspect in Aspect::ALL {
        let a: Vec<f64> = aligned.iter().map(|r| r.score.get(aspect) as f64).collect();
        let m: Vec<f64> = misaligned
            .iter()
            .map(|r| r.score.get(aspect) as f64)
            .collect();
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                None
            } else {
                Some(xs.iter().sum::<f64>() / xs.len() as f64)
            }
        };
        let p = stats::welch_t_test(&a, &m).ok().map(|r| r.p);
        per_aspect.insert(
            aspect,
            AspectSplit {
                aligned_mean: mean(&a),
                misaligned_mean: mean(&m),
                p,
            },
        );
    }
    AlignmentSplit {
        threshold,
        aligned_count: aligned.len(),
        misaligned_count: misaligned.len(),
        per_aspect,
        partition_empty: aligned.is_empty() || misaligned.is_empty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionAspect {
    pub baseline_mean: f64,
    pub injected_mean: f64,
    /// `100 * (injected_mean / baseline_mean - 1)`, exactly.
    pub improvement_pct: f64,
    /// One-sided p from the one-sample t-test on the log-transformed
    /// per-turn ratio.
    pub p_value: f64,
    pub excluded_pairs: usize,
}

pub type InjectionResult = BTreeMap<Aspect, InjectionAspect>;

/// Aggregate paired (injected, baseline) judge scores per aspect.
pub fn injection_result(
    pairs: &[(ResponseScore, ResponseScore)],
) -> Result<InjectionResult, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::EmptyGroup("score pairs"));
    }
    let mut out = BTreeMap::new();
    for aspect in Aspect::ALL {
        let numeric: Vec<(f64, f64)> = pairs
            .iter()
            .map(|(inj, base)| (inj.get(aspect) as f64, base.get(aspect) as f64))
            .collect();
        let injected_mean =
            numeric.iter().map(|(i, _)| i).sum::<f64>() / numeric.len() as f64;
        let baseline_mean =
            numeric.iter().map(|(_, b)| b).sum::<f64>() / numeric.len() as f64;
        let test = stats::log_ratio_t_test(&numeric)?;
        out.insert(
            aspect,
            InjectionAspect {
                baseline_mean,
                injected_mean,
                improvement_pct: 100.0 * (injected_mean / baseline_mean - 1.0),
                p_value: test.p,
                excluded_pairs: test.excluded,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ls(labels: &[&str]) -> LabelSet {
        LabelSet::new(labels.iter().copied())
    }

    fn score(v: u8) -> ResponseScore {
        ResponseScore {
            coherence: v,
            specificity: v,
            satisfaction: v,
            effectiveness: v,
            reasoning: BTreeMap::new(),
        }
    }

    #[test]
    fn gap_summary_pools_counts() {
        let dialogs = vec![
            DialogLabels {
                dialog_id: "d1".into(),
                agent: vec![ls(&["inform", "request"]), ls(&["request"])],
                human: vec![ls(&["inform"]), ls(&["request", "greet"])],
            },
            DialogLabels {
                dialog_id: "d2".into(),
                agent: vec![ls(&["book"])],
                human: vec![ls(&["book"])],
            },
        ];
        let summary = gap_summary(Dimension::Acts, &dialogs, 500, 9).unwrap();
        // TP=3, FP=1, FN=1 -> f1 = 6/8
        assert_abs_diff_eq!(summary.discrepancy, 0.25, epsilon = 1e-12);
        assert!(summary.ci95.0 <= summary.discrepancy);
        assert!(summary.ci95.1 >= summary.discrepancy);
        assert_abs_diff_eq!(summary.mean_labels_agent, 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(summary.mean_labels_human, 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_summary_is_seed_deterministic() {
        let dialogs: Vec<DialogLabels> = (0..6)
            .map(|i| DialogLabels {
                dialog_id: format!("d{i}"),
                agent: vec![ls(if i % 2 == 0 { &["a"] } else { &["b"] })],
                human: vec![ls(&["a"])],
            })
            .collect();
        let a = gap_summary(Dimension::Tools, &dialogs, 1000, 3).unwrap();
        let b = gap_summary(Dimension::Tools, &dialogs, 1000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_constructed_gap() {
        // aligned turns score 4, misaligned score 2, n = 30/30
        let mut records = Vec::new();
        for i in 0..30 {
            let wobble = u8::from(i % 5 == 0);
            records.push(AlignmentObservation {
                agent: ls(&["inform"]),
                human: ls(&["inform"]),
                score: score(4 + wobble),
            });
            records.push(AlignmentObservation {
                agent: ls(&["greet"]),
                human: ls(&["book"]),
                score: score(2 - wobble),
            });
        }
        let split = split_by_alignment(&records, 0.5);
        assert_eq!(split.aligned_count, 30);
        assert_eq!(split.misaligned_count, 30);
        assert!(!split.partition_empty);
        let aspect = &split.per_aspect[&Aspect::Coherence];
        assert!(aspect.aligned_mean.unwrap() > 4.0);
        assert!(aspect.misaligned_mean.unwrap() < 2.0);
        assert!(aspect.p.unwrap() < 0.001);
    }

    #[test]
    fn split_all_aligned_sets_flag() {
        let records = vec![
            AlignmentObservation {
                agent: ls(&["inform"]),
                human: ls(&["inform"]),
                score: score(4),
            };
            3
        ];
        let split = split_by_alignment(&records, 0.5);
        assert!(split.partition_empty);
        assert_eq!(split.misaligned_count, 0);
        assert!(split.per_aspect[&Aspect::Coherence].p.is_none());
        assert!(split.per_aspect[&Aspect::Coherence].misaligned_mean.is_none());
    }

    #[test]
    fn injection_null_intervention() {
        let pairs: Vec<(ResponseScore, ResponseScore)> =
            (0..10).map(|i| (score(2 + i % 3), score(2 + i % 3))).collect();
        let result = injection_result(&pairs).unwrap();
        let aspect = result[&Aspect::Satisfaction];
        assert_eq!(aspect.improvement_pct, 0.0);
        assert_eq!(aspect.p_value, 0.5);
    }

    #[test]
    fn injection_constructed_improvement() {
        let pairs: Vec<(ResponseScore, ResponseScore)> = (0..12)
            .map(|i| (score(4 + u8::from(i % 4 == 0)), score(2)))
            .collect();
        let result = injection_result(&pairs).unwrap();
        let aspect = result[&Aspect::Coherence];
        assert!(aspect.improvement_pct > 99.0);
        assert!(aspect.p_value < 0.01);
        assert_eq!(
            aspect.improvement_pct,
            100.0 * (aspect.injected_mean / aspect.baseline_mean - 1.0)
        );
    }
}
