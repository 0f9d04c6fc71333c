//! Experiment report assembly and the flat CSV tables meant for plotting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AlignmentSplit, AnalysisError, GapSummary, InjectionResult};
use crate::config::Constants;
use crate::corpus::CorpusStats;
use crate::judge::Aspect;
use crate::metrics::{self, ComplexityScore};

/// Knowledge-usage inputs for one turn where the agent retrieved something.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub knowledge_text: String,
    pub agent_response: String,
    pub human_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeUsage {
    pub turns_with_knowledge: usize,
    pub agent_rouge1_mean: f64,
    pub human_rouge1_mean: f64,
    pub agent_compression_mean: f64,
    pub human_compression_mean: f64,
    /// Welch p-values for the agent-vs-human comparison; absent below 2
    /// turns per side.
    pub rouge_p: Option<f64>,
    pub compression_p: Option<f64>,
}

/// Compare how the agent and the human expert condensed the same retrieved
/// knowledge. Only turns where knowledge was actually retrieved
/// participate.
pub fn knowledge_usage(items: &[KnowledgeItem]) -> KnowledgeUsage {
    let mut agent_rouge = Vec::new();
    let mut human_rouge = Vec::new();
    let mut agent_comp = Vec::new();
    let mut human_comp = Vec::new();
    for item in items {
        if item.knowledge_text.trim().is_empty() {
            continue;
        }
        let k_words = crate::corpus::word_count(&item.knowledge_text);
        agent_rouge.push(metrics::rouge1_precision(&item.agent_response, &item.knowledge_text));
        human_rouge.push(metrics::rouge1_precision(&item.human_response, &item.knowledge_text));
        if let Some(c) =
            metrics::compression_ratio(crate::corpus::word_count(&item.agent_response), k_words)
        {
            agent_comp.push(c);
        }
        if let Some(c) =
            metrics::compression_ratio(crate::corpus::word_count(&item.human_response), k_words)
        {
            human_comp.push(c);
        }
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    KnowledgeUsage {
        turns_with_knowledge: agent_rouge.len(),
        agent_rouge1_mean: mean(&agent_rouge),
        human_rouge1_mean: mean(&human_rouge),
        agent_compression_mean: mean(&agent_comp),
        human_compression_mean: mean(&human_comp),
        rouge_p: super::stats::welch_t_test(&agent_rouge, &human_rouge)
            .ok()
            .map(|r| r.p),
        compression_p: super::stats::welch_t_test(&agent_comp, &human_comp)
            .ok()
            .map(|r| r.p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub provider_id: String,
    pub model_id: String,
    pub constants: Constants,
    /// How the prompt intervention was phrased, recorded with the results
    /// because the wording is a harness decision.
    pub injection_wording: String,
}

/// The single structured output of one (corpus, model, condition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub corpus: CorpusStats,
    pub complexity: ComplexityScore,
    /// Keyed by dimension name (`acts`, `tools`).
    pub gaps: BTreeMap<String, GapSummary>,
    pub knowledge: KnowledgeUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSplit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<InjectionResult>,
    /// Configured external targets, reported verbatim next to measured
    /// sections.
    pub targets: BTreeMap<String, f64>,
}

/// Everything `build_report` needs; alignment and injection are optional
/// stages.
pub struct ReportInputs {
    pub metadata: ReportMetadata,
    pub corpus: Option<CorpusStats>,
    pub complexity: Option<ComplexityScore>,
    pub gaps: BTreeMap<String, GapSummary>,
    pub knowledge: Option<KnowledgeUsage>,
    pub alignment: Option<AlignmentSplit>,
    pub injection: Option<InjectionResult>,
    pub targets: BTreeMap<String, f64>,
}

pub fn build_report(inputs: ReportInputs) -> Result<ExperimentReport, AnalysisError> {
    let corpus = inputs.corpus.ok_or(AnalysisError::MissingSection("corpus"))?;
    let complexity = inputs
        .complexity
        .ok_or(AnalysisError::MissingSection("complexity"))?;
    let knowledge = inputs
        .knowledge
        .ok_or(AnalysisError::MissingSection("knowledge"))?;
    if inputs.gaps.is_empty() {
        return Err(AnalysisError::MissingSection("gaps"));
    }
    Ok(ExperimentReport {
        metadata: inputs.metadata,
        corpus,
        complexity,
        gaps: inputs.gaps,
        knowledge,
        alignment: inputs.alignment,
        injection: inputs.injection,
        targets: inputs.targets,
    })
}

// The csv crate writes floats in shortest-round-trip form, so numeric
// fields survive a parse back bit-identically.
fn write_csv(headers: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(headers).expect("csv write");
    for row in rows {
        writer.write_record(&row).expect("csv write");
    }
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("utf8 csv")
}

/// Per-dimension discrepancy table.
pub fn discrepancy_csv(report: &ExperimentReport) -> String {
    let rows = report
        .gaps
        .iter()
        .map(|(name, gap)| {
            vec![
                name.clone(),
                gap.discrepancy.to_string(),
                gap.ci95.0.to_string(),
                gap.ci95.1.to_string(),
                gap.mean_labels_agent.to_string(),
                gap.mean_labels_human.to_string(),
                gap.labels_delta_p.to_string(),
            ]
        })
        .collect();
    write_csv(
        &[
            "dimension",
            "discrepancy",
            "ci95_lo",
            "ci95_hi",
            "mean_labels_agent",
            "mean_labels_human",
            "labels_delta_p",
        ],
        rows,
    )
}

/// Knowledge-usage table, one row per metric.
pub fn knowledge_csv(report: &ExperimentReport) -> String {
    let k = &report.knowledge;
    let opt = |p: Option<f64>| p.map(|v| v.to_string()).unwrap_or_default();
    write_csv(
        &["metric", "agent", "human", "p_value"],
        vec![
            vec![
                "rouge1_precision".to_string(),
                k.agent_rouge1_mean.to_string(),
                k.human_rouge1_mean.to_string(),
                opt(k.rouge_p),
            ],
            vec![
                "compression_ratio".to_string(),
                k.agent_compression_mean.to_string(),
                k.human_compression_mean.to_string(),
                opt(k.compression_p),
            ],
        ],
    )
}

/// Injection-effect table, one row per aspect; empty when the injection
/// stage did not run.
pub fn injection_csv(report: &ExperimentReport) -> String {
    let rows = report
        .injection
        .iter()
        .flat_map(|result| Aspect::ALL.iter().filter_map(|a| result.get(a).map(|r| (a, r))))
        .map(|(aspect, r)| {
            vec![
                aspect.as_str().to_string(),
                r.baseline_mean.to_string(),
                r.injected_mean.to_string(),
                r.improvement_pct.to_string(),
                r.p_value.to_string(),
            ]
        })
        .collect();
    write_csv(
        &[
            "aspect",
            "baseline_mean",
            "injected_mean",
            "improvement_pct",
            "p_value",
        ],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Dimension;
    use approx::assert_abs_diff_eq;

    fn metadata() -> ReportMetadata {
        ReportMetadata {
            config_hash: "deadbeefdeadbeef".to_string(),
            seed: 7,
            provider_id: "scripted".to_string(),
            model_id: "toy".to_string(),
            constants: Constants::default(),
            injection_wording: "For this turn, respond using dialog acts: ...".to_string(),
        }
    }

    fn gap() -> GapSummary {
        GapSummary {
            dimension: Dimension::Acts,
            discrepancy: 0.25,
            ci95: (0.1, 0.4),
            mean_labels_agent: 1.5,
            mean_labels_human: 1.25,
            labels_delta_p: 0.3,
        }
    }

    fn inputs() -> ReportInputs {
        ReportInputs {
            metadata: metadata(),
            corpus: Some(CorpusStats {
                chat_count: 5,
                mean_turns_per_chat: 4.0,
                mean_words_per_turn: 8.0,
            }),
            complexity: Some(ComplexityScore {
                normalized_turn_count: 0.2,
                act_diversity: 0.18,
                composite: 0.19,
            }),
            gaps: [("acts".to_string(), gap())].into_iter().collect(),
            knowledge: Some(knowledge_usage(&[KnowledgeItem {
                knowledge_text: "a b c d e f g h".to_string(),
                agent_response: "a b c d".to_string(),
                human_response: "a b".to_string(),
            }])),
            alignment: None,
            injection: None,
            targets: [("correlation".to_string(), 0.963)].into_iter().collect(),
        }
    }

    #[test]
    fn report_requires_complexity() {
        let mut missing = inputs();
        missing.complexity = None;
        assert!(matches!(
            build_report(missing),
            Err(AnalysisError::MissingSection("complexity"))
        ));
        assert!(build_report(inputs()).is_ok());
    }

    #[test]
    fn knowledge_usage_hand_case() {
        let usage = knowledge_usage(&[KnowledgeItem {
            knowledge_text: "a b c d e f g h i j".to_string(),
            agent_response: "a b x y".to_string(),
            human_response: "a b".to_string(),
        }]);
        assert_eq!(usage.turns_with_knowledge, 1);
        assert_abs_diff_eq!(usage.agent_rouge1_mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(usage.human_rouge1_mean, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(usage.agent_compression_mean, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(usage.human_compression_mean, 0.8, epsilon = 1e-12);
        assert!(usage.rouge_p.is_none());
    }

    #[test]
    fn knowledge_usage_skips_empty_retrievals() {
        let usage = knowledge_usage(&[KnowledgeItem {
            knowledge_text: "   ".to_string(),
            agent_response: "anything".to_string(),
            human_response: "anything".to_string(),
        }]);
        assert_eq!(usage.turns_with_knowledge, 0);
    }

    #[test]
    fn csv_round_trips_numeric_fields() {
        let report = build_report(inputs()).unwrap();
        let csv_text = discrepancy_csv(&report);
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let row = reader.records().next().unwrap().unwrap();
        assert_eq!(row[0].to_string(), "acts");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.25);
        assert_eq!(row[6].parse::<f64>().unwrap(), 0.3);
    }

    #[test]
    fn report_serialization_is_deterministic() {
        let a = serde_json::to_string_pretty(&build_report(inputs()).unwrap()).unwrap();
        let b = serde_json::to_string_pretty(&build_report(inputs()).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: ExperimentReport = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), a);
    }
}
