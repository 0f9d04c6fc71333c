//! Few-shot LLM classifiers that annotate responses with dialog acts and
//! tool usage, plus the strict structured-output parser and validation
//! harnesses.
//!
//! The classifier prompt carries the label definitions, a few-shot bank per
//! label, and the exchange under analysis; the model must answer with a
//! JSON object holding a `{present, reasoning}` entry for every label.
//! Parsing is strict: unknown or missing labels are errors, never silently
//! coerced.

mod taxonomy;

pub use taxonomy::{FewShot, Taxonomy, TaxonomyName, ISO_LABELS, WOZ_LABELS};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{
    ChatRequest, Gateway, GatewayError, Message, ResponseFormat, RetryPolicy,
};
use crate::label::LabelSet;
use crate::metrics::{self, MetricError};
use crate::toolbox::ToolSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    HumanExpert,
    Agent,
}

/// One annotated turn; `(dialog_id, turn_index, source)` is unique per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub dialog_id: String,
    pub turn_index: usize,
    pub source: Source,
    pub acts: LabelSet,
    pub tools: LabelSet,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotatorError {
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("classifier output could not be parsed after a re-ask: {detail}; raw: {raw}")]
    Unparseable { detail: String, raw: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("response must be non-empty")]
    EmptyResponse,
}

#[derive(Debug, Deserialize)]
struct LabelVerdict {
    present: bool,
    #[serde(default)]
    reasoning: String,
}

/// Strictly decode a structured classifier payload: one `{present,
/// reasoning}` entry per allowed label, no extras, no omissions, no
/// trailing junk.
pub fn parse_label_output(raw: &str, allowed: &[String]) -> Result<LabelSet, AnnotatorError> {
    let verdicts: BTreeMap<String, LabelVerdict> = serde_json::from_str(raw.trim())
        .map_err(|e| AnnotatorError::Parse(format!("not a valid verdict object: {e}")))?;
    for key in verdicts.keys() {
        if !allowed.contains(key) {
            return Err(AnnotatorError::Parse(format!("unknown label key `{key}`")));
        }
    }
    for label in allowed {
        if !verdicts.contains_key(label) {
            return Err(AnnotatorError::Parse(format!("missing label key `{label}`")));
        }
    }
    let mut labels = std::collections::BTreeSet::new();
    let mut rationale = BTreeMap::new();
    for (label, verdict) in verdicts {
        if verdict.present {
            labels.insert(label.clone());
        }
        if !verdict.reasoning.is_empty() {
            rationale.insert(label, verdict.reasoning);
        }
    }
    Ok(LabelSet {
        labels,
        rationale: if rationale.is_empty() {
            None
        } else {
            Some(rationale)
        },
    })
}

fn output_contract(allowed: &[String]) -> String {
    format!(
        "Respond with a JSON object only. It must contain exactly one key per label \
         out of [{}], each mapped to an object {{\"present\": true|false, \
         \"reasoning\": \"...\"}} explaining whether the label applies to the agent's \
         response. Do not add any other keys or text.",
        allowed.join(", ")
    )
}

/// The classifier prompt: task description, label definitions, the few-shot
/// bank, and the output contract. The exchange under analysis goes into the
/// user message.
pub fn build_act_prompt(taxonomy: &Taxonomy) -> String {
    let mut prompt = String::from(
        "***Task Description***\n\
         You are an expert in analyzing task-oriented dialogues. You are provided a \
         conversation that contains the user's input and the agent's response to the \
         input. Your task is to analyze the dialog acts present in the agent's response \
         to a user input. A response can have multiple dialog acts. For each dialog act, \
         you must explain whether it is present or absent in the agent's response.\n\n\
         ***Dialog Act Types***\n\
         A dialog act represents the function of the agent's response. The possible \
         dialog acts are:\n",
    );
    for label in &taxonomy.labels {
        prompt.push_str(&format!("- {}: {}\n", label, taxonomy.definitions[label]));
    }
    prompt.push_str(
        "\n***Few-Shot Examples***\n\
         Here are some examples of each dialog act where the user input is followed by \
         the agent's response and the dialog act corresponds to the agent's response only:\n",
    );
    for label in &taxonomy.labels {
        if let Some(shots) = taxonomy.fewshots.get(label) {
            prompt.push_str(&format!("\n**{label}**\n"));
            for shot in shots {
                prompt.push_str(&format!(
                    "\nuser: {}\nagent: {}\n",
                    shot.user_input, shot.response
                ));
            }
        }
    }
    prompt.push_str("\n***Output Format***\n");
    prompt.push_str(&output_contract(&taxonomy.labels));
    prompt
}

pub fn build_tool_prompt(registry: &[ToolSpec]) -> String {
    let mut prompt = String::from(
        "***Task Description***\n\
         You are an expert in analyzing task-oriented dialogues. You are provided a \
         conversation that contains the current user input and an AI agent's response \
         to it. Your task is to analyze the tools used by the AI agent to generate the \
         response. Multiple tools can be used in a single response. For each tool, you \
         must explain if and why it has been used or not by the agent for the current \
         response.\n\n\
         ***Available Tools***\n\
         The AI agent uses the following tools to generate responses:\n",
    );
    for (i, tool) in registry.iter().enumerate() {
        prompt.push_str(&format!("{}. **{}**: {}\n", i + 1, tool.name, tool.description));
    }
    let names: Vec<String> = registry.iter().map(|t| t.name.clone()).collect();
    prompt.push_str("\n***Output Format***\n");
    prompt.push_str(&output_contract(&names));
    prompt
}

fn exchange_message(user_input: &str, response: &str) -> String {
    format!(
        "Analyze the following conversation and report every label that applies.\n\n\
         **Latest user input**:\n{user_input}\n\n\
         **Latest agent response**:\n{response}"
    )
}

/// Few-shot classifier front end shared by the act and tool annotators.
pub struct Annotator<'g> {
    pub gateway: &'g Gateway,
    pub model_id: String,
    pub policy: RetryPolicy,
}

impl<'g> Annotator<'g> {
    pub fn new(gateway: &'g Gateway, model_id: impl Into<String>) -> Self {
        Annotator {
            gateway,
            model_id: model_id.into(),
            policy: RetryPolicy::default(),
        }
    }

    fn classify(
        &self,
        system_prompt: String,
        user_input: &str,
        response: &str,
        allowed: &[String],
    ) -> Result<LabelSet, AnnotatorError> {
        if response.trim().is_empty() {
            return Err(AnnotatorError::EmptyResponse);
        }
        let mut request = ChatRequest {
            model_id: self.model_id.clone(),
            system_prompt,
            messages: vec![Message::user(exchange_message(user_input, response))],
            tool_schemas: vec![],
            temperature: 0.0,
            response_format: ResponseFormat::Structured,
        };
        let reply = self.gateway.complete_chat(&request, &self.policy)?;
        let raw = reply.content.unwrap_or_default();
        match parse_label_output(&raw, allowed) {
            Ok(set) => Ok(set),
            Err(first_err) => {
                // One re-ask with the parse failure spelled out, then give up.
                request.messages.push(Message::assistant(raw));
                request.messages.push(Message::user(format!(
                    "That output could not be parsed ({first_err}). Respond again with \
                     the JSON object only, following the output format exactly."
                )));
                let retry = self.gateway.complete_chat(&request, &self.policy)?;
                let raw = retry.content.unwrap_or_default();
                parse_label_output(&raw, allowed).map_err(|e| AnnotatorError::Unparseable {
                    detail: e.to_string(),
                    raw,
                })
            }
        }
    }

    pub fn classify_acts(
        &self,
        user_input: &str,
        response: &str,
        taxonomy: &Taxonomy,
    ) -> Result<LabelSet, AnnotatorError> {
        self.classify(
            build_act_prompt(taxonomy),
            user_input,
            response,
            &taxonomy.labels,
        )
    }

    pub fn classify_tools(
        &self,
        user_input: &str,
        response: &str,
        registry: &[ToolSpec],
    ) -> Result<LabelSet, AnnotatorError> {
        let names: Vec<String> = registry.iter().map(|t| t.name.clone()).collect();
        self.classify(build_tool_prompt(registry), user_input, response, &names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLabelScores {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub micro_f1: f64,
    pub per_label: BTreeMap<String, PerLabelScores>,
}

/// Score predictions against gold annotations: pooled micro-F1 plus
/// per-label precision/recall.
pub fn validate_classifier(
    predictions: &[LabelSet],
    gold: &[LabelSet],
) -> Result<ValidationReport, AnnotatorError> {
    let micro_f1 = metrics::micro_f1(predictions, gold)?;
    let mut per_label: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (pred, gold) in predictions.iter().zip(gold) {
        for label in &pred.labels {
            let entry = per_label.entry(label.clone()).or_default();
            if gold.contains(label) {
                entry.0 += 1; // tp
            } else {
                entry.1 += 1; // fp
            }
        }
        for label in &gold.labels {
            if !pred.contains(label) {
                per_label.entry(label.clone()).or_default().2 += 1; // fn
            }
        }
    }
    let per_label = per_label
        .into_iter()
        .map(|(label, (tp, fp, fn_))| {
            let precision = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            (
                label,
                PerLabelScores {
                    precision,
                    recall,
                    support: tp + fn_,
                },
            )
        })
        .collect();
    Ok(ValidationReport {
        micro_f1,
        per_label,
    })
}

/// Mean micro-F1 of a chance predictor that includes each label
/// independently with its empirical density in the gold annotations.
/// Labels outside the gold data have zero density and are never predicted,
/// so `taxonomy_size` only bounds the universe.
pub fn random_baseline(
    gold: &[LabelSet],
    taxonomy_size: usize,
    trials: usize,
    seed: u64,
) -> Result<f64, AnnotatorError> {
    if gold.is_empty() {
        return Err(AnnotatorError::Metric(MetricError::EmptyInput("gold")));
    }
    let n = gold.len() as f64;
    let mut density: BTreeMap<&str, f64> = BTreeMap::new();
    for set in gold {
        for label in &set.labels {
            *density.entry(label.as_str()).or_insert(0.0) += 1.0 / n;
        }
    }
    debug_assert!(density.len() <= taxonomy_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials.max(1) {
        let predictions: Vec<LabelSet> = gold
            .iter()
            .map(|_| {
                LabelSet::new(
                    density
                        .iter()
                        .filter(|(_, p)| rng.gen::<f64>() < **p)
                        .map(|(label, _)| *label),
                )
            })
            .collect();
        total += metrics::micro_f1(&predictions, gold)?;
    }
    Ok(total / trials.max(1) as f64)
}
