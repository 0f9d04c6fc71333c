//! LLM-as-judge response scoring on four aspects, dialog-level
//! aggregation, and validation against external success labels.
//!
//! The judge sees the conversation history, the latest user input, and the
//! candidate response. It never sees the human reference for the turn being
//! scored, so there is no reference leakage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{stats::welch_t_test, AnalysisError};
use crate::corpus::{Speaker, Turn};
use crate::gateway::{
    ChatRequest, Gateway, GatewayError, Message, ResponseFormat, RetryPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Coherence,
    Specificity,
    Satisfaction,
    Effectiveness,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [
        Aspect::Coherence,
        Aspect::Specificity,
        Aspect::Satisfaction,
        Aspect::Effectiveness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Aspect::Coherence => "coherence",
            Aspect::Specificity => "specificity",
            Aspect::Satisfaction => "satisfaction",
            Aspect::Effectiveness => "effectiveness",
        }
    }
}

/// One turn's judge verdict: an integer 1 to 5 per aspect with reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseScore {
    pub coherence: u8,
    pub specificity: u8,
    pub satisfaction: u8,
    pub effectiveness: u8,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reasoning: BTreeMap<String, String>,
}

impl ResponseScore {
    pub fn get(&self, aspect: Aspect) -> u8 {
        match aspect {
            Aspect::Coherence => self.coherence,
            Aspect::Specificity => self.specificity,
            Aspect::Satisfaction => self.satisfaction,
            Aspect::Effectiveness => self.effectiveness,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error("judge output could not be parsed after a re-ask: {detail}; raw: {raw}")]
    Unparseable { detail: String, raw: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("statistics error: {0}")]
    Stats(#[from] AnalysisError),
    #[error("no scores to aggregate")]
    Empty,
    #[error("response must be non-empty")]
    EmptyResponse,
}

#[derive(Debug, Deserialize)]
struct AspectVerdict {
    score: i64,
    #[serde(default)]
    reasoning: String,
}

fn parse_score_output(raw: &str) -> Result<ResponseScore, JudgeError> {
    let verdicts: BTreeMap<String, AspectVerdict> = serde_json::from_str(raw.trim())
        .map_err(|e| JudgeError::Parse(format!("not a valid score object: {e}")))?;
    for key in verdicts.keys() {
        if !Aspect::ALL.iter().any(|a| a.as_str() == key) {
            return Err(JudgeError::Parse(format!("unknown aspect key `{key}`")));
        }
    }
    let mut scores = BTreeMap::new();
    let mut reasoning = BTreeMap::new();
    for aspect in Aspect::ALL {
        let verdict = verdicts
            .get(aspect.as_str())
            .ok_or_else(|| JudgeError::Parse(format!("missing aspect `{}`", aspect.as_str())))?;
        if !(1..=5).contains(&verdict.score) {
            return Err(JudgeError::Parse(format!(
                "score {} for `{}` outside 1..=5",
                verdict.score,
                aspect.as_str()
            )));
        }
        scores.insert(aspect, verdict.score as u8);
        if !verdict.reasoning.is_empty() {
            reasoning.insert(aspect.as_str().to_string(), verdict.reasoning.clone());
        }
    }
    Ok(ResponseScore {
        coherence: scores[&Aspect::Coherence],
        specificity: scores[&Aspect::Specificity],
        satisfaction: scores[&Aspect::Satisfaction],
        effectiveness: scores[&Aspect::Effectiveness],
        reasoning,
    })
}

pub fn rubric_prompt() -> &'static str {
    include_str!("../assets/judge_rubric.txt")
}

fn conversation_message(context: &[Turn], user_input: &str, response: &str) -> String {
    let mut lines = vec!["***Conversation History***".to_string()];
    if context.is_empty() {
        lines.push("(start of conversation)".to_string());
    }
    for turn in context {
        let who = match turn.speaker {
            Speaker::HumanExpert => "agent",
            Speaker::User => "user",
        };
        lines.push(format!("{who}: {}", turn.text));
    }
    lines.push(String::new());
    lines.push("***Latest User Input***".to_string());
    lines.push(user_input.to_string());
    lines.push(String::new());
    lines.push("***Agent Response To Evaluate***".to_string());
    lines.push(response.to_string());
    lines.join("\n")
}

pub struct Judge<'g> {
    pub gateway: &'g Gateway,
    pub model_id: String,
    pub policy: RetryPolicy,
}

impl<'g> Judge<'g> {
    pub fn new(gateway: &'g Gateway, model_id: impl Into<String>) -> Self {
        Judge {
            gateway,
            model_id: model_id.into(),
            policy: RetryPolicy::default(),
        }
    }

    /// Score one candidate response. One re-ask on parse failure, then a
    /// hard error carrying the raw text.
    pub fn score_response(
        &self,
        context: &[Turn],
        user_input: &str,
        response: &str,
    ) -> Result<ResponseScore, JudgeError> {
        if response.trim().is_empty() {
            return Err(JudgeError::EmptyResponse);
        }
        let mut request = ChatRequest {
            model_id: self.model_id.clone(),
            system_prompt: rubric_prompt().to_string(),
            messages: vec![Message::user(conversation_message(
                context, user_input, response,
            ))],
            tool_schemas: vec![],
            temperature: 0.0,
            response_format: ResponseFormat::Structured,
        };
        let reply = self.gateway.complete_chat(&request, &self.policy)?;
        let raw = reply.content.unwrap_or_default();
        match parse_score_output(&raw) {
            Ok(score) => Ok(score),
            Err(first_err) => {
                request.messages.push(Message::assistant(raw));
                request.messages.push(Message::user(format!(
                    "That output could not be parsed ({first_err}). Respond again with \
                     the JSON object only, following the output format exactly."
                )));
                let retry = self.gateway.complete_chat(&request, &self.policy)?;
                let raw = retry.content.unwrap_or_default();
                parse_score_output(&raw).map_err(|e| JudgeError::Unparseable {
                    detail: e.to_string(),
                    raw,
                })
            }
        }
    }
}

/// Per-aspect arithmetic mean over a dialog's turn scores.
pub fn aggregate_dialog_scores(
    scores: &[ResponseScore],
) -> Result<BTreeMap<Aspect, f64>, JudgeError> {
    if scores.is_empty() {
        return Err(JudgeError::Empty);
    }
    Ok(Aspect::ALL
        .into_iter()
        .map(|aspect| {
            let mean = scores.iter().map(|s| s.get(aspect) as f64).sum::<f64>()
                / scores.len() as f64;
            (aspect, mean)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeValidation {
    /// Relative difference of the success-group mean over the failure-group
    /// mean, in percent.
    pub delta_pct: f64,
    pub p_value: f64,
}

/// Compare dialog-level judge scores between externally labeled successful
/// and failed dialogs: Welch's t-test per aspect.
pub fn validate_judge(
    dialog_scores: &BTreeMap<String, BTreeMap<Aspect, f64>>,
    success_labels: &BTreeMap<String, u8>,
) -> Result<BTreeMap<Aspect, JudgeValidation>, JudgeError> {
    let mut out = BTreeMap::new();
    for aspect in Aspect::ALL {
        let mut success = Vec::new();
        let mut failure = Vec::new();
        for (dialog, scores) in dialog_scores {
            let Some(label) = success_labels.get(dialog) else {
                continue;
            };
            let Some(value) = scores.get(&aspect) else {
                continue;
            };
            if *label == 1 {
                success.push(*value);
            } else {
                failure.push(*value);
            }
        }
        let test = welch_t_test(&success, &failure)?;
        let failure_mean = failure.iter().sum::<f64>() / failure.len() as f64;
        let success_mean = success.iter().sum::<f64>() / success.len() as f64;
        out.insert(
            aspect,
            JudgeValidation {
                delta_pct: 100.0 * (success_mean / failure_mean - 1.0),
                p_value: test.p,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatResponse, ScriptedExchange, ScriptedProvider};
    use serde_json::json;

    fn score_payload(c: i64, sp: i64, sa: i64, e: i64) -> String {
        json!({
            "coherence": {"score": c, "reasoning": "r"},
            "specificity": {"score": sp, "reasoning": "r"},
            "satisfaction": {"score": sa, "reasoning": "r"},
            "effectiveness": {"score": e, "reasoning": "r"},
        })
        .to_string()
    }

    #[test]
    fn scripted_scores_parse() {
        let provider = ScriptedProvider::new(vec![ScriptedExchange::any(ChatResponse::text(
            score_payload(3, 4, 4, 3),
        ))]);
        let gateway = Gateway::new(Box::new(provider), None);
        let judge = Judge::new(&gateway, "judge-model");
        let score = judge.score_response(&[], "hello", "hi, how can i help?").unwrap();
        assert_eq!(
            (score.coherence, score.specificity, score.satisfaction, score.effectiveness),
            (3, 4, 4, 3)
        );
    }

    #[test]
    fn out_of_range_score_rejected() {
        assert!(parse_score_output(&score_payload(6, 4, 4, 3)).is_err());
        assert!(parse_score_output(&score_payload(0, 4, 4, 3)).is_err());
    }

    #[test]
    fn missing_aspect_rejected() {
        let raw = json!({
            "coherence": {"score": 3},
            "specificity": {"score": 3},
            "effectiveness": {"score": 3},
        })
        .to_string();
        let err = parse_score_output(&raw).unwrap_err();
        assert!(err.to_string().contains("satisfaction"));
    }

    #[test]
    fn extra_aspect_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&score_payload(3, 3, 3, 3)).unwrap();
        value["fluency"] = json!({"score": 5});
        assert!(parse_score_output(&value.to_string()).is_err());
    }

    #[test]
    fn reask_recovers_then_errors() {
        let provider = ScriptedProvider::new(vec![
            ScriptedExchange::any(ChatResponse::text("not json")).once(),
            ScriptedExchange::any(ChatResponse::text(score_payload(5, 5, 5, 5))).once(),
        ]);
        let gateway = Gateway::new(Box::new(provider), None);
        let judge = Judge::new(&gateway, "m");
        let score = judge.score_response(&[], "q", "a").unwrap();
        assert_eq!(score.coherence, 5);

        let provider = ScriptedProvider::new(vec![ScriptedExchange::any(ChatResponse::text(
            "never json",
        ))]);
        let gateway = Gateway::new(Box::new(provider), None);
        let judge = Judge::new(&gateway, "m");
        assert!(matches!(
            judge.score_response(&[], "q", "a"),
            Err(JudgeError::Unparseable { .. })
        ));
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
    fn aggregation_cases() {
        let means = aggregate_dialog_scores(&[score(1), score(5)]).unwrap();
        assert_eq!(means[&Aspect::Coherence], 3.0);
        let single = aggregate_dialog_scores(&[score(4)]).unwrap();
        assert_eq!(single[&Aspect::Satisfaction], 4.0);
        assert!(aggregate_dialog_scores(&[]).is_err());

        // permutation invariance
        let fwd = aggregate_dialog_scores(&[score(1), score(3), score(5)]).unwrap();
        let rev = aggregate_dialog_scores(&[score(5), score(3), score(1)]).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn judge_validation_separates_groups() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut dialog_scores = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..100 {
            let success = i < 50;
            let base = if success { 4.0 } else { 3.0 };
            let noisy = base + rng.gen_range(-0.05..0.05);
            let id = format!("d{i:03}");
            dialog_scores.insert(
                id.clone(),
                Aspect::ALL.into_iter().map(|a| (a, noisy)).collect(),
            );
            labels.insert(id, u8::from(success));
        }
        let validation = validate_judge(&dialog_scores, &labels).unwrap();
        for aspect in Aspect::ALL {
            assert!(validation[&aspect].p_value < 0.001);
            assert!(validation[&aspect].delta_pct > 20.0);
        }
    }

    #[test]
    fn judge_validation_null_case() {
        let mut dialog_scores = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..20 {
            let id = format!("d{i:02}");
            let v = 3.0 + f64::from(i % 3) * 0.1;
            dialog_scores.insert(
                id.clone(),
                Aspect::ALL.into_iter().map(|a| (a, v)).collect(),
            );
            labels.insert(id, i % 2);
        }
        let validation = validate_judge(&dialog_scores, &labels).unwrap();
        // identically distributed groups: tiny delta, comfortable p
        assert!(validation[&Aspect::Coherence].p_value > 0.2);
        assert!(validation[&Aspect::Coherence].delta_pct.abs() < 5.0);
    }
}
