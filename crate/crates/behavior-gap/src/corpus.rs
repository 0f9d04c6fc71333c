//! Dialog data model, corpus ingestion, statistics, and teacher-forcing
//! context slices.
//!
//! The on-disk transcript format is newline-delimited JSON, one dialog per
//! line. Speakers are written as `"agent"` (the human expert) and `"user"`.
//! An adapter converts MultiWOZ-2.2-style exports into the same model.
//!
//! ```
//! use behavior_gap::corpus::{slice_contexts, Dialog, Speaker, Task, Turn};
//!
//! let turn = |index, speaker, text: &str| Turn {
//!     index,
//!     speaker,
//!     text: text.to_string(),
//!     gold_acts: None,
//!     gold_tools: None,
//! };
//! let dialog = Dialog {
//!     id: "d1".into(),
//!     task: Task::Multiwoz,
//!     turns: vec![
//!         turn(0, Speaker::User, "i need a hotel"),
//!         turn(1, Speaker::HumanExpert, "the gonville is nice"),
//!     ],
//!     success_label: None,
//! };
//! // one teacher-forcing slice per human-expert turn
//! let slices = slice_contexts(&dialog);
//! assert_eq!(slices.len(), 1);
//! assert_eq!(slices[0].context, dialog.turns[..1]);
//! assert_eq!(slices[0].reference_response, "the gonville is nice");
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::label::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    #[serde(rename = "agent")]
    HumanExpert,
    #[serde(rename = "user")]
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multiwoz,
    Spokenwoz,
    Pcs,
    Custom,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Multiwoz => "multiwoz",
            Task::Spokenwoz => "spokenwoz",
            Task::Pcs => "pcs",
            Task::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiwoz" => Ok(Task::Multiwoz),
            "spokenwoz" => Ok(Task::Spokenwoz),
            "pcs" => Ok(Task::Pcs),
            "custom" => Ok(Task::Custom),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// One speaker-attributed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_acts: Option<LabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_tools: Option<LabelSet>,
}

/// An ordered dialog. Adjacent same-speaker turns are preserved as-is;
/// transcribed phone conversations contain them routinely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub task: Task,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_label: Option<u8>,
}

impl Dialog {
    /// Check the structural invariants: contiguous 0-based indexes and
    /// non-empty utterances.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (expected, turn) in self.turns.iter().enumerate() {
            if turn.index != expected {
                return Err(CorpusError::Invalid {
                    dialog: self.id.clone(),
                    reason: format!(
                        "turn index gap: expected {expected}, found {}",
                        turn.index
                    ),
                });
            }
            if turn.text.trim().is_empty() {
                return Err(CorpusError::Invalid {
                    dialog: self.id.clone(),
                    reason: format!("turn {} has empty text", turn.index),
                });
            }
        }
        if let Some(s) = self.success_label {
            if s > 1 {
                return Err(CorpusError::Invalid {
                    dialog: self.id.clone(),
                    reason: format!("success_label must be 0 or 1, found {s}"),
                });
            }
        }
        Ok(())
    }

    pub fn expert_turn_count(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::HumanExpert)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub chat_count: usize,
    pub mean_turns_per_chat: f64,
    pub mean_words_per_turn: f64,
}

/// The teacher-forcing unit: the complete dialog prefix before one
/// human-expert turn, plus that turn's text as the reference response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSlice {
    pub dialog_id: String,
    pub target_index: usize,
    pub context: Vec<Turn>,
    pub reference_response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record: {reason}")]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate dialog id `{id}` ({file}:{line})")]
    DuplicateId {
        id: String,
        file: PathBuf,
        line: usize,
    },
    #[error("dialog `{dialog}`: {reason}")]
    Invalid { dialog: String, reason: String },
    #[error("corpus is empty")]
    Empty,
}

// Wire form of a turn; `index` is implied by position.
#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acts: Option<LabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tools: Option<LabelSet>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<Task>,
    turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success: Option<u8>,
}

/// Load a transcript file (or a directory of `*.jsonl` files) into dialogs.
pub fn load_corpus(path: &Path, task: Task) -> Result<Vec<Dialog>, CorpusError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut dialogs = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for file in files {
        let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
            path: file.clone(),
            source,
        })?;
        for (lineno, line) in text.lines().enumerate() {
            let line_1 = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: DialogRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                    file: file.clone(),
                    line: line_1,
                    reason: e.to_string(),
                })?;
            if !seen_ids.insert(record.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: record.id,
                    file: file.clone(),
                    line: line_1,
                });
            }
            let dialog = Dialog {
                id: record.id,
                task: record.task.unwrap_or(task),
                turns: record
                    .turns
                    .into_iter()
                    .enumerate()
                    .map(|(index, t)| Turn {
                        index,
                        speaker: t.speaker,
                        text: t.text,
                        gold_acts: t.acts,
                        gold_tools: t.tools,
                    })
                    .collect(),
                success_label: record.success,
            };
            dialog.validate()?;
            dialogs.push(dialog);
        }
    }
    Ok(dialogs)
}

/// Write dialogs back to the newline-delimited transcript format.
/// `load_corpus(write_corpus(d))` reproduces `d` exactly.
pub fn write_corpus(dialogs: &[Dialog], path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for d in dialogs {
        let record = DialogRecord {
            id: d.id.clone(),
            task: Some(d.task),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    acts: t.gold_acts.clone(),
                    tools: t.gold_tools.clone(),
                })
                .collect(),
            success: d.success_label,
        };
        serde_json::to_writer(&mut out, &record).expect("serializable record");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Count words by splitting on Unicode whitespace; no punctuation stripping.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn corpus_statistics(dialogs: &[Dialog]) -> Result<CorpusStats, CorpusError> {
    if dialogs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let chat_count = dialogs.len();
    let total_turns: usize = dialogs.iter().map(|d| d.turns.len()).sum();
    let total_words: usize = dialogs
        .iter()
        .flat_map(|d| &d.turns)
        .map(|t| word_count(&t.text))
        .sum();
    Ok(CorpusStats {
        chat_count,
        mean_turns_per_chat: total_turns as f64 / chat_count as f64,
        mean_words_per_turn: if total_turns == 0 {
            0.0
        } else {
            total_words as f64 / total_turns as f64
        },
    })
}

/// Produce one slice per human-expert turn, in turn order. An expert
/// opening turn yields a slice with empty context.
pub fn slice_contexts(dialog: &Dialog) -> Vec<ContextSlice> {
    dialog
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::HumanExpert)
        .map(|target| ContextSlice {
            dialog_id: dialog.id.clone(),
            target_index: target.index,
            context: dialog.turns[..target.index].to_vec(),
            reference_response: target.text.clone(),
        })
        .collect()
}

// --- MultiWOZ-2.2-style adapter ---------------------------------------------

#[derive(Debug, Deserialize)]
struct MwzTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    dialog_act: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct MwzDialog {
    dialogue_id: String,
    turns: Vec<MwzTurn>,
}

/// Read a MultiWOZ-2.2-style export (a JSON array of dialogues with
/// `dialogue_id` and `turns[{speaker, utterance, dialog_act}]`) into the
/// harness model. `SYSTEM` maps to the human expert. Act annotations such
/// as `"Hotel-Inform"` are lowercased to bare act names, with the standard
/// merges applied (welcome/bye/thanks into `greet`, offerbooked into
/// `book`).
pub fn load_multiwoz_export(path: &Path) -> Result<Vec<Dialog>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Vec<MwzDialog> = serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
        file: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut seen = BTreeSet::new();
    let mut dialogs = Vec::with_capacity(raw.len());
    for d in raw {
        if !seen.insert(d.dialogue_id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: d.dialogue_id,
                file: path.to_path_buf(),
                line: 0,
            });
        }
        let turns = d
            .turns
            .into_iter()
            .enumerate()
            .map(|(index, t)| {
                let speaker = match t.speaker.as_str() {
                    "SYSTEM" | "system" | "agent" => Speaker::HumanExpert,
                    _ => Speaker::User,
                };
                let gold_acts = t.dialog_act.as_ref().and_then(extract_woz_acts);
                Turn {
                    index,
                    speaker,
                    text: t.utterance,
                    gold_acts,
                    gold_tools: None,
                }
            })
            .collect();
        let dialog = Dialog {
            id: d.dialogue_id,
            task: Task::Multiwoz,
            turns,
            success_label: None,
        };
        dialog.validate()?;
        dialogs.push(dialog);
    }
    Ok(dialogs)
}

fn extract_woz_acts(value: &serde_json::Value) -> Option<LabelSet> {
    let obj = value.as_object()?;
    let mut labels = BTreeSet::new();
    for key in obj.keys() {
        // keys look like "Hotel-Inform" or "general-thank"
        let act = key.rsplit('-').next().unwrap_or(key).to_lowercase();
        let merged = match act.as_str() {
            "welcome" | "bye" | "thank" | "thanks" => "greet".to_string(),
            "offerbooked" => "book".to_string(),
            other => other.to_string(),
        };
        labels.insert(merged);
    }
    if labels.is_empty() {
        None
    } else {
        Some(LabelSet {
            labels,
            rationale: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(index: usize, speaker: Speaker, text: &str) -> Turn {
        Turn {
            index,
            speaker,
            text: text.to_string(),
            gold_acts: None,
            gold_tools: None,
        }
    }

    fn dialog(id: &str, turns: Vec<Turn>) -> Dialog {
        Dialog {
            id: id.to_string(),
            task: Task::Custom,
            turns,
            success_label: None,
        }
    }

    #[test]
    fn load_two_dialog_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"id":"d1","turns":[{"speaker":"agent","text":"hi"},{"speaker":"user","text":"hello"}]}"#,
                "\n",
                r#"{"id":"d2","turns":[{"speaker":"user","text":"hey"}]}"#,
                "\n"
            ),
        )
        .unwrap();
        let dialogs = load_corpus(&path, Task::Pcs).unwrap();
        assert_eq!(dialogs.len(), 2);
        assert_eq!(dialogs[0].turns.len(), 2);
        assert_eq!(dialogs[1].turns.len(), 1);
        assert_eq!(dialogs[0].task, Task::Pcs);
        assert_eq!(dialogs[0].turns[1].index, 1);
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"id":"d1","turns":[{"speaker":"user","text":"a"}]}"#,
                "\n",
                r#"{"id":"d1","turns":[{"speaker":"user","text":"b"}]}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = load_corpus(&path, Task::Custom).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
    }

    #[test]
    fn malformed_record_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"id":"d1","turns":[{"speaker":"user","text":"a"}]}"#,
                "\n",
                "{not json}\n"
            ),
        )
        .unwrap();
        let err = load_corpus(&path, Task::Custom).unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn turn_index_gap_rejected() {
        let mut d = dialog(
            "d1",
            vec![
                turn(0, Speaker::HumanExpert, "a"),
                turn(2, Speaker::User, "b"),
            ],
        );
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("expected 1"));
        d.turns[1].index = 1;
        d.validate().unwrap();
    }

    #[test]
    fn empty_text_rejected() {
        let d = dialog("d1", vec![turn(0, Speaker::User, "   ")]);
        assert!(d.validate().is_err());
    }

    #[test]
    fn statistics_hand_count() {
        let d = dialog(
            "d1",
            vec![turn(0, Speaker::User, "a b"), turn(1, Speaker::User, "c")],
        );
        let stats = corpus_statistics(&[d]).unwrap();
        assert_eq!(stats.chat_count, 1);
        assert_eq!(stats.mean_turns_per_chat, 2.0);
        assert_eq!(stats.mean_words_per_turn, 1.5);
    }

    #[test]
    fn statistics_singleton() {
        let d = dialog("d1", vec![turn(0, Speaker::User, "hi")]);
        let stats = corpus_statistics(&[d]).unwrap();
        assert_eq!(stats.mean_turns_per_chat, 1.0);
    }

    #[test]
    fn statistics_empty_list_errors() {
        assert!(matches!(corpus_statistics(&[]), Err(CorpusError::Empty)));
    }

    #[test]
    fn slices_expert_first() {
        // a0 u0 a1 u1 -> targets a0 (empty context) and a1
        let d = dialog(
            "d1",
            vec![
                turn(0, Speaker::HumanExpert, "a0"),
                turn(1, Speaker::User, "u0"),
                turn(2, Speaker::HumanExpert, "a1"),
                turn(3, Speaker::User, "u1"),
            ],
        );
        let slices = slice_contexts(&d);
        assert_eq!(slices.len(), 2);
        assert!(slices[0].context.is_empty());
        assert_eq!(slices[0].reference_response, "a0");
        assert_eq!(slices[1].target_index, 2);
        assert_eq!(slices[1].context.len(), 2);
    }

    #[test]
    fn slices_user_first() {
        let d = dialog(
            "d1",
            vec![
                turn(0, Speaker::User, "u0"),
                turn(1, Speaker::HumanExpert, "a0"),
                turn(2, Speaker::User, "u1"),
                turn(3, Speaker::HumanExpert, "a1"),
            ],
        );
        let slices = slice_contexts(&d);
        assert_eq!(slices.len(), 2);
        assert_eq!(slices[0].context.len(), 1);
        assert_eq!(slices[1].context.len(), 3);
        assert_eq!(slices[1].context[1].text, "a0");
    }

    #[test]
    fn no_expert_turns_yields_no_slices() {
        let d = dialog("d1", vec![turn(0, Speaker::User, "u0")]);
        assert!(slice_contexts(&d).is_empty());
    }

    #[test]
    fn prefix_property() {
        let d = dialog(
            "d1",
            vec![
                turn(0, Speaker::User, "u0"),
                turn(1, Speaker::HumanExpert, "a0"),
                turn(2, Speaker::HumanExpert, "a1"),
                turn(3, Speaker::User, "u1"),
            ],
        );
        for slice in slice_contexts(&d) {
            let mut rebuilt: Vec<&str> =
                slice.context.iter().map(|t| t.text.as_str()).collect();
            rebuilt.push(&slice.reference_response);
            let original: Vec<&str> = d.turns[..=slice.target_index]
                .iter()
                .map(|t| t.text.as_str())
                .collect();
            assert_eq!(rebuilt, original);
        }
    }

    #[test]
    fn round_trip() {
        let mut d = dialog(
            "d1",
            vec![
                turn(0, Speaker::HumanExpert, "hello there"),
                turn(1, Speaker::User, "hi"),
            ],
        );
        d.turns[0].gold_acts = Some(LabelSet::new(["greet"]));
        d.success_label = Some(1);
        let dialogs = vec![d];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        write_corpus(&dialogs, &path).unwrap();
        let loaded = load_corpus(&path, Task::Custom).unwrap();
        assert_eq!(loaded, dialogs);
    }

    #[test]
    fn multiwoz_adapter_maps_speakers_and_acts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mwz.json");
        fs::write(
            &path,
            serde_json::json!([{
                "dialogue_id": "PMUL0001.json",
                "turns": [
                    {"speaker": "USER", "utterance": "i need a hotel"},
                    {"speaker": "SYSTEM", "utterance": "sure, which area?",
                     "dialog_act": {"Hotel-Request": [["area", "?"]],
                                    "general-welcome": [["none", "none"]]}}
                ]
            }])
            .to_string(),
        )
        .unwrap();
        let dialogs = load_multiwoz_export(&path).unwrap();
        assert_eq!(dialogs.len(), 1);
        assert_eq!(dialogs[0].task, Task::Multiwoz);
        assert_eq!(dialogs[0].turns[1].speaker, Speaker::HumanExpert);
        let acts = dialogs[0].turns[1].gold_acts.as_ref().unwrap();
        assert!(acts.contains("request"));
        assert!(acts.contains("greet")); // welcome merged into greet
    }
}
