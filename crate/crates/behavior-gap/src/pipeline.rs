//! Stage orchestration: ingest, generate, annotate, judge, inject, analyze,
//! and classifier validation, with resumable stage manifests.
//!
//! Every artifact except the corpus itself starts with a one-line JSON
//! header carrying the config hash; artifacts from different hashes never
//! mix. Manifests and artifacts are written atomically (temp file plus
//! rename) and contain no timestamps, so a rerun with the same config and
//! a scripted provider is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentConfig, AgentError, GenerationRecord, InjectionDirective};
use crate::analysis::{
    self, build_report, AlignmentObservation, AnalysisError, DialogLabels, Dimension,
    KnowledgeItem, ReportInputs, ReportMetadata,
};
use crate::annotators::{
    random_baseline, validate_classifier, AnnotationRecord, Annotator, AnnotatorError, Source,
    Taxonomy, TaxonomyName, ValidationReport,
};
use crate::config::{ConfigError, ProviderKind, RunConfig};
use crate::corpus::{self, CorpusError, Dialog, Speaker, Task};
use crate::gateway::{
    DiskCache, Gateway, GatewayError, HttpProvider, Provider, RetryPolicy, ScriptedProvider,
};
use crate::judge::{Judge, JudgeError, ResponseScore};
use crate::label::LabelSet;
use crate::metrics::{self, MetricError};
use crate::toolbox::{KnowledgeBase, Toolbox, ToolboxError, WozDatabase};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const ISO_ANNOTATIONS_FILE: &str = "iso_annotations.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const INJECTION_FILE: &str = "injection.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const DISCREPANCY_CSV_FILE: &str = "discrepancy.csv";
pub const KNOWLEDGE_CSV_FILE: &str = "knowledge.csv";
pub const INJECTION_CSV_FILE: &str = "injection.csv";
pub const VALIDATION_FILE: &str = "classifier_validation.json";

/// The system-prompt suffix format used for behavior injection, recorded in
/// the report metadata.
pub const INJECTION_WORDING: &str = "For this turn, respond using dialog acts: <acts>. / \
     For this turn, use exactly these tools: <tools>.";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite artifact `{artifact}`; run `bgap {command}` first")]
    Prerequisite {
        artifact: String,
        command: &'static str,
    },
    #[error(
        "{path} carries config hash {found}, expected {expected}; \
         rerun the upstream stages or pass --force"
    )]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("validation failure: {0}")]
    Validation(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 0 success, 2 configuration, 3 prerequisite,
    /// 4 provider/transport, 5 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::HashMismatch { .. }
            | PipelineError::Io { .. } => 2,
            PipelineError::Prerequisite { .. } => 3,
            PipelineError::Transport(_) => 4,
            PipelineError::Validation(_) => 5,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        PipelineError::Transport(e.to_string())
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => PipelineError::Io { path, source },
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<AgentError> for PipelineError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Gateway { .. } => PipelineError::Transport(e.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<AnnotatorError> for PipelineError {
    fn from(e: AnnotatorError) -> Self {
        match e {
            AnnotatorError::Gateway(g) => PipelineError::Transport(g.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<JudgeError> for PipelineError {
    fn from(e: JudgeError) -> Self {
        match e {
            JudgeError::Gateway(g) => PipelineError::Transport(g.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<ToolboxError> for PipelineError {
    fn from(e: ToolboxError) -> Self {
        match e {
            ToolboxError::Io { path, source } => PipelineError::Io { path, source },
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<AnalysisError> for PipelineError {
    fn from(e: AnalysisError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// What one completed stage read and wrote. File names are relative to the
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactHeader {
    config_hash: String,
}

/// One judged agent response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub dialog_id: String,
    pub target_index: usize,
    pub score: ResponseScore,
}

/// One injection pair: the baseline judgment alongside the judgment of the
/// response generated under the behavior directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub dialog_id: String,
    pub target_index: usize,
    pub directive: InjectionDirective,
    pub injected_response: String,
    pub baseline: ResponseScore,
    pub injected: ResponseScore,
}

/// ISO act annotation for one human-expert turn, consumed by the
/// complexity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoAnnotation {
    pub dialog_id: String,
    pub turn_index: usize,
    pub acts: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionValidation {
    pub turns: usize,
    pub report: ValidationReport,
    pub random_baseline: f64,
}

/// Output of `validate-classifiers`: classifier agreement with whatever
/// gold annotations the corpus carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierValidation {
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acts: Option<DimensionValidation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<DimensionValidation>,
}

/// The act taxonomy annotating a task's responses. WOZ-style corpora use
/// the 10-label WOZ scheme; everything else uses the 11-label ISO scheme.
pub fn taxonomy_for(task: Task) -> Taxonomy {
    match task {
        Task::Multiwoz | Task::Spokenwoz => Taxonomy::woz(),
        Task::Pcs | Task::Custom => Taxonomy::iso(),
    }
}

/// Construct the provider and cache described by the config. Endpoint and
/// key for the HTTP provider come from the environment, never the config.
pub fn build_gateway(config: &RunConfig) -> Result<Gateway, PipelineError> {
    let provider: Box<dyn Provider> = match config.provider.kind {
        ProviderKind::Scripted => {
            let path = config
                .provider
                .script
                .as_ref()
                .ok_or_else(|| PipelineError::Config("scripted provider without script".into()))?;
            let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            Box::new(ScriptedProvider::from_json(&text).map_err(|e| {
                PipelineError::Config(format!("invalid script {}: {e}", path.display()))
            })?)
        }
        ProviderKind::Http => {
            Box::new(HttpProvider::from_env().map_err(|e| PipelineError::Config(e.to_string()))?)
        }
    };
    fs::create_dir_all(&config.cache_dir).map_err(|source| PipelineError::Io {
        path: config.cache_dir.clone(),
        source,
    })?;
    Ok(Gateway::new(provider, Some(DiskCache::new(config.cache_dir.clone())))
        .with_max_parallel(config.max_parallel))
}

pub fn build_toolbox(config: &RunConfig) -> Result<Toolbox, PipelineError> {
    let db = match &config.paths.db {
        Some(dir) => WozDatabase::load(dir)?,
        None => WozDatabase::default(),
    };
    let kb = match &config.paths.kb {
        Some(dir) => KnowledgeBase::load(dir)?,
        None => KnowledgeBase::default(),
    };
    Ok(Toolbox::new(config.task, db, kb))
}

/// The most recent user utterance before the target turn, or the opening
/// marker when the expert speaks first.
fn latest_user_input(context: &[corpus::Turn]) -> String {
    context
        .iter()
        .rev()
        .find(|t| t.speaker == Speaker::User)
        .map(|t| t.text.clone())
        .unwrap_or_else(|| "[start of conversation]".to_string())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub struct Pipeline {
    pub config: RunConfig,
    pub hash: String,
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: RunConfig, force: bool) -> Self {
        let hash = config.config_hash();
        Pipeline {
            config,
            hash,
            force,
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.config.out_dir.join("manifests").join(format!("{stage}.json"))
    }

    fn write_manifest(
        &self,
        stage: &str,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<(), PipelineError> {
        let manifest = StageManifest {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            inputs,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        atomic_write(&self.manifest_path(stage), text.as_bytes())
    }

    /// A stage is complete when its manifest matches the current config
    /// hash and every listed output still exists. A manifest with a foreign
    /// hash is a hard error unless --force.
    fn stage_complete(&self, stage: &str) -> Result<bool, PipelineError> {
        let path = self.manifest_path(stage);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
            Err(source) => return Err(PipelineError::Io { path, source }),
        };
        let manifest: StageManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Validation(format!("corrupt manifest {stage}: {e}")))?;
        if manifest.config_hash != self.hash {
            if self.force {
                return Ok(false);
            }
            return Err(PipelineError::HashMismatch {
                path,
                found: manifest.config_hash,
                expected: self.hash.clone(),
            });
        }
        Ok(manifest.outputs.iter().all(|o| self.out(o).exists()))
    }

    fn require(&self, stage: &str, command: &'static str) -> Result<(), PipelineError> {
        if self.stage_complete(stage)? {
            Ok(())
        } else {
            Err(PipelineError::Prerequisite {
                artifact: format!("{stage} outputs in {}", self.config.out_dir.display()),
                command,
            })
        }
    }

    fn write_records<T: Serialize>(&self, name: &str, records: &[T]) -> Result<(), PipelineError> {
        let header = ArtifactHeader {
            config_hash: self.hash.clone(),
        };
        let mut text = serde_json::to_string(&header).expect("serializable header");
        text.push('\n');
        for record in records {
            text.push_str(&serde_json::to_string(record).expect("serializable record"));
            text.push('\n');
        }
        atomic_write(&self.out(name), text.as_bytes())
    }

    fn read_records<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, PipelineError> {
        let path = self.out(name);
        let text = fs::read_to_string(&path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| PipelineError::Validation(format!("{name} is empty")))?;
        let header: ArtifactHeader = serde_json::from_str(header_line)
            .map_err(|e| PipelineError::Validation(format!("{name} has no header: {e}")))?;
        if header.config_hash != self.hash && !self.force {
            return Err(PipelineError::HashMismatch {
                path,
                found: header.config_hash,
                expected: self.hash.clone(),
            });
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                serde_json::from_str(line)
                    .map_err(|e| PipelineError::Validation(format!("corrupt record in {name}: {e}")))
            })
            .collect()
    }

    fn load_dialogs(&self) -> Result<Vec<Dialog>, PipelineError> {
        Ok(corpus::load_corpus(&self.out(CORPUS_FILE), self.config.task)?)
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_parallel: self.config.max_parallel,
            ..RetryPolicy::default()
        }
    }

    fn agent_config(&self, toolbox: &Toolbox) -> AgentConfig {
        let taxonomy = taxonomy_for(self.config.task);
        let mut ac = AgentConfig::new(self.config.task, self.config.provider.model_id.clone());
        ac.max_react_steps = self.config.agent.max_react_steps;
        ac.guidelines = self.config.agent.guidelines.clone();
        ac.temperature = self.config.agent.temperature;
        ac.entity_digest = toolbox.db.entity_digest();
        ac.act_labels = taxonomy.labels;
        ac
    }

    /// Normalize the corpus into the canonical transcript artifact.
    pub fn ingest(&self, from_multiwoz: Option<&Path>) -> Result<StageOutcome, PipelineError> {
        if self.stage_complete("ingest")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = match from_multiwoz {
            Some(path) => corpus::load_multiwoz_export(path)?,
            None => corpus::load_corpus(&self.config.corpus, self.config.task)?,
        };
        if dialogs.is_empty() {
            return Err(PipelineError::Validation("corpus has no dialogs".into()));
        }
        fs::create_dir_all(&self.config.out_dir).map_err(|source| PipelineError::Io {
            path: self.config.out_dir.clone(),
            source,
        })?;
        corpus::write_corpus(&dialogs, &self.out(CORPUS_FILE))?;
        let input = from_multiwoz
            .unwrap_or(&self.config.corpus)
            .display()
            .to_string();
        self.write_manifest("ingest", vec![input], vec![CORPUS_FILE.to_string()])?;
        Ok(StageOutcome::Ran)
    }

    /// Teacher-forced generation: one agent response per human-expert turn.
    pub fn generate(&self) -> Result<StageOutcome, PipelineError> {
        self.require("ingest", "ingest")?;
        if self.stage_complete("generate")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let gateway = build_gateway(&self.config)?;
        let toolbox = build_toolbox(&self.config)?;
        let ac = self.agent_config(&toolbox);
        let policy = self.retry_policy();
        let mut records = Vec::new();
        for dialog in &dialogs {
            for slice in corpus::slice_contexts(dialog) {
                records.push(agent::run_react_turn(
                    &slice, &ac, None, &gateway, &toolbox, &policy,
                )?);
            }
        }
        self.write_records(GENERATIONS_FILE, &records)?;
        self.write_manifest(
            "generate",
            vec![CORPUS_FILE.to_string()],
            vec![GENERATIONS_FILE.to_string()],
        )?;
        Ok(StageOutcome::Ran)
    }

    /// Label every human reference and agent response with dialog acts and
    /// tools. Gold annotations on human turns are used verbatim; everything
    /// else goes through the classifiers. A second ISO pass over the human
    /// turns feeds the complexity score.
    pub fn annotate(&self) -> Result<StageOutcome, PipelineError> {
        self.require("generate", "generate")?;
        if self.stage_complete("annotate")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let generations: Vec<GenerationRecord> = self.read_records(GENERATIONS_FILE)?;
        let by_slice: BTreeMap<(String, usize), &GenerationRecord> = generations
            .iter()
            .map(|g| ((g.dialog_id.clone(), g.target_index), g))
            .collect();

        let gateway = build_gateway(&self.config)?;
        let mut annotator = Annotator::new(&gateway, self.config.provider.model_id.clone());
        annotator.policy = self.retry_policy();
        let taxonomy = taxonomy_for(self.config.task);
        let iso = Taxonomy::iso();
        let registry = crate::toolbox::registry_for(self.config.task);

        let mut records = Vec::new();
        let mut iso_records = Vec::new();
        for dialog in &dialogs {
            for slice in corpus::slice_contexts(dialog) {
                let user_input = latest_user_input(&slice.context);
                let human_turn = &dialog.turns[slice.target_index];
                let human_acts = match &human_turn.gold_acts {
                    Some(set) => set.clone(),
                    None => annotator.classify_acts(
                        &user_input,
                        &slice.reference_response,
                        &taxonomy,
                    )?,
                };
                let human_tools = match &human_turn.gold_tools {
                    Some(set) => set.clone(),
                    None => annotator.classify_tools(
                        &user_input,
                        &slice.reference_response,
                        &registry,
                    )?,
                };
                records.push(AnnotationRecord {
                    dialog_id: dialog.id.clone(),
                    turn_index: slice.target_index,
                    source: Source::HumanExpert,
                    acts: human_acts.clone(),
                    tools: human_tools,
                });

                let generation =
                    by_slice
                        .get(&(dialog.id.clone(), slice.target_index))
                        .ok_or_else(|| {
                            PipelineError::Validation(format!(
                                "no generation for {} turn {}",
                                dialog.id, slice.target_index
                            ))
                        })?;
                records.push(AnnotationRecord {
                    dialog_id: dialog.id.clone(),
                    turn_index: slice.target_index,
                    source: Source::Agent,
                    acts: annotator.classify_acts(
                        &user_input,
                        &generation.response_text,
                        &taxonomy,
                    )?,
                    tools: annotator.classify_tools(
                        &user_input,
                        &generation.response_text,
                        &registry,
                    )?,
                });

                let iso_acts = if taxonomy.name == TaxonomyName::Iso {
                    human_acts
                } else {
                    annotator.classify_acts(&user_input, &slice.reference_response, &iso)?
                };
                iso_records.push(IsoAnnotation {
                    dialog_id: dialog.id.clone(),
                    turn_index: slice.target_index,
                    acts: iso_acts,
                });
            }
        }
        self.write_records(ANNOTATIONS_FILE, &records)?;
        self.write_records(ISO_ANNOTATIONS_FILE, &iso_records)?;
        self.write_manifest(
            "annotate",
            vec![CORPUS_FILE.to_string(), GENERATIONS_FILE.to_string()],
            vec![
                ANNOTATIONS_FILE.to_string(),
                ISO_ANNOTATIONS_FILE.to_string(),
            ],
        )?;
        Ok(StageOutcome::Ran)
    }

    /// Judge every generated response against the rubric.
    pub fn judge(&self) -> Result<StageOutcome, PipelineError> {
        self.require("generate", "generate")?;
        if self.stage_complete("judge")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let generations: Vec<GenerationRecord> = self.read_records(GENERATIONS_FILE)?;
        let by_slice: BTreeMap<(String, usize), &GenerationRecord> = generations
            .iter()
            .map(|g| ((g.dialog_id.clone(), g.target_index), g))
            .collect();
        let gateway = build_gateway(&self.config)?;
        let mut judge = Judge::new(&gateway, self.config.provider.model_id.clone());
        judge.policy = self.retry_policy();
        let mut records = Vec::new();
        for dialog in &dialogs {
            for slice in corpus::slice_contexts(dialog) {
                let generation = by_slice
                    .get(&(dialog.id.clone(), slice.target_index))
                    .ok_or_else(|| {
                        PipelineError::Validation(format!(
                            "no generation for {} turn {}",
                            dialog.id, slice.target_index
                        ))
                    })?;
                let score = judge.score_response(
                    &slice.context,
                    &latest_user_input(&slice.context),
                    &generation.response_text,
                )?;
                records.push(JudgmentRecord {
                    dialog_id: dialog.id.clone(),
                    target_index: slice.target_index,
                    score,
                });
            }
        }
        self.write_records(JUDGMENTS_FILE, &records)?;
        self.write_manifest(
            "judge",
            vec![CORPUS_FILE.to_string(), GENERATIONS_FILE.to_string()],
            vec![JUDGMENTS_FILE.to_string()],
        )?;
        Ok(StageOutcome::Ran)
    }

    /// Behavior injection experiment: regenerate every turn with the human
    /// expert's annotated acts and tools spliced into the system prompt,
    /// judge the injected responses, and pair them with the baseline
    /// judgments.
    pub fn inject(&self) -> Result<StageOutcome, PipelineError> {
        self.require("annotate", "annotate")?;
        self.require("judge", "judge")?;
        if self.stage_complete("inject")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let annotations: Vec<AnnotationRecord> = self.read_records(ANNOTATIONS_FILE)?;
        let human: BTreeMap<(String, usize), &AnnotationRecord> = annotations
            .iter()
            .filter(|a| a.source == Source::HumanExpert)
            .map(|a| ((a.dialog_id.clone(), a.turn_index), a))
            .collect();
        let judgments: Vec<JudgmentRecord> = self.read_records(JUDGMENTS_FILE)?;
        let baseline: BTreeMap<(String, usize), &JudgmentRecord> = judgments
            .iter()
            .map(|j| ((j.dialog_id.clone(), j.target_index), j))
            .collect();

        let gateway = build_gateway(&self.config)?;
        let toolbox = build_toolbox(&self.config)?;
        let ac = self.agent_config(&toolbox);
        let policy = self.retry_policy();
        let mut judge = Judge::new(&gateway, self.config.provider.model_id.clone());
        judge.policy = self.retry_policy();

        let mut records = Vec::new();
        for dialog in &dialogs {
            for slice in corpus::slice_contexts(dialog) {
                let key = (dialog.id.clone(), slice.target_index);
                let annotation = human.get(&key).ok_or_else(|| {
                    PipelineError::Validation(format!(
                        "no human annotation for {} turn {}",
                        dialog.id, slice.target_index
                    ))
                })?;
                // Rationales are classifier commentary; the directive only
                // carries the bare label sets.
                let directive = InjectionDirective {
                    target_acts: Some(LabelSet::new(
                        annotation.acts.labels.iter().map(String::as_str),
                    )),
                    target_tools: Some(LabelSet::new(
                        annotation.tools.labels.iter().map(String::as_str),
                    )),
                };
                let injected_gen = agent::run_react_turn(
                    &slice,
                    &ac,
                    Some(&directive),
                    &gateway,
                    &toolbox,
                    &policy,
                )?;
                let injected_score = judge.score_response(
                    &slice.context,
                    &latest_user_input(&slice.context),
                    &injected_gen.response_text,
                )?;
                let baseline_score = baseline.get(&key).ok_or_else(|| {
                    PipelineError::Validation(format!(
                        "no baseline judgment for {} turn {}",
                        dialog.id, slice.target_index
                    ))
                })?;
                records.push(InjectionRecord {
                    dialog_id: dialog.id.clone(),
                    target_index: slice.target_index,
                    directive,
                    injected_response: injected_gen.response_text,
                    baseline: baseline_score.score.clone(),
                    injected: injected_score,
                });
            }
        }
        self.write_records(INJECTION_FILE, &records)?;
        self.write_manifest(
            "inject",
            vec![
                CORPUS_FILE.to_string(),
                ANNOTATIONS_FILE.to_string(),
                JUDGMENTS_FILE.to_string(),
            ],
            vec![INJECTION_FILE.to_string()],
        )?;
        Ok(StageOutcome::Ran)
    }

    /// Aggregate everything into the experiment report and the flat CSV
    /// tables. The injection section is included when that stage has run.
    pub fn analyze(&self) -> Result<StageOutcome, PipelineError> {
        self.require("annotate", "annotate")?;
        self.require("judge", "judge")?;
        if self.stage_complete("analyze")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let generations: Vec<GenerationRecord> = self.read_records(GENERATIONS_FILE)?;
        let annotations: Vec<AnnotationRecord> = self.read_records(ANNOTATIONS_FILE)?;
        let iso_annotations: Vec<IsoAnnotation> = self.read_records(ISO_ANNOTATIONS_FILE)?;
        let judgments: Vec<JudgmentRecord> = self.read_records(JUDGMENTS_FILE)?;

        let mut by_key: BTreeMap<(String, usize, Source), &AnnotationRecord> = BTreeMap::new();
        for a in &annotations {
            by_key.insert((a.dialog_id.clone(), a.turn_index, a.source), a);
        }
        let pick = |dialog: &str, index: usize, source: Source| {
            by_key
                .get(&(dialog.to_string(), index, source))
                .copied()
                .ok_or_else(|| {
                    PipelineError::Validation(format!(
                        "missing annotation for {dialog} turn {index}"
                    ))
                })
        };

        // Paired per-dialog label sequences, one per dimension.
        let mut acts_dialogs = Vec::new();
        let mut tools_dialogs = Vec::new();
        let mut observations = Vec::new();
        let scores: BTreeMap<(String, usize), &JudgmentRecord> = judgments
            .iter()
            .map(|j| ((j.dialog_id.clone(), j.target_index), j))
            .collect();
        for dialog in &dialogs {
            let mut acts = DialogLabels {
                dialog_id: dialog.id.clone(),
                agent: Vec::new(),
                human: Vec::new(),
            };
            let mut tools = DialogLabels {
                dialog_id: dialog.id.clone(),
                agent: Vec::new(),
                human: Vec::new(),
            };
            for slice in corpus::slice_contexts(dialog) {
                let agent = pick(&dialog.id, slice.target_index, Source::Agent)?;
                let hum = pick(&dialog.id, slice.target_index, Source::HumanExpert)?;
                acts.agent.push(agent.acts.clone());
                acts.human.push(hum.acts.clone());
                tools.agent.push(agent.tools.clone());
                tools.human.push(hum.tools.clone());
                if let Some(j) = scores.get(&(dialog.id.clone(), slice.target_index)) {
                    observations.push(AlignmentObservation {
                        agent: agent.acts.clone(),
                        human: hum.acts.clone(),
                        score: j.score.clone(),
                    });
                }
            }
            if !acts.human.is_empty() {
                acts_dialogs.push(acts);
                tools_dialogs.push(tools);
            }
        }

        let constants = self.config.constants;
        let mut gaps = BTreeMap::new();
        gaps.insert(
            "acts".to_string(),
            analysis::gap_summary(
                Dimension::Acts,
                &acts_dialogs,
                constants.bootstrap_resamples,
                self.config.seed,
            )?,
        );
        gaps.insert(
            "tools".to_string(),
            analysis::gap_summary(
                Dimension::Tools,
                &tools_dialogs,
                constants.bootstrap_resamples,
                self.config.seed,
            )?,
        );

        let reference: BTreeMap<(String, usize), String> = dialogs
            .iter()
            .flat_map(corpus::slice_contexts)
            .map(|s| ((s.dialog_id.clone(), s.target_index), s.reference_response))
            .collect();
        let knowledge_items: Vec<KnowledgeItem> = generations
            .iter()
            .filter(|g| !g.knowledge_text.trim().is_empty())
            .map(|g| KnowledgeItem {
                knowledge_text: g.knowledge_text.clone(),
                agent_response: g.response_text.clone(),
                human_response: reference
                    .get(&(g.dialog_id.clone(), g.target_index))
                    .cloned()
                    .unwrap_or_default(),
            })
            .collect();

        let iso_map: BTreeMap<(String, usize), LabelSet> = iso_annotations
            .into_iter()
            .map(|a| ((a.dialog_id, a.turn_index), a.acts))
            .collect();
        let complexity =
            metrics::task_complexity(&dialogs, &iso_map, constants.c, constants.d_max)?;

        let alignment = Some(analysis::split_by_alignment(
            &observations,
            constants.alignment_threshold,
        ));

        let injection = if self.stage_complete("inject")? {
            let records: Vec<InjectionRecord> = self.read_records(INJECTION_FILE)?;
            let pairs: Vec<(ResponseScore, ResponseScore)> = records
                .into_iter()
                .map(|r| (r.injected, r.baseline))
                .collect();
            Some(analysis::injection_result(&pairs)?)
        } else {
            None
        };

        let report = build_report(ReportInputs {
            metadata: ReportMetadata {
                config_hash: self.hash.clone(),
                seed: self.config.seed,
                provider_id: match self.config.provider.kind {
                    ProviderKind::Scripted => "scripted".to_string(),
                    ProviderKind::Http => "http".to_string(),
                },
                model_id: self.config.provider.model_id.clone(),
                constants,
                injection_wording: INJECTION_WORDING.to_string(),
            },
            corpus: Some(corpus::corpus_statistics(&dialogs)?),
            complexity: Some(complexity),
            gaps,
            knowledge: Some(analysis::knowledge_usage(&knowledge_items)),
            alignment,
            injection,
            targets: self.config.targets.clone(),
        })?;

        let mut report_json = serde_json::to_string_pretty(&report).expect("serializable report");
        report_json.push('\n');
        atomic_write(&self.out(REPORT_FILE), report_json.as_bytes())?;
        atomic_write(
            &self.out(DISCREPANCY_CSV_FILE),
            analysis::discrepancy_csv(&report).as_bytes(),
        )?;
        atomic_write(
            &self.out(KNOWLEDGE_CSV_FILE),
            analysis::knowledge_csv(&report).as_bytes(),
        )?;
        atomic_write(
            &self.out(INJECTION_CSV_FILE),
            analysis::injection_csv(&report).as_bytes(),
        )?;
        self.write_manifest(
            "analyze",
            vec![
                CORPUS_FILE.to_string(),
                GENERATIONS_FILE.to_string(),
                ANNOTATIONS_FILE.to_string(),
                ISO_ANNOTATIONS_FILE.to_string(),
                JUDGMENTS_FILE.to_string(),
            ],
            vec![
                REPORT_FILE.to_string(),
                DISCREPANCY_CSV_FILE.to_string(),
                KNOWLEDGE_CSV_FILE.to_string(),
                INJECTION_CSV_FILE.to_string(),
            ],
        )?;
        Ok(StageOutcome::Ran)
    }

    /// Check the classifiers against the gold annotations in the corpus and
    /// record the chance baseline next to them.
    pub fn validate_classifiers(&self) -> Result<StageOutcome, PipelineError> {
        self.require("ingest", "ingest")?;
        if self.stage_complete("validate-classifiers")? && !self.force {
            return Ok(StageOutcome::Skipped);
        }
        let dialogs = self.load_dialogs()?;
        let gateway = build_gateway(&self.config)?;
        let mut annotator = Annotator::new(&gateway, self.config.provider.model_id.clone());
        annotator.policy = self.retry_policy();
        let taxonomy = taxonomy_for(self.config.task);
        let registry = crate::toolbox::registry_for(self.config.task);

        let mut act_gold = Vec::new();
        let mut act_pred = Vec::new();
        let mut tool_gold = Vec::new();
        let mut tool_pred = Vec::new();
        for dialog in &dialogs {
            for slice in corpus::slice_contexts(dialog) {
                let turn = &dialog.turns[slice.target_index];
                let user_input = latest_user_input(&slice.context);
                if let Some(gold) = &turn.gold_acts {
                    act_pred.push(annotator.classify_acts(
                        &user_input,
                        &slice.reference_response,
                        &taxonomy,
                    )?);
                    act_gold.push(gold.clone());
                }
                if let Some(gold) = &turn.gold_tools {
                    tool_pred.push(annotator.classify_tools(
                        &user_input,
                        &slice.reference_response,
                        &registry,
                    )?);
                    tool_gold.push(gold.clone());
                }
            }
        }
        if act_gold.is_empty() && tool_gold.is_empty() {
            return Err(PipelineError::Validation(
                "corpus carries no gold annotations to validate against".into(),
            ));
        }
        let dimension = |pred: &[LabelSet],
                         gold: &[LabelSet],
                         universe: usize|
         -> Result<Option<DimensionValidation>, PipelineError> {
            if gold.is_empty() {
                return Ok(None);
            }
            Ok(Some(DimensionValidation {
                turns: gold.len(),
                report: validate_classifier(pred, gold)?,
                random_baseline: random_baseline(gold, universe, 20, self.config.seed)?,
            }))
        };
        let artifact = ClassifierValidation {
            config_hash: self.hash.clone(),
            acts: dimension(&act_pred, &act_gold, taxonomy.labels.len())?,
            tools: dimension(&tool_pred, &tool_gold, registry.len())?,
        };
        let mut text = serde_json::to_string_pretty(&artifact).expect("serializable validation");
        text.push('\n');
        atomic_write(&self.out(VALIDATION_FILE), text.as_bytes())?;
        self.write_manifest(
            "validate-classifiers",
            vec![CORPUS_FILE.to_string()],
            vec![VALIDATION_FILE.to_string()],
        )?;
        Ok(StageOutcome::Ran)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AgentSettings, Constants, DataPaths, ProviderConfig};

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            task: Task::Multiwoz,
            corpus: dir.join("in.jsonl"),
            out_dir: dir.join("out"),
            cache_dir: dir.join("cache"),
            seed: 7,
            max_parallel: 2,
            provider: ProviderConfig {
                kind: ProviderKind::Scripted,
                model_id: "toy".to_string(),
                script: Some(dir.join("script.json")),
            },
            constants: Constants::default(),
            agent: AgentSettings::default(),
            paths: DataPaths::default(),
            targets: BTreeMap::new(),
        }
    }

    #[test]
    fn generate_before_ingest_is_a_prerequisite_error() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(config(dir.path()), false);
        let err = pipeline.generate().unwrap_err();
        assert!(matches!(err, PipelineError::Prerequisite { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn ingest_writes_manifest_and_is_resumable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("in.jsonl"),
            r#"{"id":"d1","turns":[{"speaker":"user","text":"hi"},{"speaker":"agent","text":"hello"}]}"#,
        )
        .unwrap();
        let pipeline = Pipeline::new(config(dir.path()), false);
        assert_eq!(pipeline.ingest(None).unwrap(), StageOutcome::Ran);
        assert_eq!(pipeline.ingest(None).unwrap(), StageOutcome::Skipped);
        let manifest: StageManifest = serde_json::from_str(
            &std::fs::read_to_string(pipeline.manifest_path("ingest")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.stage, "ingest");
        assert_eq!(manifest.config_hash, pipeline.hash);
        assert_eq!(manifest.outputs, vec![CORPUS_FILE.to_string()]);
    }

    #[test]
    fn foreign_hash_manifest_is_refused_without_force() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("in.jsonl"),
            r#"{"id":"d1","turns":[{"speaker":"user","text":"hi"}]}"#,
        )
        .unwrap();
        let pipeline = Pipeline::new(config(dir.path()), false);
        pipeline.ingest(None).unwrap();

        let mut altered = config(dir.path());
        altered.seed = 99;
        let other = Pipeline::new(altered.clone(), false);
        let err = other.ingest(None).unwrap_err();
        assert!(matches!(err, PipelineError::HashMismatch { .. }));
        assert_eq!(err.exit_code(), 2);

        let forced = Pipeline::new(altered, true);
        assert_eq!(forced.ingest(None).unwrap(), StageOutcome::Ran);
    }

    #[test]
    fn artifact_header_round_trips_and_guards_hash() {
        let dir = tempfile::tempdir().unwrap();
        let pipeline = Pipeline::new(config(dir.path()), false);
        let records = vec![
            IsoAnnotation {
                dialog_id: "d1".to_string(),
                turn_index: 1,
                acts: LabelSet::new(["inform"]),
            },
        ];
        pipeline.write_records(ISO_ANNOTATIONS_FILE, &records).unwrap();
        let back: Vec<IsoAnnotation> = pipeline.read_records(ISO_ANNOTATIONS_FILE).unwrap();
        assert_eq!(back, records);

        let mut altered = config(dir.path());
        altered.seed = 99;
        let other = Pipeline::new(altered, false);
        let err = other
            .read_records::<IsoAnnotation>(ISO_ANNOTATIONS_FILE)
            .unwrap_err();
        assert!(matches!(err, PipelineError::HashMismatch { .. }));
    }

    #[test]
    fn latest_user_input_prefers_most_recent() {
        let turns = vec![
            corpus::Turn {
                index: 0,
                speaker: Speaker::User,
                text: "first".to_string(),
                gold_acts: None,
                gold_tools: None,
            },
            corpus::Turn {
                index: 1,
                speaker: Speaker::HumanExpert,
                text: "reply".to_string(),
                gold_acts: None,
                gold_tools: None,
            },
            corpus::Turn {
                index: 2,
                speaker: Speaker::User,
                text: "second".to_string(),
                gold_acts: None,
                gold_tools: None,
            },
        ];
        assert_eq!(latest_user_input(&turns), "second");
        assert_eq!(latest_user_input(&[]), "[start of conversation]");
    }
}
