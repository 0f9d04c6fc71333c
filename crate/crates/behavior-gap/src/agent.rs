//! Zero-shot ReAct agent for teacher-forced turn generation: system-prompt
//! assembly (with optional behavior injection), the bounded
//! reason-act-observe loop, and the generation records consumed by the
//! metrics.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{ContextSlice, Speaker, Task};
use crate::gateway::{
    ChatRequest, Gateway, GatewayError, Message, ResponseFormat, RetryPolicy, ToolCall,
};
use crate::label::LabelSet;
use crate::toolbox::{Toolbox, ToolboxError, ToolResult, ToolSpec};

pub const DEFAULT_MAX_REACT_STEPS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("dialog `{slice}`: {source}")]
    Gateway {
        slice: String,
        #[source]
        source: GatewayError,
    },
    #[error("injection label `{label}` is not in the active {space}")]
    InvalidDirective { label: String, space: &'static str },
    #[error("empty injection directive: at least one of acts/tools required")]
    EmptyDirective,
    #[error("repeated tool argument error: {0}")]
    RepeatedToolError(ToolboxError),
    #[error("provider returned an empty final response")]
    EmptyResponse,
}

/// Prompt-injection targets for one turn: the human expert's known dialog
/// acts and/or tool choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionDirective {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_acts: Option<LabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_tools: Option<LabelSet>,
}

impl InjectionDirective {
    pub fn acts(set: LabelSet) -> Self {
        InjectionDirective {
            target_acts: Some(set),
            target_tools: None,
        }
    }

    pub fn tools(set: LabelSet) -> Self {
        InjectionDirective {
            target_acts: None,
            target_tools: Some(set),
        }
    }

    pub fn validate(
        &self,
        act_labels: &[String],
        registry: &[ToolSpec],
    ) -> Result<(), AgentError> {
        if self.target_acts.is_none() && self.target_tools.is_none() {
            return Err(AgentError::EmptyDirective);
        }
        if let Some(acts) = &self.target_acts {
            for label in &acts.labels {
                if !act_labels.contains(label) {
                    return Err(AgentError::InvalidDirective {
                        label: label.clone(),
                        space: "taxonomy",
                    });
                }
            }
        }
        if let Some(tools) = &self.target_tools {
            for label in &tools.labels {
                if !registry.iter().any(|t| t.name == *label) {
                    return Err(AgentError::InvalidDirective {
                        label: label.clone(),
                        space: "registry",
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub task: Task,
    pub model_id: String,
    pub max_react_steps: usize,
    pub registry: Vec<ToolSpec>,
    /// Entity listing rendered into the system prompt so the agent knows
    /// what the database can offer.
    pub entity_digest: String,
    /// Extra task guidelines appended after the built-in ones.
    pub guidelines: String,
    /// Labels of the active act taxonomy, used to validate directives.
    pub act_labels: Vec<String>,
    pub temperature: f64,
}

impl AgentConfig {
    pub fn new(task: Task, model_id: impl Into<String>) -> Self {
        AgentConfig {
            task,
            model_id: model_id.into(),
            max_react_steps: DEFAULT_MAX_REACT_STEPS,
            registry: crate::toolbox::registry_for(task),
            entity_digest: String::new(),
            guidelines: String::new(),
            act_labels: crate::annotators::WOZ_LABELS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            temperature: 0.0,
        }
    }
}

/// One recorded tool execution inside a ReAct turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    pub arguments: Value,
    pub result: ToolResult,
}

/// One teacher-forced generation: the agent's answer to a single slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub dialog_id: String,
    pub target_index: usize,
    pub response_text: String,
    pub tool_invocations: Vec<ToolInvocation>,
    /// Knowledge text retrieved this turn, in invocation order.
    pub knowledge_text: String,
    pub steps_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<InjectionDirective>,
}

fn template_for(task: Task) -> &'static str {
    match task {
        Task::Multiwoz | Task::Spokenwoz | Task::Custom => {
            include_str!("../assets/agent_prompt_woz.txt")
        }
        Task::Pcs => include_str!("../assets/agent_prompt_pcs.txt"),
    }
}

fn injection_block(directive: &InjectionDirective) -> String {
    let mut block = String::from("\n***Behavior Directive***\n");
    if let Some(acts) = &directive.target_acts {
        let joined: Vec<&str> = acts.labels.iter().map(String::as_str).collect();
        block.push_str(&format!(
            "For this turn, respond using dialog acts: {}.\n",
            joined.join(", ")
        ));
    }
    if let Some(tools) = &directive.target_tools {
        if tools.labels.is_empty() {
            block.push_str("For this turn, do not use any tools.\n");
        } else {
            let joined: Vec<&str> = tools.labels.iter().map(String::as_str).collect();
            block.push_str(&format!(
                "For this turn, use exactly these tools: {}.\n",
                joined.join(", ")
            ));
        }
    }
    block
}

/// Render the task template. The injected prompt is always the baseline
/// prompt plus the directive block, byte-identically, so the intervention
/// is a pure suffix.
pub fn build_system_prompt(
    config: &AgentConfig,
    directive: Option<&InjectionDirective>,
) -> Result<String, AgentError> {
    if let Some(d) = directive {
        d.validate(&config.act_labels, &config.registry)?;
    }
    let injection = match directive {
        Some(d) => injection_block(d),
        None => String::new(),
    };
    Ok(template_for(config.task)
        .trim_end_matches('\n')
        .replace("{entity_digest}", &config.entity_digest)
        .replace("{guidelines}", &config.guidelines)
        .replace("{injection}", &injection))
}

fn context_messages(slice: &ContextSlice) -> Vec<Message> {
    // Teacher forcing presents the expert's own past turns as the agent's:
    // the model continues the conversation as if it had written them.
    slice
        .context
        .iter()
        .map(|turn| match turn.speaker {
            Speaker::HumanExpert => Message::assistant(turn.text.clone()),
            Speaker::User => Message::user(turn.text.clone()),
        })
        .collect()
}

/// Run the bounded ReAct loop for one slice. Each provider call is one
/// step; the final allowed step is issued without tool schemas so the model
/// must answer in plain text. A tool argument error is fed back to the
/// model once as an observation; a second one aborts the turn.
pub fn run_react_turn(
    slice: &ContextSlice,
    config: &AgentConfig,
    directive: Option<&InjectionDirective>,
    gateway: &Gateway,
    toolbox: &Toolbox,
    policy: &RetryPolicy,
) -> Result<GenerationRecord, AgentError> {
    let system_prompt = build_system_prompt(config, directive)?;
    let schemas: Vec<_> = config.registry.iter().map(|t| t.to_schema()).collect();
    let mut messages = context_messages(slice);
    if messages.is_empty() {
        // Expert-opening dialogs have no prefix; prompt the model to open.
        messages.push(Message::user("[start of conversation]".to_string()));
    }

    let mut invocations: Vec<ToolInvocation> = Vec::new();
    let mut knowledge_parts: Vec<String> = Vec::new();
    let mut tool_error_seen = false;

    for step in 1..=config.max_react_steps {
        let final_step = step == config.max_react_steps;
        let request = ChatRequest {
            model_id: config.model_id.clone(),
            system_prompt: system_prompt.clone(),
            messages: messages.clone(),
            tool_schemas: if final_step { vec![] } else { schemas.clone() },
            temperature: config.temperature,
            response_format: ResponseFormat::FreeText,
        };
        let response = gateway
            .complete_chat(&request, policy)
            .map_err(|source| AgentError::Gateway {
                slice: slice.dialog_id.clone(),
                source,
            })?;

        if response.tool_calls.is_empty() {
            let text = response.content.unwrap_or_default();
            if text.trim().is_empty() {
                return Err(AgentError::EmptyResponse);
            }
            return Ok(GenerationRecord {
                dialog_id: slice.dialog_id.clone(),
                target_index: slice.target_index,
                response_text: text,
                tool_invocations: invocations,
                knowledge_text: knowledge_parts.join("\n"),
                steps_used: step,
                injected: directive.cloned(),
            });
        }

        let mut assistant = Message::assistant(response.content.clone().unwrap_or_default());
        assistant.tool_calls = response.tool_calls.clone();
        messages.push(assistant);
        for call in &response.tool_calls {
            let observation = execute_call(toolbox, call, &mut tool_error_seen)?;
            if let Ok(result) = &observation {
                if let Some(text) = &result.knowledge_text {
                    if !text.is_empty() {
                        knowledge_parts.push(text.clone());
                    }
                }
                invocations.push(ToolInvocation {
                    name: call.name.clone(),
                    arguments: call.arguments.clone(),
                    result: result.clone(),
                });
            }
            let content = match observation {
                Ok(result) => serde_json::to_string(&result.payload).expect("serializable"),
                Err(message) => message,
            };
            messages.push(Message::tool(call.id.clone(), content));
        }
    }
    unreachable!("final step carries no tool schemas, so the provider cannot tool-call")
}

// Returns Ok(Ok(result)) on success, Ok(Err(observation)) for a first
// argument error, and Err(..) when a previous error already used up the
// model's one correction.
fn execute_call(
    toolbox: &Toolbox,
    call: &ToolCall,
    tool_error_seen: &mut bool,
) -> Result<Result<ToolResult, String>, AgentError> {
    match toolbox.execute(&call.name, &call.arguments) {
        Ok(result) => Ok(Ok(result)),
        Err(err) => {
            if *tool_error_seen {
                return Err(AgentError::RepeatedToolError(err));
            }
            *tool_error_seen = true;
            Ok(Err(format!("tool error: {err}")))
        }
    }
}
