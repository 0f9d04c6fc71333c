//! Evaluation harness for measuring the behavior gap between LLM-based
//! task-oriented dialog agents and human experts.
//!
//! The harness replays recorded human-human dialogs under teacher forcing:
//! for every human-expert turn it hands the agent the exact conversation
//! prefix the expert saw, generates a candidate response with a bounded
//! ReAct loop, and then compares the two responses along three behavioral
//! dimensions: dialog acts, tool usage, and external-knowledge usage.
//! Deterministic metrics, an LLM judge, and a small statistics toolkit turn
//! those comparisons into a reproducible experiment report.
//!
//! The crate-level guide lives in `book/`; the modules below mirror its
//! chapters.
//!
//! ```
//! use behavior_gap::metrics;
//!
//! // Normalized turn count grows with dialog length but saturates slowly.
//! let short = metrics::normalized_turn_count(14.7, 1000.0);
//! let long = metrics::normalized_turn_count(120.2, 1000.0);
//! assert!(short < long && long < 1.0);
//! ```

pub mod agent;
pub mod analysis;
pub mod annotators;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod judge;
pub mod label;
pub mod metrics;
pub mod pipeline;
pub mod toolbox;

pub use label::LabelSet;
