//! Resolving ambiguous user requests with clarifying questions.
//!
//! The crate is organised around the three subtasks of a clarifying
//! interaction:
//!
//! - deciding *when* to clarify ([`estimators`], scored by [`metrics`]),
//! - deciding *what* to ask (the oracle generator in [`prompting`]),
//! - responding to the clarification (the prompt variants in [`prompting`]
//!   evaluated against the corpora in [`corpus`]).
//!
//! All model access goes through [`gateway::Gateway`], which wraps either an
//! OpenAI-compatible endpoint or a scripted mock behind a content-addressed
//! cache. Semantic clustering of sampled answers lives in [`equivalence`].

pub mod corpus;
pub mod equivalence;
pub mod estimators;
pub mod gateway;
pub mod metrics;
pub mod prompting;
pub mod seed;

pub use corpus::{
    AmbiguousExample, ClarifyingExchange, IntentWeighting, Interpretation, NliLabel, TaskKind,
    TaskOutput, WeightingMode,
};
pub use equivalence::{ClusterDistribution, EntailmentLabel, EquivalenceGraph, Judge};
pub use estimators::{EstimatorConfig, Method, UncertaintyScore};
pub use gateway::{ChatMessage, Completion, CompletionRequest, Gateway, Role};
pub use metrics::{BudgetReport, ExampleOutcome, Pool};
pub use prompting::{ExemplarPool, PromptBook, PromptVariant};
