//! Emerging content-issue discovery.
//!
//! A batch of items is judged against one issue's annotation policy in four
//! phases: recall of suspicious items, removal of items already covered by
//! the policy, two-stage clustering of the rest into variants of existing
//! sub-issues or new sub-issues, and finally evolution of the policy
//! document. Every model-shaped dependency sits behind the traits in
//! [`backends`].

pub mod backends;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_corpus, CaseLabel, Corpus, CorpusHeader, GoldLabel, Item, ItemView, Phase, PhaseStep, PolicyDoc,
    SubIssue, ValidationIssue, ValidationReport, Verdict,
};
