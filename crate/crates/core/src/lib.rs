//! A decoder-only transformer with token-valued attention and its
//! realization as a sequence of quantum operations and projective
//! measurements on a truncated Fock space over the token Hilbert space.
//!
//! The classical side ([`transformer`]) enumerates the joint distribution of
//! generated texts. The quantum side ([`fock`], [`channel`], [`measurement`])
//! evolves a density operator, measures the appended token, applies the
//! Lüders update, and repeats. [`harness`] compares the two.

pub mod channel;
pub mod cli;
pub mod config;
pub mod distribution;
pub mod error;
pub mod fock;
pub mod harness;
pub mod measurement;
mod rng;
pub mod transformer;
pub mod vocab;

pub use channel::{KrausSet, QuantumOperation};
pub use config::{load_model_config, load_model_file, Model, ModelConfig};
pub use distribution::{total_variation, Distribution, JointDistribution};
pub use error::{Error, Result};
pub use fock::{input_state, to_dense, BlockDiagOperator, FockSpace, SequenceEnsembleState};
pub use harness::{compare, golden_example, ComparisonReport, RunManifest};
pub use measurement::{luders_reduce, outcome_probabilities, run_protocol, sample_protocol, Outcome, Protocol, Pvm, TrajectoryRecord};
pub use transformer::{
    joint_distribution, next_token_distribution, sample_text, similarity_scores, softmax, AttentionBlock, Scaling,
    ScoreVector, TransformerStack,
};
pub use vocab::{validate_value_closure, Embedding, Text, TokenId, TokenMap, Vocabulary};
