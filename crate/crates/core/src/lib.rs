//! Simulator and verification harness for masked diffusion sampling over
//! formal languages (n-gram models, hidden Markov models, and an adversarial
//! interval language).
//!
//! The learned denoiser of a masked diffusion model is replaced by an *exact*
//! posterior oracle: given a partially masked sequence, the per-position
//! conditionals under the ground-truth language are computed by constrained
//! forward-backward inference. The per-position factorization of multi-token
//! reveal steps is then the only error source, which makes the trade-off
//! between sampling steps, token-level fluency (TER) and sequence-level
//! correctness (SER) observable at desk scale.
//!
//! Crate layout:
//!
//! - [`lang`] - ground-truth languages and the [`lang::Language`] trait
//! - [`oracle`] - masked sequences, exact posterior marginals, brute-force checker
//! - [`schedule`] - masking schedules and remasking schedules
//! - [`sampler`] - forward corruption and the four samplers (MDM, ReMDM, AR, L2R)
//! - [`metrics`] - TER / SER estimation with confidence intervals
//! - [`analysis`] - separator/dependency combinatorics and bound estimators
//! - [`verify`] - the lemma/bound property suites behind `mdmsim verify`
//! - [`harness`] - experiment configuration, sweeps, and report emission

pub mod analysis;
pub mod error;
pub mod exec;
pub mod harness;
pub mod lang;
pub mod metrics;
pub mod oracle;
pub mod sampler;
pub mod schedule;
pub mod seeding;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use lang::{Language, Sequence, Token};
pub use oracle::{MaskedSequence, PosteriorMarginals, Slot};
pub use schedule::{MaskingSchedule, RemaskSchedule};
