//! Ground-truth formal languages: n-gram models, hidden Markov models, and
//! the adversarial interval language.
//!
//! All languages expose the same surface through [`Language`]: exact
//! sampling, exact base-2 log probability (`-inf` outside the support),
//! exact next-token conditionals, and an exact posterior oracle for
//! partially masked sequences. Models are immutable after construction and
//! safe to share across workers; sampling takes a caller-provided stream.

pub mod hmm;
pub mod interval;
pub mod ngram;
pub(crate) mod tables;

pub use hmm::HmmModel;
pub use interval::IntervalLanguage;
pub use ngram::NGramModel;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::PosteriorOracle;
use crate::seeding::RNG_ALGORITHM;

/// Token identifier in `[0, vocab_size)`. The mask sentinel is *not* a
/// token; it exists only as [`crate::oracle::Slot::Mask`].
pub type Token = u32;

/// A fully realized sequence of tokens (no mask slots by construction).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sequence {
    tokens: Vec<Token>,
}

impl Sequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sequence { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl std::ops::Deref for Sequence {
    type Target = [Token];
    fn deref(&self) -> &[Token] {
        &self.tokens
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(tokens: Vec<Token>) -> Self {
        Sequence::new(tokens)
    }
}

/// Summary of a language for result rows and seed derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangDescriptor {
    pub kind: String,
    /// n-gram order, HMM state count, or interval length.
    pub n_or_states: u32,
    pub vocab: u32,
    pub threshold: f64,
}

/// Common surface of all ground-truth languages.
pub trait Language: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Exact ancestral sample of length `len`. Always lies in the support.
    fn sample_sequence(&self, len: usize, rng: &mut dyn RngCore) -> Sequence;

    /// Exact `log2 q(x)`; `-inf` iff `x` is outside the support.
    /// Tokens outside `[0, V)` are an input error, not `-inf`.
    fn log_prob2(&self, tokens: &[Token]) -> Result<f64>;

    /// Exact `q(x_{i} | x_{<i})` for the position following `prefix`.
    /// Errors if the prefix itself has probability zero.
    fn ar_conditional(&self, prefix: &[Token]) -> Result<Vec<f64>>;

    /// A per-worker posterior oracle with its own scratch buffers.
    fn oracle(&self) -> Result<Box<dyn PosteriorOracle>>;

    fn descriptor(&self) -> LangDescriptor;

    /// Exact bits/token of length-`len` sequences, for model classes with a
    /// tractable chain-rule entropy (n-gram models). Other classes direct
    /// the caller to [`crate::metrics::monte_carlo_entropy`].
    fn exact_entropy_bits(&self, len: usize) -> Result<f64> {
        let _ = len;
        Err(Error::Unsupported(
            "exact entropy is only defined for n-gram models; use metrics::monte_carlo_entropy"
                .into(),
        ))
    }

    /// Left-to-right exact sampling via the chain rule. The default walks
    /// `ar_conditional`; models override it with an incremental recursion.
    fn sample_autoregressive(&self, len: usize, rng: &mut dyn RngCore) -> Result<Sequence> {
        let mut tokens: Vec<Token> = Vec::with_capacity(len);
        for _ in 0..len {
            let dist = self.ar_conditional(&tokens)?;
            tokens.push(tables::sample_index(&dist, rng) as Token);
        }
        Ok(Sequence::new(tokens))
    }
}

/// Versioned on-disk form of a language: schema id, generator parameters,
/// probability tables as row-major arrays, and the generation seed.
/// serde_json emits shortest round-tripping decimal floats, so parsing the
/// document back reproduces every table entry bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageDoc {
    pub schema: String,
    pub version: u32,
    pub rng: String,
    #[serde(flatten)]
    pub body: LanguageDocBody,
}

pub const LANGUAGE_SCHEMA: &str = "mdmsim/language";
pub const LANGUAGE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LanguageDocBody {
    Ngram {
        order: usize,
        vocab_size: usize,
        threshold: f64,
        temperature: Option<f64>,
        seed: Option<u64>,
        /// V^(n-1) x V, row-major.
        transitions: Vec<f64>,
        init_context_dist: Vec<f64>,
    },
    Hmm {
        num_states: usize,
        vocab_size: usize,
        threshold: f64,
        temperature: Option<f64>,
        seed: Option<u64>,
        /// S x S, row-major.
        trans: Vec<f64>,
        /// S x (V+1), row-major; the last column is the uniform mask column.
        emit: Vec<f64>,
        init: Vec<f64>,
    },
    Interval {
        #[serde(rename = "L")]
        seq_len: usize,
        #[serde(rename = "l")]
        interval_len: usize,
    },
}

impl LanguageDoc {
    pub fn new(body: LanguageDocBody) -> Self {
        LanguageDoc {
            schema: LANGUAGE_SCHEMA.to_string(),
            version: LANGUAGE_SCHEMA_VERSION,
            rng: RNG_ALGORITHM.to_string(),
            body,
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: LanguageDoc = serde_json::from_str(json)?;
        if doc.schema != LANGUAGE_SCHEMA {
            return Err(Error::Config(format!("unknown schema id {:?}", doc.schema)));
        }
        if doc.version != LANGUAGE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {}",
                doc.version
            )));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("language doc serialization")
    }

    /// Reconstruct the language, re-validating all invariants.
    pub fn build(&self) -> Result<Box<dyn Language>> {
        match &self.body {
            LanguageDocBody::Ngram {
                order,
                vocab_size,
                threshold,
                temperature,
                seed,
                transitions,
                init_context_dist,
            } => Ok(Box::new(NGramModel::from_parts(
                *order,
                *vocab_size,
                transitions.clone(),
                init_context_dist.clone(),
                *threshold,
                temperature.map(|t| (t, seed.unwrap_or(0))),
            )?)),
            LanguageDocBody::Hmm {
                num_states,
                vocab_size,
                threshold,
                temperature,
                seed,
                trans,
                emit,
                init,
            } => Ok(Box::new(HmmModel::from_parts(
                *num_states,
                *vocab_size,
                trans.clone(),
                emit.clone(),
                init.clone(),
                *threshold,
                temperature.map(|t| (t, seed.unwrap_or(0))),
            )?)),
            LanguageDocBody::Interval {
                seq_len,
                interval_len,
            } => Ok(Box::new(IntervalLanguage::new(*seq_len, *interval_len)?)),
        }
    }
}
