//! Experiment configuration: a single JSON document validated up front.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lang::{HmmModel, IntervalLanguage, Language, NGramModel};
use crate::schedule::{MaskingSchedule, THEORETICAL_C};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub language: LanguageSpec,
    pub lengths: Vec<usize>,
    pub schedules: Vec<ScheduleSpec>,
    pub samplers: Vec<SamplerSpec>,
    pub num_sequences: usize,
    pub metrics: Vec<MetricKind>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LanguageSpec {
    Ngram {
        order: usize,
        vocab_size: usize,
        temperature: f64,
        threshold: f64,
        seed: u64,
    },
    Hmm {
        num_states: usize,
        vocab_size: usize,
        temperature: f64,
        threshold: f64,
        seed: u64,
    },
    Interval { interval_len: usize },
}

impl LanguageSpec {
    pub fn threshold(&self) -> f64 {
        match self {
            LanguageSpec::Ngram { threshold, .. } | LanguageSpec::Hmm { threshold, .. } => {
                *threshold
            }
            LanguageSpec::Interval { .. } => 0.0,
        }
    }

    /// Build the language for sequences of length `len` (the interval
    /// language is length-dependent).
    pub fn build(&self, len: usize) -> Result<Arc<dyn Language>> {
        match *self {
            LanguageSpec::Ngram {
                order,
                vocab_size,
                temperature,
                threshold,
                seed,
            } => Ok(Arc::new(NGramModel::generate(
                order, vocab_size, temperature, threshold, seed,
            )?)),
            LanguageSpec::Hmm {
                num_states,
                vocab_size,
                temperature,
                threshold,
                seed,
            } => Ok(Arc::new(HmmModel::generate(
                num_states, vocab_size, temperature, threshold, seed,
            )?)),
            LanguageSpec::Interval { interval_len } => {
                Ok(Arc::new(IntervalLanguage::new(len, interval_len)?))
            }
        }
    }

    /// Whether one model instance serves every sequence length.
    pub fn is_length_independent(&self) -> bool {
        !matches!(self, LanguageSpec::Interval { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Linear {
        num_steps: usize,
    },
    Theoretical {
        n: usize,
        epsilon: f64,
        #[serde(default = "default_theoretical_c")]
        c: f64,
    },
    Custom {
        deltas: Vec<f64>,
    },
}

fn default_theoretical_c() -> f64 {
    THEORETICAL_C
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<MaskingSchedule> {
        match self {
            ScheduleSpec::Linear { num_steps } => MaskingSchedule::linear(*num_steps),
            ScheduleSpec::Theoretical { n, epsilon, c } => {
                MaskingSchedule::theoretical(*n, *epsilon, *c)
            }
            ScheduleSpec::Custom { deltas } => MaskingSchedule::custom(deltas.clone()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScheduleSpec::Linear { num_steps } => format!("linear({num_steps})"),
            ScheduleSpec::Theoretical { n, epsilon, c } => {
                format!("theoretical(n={n},eps={epsilon},c={c})")
            }
            ScheduleSpec::Custom { deltas } => format!("custom({} steps)", deltas.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Mdm,
    Remdm { sigma: f64 },
    Ar,
    L2r,
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::Mdm => "mdm",
            SamplerSpec::Remdm { .. } => "remdm",
            SamplerSpec::Ar => "ar",
            SamplerSpec::L2r => "l2r",
        }
    }

    pub fn uses_schedule(&self) -> bool {
        matches!(self, SamplerSpec::Mdm | SamplerSpec::Remdm { .. })
    }

    pub fn label(&self) -> String {
        match self {
            SamplerSpec::Remdm { sigma } => format!("remdm(sigma={sigma})"),
            other => other.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ter,
    Ser,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Ter => "ter",
            MetricKind::Ser => "ser",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// SHA-256 of the canonical JSON form, recorded in emitted artifacts.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sequences < 1 {
            return Err(Error::Config("num_sequences must be >= 1".into()));
        }
        if self.lengths.is_empty() {
            return Err(Error::Config("at least one sequence length required".into()));
        }
        if self.samplers.is_empty() {
            return Err(Error::Config("at least one sampler required".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric required".into()));
        }
        if self.samplers.iter().any(|s| s.uses_schedule()) && self.schedules.is_empty() {
            return Err(Error::Config(
                "schedule-based samplers require at least one schedule".into(),
            ));
        }
        for spec in &self.schedules {
            spec.build()?;
        }
        // Perplexity against a pruned language is undefined: generated
        // sequences can score -inf.
        if self.metrics.contains(&MetricKind::Ter) && self.language.threshold() > 0.0 {
            return Err(Error::Config(
                "TER requires a threshold-0 language (pruning puts generated sequences outside the support)"
                    .into(),
            ));
        }
        for sampler in &self.samplers {
            if let SamplerSpec::Remdm { sigma } = sampler {
                if !(0.0..=1.0).contains(sigma) {
                    return Err(Error::Config(format!(
                        "remdm sigma must be in [0, 1], got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }
}
