//! Sequence-quality metrics: generative perplexity (the TER measurement)
//! and sequence error rate, both with 99% confidence intervals.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{Language, Sequence};
use crate::stats;

/// A point estimate with the half-width of its 99% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub ci_half_width: f64,
    pub num_samples: usize,
}

/// Mean bits/token from per-sequence `(log2 q(x), length)` scores, with CI.
/// Errors on the first `-inf` score (perplexity is only defined against
/// threshold-0 languages).
pub fn bits_per_token_from_scores(scores: &[(f64, usize)]) -> Result<MetricEstimate> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("bits_per_token"));
    }
    let mut bits = Vec::with_capacity(scores.len());
    for (index, &(lp, len)) in scores.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            return Err(Error::UndefinedPerplexity { index });
        }
        bits.push(-lp / len.max(1) as f64);
    }
    let (mean, hw) = stats::mean_ci99(&bits);
    Ok(MetricEstimate {
        value: mean,
        ci_half_width: hw,
        num_samples: bits.len(),
    })
}

/// Fraction of `-inf` scores with a binomial CI.
pub fn ser_from_scores(scores: &[f64]) -> Result<MetricEstimate> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("sequence_error_rate"));
    }
    let errors = scores.iter().filter(|&&lp| lp == f64::NEG_INFINITY).count();
    let (p, hw) = stats::rate_ci99(errors, scores.len());
    Ok(MetricEstimate {
        value: p,
        ci_half_width: hw,
        num_samples: scores.len(),
    })
}

/// Mean bits/token of `sequences` under `lang`, with CI.
pub fn bits_per_token(lang: &dyn Language, sequences: &[Sequence]) -> Result<MetricEstimate> {
    let scores = sequences
        .iter()
        .map(|seq| lang.log_prob2(seq).map(|lp| (lp, seq.len())))
        .collect::<Result<Vec<_>>>()?;
    bits_per_token_from_scores(&scores)
}

/// Generative perplexity `2^(mean bits/token)`. The CI propagates from the
/// bits/token statistic by the delta method
/// (`half_width = ln 2 * value * half_width_bits`).
pub fn generative_perplexity(lang: &dyn Language, sequences: &[Sequence]) -> Result<MetricEstimate> {
    let bits = bits_per_token(lang, sequences)?;
    let value = bits.value.exp2();
    Ok(MetricEstimate {
        value,
        ci_half_width: std::f64::consts::LN_2 * value * bits.ci_half_width,
        num_samples: bits.num_samples,
    })
}

/// Fraction of sequences outside the support of `lang` (scoring `-inf`),
/// with a binomial CI.
pub fn sequence_error_rate(lang: &dyn Language, sequences: &[Sequence]) -> Result<MetricEstimate> {
    let scores = sequences
        .iter()
        .map(|seq| lang.log_prob2(seq))
        .collect::<Result<Vec<_>>>()?;
    ser_from_scores(&scores)
}

/// Monte Carlo estimate of the model's own bits/token (cross-entropy of `q`
/// by `q`), for model classes without a tractable exact entropy.
pub fn monte_carlo_entropy(
    lang: &dyn Language,
    len: usize,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<MetricEstimate> {
    if samples == 0 {
        return Err(Error::EmptyInput("monte_carlo_entropy"));
    }
    let mut bits = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = lang.sample_sequence(len, rng);
        bits.push(-lang.log_prob2(&x)? / len.max(1) as f64);
    }
    let (mean, hw) = stats::mean_ci99(&bits);
    Ok(MetricEstimate {
        value: mean,
        ci_half_width: hw,
        num_samples: samples,
    })
}
