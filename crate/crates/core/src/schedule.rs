//! Masking schedules and remasking schedules.
//!
//! A schedule discretizes the masking function alpha over `N` reverse steps.
//! Steps `k = 1..N` traverse schedule-time from 1 (everything masked,
//! `alpha = 0`) down to 0 (everything revealed, `alpha = 1`); `alphas[k]` is
//! the value after `k` reverse steps and `deltas[k-1] = alphas[k] -
//! alphas[k-1]` is the probability mass a fixed position reveals at step
//! `k`. All constructors end at `alpha = 1` exactly, so a sampler never
//! needs a force-reveal sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default constant of the theoretical schedule's increment `eps^n / (C(n-1))`.
pub const THEORETICAL_C: f64 = 24.0;

pub const DELTA_SUM_TOL: f64 = 1e-12;
/// Custom delta lists are accepted when they sum to 1 within this tolerance,
/// then renormalized exactly.
pub const CUSTOM_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingSchedule {
    /// `alpha` at the `N+1` grid times from schedule-time 1 down to 0;
    /// `alphas[0] = 0`, `alphas[N] = 1`, nondecreasing.
    alphas: Vec<f64>,
    /// Reveal increments, `deltas[k-1] = alphas[k] - alphas[k-1] >= 0`.
    deltas: Vec<f64>,
}

impl MaskingSchedule {
    /// Uniform increments `1/N`.
    pub fn linear(num_steps: usize) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Schedule("at least one step required".into()));
        }
        let n = num_steps as f64;
        Self::from_deltas_exact(vec![1.0 / n; num_steps])
    }

    /// The schedule from the step-efficiency construction: a large first
    /// increment `eps`, then constant increments `eps^n / (C (n-1))` with
    /// the final increment trimmed so the total mass is exactly 1.
    pub fn theoretical(n: usize, epsilon: f64, c: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Schedule("theoretical schedule requires n >= 2".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Schedule(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if c <= 0.0 {
            return Err(Error::Schedule("constant C must be positive".into()));
        }
        let delta = epsilon.powi(n as i32) / (c * (n - 1) as f64);
        let ratio = (1.0 - epsilon) / delta;
        // Guard the exact-integer case against floating-point spill.
        let tail_steps = if (ratio - ratio.round()).abs() < 1e-9 {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        };
        let mut deltas = Vec::with_capacity(1 + tail_steps);
        deltas.push(epsilon);
        for _ in 0..tail_steps.saturating_sub(1) {
            deltas.push(delta);
        }
        let used: f64 = deltas.iter().sum();
        deltas.push(1.0 - used);
        Self::from_deltas_exact(deltas)
    }

    /// Validated custom increments: nonnegative, summing to 1 within 1e-9;
    /// renormalized so the invariants hold exactly.
    pub fn custom(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(Error::Schedule("empty delta list".into()));
        }
        if let Some(d) = deltas.iter().find(|&&d| d < 0.0 || d.is_nan()) {
            return Err(Error::Schedule(format!("negative or NaN increment {d}")));
        }
        let sum: f64 = deltas.iter().sum();
        if (sum - 1.0).abs() > CUSTOM_SUM_TOL {
            return Err(Error::Schedule(format!(
                "increments sum to {sum}, expected 1 within {CUSTOM_SUM_TOL}"
            )));
        }
        let scaled: Vec<f64> = deltas.iter().map(|d| d / sum).collect();
        Self::from_deltas_exact(scaled)
    }

    fn from_deltas_exact(mut deltas: Vec<f64>) -> Result<Self> {
        let n = deltas.len();
        let mut alphas = Vec::with_capacity(n + 1);
        alphas.push(0.0);
        let mut acc = 0.0f64;
        for &d in &deltas[..n - 1] {
            acc += d;
            alphas.push(acc);
        }
        // Pin the endpoint and make the last increment consistent with it.
        let last = 1.0 - acc;
        if last < -DELTA_SUM_TOL {
            return Err(Error::Schedule(format!(
                "increments overshoot 1 by {}",
                -last
            )));
        }
        deltas[n - 1] = last.max(0.0);
        alphas.push(1.0);
        let sched = MaskingSchedule { alphas, deltas };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let n = self.deltas.len();
        if self.alphas.len() != n + 1 || n == 0 {
            return Err(Error::Schedule("inconsistent grid".into()));
        }
        if self.alphas[0] != 0.0 || self.alphas[n] != 1.0 {
            return Err(Error::Schedule("alpha must run from 0 to 1".into()));
        }
        if self.deltas.iter().any(|&d| d < 0.0) {
            return Err(Error::Schedule("negative increment".into()));
        }
        let sum: f64 = self.deltas.iter().sum();
        if (sum - 1.0).abs() > DELTA_SUM_TOL * n.max(1) as f64 {
            return Err(Error::Schedule(format!("increments sum to {sum}")));
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.deltas.len()
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Reveal increment of step `k` (1-based).
    #[inline]
    pub fn delta(&self, step: usize) -> f64 {
        self.deltas[step - 1]
    }

    /// Alpha before step `k` runs (mass already revealed).
    #[inline]
    pub fn alpha_before_step(&self, step: usize) -> f64 {
        self.alphas[step - 1]
    }

    /// Alpha after step `k` has run.
    #[inline]
    pub fn alpha_after_step(&self, step: usize) -> f64 {
        self.alphas[step]
    }

    /// Alpha at diffusion time `t = time_index / N`; index 0 is the clean
    /// end (`alpha = 1`), index `N` the fully masked end (`alpha = 0`).
    #[inline]
    pub fn alpha_at_time_index(&self, time_index: usize) -> f64 {
        self.alphas[self.num_steps() - time_index]
    }

    /// Probability that a still-masked position reveals at step `k`:
    /// `delta_k` over the remaining mask mass.
    #[inline]
    pub fn reveal_prob(&self, step: usize) -> f64 {
        let remaining = 1.0 - self.alpha_before_step(step);
        if remaining <= 0.0 {
            1.0
        } else {
            (self.delta(step) / remaining).clamp(0.0, 1.0)
        }
    }
}

/// Per-step remasking probabilities for the remasking sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemaskSchedule {
    sigmas: Vec<f64>,
}

impl RemaskSchedule {
    /// No remasking; the kernel reduces to the plain reverse process.
    pub fn zeros(schedule: &MaskingSchedule) -> Self {
        RemaskSchedule {
            sigmas: vec![0.0; schedule.num_steps()],
        }
    }

    /// `sigma` at every step, clipped to the per-step cap
    /// `min(1, (1 - alpha_after) / alpha_before)`. The cap forces the final
    /// step's sigma to 0, so the last state has no masks.
    pub fn capped_uniform(sigma: f64, schedule: &MaskingSchedule) -> Result<Self> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::Schedule(format!("sigma must be in [0,1], got {sigma}")));
        }
        let sigmas = (1..=schedule.num_steps())
            .map(|k| sigma.min(Self::cap(schedule, k)))
            .collect();
        Ok(RemaskSchedule { sigmas })
    }

    /// Explicit per-step values, rejected if any step exceeds its cap.
    pub fn from_sigmas(sigmas: Vec<f64>, schedule: &MaskingSchedule) -> Result<Self> {
        if sigmas.len() != schedule.num_steps() {
            return Err(Error::Schedule(format!(
                "{} sigmas for {} steps",
                sigmas.len(),
                schedule.num_steps()
            )));
        }
        for (i, &s) in sigmas.iter().enumerate() {
            let cap = Self::cap(schedule, i + 1);
            if !(0.0..=1.0).contains(&s) || s > cap + 1e-12 {
                return Err(Error::Schedule(format!(
                    "sigma {s} at step {} exceeds cap {cap}",
                    i + 1
                )));
            }
        }
        Ok(RemaskSchedule { sigmas })
    }

    /// Largest admissible sigma at step `k`: keeps the stay-masked branch of
    /// the remasking kernel nonnegative.
    pub fn cap(schedule: &MaskingSchedule, step: usize) -> f64 {
        let before = schedule.alpha_before_step(step);
        if before <= 0.0 {
            1.0
        } else {
            (1.0 - schedule.alpha_after_step(step)) / before
        }
        .min(1.0)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Sigma applied during step `k` (1-based).
    #[inline]
    pub fn sigma(&self, step: usize) -> f64 {
        self.sigmas[step - 1]
    }
}
