//! Forward corruption and the four samplers: masked diffusion (MDM), its
//! remasking variant (ReMDM), exact autoregressive, and left-to-right MDM.
//!
//! Reverse steps draw the reveal set *before* touching the oracle: the
//! reveal Bernoullis are independent of token values, so a step with an
//! empty reveal set skips the oracle call entirely. Because the oracle
//! depends only on the masked sequence (never on time), the skip is exact,
//! not an approximation. Oracle invocations are counted per trajectory.
//!
//! Reveal subsets are drawn as a binomial count followed by a uniform
//! subset, which has the same joint law as independent per-position
//! Bernoullis but costs `O(N + L)` per trajectory instead of `O(N * L)`.

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::lang::{tables, Language, Sequence};
use crate::oracle::{MaskedSequence, PosteriorOracle};
use crate::schedule::{MaskingSchedule, RemaskSchedule};

/// Per-step reveal sets, oracle-call count, and remask events of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Positions revealed at each step (sorted within a step).
    pub reveal_sets: Vec<Vec<usize>>,
    /// Number of times the oracle was actually invoked.
    pub oracle_calls: usize,
    /// `(step, position)` remask events; `None` for samplers that never
    /// remask, in which case the reveal sets partition `[0, L)`.
    pub remask_events: Option<Vec<(usize, usize)>>,
    /// True if any oracle call during the run hit zero-probability evidence
    /// and fell back to uniform marginals.
    pub degenerate_evidence: bool,
}

impl TrajectoryRecord {
    pub fn steps_with_reveals(&self) -> usize {
        self.reveal_sets.iter().filter(|s| !s.is_empty()).count()
    }

    /// Disjointness and coverage of the reveal sets (only meaningful without
    /// remasking).
    pub fn is_partition(&self, len: usize) -> bool {
        if self.remask_events.as_ref().is_some_and(|e| !e.is_empty()) {
            return false;
        }
        let mut seen = vec![false; len];
        let mut count = 0;
        for set in &self.reveal_sets {
            for &p in set {
                if p >= len || seen[p] {
                    return false;
                }
                seen[p] = true;
                count += 1;
            }
        }
        count == len
    }

    /// 1-based step at which each position was revealed for the last time.
    pub fn last_reveal_steps(&self, len: usize) -> Vec<usize> {
        let mut last = vec![0usize; len];
        for (i, set) in self.reveal_sets.iter().enumerate() {
            for &p in set {
                last[p] = i + 1;
            }
        }
        last
    }

    /// Mask count after each step (replays reveal and remask events).
    pub fn mask_counts_after_each_step(&self, len: usize) -> Vec<usize> {
        let mut masked = vec![true; len];
        let mut out = Vec::with_capacity(self.reveal_sets.len());
        let empty = Vec::new();
        let events = self.remask_events.as_ref().unwrap_or(&empty);
        for (i, set) in self.reveal_sets.iter().enumerate() {
            for &p in set {
                masked[p] = false;
            }
            for &(step, p) in events {
                if step == i + 1 {
                    masked[p] = true;
                }
            }
            out.push(masked.iter().filter(|&&m| m).count());
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerOptions {
    /// Skip the oracle on steps that reveal nothing (exact; on by default).
    /// Disabling it reproduces the uncached sampler for comparison runs.
    pub skip_empty_oracle: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            skip_empty_oracle: true,
        }
    }
}

/// Apply the forward corruption at diffusion time `t = time_index / N`:
/// each token independently survives with probability `alpha(t)`.
pub fn forward_mask(
    seq: &Sequence,
    time_index: usize,
    schedule: &MaskingSchedule,
    rng: &mut dyn RngCore,
) -> MaskedSequence {
    let alpha = schedule.alpha_at_time_index(time_index);
    let mut masked = MaskedSequence::from_sequence(seq);
    for i in 0..seq.len() {
        if rng.random::<f64>() >= alpha {
            masked.set_mask(i);
        }
    }
    masked
}

/// Outcome of one reverse step.
#[derive(Debug)]
pub struct StepOutcome {
    pub state: MaskedSequence,
    pub revealed: Vec<usize>,
    pub oracle_called: bool,
    pub degenerate: bool,
}

/// One reverse step `k` of the true reverse kernel: each masked position
/// independently joins the reveal set with probability `delta_k` over the
/// remaining mask mass; a nonempty reveal set triggers exactly one oracle
/// call on the pre-step state, and every revealed position samples its token
/// independently from its own marginal.
pub fn reverse_step(
    oracle: &mut dyn PosteriorOracle,
    state: &MaskedSequence,
    step: usize,
    schedule: &MaskingSchedule,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome> {
    if step == 0 || step > schedule.num_steps() {
        return Err(Error::Schedule(format!(
            "step {step} outside 1..={}",
            schedule.num_steps()
        )));
    }
    let mut next = state.clone();
    let mut masked = state.masked_positions();
    let (revealed, oracle_called, degenerate) = step_core(
        oracle,
        &mut next,
        &mut masked,
        schedule.reveal_prob(step),
        rng,
    )?;
    Ok(StepOutcome {
        state: next,
        revealed,
        oracle_called,
        degenerate,
    })
}

fn binomial_count(m: usize, p: f64, rng: &mut dyn RngCore) -> usize {
    if m == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        m
    } else {
        Binomial::new(m as u64, p)
            .expect("probability validated")
            .sample(rng) as usize
    }
}

/// Remove a uniform subset of `count` entries from `pool` and return it
/// sorted. Partial Fisher-Yates; identical in law to independent
/// Bernoullis conditioned on their count.
fn draw_subset(pool: &mut Vec<usize>, count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let m = pool.len();
    for j in 0..count {
        let i = rng.random_range(j..m);
        pool.swap(j, i);
    }
    let mut chosen: Vec<usize> = pool.drain(0..count).collect();
    chosen.sort_unstable();
    chosen
}

fn step_core(
    oracle: &mut dyn PosteriorOracle,
    state: &mut MaskedSequence,
    masked: &mut Vec<usize>,
    reveal_prob: f64,
    rng: &mut dyn RngCore,
) -> Result<(Vec<usize>, bool, bool)> {
    let count = binomial_count(masked.len(), reveal_prob, rng);
    if count == 0 {
        return Ok((Vec::new(), false, false));
    }
    let revealed = draw_subset(masked, count, rng);
    let marginals = oracle.marginals_at(state, &revealed)?;
    for &pos in &revealed {
        let row = marginals.get(pos).expect("marginal for revealed position");
        state.set_token(pos, tables::sample_index(row, rng) as u32);
    }
    Ok((revealed, true, marginals.is_degenerate()))
}

/// Run the full reverse process from an all-mask sequence.
pub fn mdm_sample(
    lang: &dyn Language,
    len: usize,
    schedule: &MaskingSchedule,
    rng: &mut dyn RngCore,
) -> Result<(Sequence, TrajectoryRecord)> {
    mdm_sample_with(lang, len, schedule, SamplerOptions::default(), rng)
}

pub fn mdm_sample_with(
    lang: &dyn Language,
    len: usize,
    schedule: &MaskingSchedule,
    options: SamplerOptions,
    rng: &mut dyn RngCore,
) -> Result<(Sequence, TrajectoryRecord)> {
    let mut oracle = lang.oracle()?;
    let n = schedule.num_steps();
    let mut state = MaskedSequence::all_masked(len);
    let mut masked: Vec<usize> = (0..len).collect();
    let mut reveal_sets = Vec::with_capacity(n);
    let mut oracle_calls = 0usize;
    let mut degenerate_evidence = false;
    for step in 1..=n {
        let (revealed, called, degen) = step_core(
            &mut *oracle,
            &mut state,
            &mut masked,
            schedule.reveal_prob(step),
            rng,
        )?;
        if called {
            oracle_calls += 1;
        } else if !options.skip_empty_oracle {
            // Uncached mode: pay for the call even when nothing reveals.
            let _ = oracle.marginals_at(&state, &[])?;
            oracle_calls += 1;
        }
        degenerate_evidence |= degen;
        reveal_sets.push(revealed);
    }
    // Defensive only: constructed schedules reach alpha = 1 exactly, so the
    // final step reveals every remaining position.
    if !masked.is_empty() {
        let leftovers = std::mem::take(&mut masked);
        let marginals = oracle.marginals_at(&state, &leftovers)?;
        oracle_calls += 1;
        degenerate_evidence |= marginals.is_degenerate();
        for &pos in &leftovers {
            let row = marginals.get(pos).expect("marginal for leftover position");
            state.set_token(pos, tables::sample_index(row, rng) as u32);
        }
        reveal_sets.last_mut().expect("at least one step").extend(leftovers);
        reveal_sets.last_mut().unwrap().sort_unstable();
    }
    let record = TrajectoryRecord {
        reveal_sets,
        oracle_calls,
        remask_events: None,
        degenerate_evidence,
    };
    assert!(record.is_partition(len), "reveal sets must partition [0, L)");
    Ok((state.to_sequence()?, record))
}

/// Remasking reverse process: per step, each unmasked position returns to
/// the mask state with probability `sigma_k`, each masked position reveals
/// with the complementary branch of the remasking kernel. Reveals sample
/// from factorized posteriors on the pre-step state.
pub fn remdm_sample(
    lang: &dyn Language,
    len: usize,
    schedule: &MaskingSchedule,
    remask: &RemaskSchedule,
    rng: &mut dyn RngCore,
) -> Result<(Sequence, TrajectoryRecord)> {
    if remask.sigmas().len() != schedule.num_steps() {
        return Err(Error::Schedule(
            "remask schedule length does not match the masking schedule".into(),
        ));
    }
    let mut oracle = lang.oracle()?;
    let n = schedule.num_steps();
    let mut state = MaskedSequence::all_masked(len);
    let mut masked: Vec<usize> = (0..len).collect();
    let mut unmasked: Vec<usize> = Vec::with_capacity(len);
    let mut reveal_sets = Vec::with_capacity(n);
    let mut remask_events: Vec<(usize, usize)> = Vec::new();
    let mut oracle_calls = 0usize;
    let mut degenerate_evidence = false;
    for step in 1..=n {
        let sigma = remask.sigma(step);
        let alpha_before = schedule.alpha_before_step(step);
        let alpha_after = schedule.alpha_after_step(step);
        let remaining = 1.0 - alpha_before;
        let reveal_prob = if remaining <= 0.0 {
            1.0
        } else {
            ((alpha_after - (1.0 - sigma) * alpha_before) / remaining).clamp(0.0, 1.0)
        };
        // Draw both position sets from the pre-step state.
        let reveal_count = binomial_count(masked.len(), reveal_prob, rng);
        let revealed = draw_subset(&mut masked, reveal_count, rng);
        let remask_count = binomial_count(unmasked.len(), sigma, rng);
        let remasked = draw_subset(&mut unmasked, remask_count, rng);
        if !revealed.is_empty() {
            let marginals = oracle.marginals_at(&state, &revealed)?;
            oracle_calls += 1;
            degenerate_evidence |= marginals.is_degenerate();
            for &pos in &revealed {
                let row = marginals.get(pos).expect("marginal for revealed position");
                state.set_token(pos, tables::sample_index(row, rng) as u32);
            }
        }
        for &pos in &remasked {
            state.set_mask(pos);
            remask_events.push((step, pos));
            masked.push(pos);
        }
        unmasked.extend_from_slice(&revealed);
        reveal_sets.push(revealed);
    }
    assert_eq!(
        state.mask_count(),
        0,
        "the capped remask schedule leaves no masks after the last step"
    );
    let record = TrajectoryRecord {
        reveal_sets,
        oracle_calls,
        remask_events: Some(remask_events),
        degenerate_evidence,
    };
    Ok((state.to_sequence()?, record))
}

/// Probability that a position is revealed *for the last time* at each step:
/// `(alpha_k - (1 - sigma_k) alpha_{k-1}) * prod_{j>k} (1 - sigma_j)`.
/// With all-zero sigmas this is the schedule's delta vector.
pub fn last_reveal_probs(schedule: &MaskingSchedule, remask: &RemaskSchedule) -> Vec<f64> {
    let n = schedule.num_steps();
    let mut out = vec![0.0f64; n];
    let mut survive = 1.0f64; // prod of (1 - sigma_j) for j > k
    for k in (1..=n).rev() {
        let sigma = remask.sigma(k);
        out[k - 1] = (schedule.alpha_after_step(k)
            - (1.0 - sigma) * schedule.alpha_before_step(k))
            * survive;
        survive *= 1.0 - sigma;
    }
    out
}

/// Exact autoregressive baseline: tokens drawn left-to-right from the exact
/// conditionals; `L` oracle-equivalent calls; the output never leaves the
/// support.
pub fn ar_sample(lang: &dyn Language, len: usize, rng: &mut dyn RngCore) -> Result<Sequence> {
    lang.sample_autoregressive(len, rng)
}

/// Left-to-right MDM: `N = L` steps, step `k` reveals exactly position
/// `k-1` from the oracle marginal given everything revealed so far. Exactly
/// `L` oracle calls; distributionally identical to [`ar_sample`].
pub fn l2r_mdm_sample(
    lang: &dyn Language,
    len: usize,
    rng: &mut dyn RngCore,
) -> Result<(Sequence, TrajectoryRecord)> {
    let mut oracle = lang.oracle()?;
    let mut state = MaskedSequence::all_masked(len);
    let mut reveal_sets = Vec::with_capacity(len);
    let mut degenerate_evidence = false;
    for pos in 0..len {
        let marginals = oracle.marginals_at(&state, &[pos])?;
        degenerate_evidence |= marginals.is_degenerate();
        let row = marginals.get(pos).expect("marginal for next position");
        state.set_token(pos, tables::sample_index(row, rng) as u32);
        reveal_sets.push(vec![pos]);
    }
    let record = TrajectoryRecord {
        reveal_sets,
        oracle_calls: len,
        remask_events: None,
        degenerate_evidence,
    };
    Ok((state.to_sequence()?, record))
}
