//! Property suites behind `mdmsim verify`: each check replays one of the
//! bound statements against enumeration or Monte Carlo simulation and
//! reports a pass/fail line.

use rand::Rng;

use crate::analysis;
use crate::exec;
use crate::lang::IntervalLanguage;
use crate::sampler;
use crate::schedule::{MaskingSchedule, RemaskSchedule};
use crate::seeding;
use crate::stats;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Factorized-sampling KL bound on random enumerable instances
/// (`k <= 3`, `V <= 4`).
pub fn check_kl_factorized_bound(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = seeding::rng_from_seed(seeding::derive(seed, &[1]));
    let mut worst_gap = f64::NEG_INFINITY;
    for i in 0..instances {
        let k = rng.random_range(1..=3usize);
        let v = rng.random_range(2..=4usize);
        let cells = v.pow(k as u32);
        let mut joint: Vec<f64> = (0..cells).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = joint.iter().sum();
        joint.iter_mut().for_each(|x| *x /= total);
        let marginals: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut p: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|x| *x /= s);
                p
            })
            .collect();
        match analysis::kl_factorized_check(&joint, v, &marginals) {
            Ok(check) => {
                worst_gap = worst_gap.max(check.kl - check.bound);
                if !check.holds {
                    return CheckOutcome::new(
                        "kl-factorized-bound",
                        false,
                        format!(
                            "instance {i} (k={k}, V={v}): KL {} exceeds bound {}",
                            check.kl, check.bound
                        ),
                    );
                }
            }
            Err(e) => {
                return CheckOutcome::new("kl-factorized-bound", false, format!("instance {i}: {e}"))
            }
        }
    }
    CheckOutcome::new(
        "kl-factorized-bound",
        true,
        format!("{instances} instances, worst KL-bound gap {worst_gap:.3e}"),
    )
}

/// The worked dependency example: prev {2,3,4,6,7}, new {1,5,9}, n = 4,
/// L = 10 (1-indexed) must give SEP = 1 and DEP = 1.
pub fn check_dep_sep_worked_example() -> CheckOutcome {
    let prev = [1usize, 2, 3, 5, 6];
    let new = [0usize, 4, 8];
    let sep = analysis::count_separators(&prev, 4, 10);
    let dep = analysis::count_dependencies(&new, &prev, 4, 10).unwrap_or(usize::MAX);
    CheckOutcome::new(
        "dep-sep-worked-example",
        sep == 1 && dep == 1,
        format!("SEP={sep} (expected 1), DEP={dep} (expected 1)"),
    )
}

/// Grid of schedules for the dependency/multi-reveal bound checks.
fn schedule_grid() -> Vec<(String, MaskingSchedule)> {
    let mut grid = Vec::new();
    for n in [8usize, 32, 128] {
        grid.push((format!("linear({n})"), MaskingSchedule::linear(n).unwrap()));
    }
    for eps in [0.3f64, 0.5] {
        grid.push((
            format!("theoretical(n=2, eps={eps})"),
            MaskingSchedule::theoretical(2, eps, crate::schedule::THEORETICAL_C).unwrap(),
        ));
    }
    grid
}

/// Expected per-step dependencies stay under the closed-form bound
/// (3-sigma) across the schedule grid, with n = 2.
pub fn check_expected_dep_bound(seed: u64, trials: usize) -> CheckOutcome {
    let mut checked = 0usize;
    let mut worst_margin = f64::INFINITY;
    for (name, sched) in schedule_grid() {
        for len in [128usize, 512] {
            let est = analysis::estimate_expected_dep(
                &sched,
                len,
                2,
                trials,
                seeding::derive(seed, &[2, len as u64, seeding::hash_bytes(name.as_bytes())]),
            );
            for step in est {
                let Some(bound) = step.bound else { continue };
                checked += 1;
                let sigma = step.estimate.ci_half_width / stats::Z_99;
                let margin = bound + 3.0 * sigma - step.estimate.value;
                worst_margin = worst_margin.min(margin);
                if margin < 0.0 {
                    return CheckOutcome::new(
                        "expected-dep-bound",
                        false,
                        format!(
                            "{name} L={len} step {}: estimate {} exceeds bound {bound} + 3sigma",
                            step.step, step.estimate.value
                        ),
                    );
                }
            }
        }
    }
    CheckOutcome::new(
        "expected-dep-bound",
        true,
        format!("{checked} (schedule, L, step) cells with L*delta >= 1; worst margin {worst_margin:.4}"),
    )
}

/// Simultaneous-reveal probability stays under `L(L-1)/2 sum delta^2`
/// (3-sigma) across the grid, including the L=10, N=1000 spot value 0.045.
pub fn check_multi_reveal_bound(seed: u64, trials: usize) -> CheckOutcome {
    let mut cells = Vec::new();
    for (name, sched) in schedule_grid() {
        for len in [128usize, 512] {
            cells.push((name.clone(), sched.clone(), len));
        }
    }
    cells.push((
        "linear(1000)".to_string(),
        MaskingSchedule::linear(1000).unwrap(),
        10,
    ));
    let mut detail = String::new();
    for (name, sched, len) in cells {
        let est = analysis::estimate_multi_reveal_prob(
            &sched,
            len,
            trials,
            seeding::derive(seed, &[3, len as u64, seeding::hash_bytes(name.as_bytes())]),
        );
        let sigma = stats::rate_sigma(est.estimate.value.clamp(1e-6, 1.0 - 1e-6), trials);
        if est.estimate.value > est.bound + 3.0 * sigma {
            return CheckOutcome::new(
                "multi-reveal-bound",
                false,
                format!(
                    "{name} L={len}: estimate {} exceeds bound {} + 3sigma",
                    est.estimate.value, est.bound
                ),
            );
        }
        if len == 10 {
            detail = format!(
                "spot cell L=10 N=1000: estimate {:.4} <= bound {:.4}",
                est.estimate.value, est.bound
            );
        }
    }
    CheckOutcome::new("multi-reveal-bound", true, detail)
}

/// Probability that all positions of one interval reveal at distinct steps
/// is at most `1 - 1/N` (3-sigma), for linear schedules.
pub fn check_interval_distinct_bound(seed: u64, trials: usize) -> CheckOutcome {
    let l = 5usize;
    let mut detail = String::new();
    for n in [4usize, 16, 64] {
        let sched = MaskingSchedule::linear(n).unwrap();
        let lang = IntervalLanguage::new(l, l).unwrap();
        let exact = lang.prob_all_distinct_steps(&sched).unwrap();
        let hits: Vec<u8> = exec::map_trials(trials, |t| {
            let mut rng =
                seeding::rng_from_seed(seeding::derive(seed, &[4, n as u64, t as u64]));
            let mut seen = vec![false; n];
            for _ in 0..l {
                let step = sample_step(&sched, &mut rng);
                if seen[step] {
                    return 0u8;
                }
                seen[step] = true;
            }
            1u8
        });
        let p = hits.iter().map(|&h| h as usize).sum::<usize>() as f64 / trials as f64;
        let sigma = stats::rate_sigma(p.clamp(1e-6, 1.0 - 1e-6), trials);
        let bound = 1.0 - 1.0 / n as f64;
        if p > bound + 3.0 * sigma {
            return CheckOutcome::new(
                "interval-distinct-bound",
                false,
                format!("N={n}: distinct-step probability {p} exceeds 1 - 1/N = {bound} + 3sigma"),
            );
        }
        if (p - exact).abs() > 3.0 * sigma + 1e-9 {
            return CheckOutcome::new(
                "interval-distinct-bound",
                false,
                format!("N={n}: Monte Carlo {p} disagrees with exact {exact}"),
            );
        }
        detail = format!("N=64: estimate {p:.4} <= 1 - 1/N, matches exact {exact:.4}");
    }
    CheckOutcome::new("interval-distinct-bound", true, detail)
}

/// Last-reveal distribution of the remasking sampler matches its closed
/// form at 3-sigma (linear N = 10, capped uniform sigma = 0.1), simulated
/// at the single-position level.
pub fn check_last_reveal_distribution(seed: u64, trials: usize) -> CheckOutcome {
    let sched = MaskingSchedule::linear(10).unwrap();
    let remask = RemaskSchedule::capped_uniform(0.1, &sched).unwrap();
    let expected = sampler::last_reveal_probs(&sched, &remask);
    let counts = simulate_last_reveal_counts(&sched, &remask, trials, seeding::derive(seed, &[5]));
    let mut worst_z = 0.0f64;
    for k in 0..sched.num_steps() {
        let p_hat = counts[k] as f64 / trials as f64;
        let sigma = stats::rate_sigma(expected[k].clamp(1e-9, 1.0 - 1e-9), trials);
        let z = (p_hat - expected[k]).abs() / sigma;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            return CheckOutcome::new(
                "last-reveal-distribution",
                false,
                format!(
                    "step {}: frequency {p_hat:.5} vs closed form {:.5} (z = {z:.2})",
                    k + 1,
                    expected[k]
                ),
            );
        }
    }
    CheckOutcome::new(
        "last-reveal-distribution",
        true,
        format!("{} steps, worst |z| = {worst_z:.2}", sched.num_steps()),
    )
}

/// Per-position mask probability at each step of the remasking kernel
/// equals `1 - alpha` (3-sigma).
pub fn check_remask_mask_marginal(seed: u64, trials: usize) -> CheckOutcome {
    let sched = MaskingSchedule::linear(10).unwrap();
    let remask = RemaskSchedule::capped_uniform(0.1, &sched).unwrap();
    let n = sched.num_steps();
    let masked_counts: Vec<u64> = exec::map_trials(trials, |t| {
        let mut rng = seeding::rng_from_seed(seeding::derive(seed, &[6, t as u64]));
        let mut masked = true;
        let mut bits = 0u64;
        for k in 1..=n {
            step_one_position(&sched, &remask, k, &mut masked, &mut rng);
            if masked {
                bits |= 1 << (k - 1);
            }
        }
        bits
    });
    let mut worst_z = 0.0f64;
    for k in 1..=n {
        let cnt = masked_counts
            .iter()
            .filter(|&&b| b & (1 << (k - 1)) != 0)
            .count();
        let expected = 1.0 - sched.alpha_after_step(k);
        let sigma = stats::rate_sigma(expected.clamp(1e-9, 1.0 - 1e-9), trials).max(1e-12);
        let z = (cnt as f64 / trials as f64 - expected).abs() / sigma;
        worst_z = worst_z.max(z);
        if z > 3.0 {
            return CheckOutcome::new(
                "remask-mask-marginal",
                false,
                format!("step {k}: mask frequency deviates from 1 - alpha (z = {z:.2})"),
            );
        }
    }
    CheckOutcome::new(
        "remask-mask-marginal",
        true,
        format!("{n} steps, worst |z| = {worst_z:.2}"),
    )
}

/// Run every check with `trials` Monte Carlo repetitions where applicable.
pub fn run_all(seed: u64, trials: usize) -> Vec<CheckOutcome> {
    vec![
        check_kl_factorized_bound(seed, 1000),
        check_dep_sep_worked_example(),
        check_expected_dep_bound(seed, trials),
        check_multi_reveal_bound(seed, trials),
        check_interval_distinct_bound(seed, trials),
        check_last_reveal_distribution(seed, trials.max(100_000)),
        check_remask_mask_marginal(seed, trials.max(100_000)),
    ]
}

fn sample_step(sched: &MaskingSchedule, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let cum = &sched.alphas()[1..];
    cum.partition_point(|&c| c <= u).min(sched.num_steps() - 1)
}

/// Single-position reveal/remask chain of the remasking kernel.
fn step_one_position(
    sched: &MaskingSchedule,
    remask: &RemaskSchedule,
    step: usize,
    masked: &mut bool,
    rng: &mut impl Rng,
) {
    let sigma = remask.sigma(step);
    if *masked {
        let before = sched.alpha_before_step(step);
        let remaining = 1.0 - before;
        let reveal = if remaining <= 0.0 {
            1.0
        } else {
            ((sched.alpha_after_step(step) - (1.0 - sigma) * before) / remaining).clamp(0.0, 1.0)
        };
        if rng.random::<f64>() < reveal {
            *masked = false;
        }
    } else if rng.random::<f64>() < sigma {
        *masked = true;
    }
}

/// Histogram of the last step at which a single position is revealed.
fn simulate_last_reveal_counts(
    sched: &MaskingSchedule,
    remask: &RemaskSchedule,
    trials: usize,
    seed: u64,
) -> Vec<u64> {
    let n = sched.num_steps();
    let per_trial: Vec<usize> = exec::map_trials(trials, |t| {
        let mut rng = seeding::rng_from_seed(seeding::derive(seed, &[t as u64]));
        let mut masked = true;
        let mut last = 0usize;
        for k in 1..=n {
            let was_masked = masked;
            step_one_position(sched, remask, k, &mut masked, &mut rng);
            if was_masked && !masked {
                last = k;
            }
        }
        assert!(!masked && last > 0);
        last
    });
    let mut counts = vec![0u64; n];
    for &l in &per_trial {
        counts[l - 1] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_passes() {
        assert!(check_dep_sep_worked_example().passed);
    }

    #[test]
    fn kl_bound_holds_on_a_small_batch() {
        let out = check_kl_factorized_bound(7, 100);
        assert!(out.passed, "{}", out.detail);
    }

    #[test]
    fn last_reveal_check_passes_quick() {
        let out = check_last_reveal_distribution(11, 40_000);
        assert!(out.passed, "{}", out.detail);
    }
}
