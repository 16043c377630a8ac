//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (visible with `--nocapture`).
//!
//! The heavy Monte Carlo criteria (1 and 2) sweep thousands of trajectories
//! per cell; expect a few minutes of wall time on a laptop.

use rand::Rng;

use mdmsim::harness::{ExperimentConfig, LanguageSpec, MetricKind, SamplerSpec, ScheduleSpec};
use mdmsim::lang::{HmmModel, IntervalLanguage, Language, NGramModel};
use mdmsim::oracle::{posterior_marginals_brute, MaskedSequence};
use mdmsim::sampler::{ar_sample, l2r_mdm_sample, mdm_sample, mdm_sample_with, remdm_sample, SamplerOptions};
use mdmsim::schedule::{MaskingSchedule, RemaskSchedule};
use mdmsim::seeding::{derive, rng_from_seed};
use mdmsim::{exec, stats, verify};

const MASTER: u64 = 0x5eed_2024;

fn mdm_ser_cell(lang: &IntervalLanguage, len: usize, sched: &MaskingSchedule, trials: usize, seed: u64) -> (f64, f64) {
    let errs: Vec<u8> = exec::map_trials(trials, |t| {
        let mut rng = rng_from_seed(derive(seed, &[t as u64]));
        let (seq, _) = mdm_sample(lang, len, sched, &mut rng).unwrap();
        (lang.log_prob2(&seq).unwrap() == f64::NEG_INFINITY) as u8
    });
    let errors = errs.iter().map(|&e| e as usize).sum::<usize>();
    let p = errors as f64 / trials as f64;
    (p, stats::rate_sigma(p.clamp(1e-9, 1.0 - 1e-9), trials))
}

/// Criterion 1: with a threshold-0 2-gram, the TER gap to the exact model
/// entropy decreases in N for each L and drops below 0.05 bits at N = 512
/// for every L in {512, 1024, 2048}.
#[test]
fn c1_ter_flat_in_length() {
    let lengths = [512usize, 1024, 2048];
    let steps = [32usize, 128, 512];
    let config = ExperimentConfig {
        language: LanguageSpec::Ngram {
            order: 2,
            vocab_size: 8,
            temperature: 2.0,
            threshold: 0.0,
            seed: 11,
        },
        lengths: lengths.to_vec(),
        schedules: steps
            .iter()
            .map(|&n| ScheduleSpec::Linear { num_steps: n })
            .collect(),
        samplers: vec![SamplerSpec::Mdm],
        num_sequences: 2000,
        metrics: vec![MetricKind::Ter],
        master_seed: MASTER,
        output_dir: None,
    };
    let rows = mdmsim::harness::run_sweep(&config).unwrap();
    let model = NGramModel::generate(2, 8, 2.0, 0.0, 11).unwrap();
    let mut pass = true;
    for &len in &lengths {
        let exact = model.exact_entropy(len).unwrap();
        let gap = |n: usize| -> f64 {
            let row = rows
                .iter()
                .find(|r| r.seq_len == len && r.num_steps == n)
                .expect("cell present");
            row.value.log2() - exact
        };
        let gaps: Vec<f64> = steps.iter().map(|&n| gap(n)).collect();
        let decreasing = gaps[0] > gaps[1] && gaps[1] > gaps[2];
        let tail_ok = gaps[2] <= 0.05;
        pass &= decreasing && tail_ok;
        println!(
            "criterion 1 [L={len}]: log2TER gaps (N=32,128,512) = ({:.4}, {:.4}, {:.4}) bits; decreasing={decreasing}, gap(512)<=0.05: {tail_ok}",
            gaps[0], gaps[1], gaps[2]
        );
    }
    println!("criterion 1: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}

/// Criterion 2: with the pruned 2-gram at fixed N = 128, SER strictly
/// increases in L with non-overlapping 99% CIs.
#[test]
fn c2_ser_grows_with_length() {
    let lengths = [512usize, 1024, 2048];
    let config = ExperimentConfig {
        language: LanguageSpec::Ngram {
            order: 2,
            vocab_size: 8,
            temperature: 2.0,
            threshold: 0.008,
            seed: 11,
        },
        lengths: lengths.to_vec(),
        schedules: vec![ScheduleSpec::Linear { num_steps: 128 }],
        samplers: vec![SamplerSpec::Mdm],
        num_sequences: 2000,
        metrics: vec![MetricKind::Ser],
        master_seed: MASTER,
        output_dir: None,
    };
    let rows = mdmsim::harness::run_sweep(&config).unwrap();
    let cells: Vec<(f64, f64)> = lengths
        .iter()
        .map(|&len| {
            let row = rows.iter().find(|r| r.seq_len == len).expect("cell");
            (row.value, row.ci)
        })
        .collect();
    let mut pass = true;
    for w in cells.windows(2) {
        let ((lo_v, lo_ci), (hi_v, hi_ci)) = (w[0], w[1]);
        pass &= lo_v + lo_ci < hi_v - hi_ci;
    }
    println!(
        "criterion 2: SER at N=128 over L=(512,1024,2048) = {:.3}+-{:.3}, {:.3}+-{:.3}, {:.3}+-{:.3}; strictly increasing with disjoint CIs: {}",
        cells[0].0, cells[0].1, cells[1].0, cells[1].1, cells[2].0, cells[2].1,
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 3: interval language l=5 at N = floor(L/6): measured SER stays
/// above 1/2, within 3 sigma of the exact computation, and above the
/// closed-form lower bound `1 - (1 - p_e/N)^(L/l)` with `p_e = 1/2`.
#[test]
fn c3_interval_lower_bound() {
    let trials = 10_000;
    let mut pass = true;
    for &len in &[60usize, 120, 300] {
        let lang = IntervalLanguage::new(len, 5).unwrap();
        let n = len / 6;
        let sched = MaskingSchedule::linear(n).unwrap();
        let exact = lang.exact_ser(&sched).unwrap();
        let (ser, sigma) = mdm_ser_cell(&lang, len, &sched, trials, derive(MASTER, &[3, len as u64]));
        let above_half = ser > 0.5;
        let matches_exact = (ser - exact).abs() <= 3.0 * sigma.max(stats::rate_sigma(exact.clamp(1e-9, 1.0 - 1e-9), trials));
        let lower = 1.0 - (1.0 - 0.5 / n as f64).powi((len / 5) as i32);
        let above_lower = ser >= lower - 3.0 * sigma;
        pass &= above_half && matches_exact && above_lower;
        println!(
            "criterion 3 [L={len}, N={n}]: SER = {ser:.4} (exact {exact:.4}, 3sigma {:.4}); > 0.5: {above_half}, matches exact: {matches_exact}, >= lower bound {lower:.4}: {above_lower}",
            3.0 * sigma
        );
    }
    println!("criterion 3: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}

/// Criterion 4: same language at L = 60 with growing N: SER obeys the
/// simultaneous-sampling bound and drops below 0.03 by N = 6000.
#[test]
fn c4_interval_many_steps() {
    let len = 60usize;
    let lang = IntervalLanguage::new(len, 5).unwrap();
    let trials = 10_000;
    let mut pass = true;
    let mut last_ser = f64::NAN;
    for &n in &[60usize, 600, 6000] {
        let sched = MaskingSchedule::linear(n).unwrap();
        let bound = len as f64 * (len as f64 - 1.0) / 2.0
            * sched.deltas().iter().map(|d| d * d).sum::<f64>();
        let (ser, sigma) = mdm_ser_cell(&lang, len, &sched, trials, derive(MASTER, &[4, n as u64]));
        let ok = ser <= bound + 3.0 * sigma;
        pass &= ok;
        last_ser = ser;
        println!(
            "criterion 4 [N={n}]: SER = {ser:.4} <= multi-reveal bound {bound:.4} + 3sigma: {ok}"
        );
    }
    let tail_ok = last_ser < 0.03;
    pass &= tail_ok;
    println!(
        "criterion 4: SER(N=6000) = {last_ser:.4} < 0.03: {tail_ok}; overall {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

/// Criterion 5: 500 random (HMM, mask pattern) instances agree with brute
/// enumeration to 1e-9 per marginal entry.
#[test]
fn c5_oracle_matches_brute_force() {
    let start = std::time::Instant::now();
    let worst: Vec<f64> = exec::map_trials(500, |i| {
        let mut rng = rng_from_seed(derive(MASTER, &[5, i as u64]));
        let states = rng.random_range(2..=5usize);
        let vocab = rng.random_range(2..=4usize);
        let len = rng.random_range(2..=8usize);
        let model =
            HmmModel::generate(states, vocab, 2.0, 0.05, derive(MASTER, &[50, i as u64])).unwrap();
        let x = model.sample_sequence(len, &mut rng);
        let pattern: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.6).collect();
        let masked = MaskedSequence::with_mask_pattern(&x, &pattern).unwrap();
        let fast = mdmsim::oracle::posterior_marginals(&model, &masked).unwrap();
        let brute = posterior_marginals_brute(&model, &masked).unwrap();
        let mut worst: f64 = 0.0;
        for (pos, row) in fast.entries() {
            for (a, b) in row.iter().zip(brute.get(*pos).unwrap()) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    });
    let max_err = worst.iter().cloned().fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    println!(
        "criterion 5: 500 instances, max marginal error {max_err:.3e} (<= 1e-9), {:.2}s: {}",
        elapsed.as_secs_f64(),
        if max_err <= 1e-9 { "PASS" } else { "FAIL" }
    );
    assert!(max_err <= 1e-9);
}

/// Criterion 6: the exact AR baseline never leaves the support on any
/// language class, and left-to-right MDM is distributionally identical to
/// it (chi-square at 99% on an L=3, V=3 model).
#[test]
fn c6_exact_baselines() {
    let mut pass = true;
    // SER(ar) = 0 over 10^4 samples per language class.
    let ngram = NGramModel::generate(2, 8, 2.0, 0.008, 17).unwrap();
    let hmm = HmmModel::generate(32, 8, 3.2, 0.003, 17).unwrap();
    let interval = IntervalLanguage::new(40, 5).unwrap();
    let langs: [(&str, &dyn Language, usize); 3] =
        [("ngram", &ngram, 64), ("hmm", &hmm, 64), ("interval", &interval, 40)];
    for (name, lang, len) in langs {
        let errs: Vec<u8> = exec::map_trials(10_000, |t| {
            let mut rng = rng_from_seed(derive(MASTER, &[6, t as u64]));
            let seq = ar_sample(lang, len, &mut rng).unwrap();
            (lang.log_prob2(&seq).unwrap() == f64::NEG_INFINITY) as u8
        });
        let errors: usize = errs.iter().map(|&e| e as usize).sum();
        pass &= errors == 0;
        println!("criterion 6 [{name}]: AR SER over 10^4 samples = {errors} (must be 0)");
    }
    // Chi-square identity of l2r vs ar.
    let small = NGramModel::generate(2, 3, 2.0, 0.05, 23).unwrap();
    let trials = 100_000;
    let outcomes = |use_l2r: bool| -> Vec<u64> {
        let per: Vec<usize> = exec::map_trials(trials, |t| {
            let mut rng = rng_from_seed(derive(MASTER, &[7, use_l2r as u64, t as u64]));
            let seq = if use_l2r {
                l2r_mdm_sample(&small, 3, &mut rng).unwrap().0
            } else {
                ar_sample(&small, 3, &mut rng).unwrap()
            };
            seq.iter().fold(0usize, |acc, &t| acc * 3 + t as usize)
        });
        let mut counts = vec![0u64; 27];
        for i in per {
            counts[i] += 1;
        }
        counts
    };
    let test = stats::chi_square_two_sample(&outcomes(false), &outcomes(true), 0.01);
    pass &= test.pass;
    println!(
        "criterion 6 [l2r == ar]: chi-square {:.2} vs critical {:.2} (dof {}): {}",
        test.statistic,
        test.critical,
        test.dof,
        if test.pass { "PASS" } else { "FAIL" }
    );
    println!("criterion 6: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}

/// Criterion 7: the lemma/bound property suites all pass.
#[test]
fn c7_lemma_suites() {
    let outcomes = verify::run_all(MASTER, 10_000);
    let mut pass = true;
    for o in &outcomes {
        println!(
            "criterion 7 [{}]: {} - {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        pass &= o.passed;
    }
    assert!(pass);
}

/// Criterion 8: remasking behavior. The last-reveal law matches its closed
/// form; a zero remask schedule reduces to plain MDM; and capped
/// sigma = 0.05 remasking does not escape the interval lower bound at
/// N = floor(L/6).
#[test]
fn c8_remasking() {
    let mut pass = true;
    // (a) Lemma last-reveal distribution at 3 sigma.
    let d4 = verify::check_last_reveal_distribution(MASTER, 100_000);
    pass &= d4.passed;
    println!(
        "criterion 8 [last-reveal]: {} - {}",
        if d4.passed { "PASS" } else { "FAIL" },
        d4.detail
    );
    // (b) sigma == 0 reduces to the plain MDM law (chi-square at 99%).
    let small = NGramModel::generate(2, 3, 2.0, 0.05, 29).unwrap();
    let sched = MaskingSchedule::linear(4).unwrap();
    let zeros = RemaskSchedule::zeros(&sched);
    let trials = 50_000;
    let outcomes = |remask: bool| -> Vec<u64> {
        let per: Vec<usize> = exec::map_trials(trials, |t| {
            let mut rng = rng_from_seed(derive(MASTER, &[8, remask as u64, t as u64]));
            let seq = if remask {
                remdm_sample(&small, 3, &sched, &zeros, &mut rng).unwrap().0
            } else {
                mdm_sample(&small, 3, &sched, &mut rng).unwrap().0
            };
            seq.iter().fold(0usize, |acc, &t| acc * 3 + t as usize)
        });
        let mut counts = vec![0u64; 27];
        for i in per {
            counts[i] += 1;
        }
        counts
    };
    let test = stats::chi_square_two_sample(&outcomes(false), &outcomes(true), 0.01);
    pass &= test.pass;
    println!(
        "criterion 8 [sigma=0 == mdm]: chi-square {:.2} vs critical {:.2}: {}",
        test.statistic,
        test.critical,
        if test.pass { "PASS" } else { "FAIL" }
    );
    // (c) Capped remasking does not rescue the interval lower bound.
    for &len in &[60usize, 120, 300] {
        let lang = IntervalLanguage::new(len, 5).unwrap();
        let sched = MaskingSchedule::linear(len / 6).unwrap();
        let remask = RemaskSchedule::capped_uniform(0.05, &sched).unwrap();
        let errs: Vec<u8> = exec::map_trials(10_000, |t| {
            let mut rng = rng_from_seed(derive(MASTER, &[9, len as u64, t as u64]));
            let (seq, _) = remdm_sample(&lang, len, &sched, &remask, &mut rng).unwrap();
            (lang.log_prob2(&seq).unwrap() == f64::NEG_INFINITY) as u8
        });
        let ser = errs.iter().map(|&e| e as usize).sum::<usize>() as f64 / 10_000.0;
        let ok = ser > 0.5;
        pass &= ok;
        println!("criterion 8 [remdm escape, L={len}]: SER = {ser:.4} > 0.5: {ok}");
    }
    println!("criterion 8: {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}

/// Criterion 9: skipping the oracle on no-reveal steps changes call counts,
/// not outcomes (chi-square at 99%), and the cached sampler's call count is
/// bounded by its steps-with-reveals.
#[test]
fn c9_oracle_call_accounting() {
    let small = NGramModel::generate(2, 3, 2.0, 0.0, 31).unwrap();
    let sched = MaskingSchedule::linear(8).unwrap();
    let len = 4usize;
    let trials = 50_000;
    let run = |skip: bool| -> (Vec<u64>, f64, bool) {
        let per: Vec<(usize, usize, usize)> = exec::map_trials(trials, |t| {
            let mut rng = rng_from_seed(derive(MASTER, &[12, skip as u64, t as u64]));
            let (seq, record) = mdm_sample_with(
                &small,
                len,
                &sched,
                SamplerOptions {
                    skip_empty_oracle: skip,
                },
                &mut rng,
            )
            .unwrap();
            let idx = seq.iter().fold(0usize, |acc, &t| acc * 3 + t as usize);
            (idx, record.oracle_calls, record.steps_with_reveals())
        });
        let mut counts = vec![0u64; 81];
        let mut total_calls = 0usize;
        let mut cap_ok = true;
        for (idx, calls, steps) in per {
            counts[idx] += 1;
            total_calls += calls;
            if skip {
                cap_ok &= calls <= steps;
            }
        }
        (counts, total_calls as f64 / trials as f64, cap_ok)
    };
    let (cached_counts, cached_calls, cap_ok) = run(true);
    let (uncached_counts, uncached_calls, _) = run(false);
    let test = stats::chi_square_two_sample(&cached_counts, &uncached_counts, 0.01);
    let pass = test.pass && cap_ok && cached_calls < uncached_calls;
    println!(
        "criterion 9: cached {cached_calls:.2} vs uncached {uncached_calls:.2} mean oracle calls; calls <= steps-with-reveals: {cap_ok}; outcome chi-square {:.2} vs {:.2}: {}",
        test.statistic,
        test.critical,
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
