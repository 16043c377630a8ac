//! Property tests over randomized structures: schedule invariants,
//! dependency-count consistency, interval support, and masked-sequence
//! bookkeeping.

use proptest::prelude::*;

use mdmsim::analysis::{count_dependencies, count_separators, trajectory_dependencies};
use mdmsim::lang::{IntervalLanguage, Language};
use mdmsim::oracle::MaskedSequence;
use mdmsim::sampler::{last_reveal_probs, TrajectoryRecord};
use mdmsim::schedule::{MaskingSchedule, RemaskSchedule};
use mdmsim::seeding::rng_from_seed;
use mdmsim::Sequence;

proptest! {
    #[test]
    fn custom_schedules_always_satisfy_invariants(
        raw in proptest::collection::vec(0.0f64..10.0, 1..40)
    ) {
        let sum: f64 = raw.iter().sum();
        prop_assume!(sum > 1e-6);
        let deltas: Vec<f64> = raw.iter().map(|d| d / sum).collect();
        let sched = MaskingSchedule::custom(deltas).unwrap();
        let n = sched.num_steps();
        prop_assert_eq!(sched.alphas()[0], 0.0);
        prop_assert_eq!(sched.alphas()[n], 1.0);
        let total: f64 = sched.deltas().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12 * n as f64);
        for w in sched.alphas().windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-15);
        }
        for k in 1..=n {
            let p = sched.reveal_prob(k);
            prop_assert!((0.0..=1.0).contains(&p));
        }
        prop_assert_eq!(sched.reveal_prob(n), 1.0);
    }

    #[test]
    fn dep_is_bounded_and_consistent(
        assignment in proptest::collection::vec(0u8..3, 2..48),
        n in 2usize..5
    ) {
        let len = assignment.len();
        let new: Vec<usize> = assignment.iter().enumerate()
            .filter_map(|(i, &c)| (c == 0).then_some(i)).collect();
        let prev: Vec<usize> = assignment.iter().enumerate()
            .filter_map(|(i, &c)| (c == 1).then_some(i)).collect();
        let dep = count_dependencies(&new, &prev, n, len).unwrap();
        prop_assert!(dep <= new.len().saturating_sub(1));
        // More separators can only reduce dependencies of a fixed new set.
        let no_prev = count_dependencies(&new, &[], n, len).unwrap();
        prop_assert!(dep <= no_prev);
        // Separator count is monotone in the run structure.
        let sep = count_separators(&prev, n, len);
        prop_assert!(sep <= prev.len() / (n - 1));
    }

    #[test]
    fn trajectory_total_equals_stepwise_sum(
        perm_seed in 0u64..1000, cuts in proptest::collection::vec(1usize..8, 1..6)
    ) {
        // Build a random partition trajectory of [0, L).
        let len = 20usize;
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = rng_from_seed(perm_seed);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut sets: Vec<Vec<usize>> = Vec::new();
        let mut cursor = 0usize;
        for &c in &cuts {
            if cursor >= len { break; }
            let hi = (cursor + c).min(len);
            let mut set = order[cursor..hi].to_vec();
            set.sort_unstable();
            sets.push(set);
            cursor = hi;
        }
        if cursor < len {
            let mut set = order[cursor..].to_vec();
            set.sort_unstable();
            sets.push(set);
        }
        let record = TrajectoryRecord {
            reveal_sets: sets.clone(),
            oracle_calls: sets.len(),
            remask_events: None,
            degenerate_evidence: false,
        };
        let total = trajectory_dependencies(&record, 3, len).unwrap();
        let mut prev: Vec<usize> = Vec::new();
        let mut stepwise = 0usize;
        for set in &sets {
            stepwise += count_dependencies(set, &prev, 3, len).unwrap();
            prev.extend_from_slice(set);
        }
        prop_assert_eq!(total, stepwise);
    }

    #[test]
    fn interval_samples_always_in_support(l in 2usize..7, m in 1usize..5, seed in 0u64..500) {
        let lang = IntervalLanguage::new(l * m, l).unwrap();
        let mut rng = rng_from_seed(seed);
        let x = lang.sample_sequence(l * m, &mut rng);
        prop_assert!(lang.in_support(&x).unwrap());
        prop_assert!(lang.log_prob2(&x).unwrap() > f64::NEG_INFINITY);
    }

    #[test]
    fn masked_sequence_bookkeeping(pattern in proptest::collection::vec(any::<bool>(), 1..64)) {
        let len = pattern.len();
        let seq = Sequence::new(vec![0u32; len]);
        let mut masked = MaskedSequence::with_mask_pattern(&seq, &pattern).unwrap();
        let expected = pattern.iter().filter(|&&m| m).count();
        prop_assert_eq!(masked.mask_count(), expected);
        prop_assert_eq!(masked.masked_positions().len(), expected);
        // Reveal everything, then remask one position.
        for i in 0..len {
            masked.set_token(i, 0);
        }
        prop_assert_eq!(masked.mask_count(), 0);
        masked.set_mask(0);
        prop_assert_eq!(masked.mask_count(), 1);
        prop_assert!(masked.to_sequence().is_err());
    }

    #[test]
    fn last_reveal_probs_always_sum_to_one(num_steps in 1usize..40, sigma in 0.0f64..1.0) {
        let sched = MaskingSchedule::linear(num_steps).unwrap();
        let remask = RemaskSchedule::capped_uniform(sigma, &sched).unwrap();
        let probs = last_reveal_probs(&sched, &remask);
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum = {}", sum);
        prop_assert!(probs.iter().all(|&p| p >= -1e-15));
    }
}
