//! Small statistics helpers: normal confidence intervals and chi-square
//! tests used by the statistical assertions.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 99% standard-normal quantile (z at 0.995).
pub const Z_99: f64 = 2.5758293035489004;

/// Sample mean and the half-width of its 99% normal-approximation CI.
pub fn mean_ci99(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 1);
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, Z_99 * (var / n as f64).sqrt())
}

/// Binomial rate with the half-width of its 99% normal CI.
pub fn rate_ci99(successes: usize, n: usize) -> (f64, f64) {
    assert!(n >= 1);
    let p = successes as f64 / n as f64;
    (p, Z_99 * (p * (1.0 - p) / n as f64).sqrt())
}

/// Standard error of a binomial rate estimate (for 3-sigma checks).
pub fn rate_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub pass: bool,
}

/// Two-sample chi-square homogeneity test at the given significance level.
/// Bins whose pooled expected count falls below 5 are merged left to right.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], alpha: f64) -> ChiSquareOutcome {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    // Merge small bins so the chi-square approximation is sound.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0f64, 0.0f64);
    let min_pooled = 5.0 * total / na.min(nb).max(1) as f64;
    for (&ca, &cb) in a.iter().zip(b) {
        acc.0 += ca as f64;
        acc.1 += cb as f64;
        if acc.0 + acc.1 >= min_pooled {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            merged.push(acc);
        }
    }
    let mut stat = 0.0f64;
    for &(ca, cb) in &merged {
        let pooled = (ca + cb) / total;
        let ea = pooled * na as f64;
        let eb = pooled * nb as f64;
        if ea > 0.0 {
            stat += (ca - ea) * (ca - ea) / ea;
        }
        if eb > 0.0 {
            stat += (cb - eb) * (cb - eb) / eb;
        }
    }
    let dof = merged.len().saturating_sub(1).max(1);
    let critical = ChiSquared::new(dof as f64)
        .expect("positive dof")
        .inverse_cdf(1.0 - alpha);
    ChiSquareOutcome {
        statistic: stat,
        dof,
        critical,
        pass: stat <= critical,
    }
}

/// Goodness-of-fit chi-square of observed counts against exact
/// probabilities, merging bins below an expected count of 5.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], alpha: f64) -> ChiSquareOutcome {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0f64, 0.0f64);
    for (&o, &p) in observed.iter().zip(probs) {
        acc.0 += o as f64;
        acc.1 += p * n as f64;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc.0;
            last.1 += acc.1;
        } else {
            merged.push(acc);
        }
    }
    let mut stat = 0.0f64;
    for &(o, e) in &merged {
        if e > 0.0 {
            stat += (o - e) * (o - e) / e;
        } else if o > 0.0 {
            stat = f64::INFINITY;
        }
    }
    let dof = merged.len().saturating_sub(1).max(1);
    let critical = ChiSquared::new(dof as f64)
        .expect("positive dof")
        .inverse_cdf(1.0 - alpha);
    ChiSquareOutcome {
        statistic: stat,
        dof,
        critical,
        pass: stat <= critical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_samples_pass_two_sample_test() {
        let mut rng = crate::seeding::rng_from_seed(3);
        let mut a = vec![0u64; 10];
        let mut b = vec![0u64; 10];
        for _ in 0..20000 {
            a[rng.random_range(0..10usize)] += 1;
            b[rng.random_range(0..10usize)] += 1;
        }
        assert!(chi_square_two_sample(&a, &b, 0.01).pass);
    }

    #[test]
    fn shifted_samples_fail_two_sample_test() {
        let mut rng = crate::seeding::rng_from_seed(4);
        let mut a = vec![0u64; 4];
        let mut b = vec![0u64; 4];
        for _ in 0..20000 {
            a[rng.random_range(0..4usize)] += 1;
            // b heavily favors bin 0
            let x = if rng.random::<f64>() < 0.5 {
                0
            } else {
                rng.random_range(0..4usize)
            };
            b[x] += 1;
        }
        assert!(!chi_square_two_sample(&a, &b, 0.01).pass);
    }

    #[test]
    fn gof_accepts_true_distribution() {
        let mut rng = crate::seeding::rng_from_seed(5);
        let probs = [0.5, 0.25, 0.125, 0.125];
        let mut counts = [0u64; 4];
        for _ in 0..40000 {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if r < acc {
                    counts[i] += 1;
                    break;
                }
            }
        }
        assert!(chi_square_gof(&counts, &probs, 0.01).pass);
    }

    #[test]
    fn ci_shrinks_with_samples() {
        let xs: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let (m1, h1) = mean_ci99(&xs);
        let xs4: Vec<f64> = (0..400).map(|i| (i % 10) as f64).collect();
        let (m4, h4) = mean_ci99(&xs4);
        assert!((m1 - m4).abs() < 1e-12);
        assert!(h4 < h1);
    }
}
