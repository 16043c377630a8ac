//! Shared probability-table plumbing: row softmax, one-pass pruning,
//! categorical sampling, and row entropies.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-12;

/// Row-wise softmax of `rows x cols` Gaussian logits scaled by `temperature`.
/// Draws logits row-major from `rng`.
pub fn gaussian_softmax_rows(
    rows: usize,
    cols: usize,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Vec<f64> {
    let mut table = vec![0.0f64; rows * cols];
    for row in table.chunks_mut(cols) {
        let mut max = f64::NEG_INFINITY;
        for x in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = z * temperature;
            max = max.max(*x);
        }
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    table
}

/// One prune pass: zero entries strictly below `threshold`, then renormalize
/// each row once. Renormalization may push surviving entries back below the
/// threshold; that matches the construction and is accepted.
pub fn prune_rows(
    table: &mut [f64],
    cols: usize,
    threshold: f64,
    table_name: &'static str,
) -> Result<()> {
    if threshold <= 0.0 {
        return Ok(());
    }
    for (r, row) in table.chunks_mut(cols).enumerate() {
        let mut sum = 0.0;
        for x in row.iter_mut() {
            if *x < threshold {
                *x = 0.0;
            }
            sum += *x;
        }
        if sum <= 0.0 {
            return Err(Error::DegenerateRow {
                table: table_name,
                row: r,
                threshold,
            });
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    Ok(())
}

/// Uniform-random positive vector, normalized to sum 1.
pub fn random_dist(len: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    v
}

/// Sample an index from an (unnormalized is fine) nonnegative weight vector.
pub fn sample_index(weights: &[f64], rng: &mut dyn RngCore) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "sampling from an all-zero weight vector");
    let mut r = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if r < w {
                return i;
            }
            r -= w;
        }
    }
    last_positive
}

/// Shannon entropy of a probability row, in bits.
pub fn entropy2(row: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in row {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

/// Check that every row of `table` sums to 1 within `ROW_SUM_TOL`.
pub fn check_row_stochastic(table: &[f64], cols: usize, what: &str) -> Result<()> {
    for (r, row) in table.chunks(cols).enumerate() {
        if row.iter().any(|&x| x < 0.0) {
            return Err(Error::Config(format!("{what}: negative entry in row {r}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Config(format!(
                "{what}: row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    #[test]
    fn softmax_rows_are_stochastic() {
        let mut rng = rng_from_seed(3);
        let t = gaussian_softmax_rows(16, 5, 2.0, &mut rng);
        check_row_stochastic(&t, 5, "softmax").unwrap();
    }

    #[test]
    fn zero_temperature_is_uniform() {
        let mut rng = rng_from_seed(3);
        let t = gaussian_softmax_rows(4, 8, 0.0, &mut rng);
        for &x in &t {
            assert!((x - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn prune_errors_on_dead_row() {
        // Threshold above every entry of a uniform row kills it.
        let mut t = vec![0.25f64; 4];
        let err = prune_rows(&mut t, 4, 0.5, "test").unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 0, .. }));
    }

    #[test]
    fn sample_index_respects_zeros() {
        let mut rng = rng_from_seed(9);
        let w = [0.0, 0.7, 0.0, 0.3];
        for _ in 0..200 {
            let i = sample_index(&w, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
