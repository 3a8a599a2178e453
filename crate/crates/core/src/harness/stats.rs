//! Sample statistics and percentile bootstrap intervals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean; `None` below two samples.
pub fn std_error(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

/// Percentile bootstrap interval of `stat` at two-sided level `level`.
pub fn bootstrap_interval<F>(xs: &[f64], stat: F, reps: usize, level: f64, seed: u64) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    assert!(!xs.is_empty() && reps > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; xs.len()];
    let mut stats: Vec<f64> = (0..reps)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..xs.len())];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| stats[((q * reps as f64).floor() as usize).min(reps - 1)];
    (at(tail), at(1.0 - tail))
}

/// Bootstrap interval of the mean paired difference `a - b`.
pub fn paired_difference_interval(a: &[f64], b: &[f64], reps: usize, level: f64, seed: u64) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    bootstrap_interval(&d, mean, reps, level, seed)
}

/// Root of the mean of `sq`.
pub fn root_mean(sq: &[f64]) -> f64 {
    mean(sq).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_error_matches_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let se = std_error(&xs).unwrap();
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(std_error(&[1.0]).is_none());
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (lo, hi) = bootstrap_interval(&xs, mean, 2000, 0.95, 3);
        let m = mean(&xs);
        assert!(lo < m && m < hi);
        let se = std_error(&xs).unwrap();
        assert!(((hi - lo) / (2.0 * 1.96 * se) - 1.0).abs() < 0.2);
    }

    #[test]
    fn constant_shift_is_detected() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.5).collect();
        let (lo, hi) = paired_difference_interval(&a, &b, 500, 0.95, 1);
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 0.5).abs() < 1e-12);
    }
}
