use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProxyError;

/// Cutoff with no false negatives on the held-out frames it was fit on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub cutoff: f64,
    /// Always 0 by construction.
    pub heldout_false_negatives: u64,
    /// Fraction of held-out frames the cutoff discards.
    pub selectivity: f64,
}

impl ThresholdEstimate {
    pub fn passes(&self, signal: f64) -> bool {
        signal >= self.cutoff
    }
}

/// Largest cutoff keeping every held-out positive: the minimum positive signal.
pub fn estimate_threshold(signals: &[f64], labels: &[bool]) -> Result<ThresholdEstimate, ProxyError> {
    if signals.len() != labels.len() {
        return Err(ProxyError::LengthMismatch(signals.len(), labels.len()));
    }
    let cutoff = signals
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s))))
        .ok_or(ProxyError::NoPositives)?;
    let below = signals.iter().filter(|&&s| s < cutoff).count();
    let heldout_false_negatives = signals.iter().zip(labels).filter(|(&s, &l)| l && s < cutoff).count() as u64;
    Ok(ThresholdEstimate { cutoff, heldout_false_negatives, selectivity: below as f64 / signals.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    /// Mean absolute error of the resampled proxy mean.
    pub err: f64,
    /// Fraction of resamples with error below `uerr`.
    pub p_within: f64,
    pub uerr: f64,
    pub resamples: usize,
}

/// Bootstrap over held-out frames of |mean(pred) - mean(truth)|.
pub fn bootstrap_error(
    pred: &[f64],
    truth: &[f64],
    resamples: usize,
    uerr: f64,
    seed: u64,
) -> Result<BootstrapEstimate, ProxyError> {
    if pred.len() != truth.len() {
        return Err(ProxyError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(ProxyError::EmptyHeldout);
    }
    let n = pred.len();
    let diff: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut within = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..n).map(|_| diff[rng.gen_range(0..n)]).sum();
        let e = (s / n as f64).abs();
        total += e;
        if e < uerr {
            within += 1;
        }
    }
    let b = resamples.max(1) as f64;
    Ok(BootstrapEstimate { err: total / b, p_within: within as f64 / b, uerr, resamples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn cutoff_is_min_positive() {
        let signals = [0.1, 0.9, 0.3, 0.8, 0.85, 0.4, 0.95, 0.2];
        let labels = [false, true, false, true, true, false, true, false];
        let est = estimate_threshold(&signals, &labels).unwrap();
        assert_eq!(est.cutoff, 0.8);
        let mut sorted = signals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let below = sorted.partition_point(|&s| s < 0.8);
        assert_eq!(est.selectivity, below as f64 / 8.0);
        assert_eq!(est.heldout_false_negatives, 0);
    }

    #[test]
    fn all_positive_is_useless() {
        let est = estimate_threshold(&[0.2, 0.5, 0.9], &[true; 3]).unwrap();
        assert_eq!(est.selectivity, 0.0);
    }

    #[test]
    fn single_positive() {
        let est = estimate_threshold(&[0.3, 0.1, 0.7], &[false, true, false]).unwrap();
        assert_eq!(est.cutoff, 0.1);
        assert!(matches!(estimate_threshold(&[0.3], &[false]), Err(ProxyError::NoPositives)));
    }

    #[test]
    fn perfect_and_biased_proxies() {
        let truth: Vec<f64> = (0..500).map(|i| (i % 4) as f64).collect();
        let perfect = bootstrap_error(&truth, &truth, 200, 0.1, 1).unwrap();
        assert_eq!((perfect.err, perfect.p_within), (0.0, 1.0));
        let biased: Vec<f64> = truth.iter().map(|t| t + 0.5).collect();
        let b = bootstrap_error(&biased, &truth, 200, 0.1, 1).unwrap();
        assert!((b.err - 0.5).abs() < 1e-9);
        assert_eq!(b.p_within, 0.0);
        assert!(matches!(bootstrap_error(&[], &[], 10, 0.1, 1), Err(ProxyError::EmptyHeldout)));
    }

    #[test]
    fn matches_larger_resample_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.03, 1.0).unwrap();
        let truth: Vec<f64> = (0..400).map(|i| (i % 3) as f64).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + noise.sample(&mut rng)).collect();
        let small = bootstrap_error(&pred, &truth, 1000, 0.08, 2).unwrap();
        let big = bootstrap_error(&pred, &truth, 100_000, 0.08, 3).unwrap();
        assert!((small.p_within - big.p_within).abs() <= 0.03, "{small:?} vs {big:?}");
    }
}
