//! Cost model shared by the oracle, the proxy and the frame filters.
//!
//! One unit is one detector call on a full 1280x720 frame. The detector runs
//! at roughly 3 fps, proxies at 10,000 fps and simple frame filters at
//! 100,000 fps, which fixes the relative rates below.

use std::sync::atomic::{AtomicU64, Ordering};

pub const REFERENCE_AREA: f64 = 1280.0 * 720.0;

/// Detector-equivalent units per frame of proxy inference.
pub const PROXY_COST_PER_FRAME: f64 = 3.0 / 10_000.0;

/// Detector-equivalent units per frame-level filter evaluation.
pub const FILTER_COST_PER_EVAL: f64 = 3.0 / 100_000.0;

/// Lock-free `f64` accumulator.
#[derive(Debug, Default)]
pub struct AtomicCost(AtomicU64);

impl AtomicCost {
    pub fn new() -> Self {
        AtomicCost(AtomicU64::new(0f64.to_bits()))
    }

    pub fn add(&self, x: f64) {
        let _ = self
            .0
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |bits| Some((f64::from_bits(bits) + x).to_bits()));
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }
}

/// Accumulates cheap (non-detector) work: proxy inference and filter evaluations.
#[derive(Debug, Default)]
pub struct CheapMeter {
    proxy_frames: AtomicU64,
    filter_evals: AtomicU64,
}

impl CheapMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_proxy(&self, frames: u64) {
        self.proxy_frames.fetch_add(frames, Ordering::AcqRel);
    }

    pub fn charge_filter(&self, evals: u64) {
        self.filter_evals.fetch_add(evals, Ordering::AcqRel);
    }

    pub fn proxy_frames(&self) -> u64 {
        self.proxy_frames.load(Ordering::Acquire)
    }

    pub fn filter_evals(&self) -> u64 {
        self.filter_evals.load(Ordering::Acquire)
    }

    pub fn cost_units(&self) -> f64 {
        self.proxy_frames() as f64 * PROXY_COST_PER_FRAME + self.filter_evals() as f64 * FILTER_COST_PER_EVAL
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_rate_is_one_unit_per_3333_frames() {
        let m = CheapMeter::new();
        m.charge_proxy(3333);
        assert!((m.cost_units() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn atomic_cost_sums() {
        let c = AtomicCost::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| (0..1000).for_each(|_| c.add(0.5)));
            }
        });
        assert_eq!(c.get(), 2000.0);
    }
}
