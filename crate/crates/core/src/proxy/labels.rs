use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ProxyError;
use crate::tracestore::{DetectionRecord, Oracle, OracleError, VideoTrace};

/// Train / held-out / test frame ranges, disjoint and in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub train: Range<usize>,
    pub heldout: Range<usize>,
    pub test: Range<usize>,
}

impl LabeledSplit {
    pub fn new(train: Range<usize>, heldout: Range<usize>, test: Range<usize>) -> Result<Self, ProxyError> {
        let ordered = train.start <= train.end
            && heldout.start <= heldout.end
            && test.start <= test.end
            && train.end <= heldout.start
            && heldout.end <= test.start;
        if !ordered {
            return Err(ProxyError::InvalidSplit(format!("{train:?}, {heldout:?}, {test:?} are not disjoint and ordered")));
        }
        Ok(LabeledSplit { train, heldout, test })
    }

    /// Consecutive train / held-out / test blocks covering `0..n`.
    pub fn fractions(n: usize, train: f64, heldout: f64) -> Result<Self, ProxyError> {
        if !(train >= 0.0 && heldout >= 0.0 && train + heldout <= 1.0) {
            return Err(ProxyError::InvalidSplit(format!("fractions {train} + {heldout} exceed 1")));
        }
        let a = (n as f64 * train).round() as usize;
        let b = (n as f64 * (train + heldout)).round() as usize;
        Self::new(0..a, a..b, b..n)
    }

    /// No labeled data; the whole trace is unseen.
    pub fn whole(n: usize) -> Self {
        LabeledSplit { train: 0..0, heldout: 0..0, test: 0..n }
    }

    pub fn check(&self, n_frames: usize) -> Result<(), ProxyError> {
        if self.test.end > n_frames {
            return Err(ProxyError::InvalidSplit(format!("test range {:?} exceeds {n_frames} frames", self.test)));
        }
        Ok(())
    }

    pub fn labeled_frames(&self) -> impl Iterator<Item = usize> {
        self.train.clone().chain(self.heldout.clone())
    }
}

/// Ground truth for the train and held-out frames, produced once offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub split: LabeledSplit,
    records: BTreeMap<usize, Vec<DetectionRecord>>,
    pub offline_oracle_calls: u64,
    pub offline_cost_units: f64,
}

/// Runs the detector over the train and held-out ranges.
pub fn label(trace: &VideoTrace, split: &LabeledSplit) -> Result<LabeledSet, OracleError> {
    let oracle = Oracle::new(trace);
    let mut records = BTreeMap::new();
    for t in split.labeled_frames() {
        records.insert(t, oracle.detect(t, None)?);
    }
    Ok(LabeledSet {
        split: split.clone(),
        records,
        offline_oracle_calls: oracle.call_count(),
        offline_cost_units: oracle.cost_units(),
    })
}

impl LabeledSet {
    pub fn records(&self, t: usize) -> Result<&[DetectionRecord], ProxyError> {
        self.records.get(&t).map(Vec::as_slice).ok_or(ProxyError::Unlabeled(t))
    }

    /// Per-frame counts of `class` over `range` (which must be labeled).
    pub fn counts(&self, class: &str, range: Range<usize>) -> Result<Vec<u32>, ProxyError> {
        range
            .map(|t| Ok(self.records(t)?.iter().filter(|r| r.object_class == class).count() as u32))
            .collect()
    }

    pub fn train_counts(&self, class: &str) -> Vec<u32> {
        self.counts(class, self.split.train.clone()).expect("train frames are labeled")
    }

    pub fn heldout_counts(&self, class: &str) -> Vec<u32> {
        self.counts(class, self.split.heldout.clone()).expect("held-out frames are labeled")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
