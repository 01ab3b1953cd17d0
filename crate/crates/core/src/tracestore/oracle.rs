use std::collections::HashSet;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{BBox, DetectionRecord, VideoTrace};
use crate::cost::{AtomicCost, REFERENCE_AREA};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("frame {t} out of range (trace has {len} frames)")]
    FrameOutOfRange { t: usize, len: usize },
    #[error("region of interest {0:?} lies outside the frame")]
    RoiOutsideFrame(BBox),
}

/// The expensive detector: ground truth at a price.
///
/// Every call is charged `area(roi) / (1280 * 720)` units. Accounting is
/// atomic, so an oracle may be shared across threads without losing counts.
#[derive(Debug)]
pub struct Oracle<'a> {
    trace: &'a VideoTrace,
    calls: AtomicU64,
    cost: AtomicCost,
    memo: Option<Mutex<HashSet<(usize, [u64; 4])>>>,
}

impl<'a> Oracle<'a> {
    pub fn new(trace: &'a VideoTrace) -> Self {
        Oracle { trace, calls: AtomicU64::new(0), cost: AtomicCost::new(), memo: None }
    }

    /// Repeated calls on the same frame and region are charged once.
    pub fn memoized(trace: &'a VideoTrace) -> Self {
        Oracle { memo: Some(Mutex::new(HashSet::new())), ..Self::new(trace) }
    }

    pub fn trace(&self) -> &'a VideoTrace {
        self.trace
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Acquire)
    }

    pub fn cost_units(&self) -> f64 {
        self.cost.get()
    }

    /// Cost of one call over `roi` (whole frame when `None`).
    pub fn call_cost(&self, roi: Option<&BBox>) -> f64 {
        roi.copied().unwrap_or_else(|| self.trace.frame_box()).area() / REFERENCE_AREA
    }

    /// Records of frame `t` overlapping `roi`.
    pub fn detect(&self, t: usize, roi: Option<&BBox>) -> Result<Vec<DetectionRecord>, OracleError> {
        let frame = self
            .trace
            .frames
            .get(t)
            .ok_or(OracleError::FrameOutOfRange { t, len: self.trace.len() })?;
        if let Some(r) = roi {
            if !r.within_frame(self.trace.width, self.trace.height) {
                return Err(OracleError::RoiOutsideFrame(*r));
            }
        }
        let charge = match &self.memo {
            Some(m) => {
                let key = roi.copied().unwrap_or_else(|| self.trace.frame_box());
                let key: [f64; 4] = key.into();
                m.lock().expect("oracle memo poisoned").insert((t, key.map(f64::to_bits)))
            }
            None => true,
        };
        if charge {
            self.calls.fetch_add(1, Ordering::AcqRel);
            self.cost.add(self.call_cost(roi));
        }
        Ok(match roi {
            None => frame.records.clone(),
            Some(r) => frame.records.iter().filter(|rec| rec.mask.intersects(r)).cloned().collect(),
        })
    }
}

/// Runs the detector on every frame of `range`; the brute-force baseline.
pub fn full_scan(oracle: &Oracle<'_>, range: Range<usize>) -> Result<Vec<DetectionRecord>, OracleError> {
    let mut out = Vec::new();
    for t in range {
        out.extend(oracle.detect(t, None)?);
    }
    Ok(out)
}
