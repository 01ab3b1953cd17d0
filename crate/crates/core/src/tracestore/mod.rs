//! Video-detection traces, the cost-accounted detector oracle, and
//! IOU-based entity resolution.

mod io;
mod oracle;
mod tracks;

pub use io::{load_trace, read_trace, write_trace};
pub use oracle::{full_scan, Oracle, OracleError};
pub use tracks::{resolve_tracks, DEFAULT_IOU_CUTOFF};

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixels. Always has positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("degenerate box [{0}, {1}, {2}, {3}]")]
pub struct BoxError(f64, f64, f64, f64);

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, BoxError> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(BoxError(xmin, ymin, xmax, ymax));
        }
        Ok(BBox { xmin, ymin, xmax, ymax })
    }

    /// The whole frame.
    pub fn frame(width: u32, height: u32) -> Self {
        BBox { xmin: 0.0, ymin: 0.0, xmax: width as f64, ymax: height as f64 }
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin && self.ymin <= other.ymin && self.xmax >= other.xmax && self.ymax >= other.ymax
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        inter / (self.area() + other.area() - inter)
    }

    pub fn within_frame(&self, width: u32, height: u32) -> bool {
        self.xmin >= 0.0 && self.ymin >= 0.0 && self.xmax <= width as f64 && self.ymax <= height as f64
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = BoxError;

    fn try_from(v: [f64; 4]) -> Result<Self, BoxError> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> [f64; 4] {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

/// One object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub timestamp: u64,
    #[serde(rename = "class")]
    pub object_class: String,
    pub mask: BBox,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trackid: Option<u64>,
    pub content: Vec<f64>,
    pub confidence: f64,
}

impl DetectionRecord {
    /// Identity of the detection ignoring its track assignment.
    pub fn same_detection(&self, other: &DetectionRecord) -> bool {
        self.timestamp == other.timestamp && self.object_class == other.object_class && self.mask == other.mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub(crate) records: Vec<DetectionRecord>,
    /// Cheap per-frame feature vector consumed by the proxy.
    pub feature: Vec<f64>,
    /// Frame-level content descriptor (per-channel means over the frame).
    pub descriptor: Vec<f64>,
}

impl Frame {
    pub fn new(records: Vec<DetectionRecord>, feature: Vec<f64>, descriptor: Vec<f64>) -> Self {
        Frame { records, feature, descriptor }
    }

    /// Ground-truth records. Query plans go through [`Oracle::detect`]; this
    /// accessor is for labeling passes and test oracles.
    pub fn ground_truth(&self) -> &[DetectionRecord] {
        &self.records
    }

    pub fn count_class(&self, class: &str) -> usize {
        self.records.iter().filter(|r| r.object_class == class).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoTrace {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub feature_dim: usize,
    pub thresholds: BTreeMap<String, f64>,
    pub(crate) frames: Vec<Frame>,
}

impl VideoTrace {
    pub fn new(
        name: impl Into<String>,
        width: u32,
        height: u32,
        fps: f64,
        feature_dim: usize,
        thresholds: BTreeMap<String, f64>,
        frames: Vec<Frame>,
    ) -> Self {
        VideoTrace { name: name.into(), width, height, fps, feature_dim, thresholds, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> Option<&Frame> {
        self.frames.get(t)
    }

    pub fn frame_box(&self) -> BBox {
        BBox::frame(self.width, self.height)
    }

    pub fn all_frames(&self) -> Range<usize> {
        0..self.frames.len()
    }

    /// True once every record carries a track id.
    pub fn has_tracks(&self) -> bool {
        self.frames.iter().flat_map(|f| &f.records).all(|r| r.trackid.is_some())
    }

    pub fn record_count(&self) -> usize {
        self.frames.iter().map(|f| f.records.len()).sum()
    }

    /// Distinct object classes present in the trace.
    pub fn classes(&self) -> Vec<String> {
        let mut v: Vec<String> =
            self.frames.iter().flat_map(|f| f.records.iter().map(|r| r.object_class.clone())).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Splits off frames `range` as a new trace with timestamps rebased to 0.
    pub fn segment(&self, range: Range<usize>) -> VideoTrace {
        let base = range.start as u64;
        let frames = self.frames[range]
            .iter()
            .map(|f| {
                let mut f = f.clone();
                for r in &mut f.records {
                    r.timestamp -= base;
                }
                f
            })
            .collect();
        VideoTrace { frames, ..self.clone_header() }
    }

    fn clone_header(&self) -> VideoTrace {
        VideoTrace {
            name: self.name.clone(),
            width: self.width,
            height: self.height,
            fps: self.fps,
            feature_dim: self.feature_dim,
            thresholds: self.thresholds.clone(),
            frames: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(5.0, 0.0, 1.0, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn iou_of_identical_and_disjoint() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(20.0, 0.0, 30.0, 10.0).unwrap();
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&b), 0.0);
        assert!(!a.intersects(&b));
    }

    #[test]
    fn box_serializes_as_array() {
        let a = BBox::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), "[1.0,2.0,3.0,4.0]");
        assert!(serde_json::from_str::<BBox>("[3.0,2.0,1.0,4.0]").is_err());
    }
}
