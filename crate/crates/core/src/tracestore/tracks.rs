use super::VideoTrace;

/// Minimum IOU for two detections in consecutive frames to be the same object.
pub const DEFAULT_IOU_CUTOFF: f64 = 0.7;

/// Assigns track ids by greedy IOU matching between consecutive frames.
///
/// For each frame pair, all same-class pairs with IOU >= `iou_cutoff` are
/// matched in descending IOU order (ties by record index); a matched record
/// inherits the earlier record's id, every other record opens a new track.
/// Existing track ids are overwritten. Ids start at 1.
pub fn resolve_tracks(mut trace: VideoTrace, iou_cutoff: f64) -> VideoTrace {
    let mut next_id = 1u64;
    let mut prev: Vec<(String, super::BBox, u64)> = Vec::new();
    for frame in &mut trace.frames {
        let mut pairs = Vec::new();
        for (j, rec) in frame.records.iter().enumerate() {
            for (i, (class, mask, _)) in prev.iter().enumerate() {
                if *class != rec.object_class {
                    continue;
                }
                let iou = mask.iou(&rec.mask);
                if iou >= iou_cutoff {
                    pairs.push((iou, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut prev_used = vec![false; prev.len()];
        let mut assigned: Vec<Option<u64>> = vec![None; frame.records.len()];
        for (_, i, j) in pairs {
            if prev_used[i] || assigned[j].is_some() {
                continue;
            }
            prev_used[i] = true;
            assigned[j] = Some(prev[i].2);
        }
        for (rec, id) in frame.records.iter_mut().zip(assigned) {
            rec.trackid = Some(id.unwrap_or_else(|| {
                next_id += 1;
                next_id - 1
            }));
        }
        prev = frame
            .records
            .iter()
            .map(|r| (r.object_class.clone(), r.mask, r.trackid.expect("assigned above")))
            .collect();
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracestore::{BBox, DetectionRecord, Frame};
    use std::collections::BTreeMap;

    fn rec(t: u64, class: &str, b: [f64; 4]) -> DetectionRecord {
        DetectionRecord {
            timestamp: t,
            object_class: class.into(),
            mask: BBox::try_from(b).unwrap(),
            trackid: None,
            content: vec![],
            confidence: 1.0,
        }
    }

    fn trace(frames: Vec<Vec<DetectionRecord>>) -> VideoTrace {
        let frames = frames.into_iter().map(|r| Frame::new(r, vec![], vec![])).collect();
        VideoTrace::new("fx", 1280, 720, 30.0, 0, BTreeMap::new(), frames)
    }

    fn ids(tr: &VideoTrace) -> Vec<Vec<u64>> {
        tr.frames().iter().map(|f| f.ground_truth().iter().map(|r| r.trackid.unwrap()).collect()).collect()
    }

    /// Horizontal shift giving IOU exactly `r` for a width-`w` box.
    fn shift_for_iou(w: f64, r: f64) -> f64 {
        w * (1.0 - r) / (1.0 + r)
    }

    #[test]
    fn identical_boxes_share_track() {
        let b = [0.0, 0.0, 100.0, 100.0];
        let tr = resolve_tracks(trace(vec![vec![rec(0, "car", b)], vec![rec(1, "car", b)]]), 0.7);
        assert_eq!(ids(&tr), vec![vec![1], vec![1]]);
    }

    #[test]
    fn disjoint_boxes_split() {
        let tr = resolve_tracks(
            trace(vec![vec![rec(0, "car", [0.0, 0.0, 10.0, 10.0])], vec![rec(1, "car", [50.0, 0.0, 60.0, 10.0])]]),
            0.7,
        );
        assert_eq!(ids(&tr), vec![vec![1], vec![2]]);
    }

    #[test]
    fn cutoff_boundary() {
        for (r, same) in [(0.69, false), (0.71, true)] {
            let dx = shift_for_iou(100.0, r);
            let a = BBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
            let b = BBox::new(dx, 0.0, 100.0 + dx, 100.0).unwrap();
            assert!((a.iou(&b) - r).abs() < 1e-12);
            let tr = resolve_tracks(trace(vec![vec![rec(0, "car", a.into())], vec![rec(1, "car", b.into())]]), 0.7);
            assert_eq!(ids(&tr)[0] == ids(&tr)[1], same, "iou {r}");
        }
    }

    #[test]
    fn class_mismatch_never_matches() {
        let b = [0.0, 0.0, 100.0, 100.0];
        let tr = resolve_tracks(trace(vec![vec![rec(0, "car", b)], vec![rec(1, "bus", b)]]), 0.7);
        assert_eq!(ids(&tr), vec![vec![1], vec![2]]);
    }

    #[test]
    fn reentry_gets_new_id() {
        let b = [0.0, 0.0, 100.0, 100.0];
        let tr = resolve_tracks(trace(vec![vec![rec(0, "car", b)], vec![], vec![rec(2, "car", b)]]), 0.7);
        assert_eq!(ids(&tr), vec![vec![1], vec![], vec![2]]);
    }

    #[test]
    fn greedy_prefers_highest_iou() {
        // two previous boxes compete for one new box; the closer one wins
        let prev = vec![rec(0, "car", [0.0, 0.0, 100.0, 100.0]), rec(0, "car", [4.0, 0.0, 104.0, 100.0])];
        let cur = vec![rec(1, "car", [5.0, 0.0, 105.0, 100.0])];
        let tr = resolve_tracks(trace(vec![prev, cur]), 0.7);
        assert_eq!(ids(&tr), vec![vec![1, 2], vec![2]]);
    }
}
