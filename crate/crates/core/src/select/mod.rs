//! Filters that discard frames, or parts of frames, before the detector runs.
//!
//! A plan combines up to four filter classes, applied cheapest first:
//! temporal subsampling and time windows, frame-level UDF cutoffs, proxy
//! label cutoffs, and a spatial region of interest that shrinks each
//! detector call. Statistical cutoffs admit every held-out positive, so the
//! only errors a plan can introduce are false negatives.

pub mod udf;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use udf::{area, redness, ArgKind, Udf, UdfRegistry, Value};

use crate::cost::{CheapMeter, PROXY_COST_PER_FRAME, REFERENCE_AREA};
use crate::engine::eval::record_matches;
use crate::frameql::{CmpOp, Expr, GroupBy, HavingAgg, Query};
use crate::proxy::{estimate_threshold, LabeledSet, ProxyModel, ThresholdEstimate};
use crate::tracestore::{BBox, DetectionRecord, Oracle, VideoTrace};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFilter {
    pub roi: BBox,
    /// Pixel dimensions handed to the detector.
    pub resized: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalFilter {
    /// Every `stride`-th frame is examined; at least 1.
    pub stride: usize,
    /// Half-open timestamp window `[lo, hi)`.
    pub window: Option<(u64, u64)>,
    /// Shortest qualifying track, when a stride was derived from one.
    pub min_duration: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFilter {
    pub class: String,
    /// Cutoff on the proxy's `P(count >= 1)`.
    pub threshold: ThresholdEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentFilter {
    pub udf: String,
    /// Upper-bound predicates are thresholded on the negated signal.
    pub negated: bool,
    pub threshold: ThresholdEstimate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterPlan {
    pub spatial: Option<SpatialFilter>,
    pub temporal: Option<TemporalFilter>,
    pub label: Option<LabelFilter>,
    pub content: Vec<ContentFilter>,
    /// Estimated fraction of frames discarded before the detector.
    pub selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    /// Strides below this are not worth applying.
    pub stride_min: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { stride_min: 2 }
    }
}

/// `max(1, floor((K - 1) / 2))`.
pub fn stride_for_duration(k: u64) -> usize {
    (k.saturating_sub(1) / 2).max(1) as usize
}

/// HAVING terms that only ever pass more groups as groups grow.
pub(crate) fn having_is_monotone(query: &Query) -> bool {
    query.having.iter().all(|h| matches!(h.op, CmpOp::Gt | CmpOp::Ge))
}

/// Shortest qualifying track implied by `GROUP BY trackid HAVING COUNT(*) > v`.
fn min_track_duration(query: &Query) -> Option<u64> {
    if query.group_by != Some(GroupBy::TrackId) {
        return None;
    }
    query
        .having
        .iter()
        .filter(|h| h.agg == HavingAgg::Count)
        .filter_map(|h| match h.op {
            CmpOp::Gt => Some(h.value.floor() as i64 + 1),
            CmpOp::Ge => Some(h.value.ceil() as i64),
            _ => None,
        })
        .max()
        .filter(|&k| k > 1)
        .map(|k| k as u64)
}

/// `f(arg) op v` or `v op f(arg)`, normalized to `f(arg) op v`.
fn call_bound(e: &Expr) -> Option<(&str, &str, CmpOp, f64)> {
    let Expr::Cmp { op, lhs, rhs } = e else { return None };
    let (call, op, v) = match (lhs.as_ref(), rhs.as_ref()) {
        (c @ Expr::Call { .. }, Expr::Num(v)) => (c, *op, *v),
        (Expr::Num(v), c @ Expr::Call { .. }) => (c, op.flipped(), *v),
        _ => return None,
    };
    let Expr::Call { name, args } = call else { return None };
    match args.as_slice() {
        [Expr::Column(arg)] => Some((name, arg, op, v)),
        _ => None,
    }
}

/// `timestamp op v` normalized the same way.
fn timestamp_bound(e: &Expr) -> Option<(CmpOp, f64)> {
    let Expr::Cmp { op, lhs, rhs } = e else { return None };
    match (lhs.as_ref(), rhs.as_ref()) {
        (Expr::Column(c), Expr::Num(v)) if c == "timestamp" => Some((*op, *v)),
        (Expr::Num(v), Expr::Column(c)) if c == "timestamp" => Some((op.flipped(), *v)),
        _ => None,
    }
}

/// Smallest box containing every mask that satisfies the WHERE conjuncts.
fn spatial_filter(query: &Query, trace: &VideoTrace) -> Option<SpatialFilter> {
    let (w, h) = (trace.width as f64, trace.height as f64);
    let mut b = [0.0, 0.0, w, h];
    for e in query.where_conjuncts() {
        let Some((name, "mask", op, v)) = call_bound(e) else { continue };
        let lower = matches!(op, CmpOp::Gt | CmpOp::Ge | CmpOp::Eq);
        let upper = matches!(op, CmpOp::Lt | CmpOp::Le | CmpOp::Eq);
        match name {
            "xmin" if lower => b[0] = f64::max(b[0], v),
            "ymin" if lower => b[1] = f64::max(b[1], v),
            "xmax" if upper => b[2] = f64::min(b[2], v),
            "ymax" if upper => b[3] = f64::min(b[3], v),
            _ => {}
        }
    }
    if b == [0.0, 0.0, w, h] {
        return None;
    }
    // empty region: keep a sliver so the detector call stays well-formed
    let roi = BBox::new(b[0], b[1], b[2].max(b[0] + 1.0).min(w), b[3].max(b[1] + 1.0).min(h))
        .or_else(|_| BBox::new(w - 1.0, h - 1.0, w, h))
        .ok()?;
    Some(SpatialFilter { roi, resized: (roi.width().ceil() as u32, roi.height().ceil() as u32) })
}

fn time_window(query: &Query) -> Option<(u64, u64)> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut any = false;
    for e in query.where_conjuncts() {
        let Some((op, v)) = timestamp_bound(e) else { continue };
        any = true;
        match op {
            CmpOp::Gt => lo = lo.max(v.floor() + 1.0),
            CmpOp::Ge => lo = lo.max(v.ceil()),
            CmpOp::Lt => hi = hi.min(v.ceil()),
            CmpOp::Le => hi = hi.min(v.floor() + 1.0),
            CmpOp::Eq => {
                lo = lo.max(v.ceil());
                hi = hi.min(v.floor() + 1.0);
            }
            CmpOp::Ne => {}
        }
    }
    let hi = if hi.is_finite() { hi.max(lo) as u64 } else { u64::MAX };
    any.then_some((lo as u64, hi))
}

/// Frame-level signal of a content UDF, from the frame descriptor.
fn frame_signal(udf: &Udf, trace: &VideoTrace, t: usize, negated: bool) -> Option<f64> {
    let v = udf.call_content(&trace.frames()[t].descriptor).as_num()?;
    Some(if negated { -v } else { v })
}

/// Builds the filter plan for a selection query over the test range.
pub fn infer_plan(
    query: &Query,
    trace: &VideoTrace,
    labels: &LabeledSet,
    model: Option<&ProxyModel>,
    udfs: &UdfRegistry,
    meter: &CheapMeter,
    cfg: &SelectConfig,
) -> Result<FilterPlan> {
    let mut plan = FilterPlan { spatial: spatial_filter(query, trace), ..FilterPlan::default() };
    let window = time_window(query);
    let statistical = having_is_monotone(query);

    let min_duration = min_track_duration(query).filter(|_| statistical);
    let stride = min_duration.map_or(1, stride_for_duration);
    let stride = if stride >= cfg.stride_min.max(2) { stride } else { 1 };
    if stride > 1 || window.is_some() {
        plan.temporal = Some(TemporalFilter { stride, window, min_duration: min_duration.filter(|_| stride > 1) });
    }

    let heldout = labels.split.heldout.clone();
    if statistical && !heldout.is_empty() {
        let positives: Vec<bool> = heldout
            .clone()
            .map(|t| Ok(labels.records(t)?.iter().any(|r| record_matches(query.where_clause.as_ref(), r, udfs))))
            .collect::<Result<_>>()?;

        for e in query.where_conjuncts() {
            let Some((name, "content", op, _)) = call_bound(e) else { continue };
            let Some(udf) = udfs.get(name).filter(|u| u.frame_level) else { continue };
            let negated = match op {
                CmpOp::Gt | CmpOp::Ge => false,
                CmpOp::Lt | CmpOp::Le => true,
                _ => continue,
            };
            if plan.content.iter().any(|c| c.udf == name && c.negated == negated) {
                continue;
            }
            let signals: Option<Vec<f64>> = heldout.clone().map(|t| frame_signal(udf, trace, t, negated)).collect();
            meter.charge_filter(heldout.len() as u64);
            let Some(signals) = signals else { continue };
            if let Ok(th) = estimate_threshold(&signals, &positives) {
                if th.selectivity > 0.0 {
                    plan.content.push(ContentFilter { udf: name.to_string(), negated, threshold: th });
                }
            }
        }

        if let (Some(class), Some(model)) = (query.class_filter(), model) {
            if let Some(head) = model.head_index(class) {
                let signals = model.infer(trace, heldout.clone(), meter)?.tail(head, 1);
                if let Ok(th) = estimate_threshold(&signals, &positives) {
                    // kept only if the negatives it removes after the content
                    // cutoffs save more detector cost than evaluating it
                    let mut reaching = 0usize;
                    let mut removed = 0usize;
                    for (i, t) in heldout.clone().enumerate() {
                        let content_ok = plan.content.iter().all(|c| {
                            let udf = udfs.get(&c.udf).expect("planned UDF is registered");
                            frame_signal(udf, trace, t, c.negated).is_some_and(|s| c.threshold.passes(s))
                        });
                        if content_ok {
                            reaching += 1;
                            if !positives[i] && !th.passes(signals[i]) {
                                removed += 1;
                            }
                        }
                    }
                    let call_cost = plan.spatial.as_ref().map_or(trace.width as f64 * trace.height as f64, |s| s.roi.area())
                        / REFERENCE_AREA;
                    if removed as f64 * call_cost > reaching as f64 * PROXY_COST_PER_FRAME {
                        plan.label = Some(LabelFilter { class: class.to_string(), threshold: th });
                    }
                }
            }
        }
    }

    let kept = plan.content.iter().map(|c| 1.0 - c.threshold.selectivity).product::<f64>()
        * plan.label.as_ref().map_or(1.0, |l| 1.0 - l.threshold.selectivity)
        / stride as f64;
    plan.selectivity = 1.0 - kept;
    Ok(plan)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionOutcome {
    /// WHERE-matching records, ordered by timestamp.
    pub records: Vec<DetectionRecord>,
    /// Frames that survived every cheap filter.
    pub frames_admitted: usize,
    /// Frames examined by the cheap filters.
    pub frames_considered: usize,
}

/// Decides frame admission under a plan's cheap filters.
pub struct FrameGate<'a> {
    plan: &'a FilterPlan,
    trace: &'a VideoTrace,
    model: Option<(&'a ProxyModel, usize)>,
    udfs: &'a UdfRegistry,
    meter: &'a CheapMeter,
}

impl<'a> FrameGate<'a> {
    pub fn new(
        plan: &'a FilterPlan,
        trace: &'a VideoTrace,
        model: Option<&'a ProxyModel>,
        udfs: &'a UdfRegistry,
        meter: &'a CheapMeter,
    ) -> Self {
        let model = plan
            .label
            .as_ref()
            .and_then(|l| model.and_then(|m| m.head_index(&l.class).map(|h| (m, h))));
        FrameGate { plan, trace, model, udfs, meter }
    }

    /// Frames of `range` visited by the temporal filter.
    pub fn candidates(&self, range: Range<usize>) -> impl Iterator<Item = usize> + '_ {
        let (stride, window) = self.plan.temporal.as_ref().map_or((1, None), |t| (t.stride.max(1), t.window));
        let start = range.start;
        range.filter(move |&t| {
            (t - start).is_multiple_of(stride) && window.is_none_or(|(lo, hi)| (lo..hi).contains(&(t as u64)))
        })
    }

    /// Content cutoffs, then the proxy label cutoff.
    pub fn admits(&self, t: usize) -> Result<bool> {
        for c in &self.plan.content {
            let udf = self.udfs.get(&c.udf).expect("planned UDF is registered");
            self.meter.charge_filter(1);
            match frame_signal(udf, self.trace, t, c.negated) {
                Some(s) if c.threshold.passes(s) => {}
                _ => return Ok(false),
            }
        }
        if let (Some(l), Some((model, head))) = (&self.plan.label, self.model) {
            let p = model.infer(self.trace, t..t + 1, self.meter)?.tail(head, 1)[0];
            if !l.threshold.passes(p) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn roi(&self) -> Option<&BBox> {
        self.plan.spatial.as_ref().map(|s| &s.roi)
    }
}

/// Runs the plan over `range` and returns verified WHERE-matching records.
/// Under GROUP BY trackid, every matching track seen on an admitted frame is
/// followed in both directions until it leaves the view.
pub fn apply_plan(
    plan: &FilterPlan,
    query: &Query,
    trace: &VideoTrace,
    range: Range<usize>,
    oracle: &Oracle<'_>,
    model: Option<&ProxyModel>,
    udfs: &UdfRegistry,
    meter: &CheapMeter,
) -> Result<SelectionOutcome> {
    let gate = FrameGate::new(plan, trace, model, udfs, meter);
    let roi = gate.roi();
    let follow = query.group_by == Some(GroupBy::TrackId);
    let window = plan.temporal.as_ref().and_then(|t| t.window);
    let in_scope = |t: usize| range.contains(&t) && window.is_none_or(|(lo, hi)| (lo..hi).contains(&(t as u64)));
    let matches = |r: &DetectionRecord| record_matches(query.where_clause.as_ref(), r, udfs);

    let mut out = SelectionOutcome::default();
    let mut by_frame: BTreeMap<usize, Vec<DetectionRecord>> = BTreeMap::new();
    let mut followed: BTreeSet<u64> = BTreeSet::new();
    // Frames already detected skip the cheap filters.
    let detected: RefCell<BTreeMap<usize, Vec<DetectionRecord>>> = RefCell::new(BTreeMap::new());
    let detect = |t: usize| -> Result<Vec<DetectionRecord>> {
        if let Some(r) = detected.borrow().get(&t) {
            return Ok(r.clone());
        }
        let r = oracle.detect(t, roi)?;
        detected.borrow_mut().insert(t, r.clone());
        Ok(r)
    };

    let candidates: Vec<usize> = gate.candidates(range.clone()).collect();
    for t in candidates {
        out.frames_considered += 1;
        if !detected.borrow().contains_key(&t) && !gate.admits(t)? {
            continue;
        }
        out.frames_admitted += 1;
        let hits: Vec<DetectionRecord> = detect(t)?.into_iter().filter(|r| matches(r)).collect();
        if !follow {
            if !hits.is_empty() {
                by_frame.insert(t, hits);
            }
            continue;
        }
        for rec in hits {
            let Some(id) = rec.trackid else { continue };
            if !followed.insert(id) {
                continue;
            }
            let mut walk = |steps: &mut dyn Iterator<Item = usize>| -> Result<()> {
                for u in steps {
                    if !in_scope(u) {
                        break;
                    }
                    let recs = detect(u)?;
                    let Some(r) = recs.into_iter().find(|r| r.trackid == Some(id)) else { break };
                    if matches(&r) {
                        by_frame.entry(u).or_default().push(r);
                    }
                }
                Ok(())
            };
            walk(&mut (range.start..=t).rev())?;
            walk(&mut (t + 1..range.end))?;
        }
    }
    for (_, mut recs) in by_frame {
        recs.sort_by_key(|r| r.trackid);
        recs.dedup_by(|a, b| a.same_detection(b));
        out.records.extend(recs);
    }
    Ok(out)
}
