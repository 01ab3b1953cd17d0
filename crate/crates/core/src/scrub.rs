//! Cardinality-limited search for frames matching a count predicate.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cost::CheapMeter;
use crate::engine::eval::frame_qualifies;
use crate::frameql::{CmpOp, GroupBy, HavingAgg, Query};
use crate::proxy::ProxyModel;
use crate::select::{FrameGate, UdfRegistry};
use crate::tracestore::{Oracle, VideoTrace};
use crate::Result;

/// At least `N_k` objects of each class `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrubPredicate {
    pub conjuncts: Vec<(String, u32)>,
}

impl ScrubPredicate {
    /// Per-class minimum counts from `HAVING SUM(class='x') >= n` terms or a
    /// bare `WHERE class = 'x'`. Anything else cannot be ranked.
    pub fn from_query(q: &Query) -> Option<ScrubPredicate> {
        let mut conjuncts = Vec::new();
        if q.group_by == Some(GroupBy::Timestamp) && !q.having.is_empty() {
            if q.where_clause.is_some() {
                return None;
            }
            for h in &q.having {
                let HavingAgg::SumClass(class) = &h.agg else { return None };
                let n = match h.op {
                    CmpOp::Ge => h.value.ceil(),
                    CmpOp::Gt => h.value.floor() + 1.0,
                    _ => return None,
                };
                if n < 1.0 {
                    return None;
                }
                conjuncts.push((class.clone(), n as u32));
            }
        } else if q.having.is_empty() {
            let conj = q.where_conjuncts();
            let [only] = conj.as_slice() else { return None };
            conjuncts.push((only.as_class_eq()?.to_string(), 1));
        } else {
            return None;
        }
        Some(ScrubPredicate { conjuncts })
    }

    pub fn classes(&self) -> Vec<String> {
        self.conjuncts.iter().map(|(c, _)| c.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFrame {
    pub timestamp: u64,
    /// Sum over conjuncts of `P(count >= N_k)`.
    pub score: f64,
}

/// Scores every frame of `range`; `None` when the model lacks a class.
pub fn rank_frames(
    model: &ProxyModel,
    trace: &VideoTrace,
    range: Range<usize>,
    pred: &ScrubPredicate,
    meter: &CheapMeter,
) -> Result<Option<Vec<RankedFrame>>> {
    let Some(heads) = pred.conjuncts.iter().map(|(c, n)| model.head_index(c).map(|h| (h, *n))).collect::<Option<Vec<_>>>()
    else {
        return Ok(None);
    };
    let inf = model.infer(trace, range.clone(), meter)?;
    let mut scores = vec![0.0; range.len()];
    for (h, n) in heads {
        for (s, p) in scores.iter_mut().zip(inf.tail(h, n)) {
            *s += p;
        }
    }
    let mut ranked: Vec<RankedFrame> =
        range.zip(scores).map(|(t, score)| RankedFrame { timestamp: t as u64, score }).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.timestamp.cmp(&b.timestamp)));
    Ok(Some(ranked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScrubPath {
    Ranked,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScrubOutcome {
    pub path: ScrubPath,
    /// Accepted frames in acceptance order.
    pub timestamps: Vec<u64>,
    /// Candidates handed to the detector.
    pub examined: usize,
}

fn gap_ok(accepted: &[u64], t: u64, gap: u64) -> bool {
    accepted.iter().all(|&a| a.abs_diff(t) >= gap)
}

/// Verifies candidates in order, accepting qualifying frames at least GAP
/// apart until LIMIT are found. Candidates within GAP of an accepted frame
/// are skipped without a detector call.
fn verify(
    query: &Query,
    oracle: &Oracle<'_>,
    candidates: impl Iterator<Item = usize>,
    roi: Option<&crate::tracestore::BBox>,
    udfs: &UdfRegistry,
    mut admit: impl FnMut(usize) -> Result<bool>,
) -> Result<(Vec<u64>, usize)> {
    let limit = query.limit.unwrap_or(u64::MAX) as usize;
    let gap = query.gap.unwrap_or(0);
    let mut accepted = Vec::new();
    let mut examined = 0;
    for t in candidates {
        if accepted.len() >= limit {
            break;
        }
        if !gap_ok(&accepted, t as u64, gap) || !admit(t)? {
            continue;
        }
        examined += 1;
        if frame_qualifies(query, &oracle.detect(t, roi)?, udfs) {
            accepted.push(t as u64);
        }
    }
    Ok((accepted, examined))
}

/// Ranked search; falls back to a sequential scan when the proxy cannot
/// score the predicate.
pub fn run_scrub(
    query: &Query,
    trace: &VideoTrace,
    range: Range<usize>,
    model: Option<&ProxyModel>,
    oracle: &Oracle<'_>,
    udfs: &UdfRegistry,
    meter: &CheapMeter,
) -> Result<ScrubOutcome> {
    let ranked = match (ScrubPredicate::from_query(query), model) {
        (Some(pred), Some(m)) => rank_frames(m, trace, range.clone(), &pred, meter)?,
        _ => None,
    };
    match ranked {
        Some(order) => {
            let (timestamps, examined) =
                verify(query, oracle, order.iter().map(|r| r.timestamp as usize), None, udfs, |_| Ok(true))?;
            Ok(ScrubOutcome { path: ScrubPath::Ranked, timestamps, examined })
        }
        None => fallback_scan(query, range, oracle, None, udfs),
    }
}

/// Sequential scan in time order, optionally behind cheap frame filters.
pub fn fallback_scan(
    query: &Query,
    range: Range<usize>,
    oracle: &Oracle<'_>,
    gate: Option<&FrameGate<'_>>,
    udfs: &UdfRegistry,
) -> Result<ScrubOutcome> {
    let (timestamps, examined) = match gate {
        Some(g) => verify(query, oracle, g.candidates(range), g.roi(), udfs, |t| g.admits(t))?,
        None => verify(query, oracle, range, None, udfs, |_| Ok(true))?,
    };
    Ok(ScrubOutcome { path: ScrubPath::Fallback, timestamps, examined })
}

/// Area under the ROC curve by rank sums; ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameql::parse;
    use crate::tracestore::{BBox, DetectionRecord, Frame};
    use std::collections::BTreeMap;

    fn fixture(qualifying: impl Fn(usize) -> bool, n: usize) -> VideoTrace {
        let frames = (0..n)
            .map(|t| {
                let recs = if qualifying(t) {
                    vec![DetectionRecord {
                        timestamp: t as u64,
                        object_class: "car".into(),
                        mask: BBox::new(0.0, 0.0, 50.0, 50.0).unwrap(),
                        trackid: None,
                        content: vec![0.0; 3],
                        confidence: 1.0,
                    }]
                } else {
                    vec![]
                };
                Frame::new(recs, vec![0.0], vec![0.0; 3])
            })
            .collect();
        VideoTrace::new("fx", 1280, 720, 30.0, 1, BTreeMap::new(), frames)
    }

    #[test]
    fn predicate_extraction() {
        let q = parse(
            "SELECT timestamp FROM t GROUP BY timestamp HAVING SUM(class='bus')>=1 AND SUM(class='car')>=5 LIMIT 10 GAP 300",
        )
        .unwrap();
        let p = ScrubPredicate::from_query(&q).unwrap();
        assert_eq!(p.conjuncts, vec![("bus".into(), 1), ("car".into(), 5)]);
        let q = parse("SELECT timestamp FROM t WHERE class='car' LIMIT 3").unwrap();
        assert_eq!(ScrubPredicate::from_query(&q).unwrap().conjuncts, vec![("car".into(), 1)]);
        let q = parse("SELECT timestamp FROM t GROUP BY timestamp HAVING SUM(class='car') < 2 LIMIT 3").unwrap();
        assert!(ScrubPredicate::from_query(&q).is_none());
    }

    #[test]
    fn one_per_consecutive_run() {
        let trace = fixture(|t| (50..60).contains(&t), 200);
        let q = parse("SELECT timestamp FROM t WHERE class='car' LIMIT 5 GAP 100").unwrap();
        let oracle = Oracle::new(&trace);
        let out = fallback_scan(&q, 0..200, &oracle, None, UdfRegistry::builtin()).unwrap();
        assert_eq!(out.timestamps, vec![50]);
    }

    #[test]
    fn fallback_gap_arithmetic() {
        let trace = fixture(|_| true, 100);
        let q = parse("SELECT timestamp FROM t WHERE class='car' LIMIT 100 GAP 7").unwrap();
        let oracle = Oracle::new(&trace);
        let out = fallback_scan(&q, 0..100, &oracle, None, UdfRegistry::builtin()).unwrap();
        assert_eq!(out.timestamps, (0..100).step_by(7).map(|t| t as u64).collect::<Vec<_>>());
        // candidates inside a gap never reach the detector
        assert_eq!(oracle.call_count(), out.timestamps.len() as u64);
    }

    #[test]
    fn no_matches_exhausts() {
        let trace = fixture(|_| false, 30);
        let q = parse("SELECT timestamp FROM t WHERE class='car' LIMIT 5").unwrap();
        let oracle = Oracle::new(&trace);
        let out = fallback_scan(&q, 0..30, &oracle, None, UdfRegistry::builtin()).unwrap();
        assert!(out.timestamps.is_empty());
        assert_eq!(out.examined, 30);
    }

    #[test]
    fn auc_oracle() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(auc(&[0.9], &[true]), None);
        // brute-force pair count
        let s = [0.3, 0.7, 0.7, 0.2, 0.9, 0.4];
        let l = [false, true, false, true, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if l[i] && !l[j] {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((auc(&s, &l).unwrap() - wins / pairs).abs() < 1e-12);
    }
}
