mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use vidquery::aggcv::{adaptive_sample, control_variates_sample, SamplerConfig};
use vidquery::cost::{CheapMeter, FILTER_COST_PER_EVAL, PROXY_COST_PER_FRAME};
use vidquery::engine::eval::{frame_qualifies, record_matches};
use vidquery::frameql::{parse, print};
use vidquery::proxy::{estimate_threshold, label, LabeledSplit, ProxyModel, TrainConfig};
use vidquery::scrub::run_scrub;
use vidquery::select::{apply_plan, infer_plan, stride_for_duration, FilterPlan, SelectConfig, UdfRegistry};
use vidquery::synthgen::{generate, ClassSpec, TraceSpec};
use vidquery::tracestore::{full_scan, resolve_tracks, BBox, Oracle, VideoTrace, DEFAULT_IOU_CUTOFF};

fn small_trace(seed: u64, n: usize) -> VideoTrace {
    let spec = TraceSpec {
        n_frames: n,
        classes: vec![
            ClassSpec::new("car", 0.5, 12.0).extra(0.8),
            ClassSpec::new("bus", 0.2, 25.0).red(0.5).size(400.0, 260.0),
        ],
        seed,
        ..TraceSpec::default()
    };
    resolve_tracks(generate(&spec).unwrap(), DEFAULT_IOU_CUTOFF)
}

fn any_box() -> impl Strategy<Value = BBox> {
    (0.0f64..1279.0, 0.0f64..719.0, 1.0f64..1280.0, 1.0f64..720.0).prop_map(|(x, y, w, h)| {
        BBox::new(x, y, (x + w).min(1280.0).max(x + 0.5), (y + h).min(720.0).max(y + 0.5)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_then_parse_is_identity(q in common::valid_query()) {
        let text = print(&q);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e} in {text}")))?;
        prop_assert_eq!(back, q);
    }

    #[test]
    fn threshold_admits_every_heldout_positive(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..300)
    ) {
        let (signals, labels): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        if let Ok(th) = estimate_threshold(&signals, &labels) {
            for (s, l) in signals.iter().zip(&labels) {
                prop_assert!(!*l || th.passes(*s));
            }
        } else {
            prop_assert!(!labels.iter().any(|&l| l));
        }
    }

    #[test]
    fn stride_sample_hits_every_long_track(k in 2u64..200, start in 0usize..50, offset in 0usize..400) {
        let s = stride_for_duration(k);
        let track = start + offset..start + offset + k as usize;
        prop_assert!(track.clone().any(|t| (t - start) % s == 0));
    }

    #[test]
    fn sampler_certificate_holds(
        values in prop::collection::vec(0u8..6, 50..400),
        eps in 0.05f64..0.5,
        conf in prop::sample::select(vec![0.8, 0.9, 0.95, 0.99]),
        seed in any::<u64>(),
    ) {
        let m: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let cfg = SamplerConfig::new(eps, conf, 6.0, seed);
        let est = adaptive_sample(m.len(), &cfg, |i| Ok::<_, ()>(m[i])).unwrap();
        prop_assert!(est.exact || est.half_width < eps);
        if est.exact {
            prop_assert_eq!(est.n_samples, m.len());
        }
        let t: Vec<f64> = m.iter().enumerate().map(|(i, v)| v + (i % 3) as f64).collect();
        let cv = control_variates_sample(&t, &cfg, |i| Ok::<_, ()>(m[i])).unwrap();
        prop_assert!(cv.exact || cv.half_width < eps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tracks_partition_records(seed in any::<u64>()) {
        let trace = small_trace(seed, 600);
        let mut by_track: BTreeMap<u64, Vec<(u64, BBox, String)>> = BTreeMap::new();
        for f in trace.frames() {
            for r in f.ground_truth() {
                let id = r.trackid.ok_or_else(|| TestCaseError::fail("record without trackid"))?;
                by_track.entry(id).or_default().push((r.timestamp, r.mask, r.object_class.clone()));
            }
        }
        for (id, recs) in by_track {
            for w in recs.windows(2) {
                prop_assert_eq!(w[1].0, w[0].0 + 1, "track {} skips a frame", id);
                prop_assert_eq!(&w[1].2, &w[0].2);
                prop_assert!(w[0].1.iou(&w[1].1) >= DEFAULT_IOU_CUTOFF);
            }
        }
    }

    #[test]
    fn oracle_cost_is_sum_of_call_costs(
        seed in any::<u64>(),
        calls in prop::collection::vec((0usize..200, prop::option::of(any_box())), 1..60),
    ) {
        let trace = small_trace(seed, 200);
        let oracle = Oracle::new(&trace);
        let mut total = 0.0;
        for (t, roi) in &calls {
            total += oracle.call_cost(roi.as_ref());
            oracle.detect(*t, roi.as_ref()).unwrap();
        }
        prop_assert_eq!(oracle.cost_units(), total);
        prop_assert_eq!(oracle.call_count(), calls.len() as u64);
    }

    #[test]
    fn covering_roi_changes_nothing(seed in any::<u64>(), t in 0usize..200) {
        let trace = small_trace(seed, 200);
        let oracle = Oracle::new(&trace);
        let whole = trace.frame_box();
        prop_assert_eq!(oracle.detect(t, Some(&whole)).unwrap(), oracle.detect(t, None).unwrap());
    }

    #[test]
    fn spatial_filter_keeps_records_inside_roi(
        seed in any::<u64>(),
        x in 0u32..900,
        y in 0u32..500,
    ) {
        let trace = small_trace(seed, 400);
        let sql = format!("SELECT * FROM t WHERE xmin(mask) >= {x} AND ymin(mask) >= {y}");
        let q = parse(&sql).unwrap();
        let split = LabeledSplit::fractions(trace.len(), 0.25, 0.25).unwrap();
        let labels = label(&trace, &split).unwrap();
        let meter = CheapMeter::new();
        let udfs = UdfRegistry::builtin();
        let plan = infer_plan(&q, &trace, &labels, None, udfs, &meter, &SelectConfig::default()).unwrap();
        let roi = plan.spatial.as_ref().map(|s| s.roi).ok_or_else(|| TestCaseError::fail("no roi"))?;
        let oracle = Oracle::new(&trace);
        let out = apply_plan(&plan, &q, &trace, split.test.clone(), &oracle, None, udfs, &meter).unwrap();
        for t in split.test.clone() {
            for r in trace.frames()[t].ground_truth() {
                if roi.contains(&r.mask) && record_matches(q.where_clause.as_ref(), r, udfs) {
                    prop_assert!(out.records.iter().any(|o| o.same_detection(r)), "lost record at {}", t);
                }
            }
        }
    }

    #[test]
    fn scrub_results_are_gapped_true_positives(
        seed in any::<u64>(),
        n in 1u32..4,
        limit in 1u64..8,
        gap in 0u64..40,
    ) {
        let trace = small_trace(seed, 800);
        let sql = format!("SELECT timestamp FROM t GROUP BY timestamp HAVING SUM(class='car') >= {n} LIMIT {limit} GAP {gap}");
        let q = parse(&sql).unwrap();
        let split = LabeledSplit::fractions(trace.len(), 0.3, 0.2).unwrap();
        let labels = label(&trace, &split).unwrap();
        let cfg = TrainConfig { min_caps: [("car".to_string(), n)].into_iter().collect(), ..TrainConfig::default() };
        let model = ProxyModel::train(&trace, &labels, &["car".to_string()], &cfg).unwrap();
        let oracle = Oracle::memoized(&trace);
        let udfs = UdfRegistry::builtin();
        let out = run_scrub(&q, &trace, split.test.clone(), Some(&model), &oracle, udfs, &CheapMeter::new()).unwrap();
        prop_assert!(out.timestamps.len() as u64 <= limit);
        for (i, &a) in out.timestamps.iter().enumerate() {
            prop_assert!(split.test.contains(&(a as usize)));
            prop_assert!(frame_qualifies(&q, trace.frames()[a as usize].ground_truth(), udfs));
            for &b in &out.timestamps[i + 1..] {
                prop_assert!(a.abs_diff(b) >= gap);
            }
        }
        if (out.timestamps.len() as u64) < limit {
            // every qualifying frame is within GAP of an accepted one
            for t in split.test.clone() {
                if frame_qualifies(&q, trace.frames()[t].ground_truth(), udfs) {
                    prop_assert!(out.timestamps.iter().any(|&a| a.abs_diff(t as u64) < gap.max(1)));
                }
            }
        }
    }

    #[test]
    fn filtered_plan_never_costs_more_than_a_scan(seed in any::<u64>(), red in 5.0f64..60.0, k in 2u32..30) {
        let trace = small_trace(seed, 1200);
        let sql = format!(
            "SELECT * FROM t WHERE class = 'bus' AND redness(content) >= {red} GROUP BY trackid HAVING COUNT(*) > {k}"
        );
        let q = parse(&sql).unwrap();
        let split = LabeledSplit::fractions(trace.len(), 0.3, 0.2).unwrap();
        let labels = label(&trace, &split).unwrap();
        let model = ProxyModel::train(&trace, &labels, &["bus".to_string()], &TrainConfig::default()).unwrap();
        let udfs = UdfRegistry::builtin();
        let plan =
            infer_plan(&q, &trace, &labels, Some(&model), udfs, &CheapMeter::new(), &SelectConfig::default()).unwrap();
        let meter = CheapMeter::new();
        let oracle = Oracle::memoized(&trace);
        let out = apply_plan(&plan, &q, &trace, split.test.clone(), &oracle, Some(&model), udfs, &meter).unwrap();
        let scan = Oracle::new(&trace);
        let truth = full_scan(&scan, split.test.clone()).unwrap();
        prop_assert!(oracle.cost_units() + meter.cost_units() <= scan.cost_units());
        for r in &out.records {
            prop_assert!(truth.iter().any(|g| g.same_detection(r)));
        }
        let bound = plan.content.len() as f64 * FILTER_COST_PER_EVAL + PROXY_COST_PER_FRAME;
        prop_assert!(meter.cost_units() <= split.test.len() as f64 * bound + 1e-9);
    }
}

#[test]
fn identity_plan_matches_scan() {
    let trace = small_trace(11, 500);
    let q = parse("SELECT * FROM t WHERE class = 'car'").unwrap();
    let oracle = Oracle::new(&trace);
    let out =
        apply_plan(&FilterPlan::default(), &q, &trace, 0..500, &oracle, None, UdfRegistry::builtin(), &CheapMeter::new())
            .unwrap();
    let truth: Vec<_> = full_scan(&Oracle::new(&trace), 0..500)
        .unwrap()
        .into_iter()
        .filter(|r| r.object_class == "car")
        .collect();
    assert_eq!(out.records.len(), truth.len());
}
