#![allow(dead_code)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vidquery::frameql::{Aggregate, CmpOp, Expr, GroupBy, HavingAgg, HavingTerm, Query, SelectList, COLUMNS};

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Lt),
        Just(CmpOp::Le),
        Just(CmpOp::Gt),
        Just(CmpOp::Ge),
    ]
}

fn column() -> impl Strategy<Value = String> {
    prop::sample::select(COLUMNS).prop_map(str::to_string)
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i64..100_000).prop_map(|n| n as f64),
        -1e6f64..1e6,
        prop::num::f64::POSITIVE | prop::num::f64::NEGATIVE | prop::num::f64::ZERO,
    ]
    .prop_filter("finite", |x| x.is_finite())
}

fn text() -> impl Strategy<Value = String> {
    "[a-z' _%-]{0,8}"
}

fn class_name() -> impl Strategy<Value = String> {
    prop::sample::select(&["car", "bus", "boat", "person", "o'neil"][..]).prop_map(str::to_string)
}

fn operand() -> impl Strategy<Value = Expr> {
    prop_oneof![
        number().prop_map(Expr::Num),
        text().prop_map(Expr::Str),
        column().prop_map(Expr::Column),
        prop::sample::select(&["redness", "brightness", "classify"][..]).prop_map(|f| Expr::call(f, "content")),
        prop::sample::select(&["area", "xmin", "ymin", "xmax", "ymax"][..]).prop_map(|f| Expr::call(f, "mask")),
    ]
}

/// Comparisons joined by AND/OR, with nested comparisons as operands.
pub fn predicate() -> impl Strategy<Value = Expr> {
    let leaf = (operand(), cmp_op(), operand()).prop_map(|(l, op, r)| Expr::cmp(l, op, r));
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::or(a, b)),
            (inner, cmp_op(), operand()).prop_map(|(a, op, b)| Expr::cmp(a, op, b)),
        ]
    })
}

fn having_term() -> impl Strategy<Value = HavingTerm> {
    (prop_oneof![Just(HavingAgg::Count), class_name().prop_map(HavingAgg::SumClass)], cmp_op(), number())
        .prop_map(|(agg, op, value)| HavingTerm { agg, op, value })
}

fn select_list() -> impl Strategy<Value = SelectList> {
    prop_oneof![
        Just(SelectList::Star),
        Just(SelectList::Aggregate(Aggregate::FCount)),
        Just(SelectList::Aggregate(Aggregate::Count)),
        column().prop_map(|c| SelectList::Aggregate(Aggregate::CountDistinct(c))),
        prop::collection::vec(column(), 1..4).prop_map(SelectList::Columns),
    ]
}

fn confidence() -> impl Strategy<Value = f64> {
    prop_oneof![(1u32..100).prop_map(|p| p as f64 / 100.0), 0.0001f64..0.9999]
}

fn rate() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0]
}

/// Queries that pass validation: GAP only with LIMIT, error bounds only on
/// ungrouped aggregates, HAVING only with GROUP BY.
pub fn valid_query() -> impl Strategy<Value = Query> {
    (
        select_list(),
        prop::sample::select(&["taipei", "t", "night_street", "grand-canal"][..]),
        prop::option::of(predicate()),
        prop::option::of(prop_oneof![Just(GroupBy::Timestamp), Just(GroupBy::TrackId)]),
        prop::collection::vec(having_term(), 0..3),
        prop::option::of((1u64..10_000, prop::option::of(0u64..1000))),
        prop::option::of((0.001f64..5.0, confidence())),
        prop::option::of(confidence()),
        (prop::option::of(rate()), prop::option::of(rate())),
    )
        .prop_map(|(select, source, where_clause, group, having, limit, bound, conf, (fpr, fnr))| {
            let mut q = Query::new(select, source);
            q.where_clause = where_clause;
            if !q.is_aggregate() {
                q.group_by = group;
                if q.group_by.is_some() {
                    q.having = having;
                }
            }
            if let Some((l, gap)) = limit {
                q.limit = Some(l);
                q.gap = gap;
            }
            match bound {
                Some((e, c)) if q.is_aggregate() => {
                    q.error_bound = Some(e);
                    q.confidence = Some(c);
                }
                _ => q.confidence = conf,
            }
            q.fpr = fpr;
            q.fnr = fnr;
            q
        })
}

/// FrameQL examples from the language description, verbatim.
pub const CORPUS: &[&str] = &[
    "SELECT FCOUNT(*)\nFROM taipei\nWHERE class = 'car'\nERROR WITHIN 0.1\nAT CONFIDENCE 95%",
    "SELECT timestamp\nFROM taipei\nGROUP BY timestamp\nHAVING SUM(class='bus')>=1\n   AND SUM(class='car')>=5\nLIMIT 10 GAP 300",
    "SELECT *\nFROM taipei\nWHERE class = 'bus'\n  AND redness(content) >= 17.5\n  AND area(mask) > 100000\nGROUP BY trackid\nHAVING COUNT(*) > 15",
    "SELECT COUNT (DISTINCT trackid)\nFROM taipei\nWHERE class = 'car'",
    "SELECT COUNT(*)\nFROM taipei\nWHERE class = 'car'\nERROR WITHIN 0.1 CONFIDENCE 95%",
    "SELECT timestamp\nFROM taipei\nWHERE class = 'car'\nFNR WITHIN 0.01\nFPR WITHIN 0.01",
    "SELECT *\nFROM taipei\nWHERE class = 'car'\n  AND classify(content) = 'sedan'",
];

/// `m` plus independent Gaussian noise scaled so `corr(m, t) = rho`; pure
/// noise when `rho` is zero.
pub fn proxy_with_correlation(m: &[f64], rho: f64, seed: u64) -> Vec<f64> {
    let n = m.len() as f64;
    let mean = m.iter().sum::<f64>() / n;
    let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    if rho == 0.0 {
        return m.iter().map(|_| std_normal.sample(&mut rng)).collect();
    }
    let sigma = (var * (1.0 / (rho * rho) - 1.0)).sqrt();
    m.iter().map(|x| x + sigma * std_normal.sample(&mut rng)).collect()
}
