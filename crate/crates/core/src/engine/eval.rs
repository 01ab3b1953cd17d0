//! Predicate evaluation over single detection records.

use crate::frameql::{BoolOp, Expr, HavingAgg, Query};
use crate::select::udf::{UdfRegistry, Value};
use crate::tracestore::DetectionRecord;

/// Scalar value of `expr` on `rec`. Comparisons yield 1 or 0; non-scalar
/// columns (`mask`, `content`, `features`) are only usable as UDF arguments.
pub fn eval(expr: &Expr, rec: &DetectionRecord, udfs: &UdfRegistry) -> Value {
    match expr {
        Expr::Num(v) => Value::Num(*v),
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::Column(c) => match c.as_str() {
            "timestamp" => Value::Num(rec.timestamp as f64),
            "class" => Value::Str(rec.object_class.clone()),
            "trackid" => rec.trackid.map_or(Value::Null, |id| Value::Num(id as f64)),
            _ => Value::Null,
        },
        Expr::Call { name, args } => {
            let (Some(udf), [Expr::Column(arg)]) = (udfs.get(name), args.as_slice()) else {
                return Value::Null;
            };
            match arg.as_str() {
                "content" => udf.call_content(&rec.content),
                "mask" => udf.call_mask(&rec.mask),
                _ => Value::Null,
            }
        }
        Expr::Cmp { .. } | Expr::Bool { .. } => Value::Num(if truth(expr, rec, udfs) { 1.0 } else { 0.0 }),
    }
}

/// Comparison of two values; mismatched or null operands compare false.
pub fn compare(op: crate::frameql::CmpOp, lhs: &Value, rhs: &Value) -> bool {
    match (lhs, rhs) {
        (Value::Num(a), Value::Num(b)) => op.eval(a, b),
        (Value::Str(a), Value::Str(b)) => op.eval(a.as_str(), b.as_str()),
        _ => false,
    }
}

fn truth(expr: &Expr, rec: &DetectionRecord, udfs: &UdfRegistry) -> bool {
    match expr {
        Expr::Bool { op: BoolOp::And, lhs, rhs } => truth(lhs, rec, udfs) && truth(rhs, rec, udfs),
        Expr::Bool { op: BoolOp::Or, lhs, rhs } => truth(lhs, rec, udfs) || truth(rhs, rec, udfs),
        Expr::Cmp { op, lhs, rhs } => compare(*op, &eval(lhs, rec, udfs), &eval(rhs, rec, udfs)),
        e => matches!(eval(e, rec, udfs), Value::Num(v) if v != 0.0),
    }
}

/// WHERE semantics; an absent clause admits every record.
pub fn record_matches(where_clause: Option<&Expr>, rec: &DetectionRecord, udfs: &UdfRegistry) -> bool {
    where_clause.is_none_or(|e| truth(e, rec, udfs))
}

/// Value of one HAVING aggregate over a group.
pub fn having_value(agg: &HavingAgg, group: &[&DetectionRecord]) -> f64 {
    match agg {
        HavingAgg::Count => group.len() as f64,
        HavingAgg::SumClass(c) => group.iter().filter(|r| &r.object_class == c).count() as f64,
    }
}

pub fn having_holds(query: &Query, group: &[&DetectionRecord]) -> bool {
    query.having.iter().all(|h| h.op.eval(&having_value(&h.agg, group), &h.value))
}

/// A frame answers a timestamp query when it has a WHERE-matching record
/// and that per-frame group satisfies HAVING.
pub fn frame_qualifies(query: &Query, records: &[DetectionRecord], udfs: &UdfRegistry) -> bool {
    let group: Vec<&DetectionRecord> =
        records.iter().filter(|r| record_matches(query.where_clause.as_ref(), r, udfs)).collect();
    !group.is_empty() && having_holds(query, &group)
}
