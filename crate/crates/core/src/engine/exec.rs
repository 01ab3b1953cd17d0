//! Relational operators over verified detection records.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::Serialize;
use serde_json::{json, Value as Json};

use super::eval::{having_holds, record_matches};
use crate::frameql::{Aggregate, GroupBy, Query, SelectList};
use crate::select::UdfRegistry;
use crate::tracestore::{full_scan, DetectionRecord, Oracle};
use crate::Result;

const STAR: &[&str] = &["timestamp", "class", "mask", "trackid", "content"];

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Relation {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Json>>,
    /// Source records of the rows, before projection.
    #[serde(skip)]
    pub records: Vec<DetectionRecord>,
}

fn project(rec: &DetectionRecord, col: &str) -> Json {
    match col {
        "timestamp" => json!(rec.timestamp),
        "class" => json!(rec.object_class),
        "mask" => json!(<[f64; 4]>::from(rec.mask)),
        "trackid" => json!(rec.trackid),
        "content" => json!(rec.content),
        _ => Json::Null,
    }
}

/// GROUP BY / HAVING, projection, GAP and LIMIT over WHERE-matching records.
///
/// A group passes by emitting all of its records. When every projected
/// column is the grouping column, each group yields one row. GAP keeps a
/// row when its timestamp equals the last kept timestamp or lies at least
/// GAP beyond it; LIMIT then caps the row count.
pub fn finish(query: &Query, mut records: Vec<DetectionRecord>) -> Relation {
    records.sort_by_key(|a| (a.timestamp, a.trackid));
    if let Some(g) = query.group_by {
        let key = |r: &DetectionRecord| match g {
            GroupBy::Timestamp => Some(r.timestamp),
            GroupBy::TrackId => r.trackid,
        };
        let mut groups: BTreeMap<u64, Vec<&DetectionRecord>> = BTreeMap::new();
        for r in &records {
            if let Some(k) = key(r) {
                groups.entry(k).or_default().push(r);
            }
        }
        let passing: BTreeSet<u64> =
            groups.iter().filter(|(_, grp)| having_holds(query, grp)).map(|(k, _)| *k).collect();
        records.retain(|r| key(r).is_some_and(|k| passing.contains(&k)));
    }

    let columns: Vec<String> = match &query.select {
        SelectList::Columns(c) => c.clone(),
        _ => STAR.iter().map(|s| s.to_string()).collect(),
    };
    let collapse = query.group_by.is_some_and(|g| columns.iter().all(|c| c == g.column()));

    let mut rel = Relation { columns, ..Relation::default() };
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut last_ts: Option<u64> = None;
    let limit = query.limit.map_or(usize::MAX, |l| l as usize);
    let gap = query.gap.unwrap_or(0);
    for r in records {
        if rel.rows.len() >= limit {
            break;
        }
        let row: Vec<Json> = rel.columns.iter().map(|c| project(&r, c)).collect();
        if collapse && !seen.insert(Json::Array(row.clone()).to_string()) {
            continue;
        }
        match last_ts {
            Some(l) if r.timestamp != l && r.timestamp < l + gap => continue,
            _ => last_ts = Some(r.timestamp),
        }
        rel.rows.push(row);
        rel.records.push(r);
    }
    rel
}

/// WHERE-matching records of every frame in `range`, via the detector.
pub fn scan_matching(
    query: &Query,
    oracle: &Oracle<'_>,
    range: Range<usize>,
    udfs: &UdfRegistry,
) -> Result<Vec<DetectionRecord>> {
    let all = full_scan(oracle, range)?;
    Ok(all.into_iter().filter(|r| record_matches(query.where_clause.as_ref(), r, udfs)).collect())
}

/// Exact value of an aggregate select list over `range`.
pub fn exact_aggregate(query: &Query, oracle: &Oracle<'_>, range: Range<usize>, udfs: &UdfRegistry) -> Result<f64> {
    let n = range.len();
    let recs = scan_matching(query, oracle, range, udfs)?;
    Ok(match &query.select {
        SelectList::Aggregate(Aggregate::FCount) if n == 0 => 0.0,
        SelectList::Aggregate(Aggregate::FCount) => recs.len() as f64 / n as f64,
        SelectList::Aggregate(Aggregate::Count) => recs.len() as f64,
        SelectList::Aggregate(Aggregate::CountDistinct(col)) => {
            let distinct: BTreeSet<String> = recs
                .iter()
                .map(|r| project(r, col))
                .filter(|v| !v.is_null())
                .map(|v| v.to_string())
                .collect();
            distinct.len() as f64
        }
        _ => f64::NAN,
    })
}
