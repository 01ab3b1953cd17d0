//! Rule-based optimizer and executor.
//!
//! Each query is classified as an aggregate, a scrubbing search, a filtered
//! selection, or an exact scan. The optimizer picks one plan kind from fixed
//! rules; [`Engine::execute`] accepts any kind, so callers may force a path.

pub mod eval;
pub mod exec;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggcv::{run_aggregate, AggConfig, AggregateInput, AggregatePath, Estimate};
use crate::cost::{CheapMeter, PROXY_COST_PER_FRAME};
use crate::frameql::{print, Aggregate, Query, SelectList};
use crate::proxy::{label, LabeledSet, LabeledSplit, ProxyModel, TrainConfig};
use crate::scrub::{fallback_scan, run_scrub, ScrubPath, ScrubPredicate};
use crate::select::{apply_plan, infer_plan, FilterPlan, FrameGate, SelectConfig, UdfRegistry};
use crate::tracestore::{resolve_tracks, Oracle, VideoTrace, DEFAULT_IOU_CUTOFF};
use crate::{Error, Result};
pub use exec::Relation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub rewrite_threshold: f64,
    pub bootstrap_b: usize,
    pub stride_min: usize,
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { rewrite_threshold: 0.1, bootstrap_b: 1000, stride_min: 2, epochs: 1, step: 0.1, seed: 0 }
    }
}

impl EngineConfig {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Unsupported(format!("bad value `{value}` for config key `{key}`"));
        match key {
            "rewrite_threshold" => self.rewrite_threshold = value.parse().map_err(|_| bad())?,
            "bootstrap_B" | "bootstrap_b" => self.bootstrap_b = value.parse().map_err(|_| bad())?,
            "stride_min" => self.stride_min = value.parse().map_err(|_| bad())?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "step" => self.step = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Unsupported(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn train(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, step_size: self.step, seed: self.seed, ..TrainConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryClass {
    Aggregate,
    Scrub,
    Selection,
    Exact,
}

/// Aggregates are FCOUNT / COUNT(*); scrubbing selects timestamps under a
/// LIMIT; selections project records behind UDF predicates. `COUNT(DISTINCT)`
/// and anything else run as exact scans.
pub fn classify(q: &Query) -> QueryClass {
    match &q.select {
        SelectList::Aggregate(Aggregate::FCount | Aggregate::Count) => QueryClass::Aggregate,
        SelectList::Aggregate(Aggregate::CountDistinct(_)) => QueryClass::Exact,
        SelectList::Columns(c) if q.limit.is_some() && c.len() == 1 && c[0] == "timestamp" => QueryClass::Scrub,
        _ if q.where_clause.as_ref().is_some_and(|w| w.contains_call()) => QueryClass::Selection,
        _ => QueryClass::Exact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    AggregateRewrite,
    #[serde(rename = "aggregate-cv")]
    AggregateControlVariates,
    #[serde(rename = "aggregate-aqp")]
    AggregatePlainAqp,
    AggregateExact,
    ScrubRanked,
    ScrubFallback,
    SelectionFiltered,
    ExactScan,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::AggregateRewrite => "aggregate-rewrite",
            PlanKind::AggregateControlVariates => "aggregate-cv",
            PlanKind::AggregatePlainAqp => "aggregate-aqp",
            PlanKind::AggregateExact => "aggregate-exact",
            PlanKind::ScrubRanked => "scrub-ranked",
            PlanKind::ScrubFallback => "scrub-fallback",
            PlanKind::SelectionFiltered => "selection-filtered",
            PlanKind::ExactScan => "exact-scan",
        }
    }

    fn from_path(p: AggregatePath) -> PlanKind {
        match p {
            AggregatePath::Exact => PlanKind::AggregateExact,
            AggregatePath::Rewrite => PlanKind::AggregateRewrite,
            AggregatePath::ControlVariates => PlanKind::AggregateControlVariates,
            AggregatePath::PlainAqp => PlanKind::AggregatePlainAqp,
        }
    }

    fn path(self) -> Option<AggregatePath> {
        Some(match self {
            PlanKind::AggregateExact => AggregatePath::Exact,
            PlanKind::AggregateRewrite => AggregatePath::Rewrite,
            PlanKind::AggregateControlVariates => AggregatePath::ControlVariates,
            PlanKind::AggregatePlainAqp => AggregatePath::PlainAqp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub kind: PlanKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Classes the proxy was trained for; empty when no proxy is used.
    pub proxy_classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<FilterPlan>,
}

impl Plan {
    pub fn new(kind: PlanKind) -> Plan {
        Plan { kind, error_bound: None, confidence: None, proxy_classes: Vec::new(), filters: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Answer {
    Estimate(Estimate),
    Timestamps { timestamps: Vec<u64>, verified: bool },
    Relation(Relation),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub plan: &'static str,
    pub query: String,
    pub answer: Answer,
    pub oracle_calls: u64,
    /// Query-time cost: detector calls plus proxy and filter work.
    pub cost_units: f64,
    pub proxy_cost_units: f64,
    /// Labeling the train and held-out ranges, done once.
    pub offline_cost_units: f64,
    /// Proxy training, excluded from `cost_units`.
    pub train_cost_units: f64,
    pub details: serde_json::Value,
    pub wall_seconds: f64,
}

impl PlanReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A trace with its labeled split and trained proxies.
pub struct Engine {
    trace: VideoTrace,
    labels: LabeledSet,
    config: EngineConfig,
    udfs: UdfRegistry,
    models: Mutex<BTreeMap<Vec<(String, u32)>, (Arc<ProxyModel>, f64)>>,
}

impl Engine {
    /// Resolves track ids if the trace has none, then labels the train and
    /// held-out ranges with the detector.
    pub fn new(trace: VideoTrace, split: LabeledSplit, config: EngineConfig) -> Result<Engine> {
        split.check(trace.len())?;
        let trace = if trace.has_tracks() { trace } else { resolve_tracks(trace, DEFAULT_IOU_CUTOFF) };
        let labels = label(&trace, &split)?;
        Ok(Engine { trace, labels, config, udfs: UdfRegistry::with_builtins(), models: Mutex::new(BTreeMap::new()) })
    }

    pub fn with_udfs(mut self, udfs: UdfRegistry) -> Engine {
        self.udfs = udfs;
        self
    }

    pub fn trace(&self) -> &VideoTrace {
        &self.trace
    }

    pub fn labels(&self) -> &LabeledSet {
        &self.labels
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn udfs(&self) -> &UdfRegistry {
        &self.udfs
    }

    /// Proxy for `classes`, trained on first use. `None` without training data.
    pub fn model(&self, classes: &[String]) -> Result<Option<(Arc<ProxyModel>, f64)>> {
        let request: Vec<(String, u32)> = classes.iter().map(|c| (c.clone(), 0)).collect();
        self.model_with_caps(&request)
    }

    /// Like [`Engine::model`], with a minimum cap per class. The second
    /// element is the training cost in units.
    pub fn model_with_caps(&self, request: &[(String, u32)]) -> Result<Option<(Arc<ProxyModel>, f64)>> {
        if request.is_empty() || self.labels.split.train.is_empty() || self.labels.split.heldout.is_empty() {
            return Ok(None);
        }
        let mut min_caps: BTreeMap<String, u32> = BTreeMap::new();
        for (c, n) in request {
            let e = min_caps.entry(c.clone()).or_insert(0);
            *e = (*e).max(*n);
        }
        let key: Vec<(String, u32)> = min_caps.iter().map(|(c, n)| (c.clone(), *n)).collect();
        let mut cache = self.models.lock().expect("model cache poisoned");
        if let Some(m) = cache.get(&key) {
            return Ok(Some(m.clone()));
        }
        let classes: Vec<String> = min_caps.keys().cloned().collect();
        let cfg = TrainConfig { min_caps, ..self.config.train() };
        let model = ProxyModel::train(&self.trace, &self.labels, &classes, &cfg)?;
        let cost = (self.config.epochs * self.labels.split.train.len()) as f64 * PROXY_COST_PER_FRAME;
        let entry = (Arc::new(model), cost);
        cache.insert(key, entry.clone());
        Ok(Some(entry))
    }

    /// Class whose proxy count estimates the per-frame aggregate statistic.
    fn aggregate_class(q: &Query) -> Option<String> {
        let conj = q.where_conjuncts();
        match conj.as_slice() {
            [only] => only.as_class_eq().map(str::to_string),
            _ => None,
        }
    }

    /// Classes the proxy must count, each with the smallest count it must
    /// be able to express.
    fn proxy_request(&self, q: &Query, class: QueryClass) -> Vec<(String, u32)> {
        match class {
            QueryClass::Aggregate if q.error_bound.is_some() => {
                Self::aggregate_class(q).into_iter().map(|c| (c, 0)).collect()
            }
            QueryClass::Scrub => ScrubPredicate::from_query(q).map(|p| p.conjuncts).unwrap_or_default(),
            QueryClass::Selection => q.class_filter().map(|c| (c.to_string(), 0)).into_iter().collect(),
            _ => Vec::new(),
        }
    }

    fn trained(&self, request: &[(String, u32)]) -> Result<Option<Arc<ProxyModel>>> {
        Ok(self.model_with_caps(request)?.map(|(m, _)| m).filter(|m| request.iter().all(|(c, _)| m.has_class(c))))
    }

    /// Whether any labeled training frame satisfies the scrubbing predicate.
    fn scrub_has_instances(&self, q: &Query) -> Result<bool> {
        for t in self.labels.split.train.clone() {
            if eval::frame_qualifies(q, self.labels.records(t)?, &self.udfs) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn optimize(&self, q: &Query) -> Result<Plan> {
        let class = classify(q);
        let request = self.proxy_request(q, class);
        let model = self.trained(&request)?;
        let kind = match class {
            QueryClass::Aggregate => PlanKind::from_path(AggregatePath::choose(
                q.error_bound,
                model.is_some(),
                self.config.rewrite_threshold,
            )),
            QueryClass::Scrub if model.is_some() && self.scrub_has_instances(q)? => PlanKind::ScrubRanked,
            QueryClass::Scrub => PlanKind::ScrubFallback,
            QueryClass::Selection => PlanKind::SelectionFiltered,
            QueryClass::Exact => PlanKind::ExactScan,
        };
        let mut plan = Plan::new(kind);
        plan.error_bound = q.error_bound;
        plan.confidence = q.error_bound.map(|_| q.confidence_level());
        if model.is_some() {
            plan.proxy_classes = request.into_iter().map(|(c, _)| c).collect();
        }
        Ok(plan)
    }

    /// Optimizes and executes.
    pub fn run(&self, q: &Query) -> Result<PlanReport> {
        let plan = self.optimize(q)?;
        self.execute(&plan, q)
    }

    pub fn execute(&self, plan: &Plan, q: &Query) -> Result<PlanReport> {
        let started = Instant::now();
        let oracle = Oracle::memoized(&self.trace);
        let meter = CheapMeter::new();
        let range = self.labels.split.test.clone();
        let mut request = self.proxy_request(q, classify(q));
        for c in &plan.proxy_classes {
            if !request.iter().any(|(r, _)| r == c) {
                request.push((c.clone(), 0));
            }
        }
        let needs_model = matches!(
            plan.kind,
            PlanKind::AggregateRewrite
                | PlanKind::AggregateControlVariates
                | PlanKind::ScrubRanked
                | PlanKind::SelectionFiltered
                | PlanKind::ScrubFallback
        );
        let trained = if needs_model { self.model_with_caps(&request)? } else { None };
        let model = trained.as_ref().map(|(m, _)| m.clone()).filter(|m| request.iter().all(|(c, _)| m.has_class(c)));
        let train_cost = trained.as_ref().map_or(0.0, |(_, c)| *c);
        let udfs = &self.udfs;

        let mut kind = plan.kind;
        let mut details = json!({});
        let answer = match plan.kind {
            PlanKind::AggregateRewrite
            | PlanKind::AggregateControlVariates
            | PlanKind::AggregatePlainAqp
            | PlanKind::AggregateExact => {
                if !matches!(q.select, SelectList::Aggregate(Aggregate::FCount | Aggregate::Count)) {
                    return Err(Error::Unsupported(format!("{} needs FCOUNT(*) or COUNT(*)", plan.kind.name())));
                }
                let class = Self::aggregate_class(q);
                let proxy = match (&model, &class) {
                    (Some(m), Some(c)) => m.head_index(c).map(|h| (m.as_ref(), h)),
                    _ => None,
                };
                let cfg = AggConfig {
                    rewrite_threshold: self.config.rewrite_threshold,
                    bootstrap_b: self.config.bootstrap_b,
                    seed: self.config.seed,
                };
                let out = run_aggregate(&AggregateInput {
                    query: q,
                    trace: &self.trace,
                    labels: &self.labels,
                    proxy,
                    udfs,
                    path: plan.kind.path().expect("aggregate kind"),
                    oracle: &oracle,
                    meter: &meter,
                    config: &cfg,
                })?;
                kind = PlanKind::from_path(out.path);
                details = json!({
                    "requested": PlanKind::from_path(out.chosen).name(),
                    "k": out.k,
                    "bootstrap": out.bootstrap,
                });
                Answer::Estimate(out.estimate)
            }
            PlanKind::ScrubRanked | PlanKind::ScrubFallback => {
                let out = if plan.kind == PlanKind::ScrubRanked {
                    run_scrub(q, &self.trace, range, model.as_deref(), &oracle, udfs, &meter)?
                } else {
                    let filters = infer_plan(
                        q,
                        &self.trace,
                        &self.labels,
                        model.as_deref(),
                        udfs,
                        &meter,
                        &SelectConfig { stride_min: self.config.stride_min },
                    )?;
                    let gate = FrameGate::new(&filters, &self.trace, model.as_deref(), udfs, &meter);
                    let out = fallback_scan(q, range, &oracle, Some(&gate), udfs)?;
                    details = json!({ "filters": filters });
                    out
                };
                kind = match out.path {
                    ScrubPath::Ranked => PlanKind::ScrubRanked,
                    ScrubPath::Fallback => PlanKind::ScrubFallback,
                };
                details["examined"] = json!(out.examined);
                Answer::Timestamps { timestamps: out.timestamps, verified: true }
            }
            PlanKind::SelectionFiltered => {
                let filters = match &plan.filters {
                    Some(f) => f.clone(),
                    None => infer_plan(
                        q,
                        &self.trace,
                        &self.labels,
                        model.as_deref(),
                        udfs,
                        &meter,
                        &SelectConfig { stride_min: self.config.stride_min },
                    )?,
                };
                let out = apply_plan(&filters, q, &self.trace, range, &oracle, model.as_deref(), udfs, &meter)?;
                details = json!({
                    "filters": filters,
                    "frames_considered": out.frames_considered,
                    "frames_admitted": out.frames_admitted,
                });
                Answer::Relation(exec::finish(q, out.records))
            }
            PlanKind::ExactScan => match &q.select {
                SelectList::Aggregate(_) => {
                    let n = range.len();
                    Answer::Estimate(Estimate::exact(exec::exact_aggregate(q, &oracle, range, udfs)?, n))
                }
                _ => Answer::Relation(exec::finish(q, exec::scan_matching(q, &oracle, range, udfs)?)),
            },
        };

        let proxy_cost = meter.cost_units();
        Ok(PlanReport {
            plan: kind.name(),
            query: print(q),
            answer,
            oracle_calls: oracle.call_count(),
            cost_units: oracle.cost_units() + proxy_cost,
            proxy_cost_units: proxy_cost,
            offline_cost_units: self.labels.offline_cost_units,
            train_cost_units: train_cost,
            details,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }
}
