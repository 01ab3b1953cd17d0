//! Aggregates under an absolute error bound.
//!
//! Three estimators share one stopping rule: sample frames without
//! replacement in rounds of `ceil(K / eps)` and stop once
//! `Q(1 - delta/2) * sigma_N < eps`, where `sigma_N` is the standard error
//! with the finite-population correction. Control variates run the same
//! loop on `m + c (t - tau)`; proxy rewriting skips sampling entirely when
//! the bootstrap says the proxy mean is already within the bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CheapMeter;
use crate::engine::eval::record_matches;
use crate::frameql::{Aggregate, Query, SelectList};
use crate::proxy::{bootstrap_error, BootstrapEstimate, LabeledSet, ProxyModel};
use crate::select::udf::UdfRegistry;
use crate::tracestore::{DetectionRecord, Oracle, VideoTrace};
use crate::Result;

/// Inverse standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub epsilon: f64,
    pub confidence: f64,
    /// Range of the estimated per-frame statistic.
    pub k: f64,
    /// Samples added per round.
    pub round_step: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Round step defaults to the initial sample size.
    pub fn new(epsilon: f64, confidence: f64, k: f64, seed: u64) -> Self {
        let mut cfg = SamplerConfig { epsilon, confidence, k, round_step: 0, seed };
        cfg.round_step = cfg.initial_size();
        cfg
    }

    /// `ceil(K / eps)`, at least 2 so a sample variance exists.
    pub fn initial_size(&self) -> usize {
        ((self.k / self.epsilon).ceil() as usize).max(2)
    }

    /// Two-sided critical value `Q(1 - delta/2)`.
    pub fn z(&self) -> f64 {
        normal_quantile(1.0 - (1.0 - self.confidence) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
    pub confidence: f64,
    pub n_samples: usize,
    /// Every frame was examined; the value is exact.
    pub exact: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_coefficient: Option<f64>,
}

impl Estimate {
    pub fn exact(value: f64, n_samples: usize) -> Self {
        Estimate { value, half_width: 0.0, confidence: 1.0, n_samples, exact: true, cv_coefficient: None }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        self.half_width *= factor;
        self
    }
}

/// `K` = largest labeled per-frame statistic plus one.
pub fn estimate_range_k(labeled: &[f64]) -> f64 {
    labeled.iter().copied().fold(0.0, f64::max) + 1.0
}

/// Incremental Fisher-Yates: each prefix is a uniform sample without replacement.
struct Permutation {
    order: Vec<usize>,
    drawn: usize,
    rng: ChaCha8Rng,
}

impl Permutation {
    fn new(n: usize, seed: u64) -> Self {
        Permutation { order: (0..n).collect(), drawn: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn draw(&mut self, k: usize) -> &[usize] {
        let start = self.drawn;
        let end = (start + k).min(self.order.len());
        for i in start..end {
            let j = self.rng.gen_range(i..self.order.len());
            self.order.swap(i, j);
        }
        self.drawn = end;
        &self.order[start..end]
    }

    fn exhausted(&self) -> bool {
        self.drawn == self.order.len()
    }
}

#[derive(Default)]
struct Moments {
    n: f64,
    sm: f64,
    st: f64,
    smm: f64,
    stt: f64,
    smt: f64,
}

impl Moments {
    fn push(&mut self, m: f64, t: f64) {
        self.n += 1.0;
        self.sm += m;
        self.st += t;
        self.smm += m * m;
        self.stt += t * t;
        self.smt += m * t;
    }

    fn var_m(&self) -> f64 {
        (self.smm - self.sm * self.sm / self.n) / (self.n - 1.0)
    }

    fn var_t(&self) -> f64 {
        (self.stt - self.st * self.st / self.n) / (self.n - 1.0)
    }

    fn cov(&self) -> f64 {
        (self.smt - self.sm * self.st / self.n) / (self.n - 1.0)
    }
}

/// Standard error of a sample mean drawn without replacement.
fn standard_error(var: f64, n: usize, population: usize) -> f64 {
    let fpc = 1.0 - n as f64 / population as f64;
    (var.max(0.0) / n as f64 * fpc.max(0.0)).sqrt()
}

/// Proxy statistic with its exact population mean and variance.
struct Control<'a> {
    t: &'a [f64],
    tau: f64,
    var: f64,
}

fn sample_loop<E>(
    population: usize,
    cfg: &SamplerConfig,
    control: Option<Control<'_>>,
    mut m: impl FnMut(usize) -> Result<f64, E>,
) -> Result<Estimate, E> {
    assert!(population > 0, "sampling needs at least one frame");
    assert!(cfg.epsilon > 0.0 && cfg.confidence > 0.0 && cfg.confidence < 1.0);
    let z = cfg.z();
    let mut perm = Permutation::new(population, cfg.seed);
    let mut mom = Moments::default();
    let mut batch = cfg.initial_size();
    loop {
        for &i in perm.draw(batch) {
            let t = control.as_ref().map_or(0.0, |c| c.t[i]);
            mom.push(m(i)?, t);
        }
        batch = cfg.round_step.max(1);
        let n = mom.n as usize;
        let (value, var, c) = match &control {
            Some(ctl) if n >= 2 => {
                let vt = mom.var_t();
                let c = if ctl.var > 0.0 && vt > 0.0 { -mom.cov() / vt } else { 0.0 };
                let var = mom.var_m() + c * c * vt + 2.0 * c * mom.cov();
                (cv_estimate(mom.sm / mom.n, mom.st / mom.n, ctl.tau, c), var, Some(c))
            }
            Some(_) => (mom.sm / mom.n, f64::INFINITY, Some(0.0)),
            None if n >= 2 => (mom.sm / mom.n, mom.var_m(), None),
            None => (mom.sm / mom.n, f64::INFINITY, None),
        };
        if perm.exhausted() {
            let mut e = Estimate::exact(mom.sm / mom.n, n);
            e.cv_coefficient = c;
            return Ok(e);
        }
        let half_width = z * standard_error(var, n, population);
        if half_width < cfg.epsilon {
            return Ok(Estimate {
                value,
                half_width,
                confidence: cfg.confidence,
                n_samples: n,
                exact: false,
                cv_coefficient: c,
            });
        }
    }
}

/// `mean_m + c (mean_t - tau)`; unbiased for the mean of `m` for any fixed `c`.
pub fn cv_estimate(mean_m: f64, mean_t: f64, tau: f64, c: f64) -> f64 {
    mean_m + c * (mean_t - tau)
}

/// Plain adaptive sampling of `m` over frame indices `0..population`.
pub fn adaptive_sample<E>(
    population: usize,
    cfg: &SamplerConfig,
    m: impl FnMut(usize) -> Result<f64, E>,
) -> Result<Estimate, E> {
    sample_loop(population, cfg, None, m)
}

/// Adaptive sampling of `m + c (t - tau)` where `t` is known on every frame.
/// `c` is re-estimated each round from the sampled pairs.
pub fn control_variates_sample<E>(
    proxy: &[f64],
    cfg: &SamplerConfig,
    m: impl FnMut(usize) -> Result<f64, E>,
) -> Result<Estimate, E> {
    let n = proxy.len() as f64;
    let tau = proxy.iter().sum::<f64>() / n;
    let var = proxy.iter().map(|t| (t - tau).powi(2)).sum::<f64>() / n;
    sample_loop(proxy.len(), cfg, Some(Control { t: proxy, tau, var }), m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refusal {
    pub bootstrap: BootstrapEstimate,
    pub confidence: f64,
}

/// Answers from the proxy alone when the bootstrap puts its error under
/// the bound with at least the requested confidence.
pub fn rewrite_with_proxy(
    proxy_unseen: &[f64],
    bootstrap: &BootstrapEstimate,
    confidence: f64,
) -> Result<Estimate, Refusal> {
    if bootstrap.p_within < confidence || proxy_unseen.is_empty() {
        return Err(Refusal { bootstrap: *bootstrap, confidence });
    }
    Ok(Estimate {
        value: proxy_unseen.iter().sum::<f64>() / proxy_unseen.len() as f64,
        half_width: bootstrap.uerr,
        confidence,
        n_samples: 0,
        exact: false,
        cv_coefficient: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatePath {
    Exact,
    Rewrite,
    ControlVariates,
    PlainAqp,
}

impl AggregatePath {
    /// `rewrite_threshold` separates the rewrite and control-variate regimes.
    pub fn choose(error_bound: Option<f64>, trainable: bool, rewrite_threshold: f64) -> AggregatePath {
        match error_bound {
            None => AggregatePath::Exact,
            Some(_) if !trainable => AggregatePath::PlainAqp,
            Some(e) if e >= rewrite_threshold => AggregatePath::Rewrite,
            Some(_) => AggregatePath::ControlVariates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggConfig {
    pub rewrite_threshold: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for AggConfig {
    fn default() -> Self {
        AggConfig { rewrite_threshold: 0.1, bootstrap_b: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateOutcome {
    /// Path requested by the dispatch rule.
    pub chosen: AggregatePath,
    /// Path that produced the answer (differs after a rewrite refusal).
    pub path: AggregatePath,
    pub estimate: Estimate,
    pub k: Option<f64>,
    pub bootstrap: Option<BootstrapEstimate>,
}

/// Inputs shared by every aggregate path.
pub struct AggregateInput<'a> {
    pub query: &'a Query,
    pub trace: &'a VideoTrace,
    pub labels: &'a LabeledSet,
    /// Proxy and head index when the WHERE clause is a single trained class.
    pub proxy: Option<(&'a ProxyModel, usize)>,
    pub udfs: &'a UdfRegistry,
    /// Requested path, normally from [`AggregatePath::choose`].
    pub path: AggregatePath,
    pub oracle: &'a Oracle<'a>,
    pub meter: &'a CheapMeter,
    pub config: &'a AggConfig,
}

fn frame_statistic(query: &Query, records: &[DetectionRecord], udfs: &UdfRegistry) -> f64 {
    records.iter().filter(|r| record_matches(query.where_clause.as_ref(), r, udfs)).count() as f64
}

/// Dispatches an `FCOUNT` / `COUNT(*)` aggregate over the test range.
/// `COUNT(*)` is estimated as `FCOUNT` and scaled by the frame count, so its
/// bound applies per frame.
pub fn run_aggregate(input: &AggregateInput<'_>) -> Result<AggregateOutcome> {
    let q = input.query;
    let range = input.labels.split.test.clone();
    let scale = match q.select {
        SelectList::Aggregate(Aggregate::Count) => range.len() as f64,
        _ => 1.0,
    };
    let population = range.len();
    let chosen = input.path;
    let stat = |i: usize| -> Result<f64> {
        let recs = input.oracle.detect(range.start + i, None)?;
        Ok(frame_statistic(q, &recs, input.udfs))
    };

    let (Some(eps), true) = (q.error_bound.filter(|_| chosen != AggregatePath::Exact), population > 0) else {
        let mut total = 0.0;
        for i in 0..population {
            total += stat(i)?;
        }
        let value = if population == 0 { 0.0 } else { total / population as f64 };
        return Ok(AggregateOutcome {
            chosen,
            path: AggregatePath::Exact,
            estimate: Estimate::exact(value, population).scaled(scale),
            k: None,
            bootstrap: None,
        });
    };

    let labeled: Vec<f64> = input
        .labels
        .split
        .labeled_frames()
        .map(|t| Ok(frame_statistic(q, input.labels.records(t)?, input.udfs)))
        .collect::<Result<_>>()?;
    let k = estimate_range_k(&labeled);
    let cfg = SamplerConfig::new(eps, q.confidence_level(), k, input.config.seed);
    let done = |path, estimate: Estimate, bootstrap| AggregateOutcome {
        chosen,
        path,
        estimate: estimate.scaled(scale),
        k: Some(k),
        bootstrap,
    };

    let proxy = input.proxy.filter(|_| chosen != AggregatePath::PlainAqp);
    let Some((model, head)) = proxy else {
        return Ok(done(AggregatePath::PlainAqp, adaptive_sample(population, &cfg, stat)?, None));
    };

    // proxy over the unseen range comes first on both proxy paths
    let unseen = model.infer(input.trace, range.clone(), input.meter)?.counts(head);
    let mut bootstrap = None;
    if chosen == AggregatePath::Rewrite {
        let heldout = input.labels.split.heldout.clone();
        let pred = model.infer(input.trace, heldout.clone(), input.meter)?.counts(head);
        let truth: Vec<f64> =
            heldout.map(|t| Ok(frame_statistic(q, input.labels.records(t)?, input.udfs))).collect::<Result<_>>()?;
        let boot = bootstrap_error(&pred, &truth, input.config.bootstrap_b, eps, input.config.seed)?;
        bootstrap = Some(boot);
        if let Ok(est) = rewrite_with_proxy(&unseen, &boot, q.confidence_level()) {
            return Ok(done(AggregatePath::Rewrite, est, bootstrap));
        }
    }
    let est = control_variates_sample(&unseen, &cfg, stat)?;
    Ok(done(AggregatePath::ControlVariates, est, bootstrap))
}
