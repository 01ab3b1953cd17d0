use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledSet, ProxyError};
use crate::cost::CheapMeter;
use crate::tracestore::VideoTrace;

pub const PROXY_FORMAT: u32 = 1;

/// Largest count whose frequency is at least 1% of the training frames.
/// The head predicts counts `0..=cap`.
pub fn count_cap(train_counts: &[u32]) -> u32 {
    let n = train_counts.len();
    let max = train_counts.iter().copied().max().unwrap_or(0);
    let mut freq = vec![0usize; max as usize + 1];
    for &c in train_counts {
        freq[c as usize] += 1;
    }
    (0..=max).rev().find(|&v| freq[v as usize] * 100 >= n).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Initial step size; epoch `e` uses `step_size / sqrt(e + 1)`.
    pub step_size: f64,
    pub seed: u64,
    /// Per-class lower bound on the head's cap, so a rare count `N` stays
    /// expressible when the 1% rule would cap below it.
    #[serde(default)]
    pub min_caps: BTreeMap<String, u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 1, batch_size: 16, momentum: 0.9, step_size: 0.1, seed: 0, min_caps: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub step_size: f64,
    pub seed: u64,
    pub train_frames: usize,
}

/// Softmax over counts `0..=cap` for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHead {
    pub class: String,
    pub cap: u32,
    /// `cap + 1` rows of `feature_dim + 1` weights; the last column is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl CountHead {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| {
                let (bias, w) = row.split_last().expect("bias column");
                bias + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn softmax(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest entry, lowest index on ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub proxy_format: u32,
    pub feature_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub heads: Vec<CountHead>,
    /// Requested classes with no training examples.
    pub refused: Vec<String>,
    pub meta: TrainMeta,
}

/// Proxy output for one frame; `counts[i]` and `probs[i]` belong to `heads[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub counts: Vec<u32>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub range: Range<usize>,
    pub frames: Vec<FramePrediction>,
}

impl Inference {
    /// Predicted counts of head `head` as reals.
    pub fn counts(&self, head: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.counts[head] as f64).collect()
    }

    /// `P(count >= n)` for head `head` on every frame.
    pub fn tail(&self, head: usize, n: u32) -> Vec<f64> {
        self.frames.iter().map(|f| tail_probability(&f.probs[head], n)).collect()
    }
}

/// Sum of softmax mass on counts `n..=cap`; zero when `n > cap`.
pub(crate) fn tail_probability(probs: &[f64], n: u32) -> f64 {
    probs.iter().skip(n as usize).sum()
}

impl ProxyModel {
    /// Trains one head per class on the labeled train range. Classes never
    /// seen in training are listed in `refused` instead.
    pub fn train(
        trace: &VideoTrace,
        labels: &LabeledSet,
        classes: &[String],
        cfg: &TrainConfig,
    ) -> Result<ProxyModel, ProxyError> {
        let range = labels.split.train.clone();
        if range.is_empty() {
            return Err(ProxyError::EmptyTrainingRange);
        }
        let d = trace.feature_dim;
        let xs: Vec<&[f64]> = range.clone().map(|t| trace.frames[t].feature.as_slice()).collect();
        let n = xs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = xs.iter().map(|x| standardize(x, &mean, &scale)).collect();

        let mut heads = Vec::new();
        let mut refused = Vec::new();
        for (hi, class) in classes.iter().enumerate() {
            let counts = labels.train_counts(class);
            if counts.iter().all(|&c| c == 0) {
                refused.push(class.clone());
                continue;
            }
            let cap = count_cap(&counts).max(1).max(cfg.min_caps.get(class).copied().unwrap_or(0));
            let targets: Vec<usize> = counts.iter().map(|&c| c.min(cap) as usize).collect();
            let weights = sgd(&z, &targets, cap as usize + 1, cfg, hi as u64);
            heads.push(CountHead { class: class.clone(), cap, weights });
        }

        Ok(ProxyModel {
            proxy_format: PROXY_FORMAT,
            feature_dim: d,
            feature_mean: mean,
            feature_scale: scale,
            heads,
            refused,
            meta: TrainMeta {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                momentum: cfg.momentum,
                step_size: cfg.step_size,
                seed: cfg.seed,
                train_frames: range.len(),
            },
        })
    }

    pub fn head_index(&self, class: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.class == class)
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.head_index(class).is_some()
    }

    /// Runs every head over `range`. No detector calls; the meter is
    /// charged at the proxy rate.
    pub fn infer(&self, trace: &VideoTrace, range: Range<usize>, meter: &CheapMeter) -> Result<Inference, ProxyError> {
        if trace.feature_dim != self.feature_dim {
            return Err(ProxyError::DimensionMismatch { expected: self.feature_dim, found: trace.feature_dim });
        }
        let frames = range
            .clone()
            .map(|t| {
                let x = standardize(&trace.frames[t].feature, &self.feature_mean, &self.feature_scale);
                let probs: Vec<Vec<f64>> = self.heads.iter().map(|h| h.softmax(&x)).collect();
                let counts = probs.iter().map(|p| argmax(p) as u32).collect();
                FramePrediction { counts, probs }
            })
            .collect();
        meter.charge_proxy(range.len() as u64);
        Ok(Inference { range, frames })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<ProxyModel, crate::Error> {
        let m: ProxyModel =
            serde_json::from_str(text).map_err(|e| crate::Error::Format { what: "proxy model", message: e.to_string() })?;
        if m.proxy_format != PROXY_FORMAT {
            return Err(ProxyError::Format(m.proxy_format).into());
        }
        Ok(m)
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

/// Minibatch momentum SGD on softmax cross-entropy.
fn sgd(z: &[Vec<f64>], targets: &[usize], k: usize, cfg: &TrainConfig, stream: u64) -> Vec<Vec<f64>> {
    let d = z.first().map_or(0, Vec::len);
    let mut w = vec![vec![0.0; d + 1]; k];
    let mut vel = vec![vec![0.0; d + 1]; k];
    let mut grad = vec![vec![0.0; d + 1]; k];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..z.len()).collect();
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for &i in chunk {
                let x = &z[i];
                let logits: Vec<f64> = w
                    .iter()
                    .map(|row| row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let p = softmax(&logits);
                for (c, g) in grad.iter_mut().enumerate() {
                    let err = p[c] - if c == targets[i] { 1.0 } else { 0.0 };
                    for j in 0..d {
                        g[j] += err * x[j];
                    }
                    g[d] += err;
                }
            }
            let lr = cfg.step_size / ((epoch + 1) as f64).sqrt();
            let scale = lr / chunk.len() as f64;
            for ((row, v), g) in w.iter_mut().zip(vel.iter_mut()).zip(&grad) {
                for j in 0..=d {
                    v[j] = cfg.momentum * v[j] - scale * g[j];
                    row[j] += v[j];
                }
            }
        }
    }
    w
}
