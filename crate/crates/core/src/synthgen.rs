//! Seeded synthetic traces.
//!
//! Each class alternates between busy and idle periods with geometric
//! lengths; a busy period holds one primary track spanning it plus a
//! Poisson number of shorter overlapping tracks, so occupancy (the busy
//! fraction) matches the spec in expectation. Boxes drift with constant
//! velocity and reflect off frame edges slowly enough that consecutive
//! detections of one object overlap with IOU well above 0.7.
//!
//! The per-frame feature vector is `A * counts + b + noise / feature_snr`
//! with a seeded Gaussian `A`, `b` and unit Gaussian noise. The frame
//! descriptor is a background level plus the area-weighted object colors.
//!
//! All randomness comes from ChaCha8 streams derived from the seed, so
//! output is identical across platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::tracestore::{BBox, DetectionRecord, Frame, VideoTrace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("infeasible trace spec: {0}")]
pub struct SpecError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Fraction of frames with at least one object of this class.
    pub occupancy: f64,
    /// Mean busy-period length in frames.
    pub mean_duration: f64,
    /// Mean number of extra overlapping tracks per busy period.
    #[serde(default)]
    pub mean_extra: f64,
    /// Fraction of tracks colored red (red channel mean in [150, 250)).
    #[serde(default)]
    pub red_fraction: f64,
    /// Mean box width and height in pixels; each track varies by up to 20%.
    pub size: (f64, f64),
}

impl ClassSpec {
    pub fn new(name: &str, occupancy: f64, mean_duration: f64) -> Self {
        ClassSpec {
            name: name.to_string(),
            occupancy,
            mean_duration,
            mean_extra: 0.0,
            red_fraction: 0.0,
            size: (160.0, 120.0),
        }
    }

    pub fn extra(mut self, mean_extra: f64) -> Self {
        self.mean_extra = mean_extra;
        self
    }

    pub fn red(mut self, red_fraction: f64) -> Self {
        self.red_fraction = red_fraction;
        self
    }

    pub fn size(mut self, w: f64, h: f64) -> Self {
        self.size = (w, h);
        self
    }
}

/// Planted runs of frames in which every listed class has at least the
/// given count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarePattern {
    pub requirements: Vec<(String, u32)>,
    /// Target fraction of frames inside planted runs.
    pub prevalence: f64,
    pub mean_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub name: String,
    pub n_frames: usize,
    pub classes: Vec<ClassSpec>,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub feature_dim: usize,
    /// Signal-to-noise of the feature encoding; `f64::INFINITY` is noiseless.
    pub feature_snr: f64,
    pub rare_pattern: Option<RarePattern>,
    /// Detector confidence cutoff written to the header for every class.
    pub threshold: f64,
    /// Upper end of the uniform background red level.
    pub background_red: f64,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            name: "synthetic".into(),
            n_frames: 10_000,
            classes: vec![ClassSpec::new("car", 0.3, 30.0)],
            width: 1280,
            height: 720,
            fps: 30.0,
            feature_dim: 8,
            feature_snr: 4.0,
            rare_pattern: None,
            threshold: 0.5,
            background_red: 30.0,
            seed: 0,
        }
    }
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let err = |m: String| Err(SpecError(m));
        if self.n_frames == 0 {
            return err("n_frames must be at least 1".into());
        }
        if self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return err("frame geometry and fps must be positive".into());
        }
        if self.feature_dim == 0 {
            return err("feature_dim must be at least 1".into());
        }
        if self.feature_snr.is_nan() || self.feature_snr < 0.0 {
            return err("feature_snr must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return err("threshold must lie in [0, 1]".into());
        }
        for c in &self.classes {
            if !(0.0..=1.0).contains(&c.occupancy) {
                return err(format!("occupancy of `{}` outside [0, 1]", c.name));
            }
            if !(c.mean_duration >= 1.0) {
                return err(format!("mean_duration of `{}` must be at least 1", c.name));
            }
            if !(0.0..=1.0).contains(&c.red_fraction) || c.mean_extra < 0.0 {
                return err(format!("bad color or extra settings for `{}`", c.name));
            }
            let (w, h) = c.size;
            if !(w > 0.0 && h > 0.0 && w * 1.2 < self.width as f64 && h * 1.2 < self.height as f64) {
                return err(format!("object size of `{}` does not fit the frame", c.name));
            }
        }
        if let Some(p) = &self.rare_pattern {
            if !(0.0..=1.0).contains(&p.prevalence) {
                return err(format!("rare-pattern prevalence {} outside [0, 1]", p.prevalence));
            }
            if !(p.mean_duration >= 1.0) {
                return err("rare-pattern mean_duration must be at least 1".into());
            }
            for (class, _) in &p.requirements {
                if !self.classes.iter().any(|c| &c.name == class) {
                    return err(format!("rare pattern names unknown class `{class}`"));
                }
            }
        }
        Ok(())
    }
}

struct Track {
    class: usize,
    start: usize,
    end: usize,
    w: f64,
    h: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    content: [f64; 3],
}

impl Track {
    fn bbox(&self, t: usize, width: u32, height: u32) -> BBox {
        let dt = (t - self.start) as f64;
        let x = reflect(self.x0 + self.vx * dt, width as f64 - self.w);
        let y = reflect(self.y0 + self.vy * dt, height as f64 - self.h);
        BBox::new(x, y, x + self.w, y + self.h).expect("positive size")
    }
}

/// Position bouncing inside `[0, span]`.
fn reflect(p: f64, span: f64) -> f64 {
    let period = 2.0 * span;
    let q = p.rem_euclid(period);
    if q > span {
        period - q
    } else {
        q
    }
}

/// Geometric length >= 1 with the given mean.
fn geometric(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    1 + (u.ln() / (1.0 - p).ln()).floor() as usize
}

fn new_track(rng: &mut ChaCha8Rng, spec: &TraceSpec, class: usize, start: usize, end: usize) -> Track {
    let cs = &spec.classes[class];
    let w = cs.size.0 * rng.gen_range(0.8..1.2);
    let h = cs.size.1 * rng.gen_range(0.8..1.2);
    let x0 = rng.gen_range(0.0..spec.width as f64 - w);
    let y0 = rng.gen_range(0.0..spec.height as f64 - h);
    // at most 5% of the box per frame keeps consecutive IOU above 0.8
    let vx = rng.gen_range(-0.05..0.05) * w;
    let vy = rng.gen_range(-0.05..0.05) * h;
    let content = if rng.gen::<f64>() < cs.red_fraction {
        [rng.gen_range(150.0..250.0), rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0)]
    } else {
        [rng.gen_range(0.0..15.0), rng.gen_range(20.0..200.0), rng.gen_range(20.0..200.0)]
    };
    Track { class, start, end, w, h, x0, y0, vx, vy, content }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(spec: &TraceSpec) -> Result<VideoTrace, SpecError> {
    spec.validate()?;
    let n = spec.n_frames;
    let mut tracks = Vec::new();

    for (ci, cs) in spec.classes.iter().enumerate() {
        let mut rng = stream(spec.seed, 1 + ci as u64);
        let p = cs.occupancy;
        if p <= 0.0 {
            continue;
        }
        let idle_mean = if p >= 1.0 { 0.0 } else { cs.mean_duration * (1.0 - p) / p };
        let mut busy = rng.gen::<f64>() < p;
        let mut t = 0;
        while t < n {
            if busy {
                let len = geometric(&mut rng, cs.mean_duration);
                let end = (t + len).min(n);
                tracks.push(new_track(&mut rng, spec, ci, t, end));
                if cs.mean_extra > 0.0 {
                    let k = Poisson::new(cs.mean_extra).expect("positive rate").sample(&mut rng) as usize;
                    for _ in 0..k {
                        let s = rng.gen_range(t..end);
                        let e = (s + geometric(&mut rng, cs.mean_duration)).min(end);
                        tracks.push(new_track(&mut rng, spec, ci, s, e));
                    }
                }
                t = end;
            } else if idle_mean > 0.0 {
                t += geometric(&mut rng, idle_mean.max(1.0));
            }
            busy = !busy || p >= 1.0;
        }
    }

    if let Some(pattern) = &spec.rare_pattern {
        let mut rng = stream(spec.seed, 1000);
        let target = (pattern.prevalence * n as f64).round() as usize;
        let mut planted = vec![false; n];
        let mut covered = 0;
        let mut attempts = 0;
        while covered < target && attempts < 100 * n.max(1) {
            attempts += 1;
            let len = geometric(&mut rng, pattern.mean_duration).min(target - covered).max(1);
            if len > n {
                break;
            }
            let s = rng.gen_range(0..=n - len);
            // keep runs apart so each is a distinct event
            let lo = s.saturating_sub(1);
            let hi = (s + len + 1).min(n);
            if planted[lo..hi].iter().any(|&b| b) {
                continue;
            }
            planted[s..s + len].iter_mut().for_each(|b| *b = true);
            covered += len;
            for (class, min) in &pattern.requirements {
                let ci = spec.classes.iter().position(|c| &c.name == class).expect("validated");
                for _ in 0..*min {
                    tracks.push(new_track(&mut rng, spec, ci, s, s + len));
                }
            }
        }
        if covered < target {
            return Err(SpecError(format!("could not plant {target} rare-pattern frames")));
        }
    }

    // one record per track per frame
    let mut per_frame: Vec<Vec<&Track>> = vec![Vec::new(); n];
    for tr in &tracks {
        for slot in &mut per_frame[tr.start..tr.end] {
            slot.push(tr);
        }
    }

    let n_classes = spec.classes.len();
    let mut enc_rng = stream(spec.seed, 2000);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let a: Vec<Vec<f64>> = (0..spec.feature_dim)
        .map(|_| (0..n_classes).map(|_| std_normal.sample(&mut enc_rng)).collect())
        .collect();
    let b: Vec<f64> = (0..spec.feature_dim).map(|_| std_normal.sample(&mut enc_rng)).collect();
    let noise_scale = if spec.feature_snr.is_infinite() {
        0.0
    } else if spec.feature_snr == 0.0 {
        1e6
    } else {
        1.0 / spec.feature_snr
    };

    let mut rec_rng = stream(spec.seed, 3000);
    let mut noise_rng = stream(spec.seed, 4000);
    let frame_area = spec.width as f64 * spec.height as f64;
    let mut frames = Vec::with_capacity(n);
    for (t, active) in per_frame.iter().enumerate() {
        let mut counts = vec![0.0; n_classes];
        let mut descriptor = vec![
            rec_rng.gen_range(0.0..spec.background_red.max(f64::MIN_POSITIVE)),
            rec_rng.gen_range(40.0..80.0),
            rec_rng.gen_range(40.0..80.0),
        ];
        let mut records = Vec::with_capacity(active.len());
        for tr in active {
            counts[tr.class] += 1.0;
            let mask = tr.bbox(t, spec.width, spec.height);
            for (d, c) in descriptor.iter_mut().zip(tr.content) {
                *d += c * mask.area() / frame_area;
            }
            records.push(DetectionRecord {
                timestamp: t as u64,
                object_class: spec.classes[tr.class].name.clone(),
                mask,
                trackid: None,
                content: tr.content.to_vec(),
                confidence: rec_rng.gen_range(spec.threshold..=1.0),
            });
        }
        let feature = (0..spec.feature_dim)
            .map(|i| {
                let clean: f64 = b[i] + a[i].iter().zip(&counts).map(|(w, c)| w * c).sum::<f64>();
                clean + noise_scale * std_normal.sample(&mut noise_rng)
            })
            .collect();
        frames.push(Frame::new(records, feature, descriptor));
    }

    let thresholds: BTreeMap<String, f64> = spec.classes.iter().map(|c| (c.name.clone(), spec.threshold)).collect();
    Ok(VideoTrace::new(spec.name.clone(), spec.width, spec.height, spec.fps, spec.feature_dim, thresholds, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracestore::write_trace;

    fn occupancy(trace: &VideoTrace, class: &str) -> f64 {
        trace.frames().iter().filter(|f| f.count_class(class) > 0).count() as f64 / trace.len() as f64
    }

    #[test]
    fn zero_occupancy_has_no_records() {
        let spec = TraceSpec {
            classes: vec![ClassSpec::new("car", 0.0, 10.0), ClassSpec::new("bus", 0.2, 10.0)],
            n_frames: 2000,
            ..TraceSpec::default()
        };
        let tr = generate(&spec).unwrap();
        assert_eq!(occupancy(&tr, "car"), 0.0);
        assert!(occupancy(&tr, "bus") > 0.1);
    }

    #[test]
    fn occupancy_matches_spec() {
        let spec = TraceSpec {
            classes: vec![ClassSpec::new("car", 0.281, 10.0)],
            n_frames: 100_000,
            seed: 11,
            ..TraceSpec::default()
        };
        let tr = generate(&spec).unwrap();
        let occ = occupancy(&tr, "car");
        assert!((occ - 0.281).abs() <= 0.02, "occupancy {occ}");
    }

    #[test]
    fn full_occupancy() {
        let spec = TraceSpec { classes: vec![ClassSpec::new("boat", 1.0, 50.0)], n_frames: 500, ..Default::default() };
        assert_eq!(occupancy(&generate(&spec).unwrap(), "boat"), 1.0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = TraceSpec { n_frames: 500, seed: 7, ..Default::default() };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_trace(&generate(&spec).unwrap(), &mut a).unwrap();
        write_trace(&generate(&spec).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_trace(&generate(&TraceSpec { seed: 8, ..spec }).unwrap(), &mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_prevalence() {
        let spec = TraceSpec {
            rare_pattern: Some(RarePattern {
                requirements: vec![("car".into(), 2)],
                prevalence: 1.5,
                mean_duration: 5.0,
            }),
            ..Default::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn planted_pattern_reaches_prevalence() {
        let spec = TraceSpec {
            n_frames: 20_000,
            classes: vec![ClassSpec::new("car", 0.3, 20.0), ClassSpec::new("bus", 0.05, 20.0)],
            rare_pattern: Some(RarePattern {
                requirements: vec![("bus".into(), 1), ("car".into(), 5)],
                prevalence: 0.003,
                mean_duration: 6.0,
            }),
            ..Default::default()
        };
        let tr = generate(&spec).unwrap();
        let hits = tr.frames().iter().filter(|f| f.count_class("bus") >= 1 && f.count_class("car") >= 5).count();
        assert!(hits >= 60, "{hits}");
    }

    #[test]
    fn boxes_stay_in_frame_and_tracks_overlap() {
        let spec = TraceSpec { n_frames: 3000, classes: vec![ClassSpec::new("car", 0.5, 200.0)], ..Default::default() };
        let tr = generate(&spec).unwrap();
        for f in tr.frames() {
            for r in f.ground_truth() {
                assert!(r.mask.within_frame(tr.width, tr.height));
            }
        }
    }

    #[test]
    fn noiseless_features_are_affine_in_counts() {
        let spec = TraceSpec {
            n_frames: 2000,
            feature_snr: f64::INFINITY,
            classes: vec![ClassSpec::new("car", 0.5, 20.0).extra(1.0)],
            ..Default::default()
        };
        let tr = generate(&spec).unwrap();
        // frames with equal counts have identical features
        let mut by_count: BTreeMap<usize, &Vec<f64>> = BTreeMap::new();
        for f in tr.frames() {
            let c = f.count_class("car");
            let prev = by_count.entry(c).or_insert(&f.feature);
            assert_eq!(*prev, &f.feature);
        }
        assert!(by_count.len() >= 3);
    }
}
