//! Newline-delimited trace files.
//!
//! Line 1 is a header `{"name","width","height","fps","feature_dim","thresholds"}`.
//! Every following line is one frame `{"t","feature","objects":[{"class","box","conf","content"}]}`
//! in timestamp order. Frames may also carry a frame-level `descriptor`, and
//! objects a `trackid`; both are optional.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, DetectionRecord, Frame, VideoTrace};
use crate::error::TraceError;

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    width: u32,
    height: u32,
    fps: f64,
    feature_dim: usize,
    thresholds: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: u64,
    feature: Vec<f64>,
    objects: Vec<ObjectLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    descriptor: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ObjectLine {
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    conf: f64,
    content: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trackid: Option<u64>,
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<VideoTrace, TraceError> {
    let file = File::open(path.as_ref())?;
    read_trace(BufReader::new(file))
}

pub fn read_trace(reader: impl BufRead) -> Result<VideoTrace, TraceError> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header: Header = loop {
        match lines.next() {
            None => return Err(TraceError::schema(1, "missing header line")),
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((n, Ok(l))) => break serde_json::from_str(&l).map_err(|e| TraceError::schema(n, e.to_string()))?,
            Some((_, Err(e))) => return Err(e.into()),
        }
    };
    if header.width == 0 || header.height == 0 {
        return Err(TraceError::schema(1, "frame dimensions must be positive"));
    }
    if !(header.fps > 0.0) {
        return Err(TraceError::schema(1, "fps must be positive"));
    }
    for (class, th) in &header.thresholds {
        if !(0.0..=1.0).contains(th) {
            return Err(TraceError::schema(1, format!("threshold for `{class}` outside [0, 1]")));
        }
    }

    let mut frames = Vec::new();
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fl: FrameLine = serde_json::from_str(&line).map_err(|e| TraceError::schema(n, e.to_string()))?;
        if fl.t != frames.len() as u64 {
            return Err(TraceError::schema(n, format!("expected t = {}, found {}", frames.len(), fl.t)));
        }
        if fl.feature.len() != header.feature_dim {
            return Err(TraceError::schema(
                n,
                format!("feature has {} entries, header declares {}", fl.feature.len(), header.feature_dim),
            ));
        }
        let mut records = Vec::with_capacity(fl.objects.len());
        for obj in fl.objects {
            let [x0, y0, x1, y1] = obj.bbox;
            let mask = BBox::new(x0, y0, x1, y1).map_err(|e| TraceError::schema(n, e.to_string()))?;
            if !mask.within_frame(header.width, header.height) {
                return Err(TraceError::schema(
                    n,
                    format!("box {:?} exceeds {}x{} frame", obj.bbox, header.width, header.height),
                ));
            }
            if !(0.0..=1.0).contains(&obj.conf) {
                return Err(TraceError::schema(n, format!("confidence {} outside [0, 1]", obj.conf)));
            }
            if obj.content.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(TraceError::schema(n, "content descriptor must be non-negative"));
            }
            if obj.trackid == Some(0) {
                return Err(TraceError::schema(n, "trackid must be positive"));
            }
            // detections below the per-class cutoff are not objects
            if obj.conf < header.thresholds.get(&obj.class).copied().unwrap_or(0.0) {
                continue;
            }
            records.push(DetectionRecord {
                timestamp: fl.t,
                object_class: obj.class,
                mask,
                trackid: obj.trackid,
                content: obj.content,
                confidence: obj.conf,
            });
        }
        let descriptor = fl.descriptor.unwrap_or_else(|| mean_descriptor(&records));
        frames.push(Frame { records, feature: fl.feature, descriptor });
    }
    if frames.is_empty() {
        return Err(TraceError::schema(1, "trace has no frames"));
    }
    Ok(VideoTrace {
        name: header.name,
        width: header.width,
        height: header.height,
        fps: header.fps,
        feature_dim: header.feature_dim,
        thresholds: header.thresholds,
        frames,
    })
}

/// Per-channel mean of object descriptors; empty frames get an empty descriptor.
fn mean_descriptor(records: &[DetectionRecord]) -> Vec<f64> {
    let dim = records.iter().map(|r| r.content.len()).max().unwrap_or(0);
    let mut out = vec![0.0; dim];
    for r in records {
        for (o, c) in out.iter_mut().zip(&r.content) {
            *o += c / records.len() as f64;
        }
    }
    out
}

pub fn write_trace(trace: &VideoTrace, writer: impl Write) -> Result<(), TraceError> {
    let mut w = BufWriter::new(writer);
    let header = Header {
        name: trace.name.clone(),
        width: trace.width,
        height: trace.height,
        fps: trace.fps,
        feature_dim: trace.feature_dim,
        thresholds: trace.thresholds.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for (t, f) in trace.frames.iter().enumerate() {
        let line = FrameLine {
            t: t as u64,
            feature: f.feature.clone(),
            objects: f
                .records
                .iter()
                .map(|r| ObjectLine {
                    class: r.object_class.clone(),
                    bbox: r.mask.into(),
                    conf: r.confidence,
                    content: r.content.clone(),
                    trackid: r.trackid,
                })
                .collect(),
            descriptor: Some(f.descriptor.clone()),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
