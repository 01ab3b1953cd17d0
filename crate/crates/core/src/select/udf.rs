//! User-defined functions callable from FrameQL predicates.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::tracestore::BBox;

/// Runtime value of a column, literal or UDF result.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Str(String),
    Null,
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgKind {
    Content,
    Mask,
}

#[derive(Debug, Clone, Copy)]
pub enum UdfFn {
    Content(fn(&[f64]) -> Value),
    Mask(fn(&BBox) -> Value),
}

/// A pure, deterministic function of one record column.
#[derive(Debug, Clone)]
pub struct Udf {
    pub name: String,
    pub arg: ArgKind,
    pub func: UdfFn,
    /// May be applied to the whole-frame descriptor as a filter.
    pub frame_level: bool,
}

impl Udf {
    pub fn content(name: &str, f: fn(&[f64]) -> Value, frame_level: bool) -> Udf {
        Udf { name: name.into(), arg: ArgKind::Content, func: UdfFn::Content(f), frame_level }
    }

    pub fn mask(name: &str, f: fn(&BBox) -> Value) -> Udf {
        Udf { name: name.into(), arg: ArgKind::Mask, func: UdfFn::Mask(f), frame_level: false }
    }

    pub fn call_content(&self, content: &[f64]) -> Value {
        match self.func {
            UdfFn::Content(f) => f(content),
            UdfFn::Mask(_) => Value::Null,
        }
    }

    pub fn call_mask(&self, mask: &BBox) -> Value {
        match self.func {
            UdfFn::Mask(f) => f(mask),
            UdfFn::Content(_) => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct UdfRegistry {
    udfs: BTreeMap<String, Udf>,
}

impl UdfRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shared registry holding the built-in functions.
    pub fn builtin() -> &'static UdfRegistry {
        static BUILTIN: OnceLock<UdfRegistry> = OnceLock::new();
        BUILTIN.get_or_init(UdfRegistry::with_builtins)
    }

    pub fn with_builtins() -> Self {
        let mut r = UdfRegistry::new();
        r.register(Udf::content("redness", redness_value, true));
        r.register(Udf::content("brightness", brightness_value, true));
        r.register(Udf::content("classify", classify, false));
        r.register(Udf::mask("area", |m| Value::Num(area(m))));
        r.register(Udf::mask("xmin", |m| Value::Num(m.xmin())));
        r.register(Udf::mask("ymin", |m| Value::Num(m.ymin())));
        r.register(Udf::mask("xmax", |m| Value::Num(m.xmax())));
        r.register(Udf::mask("ymax", |m| Value::Num(m.ymax())));
        r
    }

    /// Adds or replaces a function by name.
    pub fn register(&mut self, udf: Udf) {
        self.udfs.insert(udf.name.clone(), udf);
    }

    pub fn get(&self, name: &str) -> Option<&Udf> {
        self.udfs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.udfs.keys().map(String::as_str)
    }
}

/// Red channel of a color descriptor; `None` when empty.
pub fn redness(content: &[f64]) -> Option<f64> {
    content.first().copied()
}

fn redness_value(content: &[f64]) -> Value {
    redness(content).map_or(Value::Null, Value::Num)
}

fn brightness_value(content: &[f64]) -> Value {
    if content.is_empty() {
        return Value::Null;
    }
    Value::Num(content.iter().sum::<f64>() / content.len() as f64)
}

/// Dominant channel name.
fn classify(content: &[f64]) -> Value {
    const NAMES: [&str; 3] = ["red", "green", "blue"];
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in content.iter().take(3).enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map_or(Value::Null, |(i, _)| Value::Str(NAMES[i].to_string()))
}

pub fn area(mask: &BBox) -> f64 {
    mask.area()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redness_of_descriptor() {
        assert_eq!(redness(&[200.0, 10.0, 10.0]), Some(200.0));
        assert_eq!(redness(&[0.0, 0.0, 0.0]), Some(0.0));
        assert_eq!(redness(&[]), None);
        let v = redness(&[17.4, 0.0, 0.0]).unwrap();
        assert!(!(v >= 17.5));
    }

    #[test]
    fn area_boundary() {
        assert_eq!(area(&BBox::new(0.0, 0.0, 100.0, 100.0).unwrap()), 10_000.0);
        let b = BBox::new(0.0, 0.0, 400.0, 250.0).unwrap();
        assert_eq!(area(&b), 100_000.0);
        assert!(!(area(&b) > 100_000.0));
        assert!(BBox::new(5.0, 0.0, 5.0, 10.0).is_err());
    }

    #[test]
    fn registry_lookup() {
        let r = UdfRegistry::builtin();
        assert!(r.get("redness").unwrap().frame_level);
        assert!(!r.get("area").unwrap().frame_level);
        assert_eq!(r.get("Redness").map(|u| u.name.clone()), None);
        assert_eq!(r.get("classify").unwrap().call_content(&[10.0, 90.0, 5.0]), Value::Str("green".into()));
        assert_eq!(r.get("xmax").unwrap().call_mask(&BBox::new(1.0, 2.0, 3.0, 4.0).unwrap()), Value::Num(3.0));
    }
}
