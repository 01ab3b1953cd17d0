//! FrameQL over video detection traces.
//!
//! Queries run against a [`tracestore::VideoTrace`] through a cost-accounted
//! detector [`tracestore::Oracle`]. Cheap per-frame proxies ([`proxy`]) and
//! frame filters ([`select`]) cut detector calls for aggregates ([`aggcv`]),
//! scrubbing searches ([`scrub`]) and selections, while the [`engine`] picks
//! a plan per query.

pub mod aggcv;
pub mod cost;
pub mod engine;
mod error;
pub mod frameql;
pub mod proxy;
pub mod scrub;
pub mod select;
pub mod synthgen;
pub mod tracestore;

pub use engine::{classify, Answer, Engine, EngineConfig, Plan, PlanKind, PlanReport, QueryClass};
pub use error::{Error, Result, TraceError};
