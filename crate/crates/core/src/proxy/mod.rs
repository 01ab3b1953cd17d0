//! Cheap per-frame count predictor standing in for a specialized network.
//!
//! One multinomial logistic head per object class maps the frame feature
//! vector to a softmax over counts `0..=cap`. Heads are trained with
//! minibatch momentum SGD on the labeled split.

mod labels;
mod model;
mod threshold;

pub use labels::{label, LabeledSet, LabeledSplit};
pub use model::{count_cap, CountHead, FramePrediction, Inference, ProxyModel, TrainConfig, TrainMeta, PROXY_FORMAT};
pub use threshold::{bootstrap_error, estimate_threshold, BootstrapEstimate, ThresholdEstimate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProxyError {
    #[error("training range is empty")]
    EmptyTrainingRange,
    #[error("held-out range is empty")]
    EmptyHeldout,
    #[error("feature dimension mismatch: model expects {expected}, trace has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no positive held-out frames; threshold undefined")]
    NoPositives,
    #[error("signal and label lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("frame {0} is not in the labeled set")]
    Unlabeled(usize),
    #[error("unsupported proxy_format {0}")]
    Format(u32),
}
