//! Motion-quality-driven pseudo-label boosting for video salient object
//! detection.
//!
//! Frames whose optical flow cleanly separates the salient object are
//! detected by a quality network, their target-method maps are filtered by
//! consistency with the motion saliency, and a fresh appearance model is
//! trained on the surviving pseudo ground truth.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flow;
pub mod map;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod quality;
pub mod refine;
pub mod selection;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use flow::{FlowField, FrameKey, MaxMagnitude};
pub use map::{BinaryMask, ColorImage, SaliencyMap};
pub use metrics::{FrameMetrics, MetricsReport};
pub use pipeline::{run_pipeline, RunReport};
pub use quality::{QualityRecord, SaliencyModel, ThresholdFit};
pub use selection::{CandidateFrame, TrainingManifest};
