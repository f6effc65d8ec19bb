//! Grasp validation protocol, quality metrics and dataset output.

mod config;
pub mod dataset;
pub mod metrics;
mod report;
mod trial;

use thiserror::Error;

pub use config::{
    merge_surfaces, Config, MetricsConfig, ObjectConfig, ObjectModel, Shape, TrialProtocol, GRAVITY_DIRECTIONS,
};
pub use metrics::TrialMetrics;
pub use report::{summarize, summary_csv, summary_svg, ObjectSummary, Summary};
pub use trial::{
    build_trial, prepare_object, regression_jobs, run_grasp_trial, run_trials, run_trials_observed, synthesize_candidates, FingerHalt,
    Frame, GraspTrial, HaltReason, Phase, PhaseMarker, TrialJob, TrialObject, TrialRecord, Verdict,
    FINGER_BODIES, OBJECT_BODY, PALM_BODY,
};

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Scene(String),
}

impl PipelineError {
    pub fn field(field: &str, message: &str) -> Self {
        PipelineError::Config(format!("{field}: {message}"))
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PipelineError::Io {
            context: context.into(),
            source,
        }
    }
}
