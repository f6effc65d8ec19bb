//! Request and response bodies shared by the service and its clients.

use std::path::PathBuf;

use grip_core::multienv::{SpeedupRow, StatusCounts};
use grip_core::pipeline::dataset::Manifest;
use grip_core::pipeline::{Config, Summary};
use grip_core::synth::{Composition, GraspCandidate, SamplerStats};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Io,
    Format,
    Scene,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    #[default]
    Antipodal,
    Compose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub config: Config,
    /// Directory that relative mesh paths in the config resolve against.
    pub base: PathBuf,
    #[serde(default)]
    pub mode: SynthMode,
    /// Candidates per object (per hand when composing); defaults to the config's.
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCandidates {
    pub object: String,
    pub candidates: Vec<GraspCandidate>,
    pub stats: SamplerStats,
    /// Right-hand candidates when composing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub right: Vec<GraspCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<Composition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthResponse {
    pub mode: SynthMode,
    pub objects: Vec<ObjectCandidates>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub config: Config,
    pub base: PathBuf,
    /// Dataset output directory on the service host.
    pub out: PathBuf,
    /// Environments per lockstep batch; zero runs every trial in one batch.
    #[serde(default)]
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub stable: usize,
    pub unstable: usize,
    pub failed: usize,
}

impl VerdictCounts {
    pub fn total(&self) -> usize {
        self.stable + self.unstable + self.failed
    }
}

/// Schema problems found in one trial record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordIssue {
    pub id: usize,
    pub problems: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub counts: VerdictCounts,
    pub issues: Vec<RecordIssue>,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub config: Config,
    pub base: PathBuf,
    pub envs: Vec<usize>,
    /// Time steps per environment.
    pub steps: usize,
    /// Worker threads for the batched run; zero uses every core.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResponse {
    /// Cores the service host reports.
    pub cores: usize,
    pub rows: Vec<SpeedupRow>,
    pub csv: String,
    pub svg: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRequest {
    pub dataset: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: usize,
    pub object: String,
    pub verdict: String,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub rows: Vec<MetricsRow>,
    pub csv: String,
    /// Files whose content no longer matches the manifest.
    pub changed: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub summary: Summary,
    pub csv: String,
    pub svg: String,
    pub issues: Vec<RecordIssue>,
}

/// Progress of one lockstep batch step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStatus {
    /// Index of the batch within the run.
    pub batch: usize,
    pub step: u64,
    pub counts: StatusCounts,
    /// Newton sweeps taken by the step.
    pub sweeps: usize,
    pub wall_seconds: f64,
}

/// One line of a streamed response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event<T> {
    Batch(BatchStatus),
    Row(SpeedupRow),
    Done(T),
    Error(ApiError),
}
