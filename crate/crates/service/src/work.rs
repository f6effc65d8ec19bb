//! The blocking computations behind each endpoint.

use std::fmt::Write;

use grip_core::multienv::{measure_speedup, speedup_csv, speedup_svg, AssetCache};
use grip_core::pipeline::dataset::{emit_dataset, load_dataset_meta, load_manifest, validate_record, verify_manifest};
use grip_core::pipeline::{
    build_trial, prepare_object, regression_jobs, run_trials_observed, summarize, summary_csv, summary_svg,
    synthesize_candidates, PipelineError, TrialRecord, Verdict,
};
use grip_core::synth::compose_bimanual;

use crate::api::*;

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Config(_) => ErrorKind::Config,
            PipelineError::Io { .. } => ErrorKind::Io,
            PipelineError::Format(_) => ErrorKind::Format,
            PipelineError::Geometry(_) | PipelineError::Scene(_) => ErrorKind::Scene,
        };
        ApiError {
            kind,
            message: e.to_string(),
        }
    }
}

pub(crate) fn config_error(message: impl Into<String>) -> ApiError {
    ApiError {
        kind: ErrorKind::Config,
        message: message.into(),
    }
}

/// Seed offset separating right-hand sampling from left-hand sampling.
const RIGHT_HAND_SEED: u64 = 1 << 32;

pub fn synth(req: &SynthRequest) -> Result<SynthResponse, ApiError> {
    req.config.validate()?;
    let config = &req.config;
    let n = req.count.unwrap_or(config.candidates_per_object);
    let mut cache = AssetCache::default();
    let mut objects = Vec::new();
    for (oi, cfg) in config.objects.iter().enumerate() {
        let object = prepare_object(cfg, &req.base, &mut cache)?;
        let seed = config.seed.wrapping_add(oi as u64);
        let (candidates, stats) = synthesize_candidates(&object, config, n, seed)?;
        let mut entry = ObjectCandidates {
            object: cfg.name.clone(),
            candidates,
            stats,
            right: Vec::new(),
            composition: None,
        };
        if req.mode == SynthMode::Compose {
            let (right, _) = synthesize_candidates(&object, config, n, seed.wrapping_add(RIGHT_HAND_SEED))?;
            let composition = compose_bimanual(&entry.candidates, &right, &config.compose, seed).map_err(|e| ApiError {
                kind: ErrorKind::Scene,
                message: format!("objects.{}: {e}", cfg.name),
            })?;
            entry.right = right;
            entry.composition = Some(composition);
        }
        objects.push(entry);
    }
    Ok(SynthResponse { mode: req.mode, objects })
}

fn counts(records: &[TrialRecord]) -> VerdictCounts {
    let mut c = VerdictCounts::default();
    for r in records {
        match r.verdict {
            Verdict::Stable => c.stable += 1,
            Verdict::Unstable => c.unstable += 1,
            Verdict::SimFailed { .. } => c.failed += 1,
        }
    }
    c
}

fn issues(records: &[TrialRecord]) -> Vec<RecordIssue> {
    records
        .iter()
        .filter_map(|r| {
            let problems = validate_record(r);
            (!problems.is_empty()).then_some(RecordIssue { id: r.id, problems })
        })
        .collect()
}

/// Synthesizes candidates, runs every trial and writes the dataset.
/// Trials that fail are recorded, not reported as errors.
pub fn validate<T>(req: &ValidateRequest, emit: &mut dyn FnMut(Event<T>)) -> Result<ValidateResponse, ApiError> {
    req.config.validate()?;
    let jobs = regression_jobs(&req.config, &req.base)?;
    let chunk = if req.batch_size == 0 { jobs.len().max(1) } else { req.batch_size };
    let mut records = Vec::with_capacity(jobs.len());
    for (batch, group) in jobs.chunks(chunk).enumerate() {
        let done = run_trials_observed(group, &req.config, |r| {
            emit(Event::Batch(BatchStatus {
                batch,
                step: r.step,
                counts: r.counts,
                sweeps: r.sweep_sizes.len(),
                wall_seconds: r.wall_seconds,
            }))
        })?;
        records.extend(done);
    }
    let manifest = emit_dataset(&records, &req.out)?;
    Ok(ValidateResponse {
        out: req.out.clone(),
        manifest,
        counts: counts(&records),
        issues: issues(&records),
        summary: summarize(&records),
    })
}

/// Request checks that need no simulation.
pub fn check_bench(req: &BenchRequest) -> Result<(), ApiError> {
    req.config.validate()?;
    if req.envs.is_empty() || req.envs.contains(&0) {
        return Err(config_error("envs: need one or more positive environment counts"));
    }
    if req.steps == 0 {
        return Err(config_error("steps: must be at least 1"));
    }
    Ok(())
}

/// Batched versus sequential runtime over grasp-trial environments cycled
/// from the configured objects.
pub fn bench<T>(req: &BenchRequest, emit: &mut dyn FnMut(Event<T>)) -> Result<BenchResponse, ApiError> {
    check_bench(req)?;
    let jobs = regression_jobs(&req.config, &req.base)?;
    if jobs.is_empty() {
        return Err(config_error("objects: bench needs at least one object with a valid candidate"));
    }
    for job in &jobs {
        build_trial(job, &req.config).map_err(|f| ApiError {
            kind: ErrorKind::Scene,
            message: format!("trial {}: {:?}: {}", job.id, f.reason, f.detail),
        })?;
    }
    let make = |i: usize| {
        let mut env = build_trial(&jobs[i % jobs.len()], &req.config).expect("checked above");
        env.id = i;
        env
    };
    let mut rows = Vec::with_capacity(req.envs.len());
    for &n in &req.envs {
        let row = measure_speedup(make, &[n], req.steps, req.threads).map_err(|e| config_error(e.to_string()))?[0];
        emit(Event::Row(row));
        rows.push(row);
    }
    Ok(BenchResponse {
        cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
        csv: speedup_csv(&rows),
        svg: speedup_svg(&rows),
        rows,
    })
}

pub fn metrics(req: &DatasetRequest) -> Result<MetricsResponse, ApiError> {
    let manifest = load_manifest(&req.dataset)?;
    let changed = verify_manifest(&req.dataset, &manifest)?;
    let records = load_dataset_meta(&req.dataset)?;
    let rows: Vec<MetricsRow> = records
        .iter()
        .map(|r| MetricsRow {
            id: r.id,
            object: r.object.clone(),
            verdict: r.verdict.label().to_string(),
            d1: r.metrics.map(|m| m.d1),
            d2: r.metrics.map(|m| m.d2),
        })
        .collect();
    let mut csv = String::from("id,object,verdict,d1_m,d2_m\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.id, r.object, r.verdict, cell(r.d1), cell(r.d2));
    }
    Ok(MetricsResponse { rows, csv, changed })
}

pub fn report(req: &DatasetRequest) -> Result<ReportResponse, ApiError> {
    let records = load_dataset_meta(&req.dataset)?;
    let summary = summarize(&records);
    Ok(ReportResponse {
        csv: summary_csv(&summary),
        svg: summary_svg(&summary),
        issues: issues(&records),
        summary,
    })
}
