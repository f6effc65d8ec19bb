//! Batched execution of independent environments: lockstep time steps,
//! per-environment Newton sweeps with freezing, and failure quarantine.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Sdf, TetMesh, TriSurface};
use crate::solver::{Failure, IterationOutcome, Simulation, StepReport};

#[derive(Debug, Error)]
pub enum MultiEnvError {
    #[error("invalid scheduler configuration: {0}")]
    Config(String),
    #[error("environment {0} does not exist")]
    UnknownEnv(usize),
}

/// What a scenario wants after a completed step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Done,
}

/// Drives one environment: prescribes targets before a step and inspects
/// the state after it.
pub trait Scenario: Send {
    fn before_step(&mut self, _sim: &mut Simulation) -> Result<(), Failure> {
        Ok(())
    }

    fn after_step(&mut self, sim: &Simulation, report: &StepReport) -> Control;

    /// Called once if the environment is quarantined.
    fn on_failure(&mut self, _failure: &Failure) {}
}

/// Runs a fixed number of steps.
#[derive(Clone, Debug)]
pub struct FixedSteps(pub usize);

impl Scenario for FixedSteps {
    fn after_step(&mut self, _sim: &Simulation, _report: &StepReport) -> Control {
        self.0 = self.0.saturating_sub(1);
        if self.0 == 0 {
            Control::Done
        } else {
            Control::Continue
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvStatus {
    Active,
    Frozen,
    Failed,
    Done,
}

pub struct Environment<S> {
    pub id: usize,
    pub sim: Simulation,
    pub scenario: S,
    pub status: EnvStatus,
    pub failure: Option<Failure>,
    /// Every step report of this environment, including the failing one.
    pub log: Vec<StepReport>,
    /// Newton iterations spent, over all steps.
    pub newton_iterations: usize,
}

impl<S: Scenario> Environment<S> {
    pub fn new(id: usize, sim: Simulation, scenario: S) -> Self {
        Self {
            id,
            sim,
            scenario,
            status: EnvStatus::Active,
            failure: None,
            log: Vec::new(),
            newton_iterations: 0,
        }
    }

    fn quarantine(&mut self, failure: Failure) {
        self.scenario.on_failure(&failure);
        self.status = EnvStatus::Failed;
        self.failure = Some(failure);
        self.sim.release();
    }

    fn begin(&mut self) -> bool {
        if let Err(f) = self.scenario.before_step(&mut self.sim) {
            let report = self.sim.failed_report(f.clone());
            self.log.push(report);
            self.quarantine(f);
            return false;
        }
        if let Err(f) = self.sim.begin_step() {
            let report = self.sim.failed_report(f.clone());
            self.log.push(report);
            self.quarantine(f);
            return false;
        }
        true
    }

    /// One Newton iteration; freezes on convergence.
    fn sweep(&mut self) {
        self.newton_iterations += 1;
        match self.sim.iterate() {
            IterationOutcome::Continue => {}
            IterationOutcome::Converged => self.status = EnvStatus::Frozen,
            IterationOutcome::Failed(f) => {
                let report = self.sim.finish_step();
                self.log.push(report);
                self.quarantine(f);
            }
        }
    }

    fn finish(&mut self) -> Option<StepReport> {
        if self.status != EnvStatus::Frozen {
            return None;
        }
        let report = self.sim.finish_step();
        self.status = EnvStatus::Active;
        if self.scenario.after_step(&self.sim, &report) == Control::Done {
            self.status = EnvStatus::Done;
        }
        self.log.push(report.clone());
        Some(report)
    }

    /// Runs this environment alone until its scenario is done or it fails.
    pub fn run_standalone(&mut self, max_steps: usize) {
        for _ in 0..max_steps {
            if self.status != EnvStatus::Active || !self.begin() {
                return;
            }
            while self.status == EnvStatus::Active {
                self.sweep();
            }
            self.finish();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Worker threads; zero uses every available core.
    pub max_concurrent: usize,
    /// Runs environments one after another in id order.
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            max_concurrent: 0,
            deterministic: true,
            seed: 0,
        }
    }
}

/// Read-only meshes and SDFs shared between environments, keyed by content hash.
#[derive(Default)]
pub struct AssetCache {
    tet_meshes: HashMap<String, Arc<TetMesh>>,
    surfaces: HashMap<String, Arc<TriSurface>>,
    sdfs: HashMap<String, Arc<Sdf>>,
}

/// SHA-256 of a value's JSON encoding, hex encoded.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("assets serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl AssetCache {
    pub fn tet_mesh(&mut self, mesh: TetMesh) -> Arc<TetMesh> {
        let key = content_hash(&mesh);
        self.tet_meshes.entry(key).or_insert_with(|| Arc::new(mesh)).clone()
    }

    pub fn surface(&mut self, surface: TriSurface) -> Arc<TriSurface> {
        let key = content_hash(&surface);
        self.surfaces.entry(key).or_insert_with(|| Arc::new(surface)).clone()
    }

    /// Returns the cached SDF under `key` or builds it.
    pub fn sdf(&mut self, key: &str, build: impl FnOnce() -> Sdf) -> Arc<Sdf> {
        self.sdfs.entry(key.to_string()).or_insert_with(|| Arc::new(build())).clone()
    }

    /// Like [`AssetCache::sdf`] for builders that can fail; failures are not cached.
    pub fn try_sdf<E>(&mut self, key: &str, build: impl FnOnce() -> Result<Sdf, E>) -> Result<Arc<Sdf>, E> {
        if let Some(s) = self.sdfs.get(key) {
            return Ok(s.clone());
        }
        let sdf = Arc::new(build()?);
        self.sdfs.insert(key.to_string(), sdf.clone());
        Ok(sdf)
    }

    pub fn len(&self) -> usize {
        self.tet_meshes.len() + self.surfaces.len() + self.sdfs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub active: usize,
    pub frozen: usize,
    pub failed: usize,
    pub done: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.active + self.frozen + self.failed + self.done
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvStepRecord {
    pub env: usize,
    pub status: EnvStatus,
    pub report: StepReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub step: u64,
    pub records: Vec<EnvStepRecord>,
    /// Environments still iterating at the start of each sweep.
    pub sweep_sizes: Vec<usize>,
    pub counts: StatusCounts,
    pub wall_seconds: f64,
}

pub struct Batch<S> {
    pub envs: Vec<Environment<S>>,
    pub config: SchedulerConfig,
    pool: Option<Arc<rayon::ThreadPool>>,
    step: u64,
}

impl<S: Scenario> Batch<S> {
    pub fn new(envs: Vec<Environment<S>>, config: SchedulerConfig) -> Result<Self, MultiEnvError> {
        let pool = if config.deterministic {
            None
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.max_concurrent)
                .build()
                .map_err(|e| MultiEnvError::Config(e.to_string()))?;
            Some(Arc::new(pool))
        };
        Ok(Self { envs, config, pool, step: 0 })
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for e in &self.envs {
            match e.status {
                EnvStatus::Active => c.active += 1,
                EnvStatus::Frozen => c.frozen += 1,
                EnvStatus::Failed => c.failed += 1,
                EnvStatus::Done => c.done += 1,
            }
        }
        c
    }

    pub fn is_finished(&self) -> bool {
        self.envs
            .iter()
            .all(|e| matches!(e.status, EnvStatus::Failed | EnvStatus::Done))
    }

    /// Poisons one environment's DOFs with NaN.
    pub fn inject_nan(&mut self, env: usize) -> Result<(), MultiEnvError> {
        self.envs.get_mut(env).ok_or(MultiEnvError::UnknownEnv(env))?.sim.inject_nan();
        Ok(())
    }

    fn for_each(&mut self, f: impl Fn(&mut Environment<S>) + Sync + Send, filter: EnvStatus) {
        match &self.pool {
            None => self.envs.iter_mut().filter(|e| e.status == filter).for_each(f),
            Some(pool) => {
                let envs = &mut self.envs;
                pool.install(|| envs.par_iter_mut().filter(|e| e.status == filter).for_each(f));
            }
        }
    }

    /// Advances every active environment by one time step.
    pub fn batch_step(&mut self) -> BatchReport {
        let start = Instant::now();
        let before: Vec<usize> = self.envs.iter().map(|e| e.log.len()).collect();
        self.for_each(
            |e| {
                e.begin();
            },
            EnvStatus::Active,
        );
        let mut sweep_sizes = Vec::new();
        loop {
            let active = self.envs.iter().filter(|e| e.status == EnvStatus::Active).count();
            if active == 0 {
                break;
            }
            sweep_sizes.push(active);
            self.for_each(Environment::sweep, EnvStatus::Active);
        }
        self.for_each(
            |e| {
                e.finish();
            },
            EnvStatus::Frozen,
        );
        let records = self
            .envs
            .iter()
            .zip(before)
            .filter_map(|(e, n)| {
                e.log.get(n).map(|r| EnvStepRecord {
                    env: e.id,
                    status: e.status,
                    report: r.clone(),
                })
            })
            .collect();
        let report = BatchReport {
            step: self.step,
            records,
            sweep_sizes,
            counts: self.counts(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.step += 1;
        report
    }

    /// Steps until every environment is done or failed, or `max_steps` is reached.
    pub fn run(&mut self, max_steps: usize) -> Vec<BatchReport> {
        let mut out = Vec::new();
        for _ in 0..max_steps {
            if self.is_finished() {
                break;
            }
            out.push(self.batch_step());
        }
        out
    }
}

/// Writes one JSON object per environment record.
pub fn to_json_lines(reports: &[BatchReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for rec in &r.records {
            let line = serde_json::json!({"step": r.step, "env": rec.env, "status": rec.status, "report": rec.report});
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub envs: usize,
    pub batched_seconds: f64,
    pub sequential_seconds: f64,
    pub speedup: f64,
}

/// Runtime of `n` environments batched versus the same environments run one
/// after another, for each `n`. `make` builds environment `i`.
pub fn measure_speedup<S: Scenario>(
    make: impl Fn(usize) -> Environment<S>,
    env_counts: &[usize],
    steps: usize,
    threads: usize,
) -> Result<Vec<SpeedupRow>, MultiEnvError> {
    let mut rows = Vec::new();
    for &n in env_counts {
        let sequential = if n == 1 {
            None
        } else {
            let t = Instant::now();
            for i in 0..n {
                make(i).run_standalone(steps);
            }
            Some(t.elapsed().as_secs_f64())
        };
        let config = SchedulerConfig {
            max_concurrent: threads,
            deterministic: false,
            seed: 0,
        };
        let mut batch = Batch::new((0..n).map(&make).collect(), config)?;
        let t = Instant::now();
        batch.run(steps);
        let batched = t.elapsed().as_secs_f64();
        // A single environment is its own sequential baseline.
        let sequential = sequential.unwrap_or(batched);
        rows.push(SpeedupRow {
            envs: n,
            batched_seconds: batched,
            sequential_seconds: sequential,
            speedup: sequential / batched,
        });
    }
    Ok(rows)
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut s = String::from("env_count,batched_s,sequential_s,speedup\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.4}", r.envs, r.batched_seconds, r.sequential_seconds, r.speedup);
    }
    s
}

/// Speedup versus environment count on a log2 x axis.
pub fn speedup_svg(rows: &[SpeedupRow]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = rows.iter().map(|r| (r.envs.max(1) as f64).log2()).collect();
    let x_max = xs.iter().cloned().fold(1.0, f64::max);
    let y_max = rows.iter().map(|r| r.speedup).fold(1.0, f64::max) * 1.1;
    let px = |x: f64| m + x / x_max * (w - 2.0 * m);
    let py = |y: f64| h - m - y / y_max * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{0}\" stroke=\"black\"/>",
        h - m,
        w - m
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">environments</text>", w / 2.0, h - 10.0);
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">speedup</text>", h / 2.0, h / 2.0);
    let points: Vec<String> = rows
        .iter()
        .zip(&xs)
        .map(|(r, x)| format!("{:.1},{:.1}", px(*x), py(r.speedup)))
        .collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", points.join(" "));
    for (r, x) in rows.iter().zip(&xs) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/><text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(*x),
            py(r.speedup),
            px(*x),
            h - m + 16.0,
            r.envs
        );
    }
    s.push_str("</svg>\n");
    s
}
