//! The grasp validation protocol as a multi-environment scenario.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Config, ObjectConfig, ObjectModel, TrialProtocol};
use super::metrics::{gripper_distances, TrialMetrics};
use super::PipelineError;
use crate::contact::ContactParams;
use crate::geometry::{build_sdf, ExactSignedDistance, Sdf, TetMesh, TriSurface};
use crate::materials::MaterialParams;
use crate::math::Vec3;
use crate::multienv::{AssetCache, Batch, BatchReport, Control, Environment, Scenario};
use crate::solver::{BodyModel, BodySpec, Pose, ContactEvent, Failure, FailureReason, Simulation, SolverParams, StepReport};
use crate::synth::{sample_antipodal, GraspCandidate, ParallelGripper, SamplerStats};

pub const OBJECT_BODY: usize = 0;
pub const FINGER_BODIES: [usize; 2] = [1, 2];
pub const PALM_BODY: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "index", rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Settle,
    Closing,
    Hold,
    Gravity(usize),
}

/// Steps `start..end` (step indices) spent in one phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarker {
    pub phase: Phase,
    pub start: u64,
    pub end: u64,
}

impl PhaseMarker {
    pub fn steps(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// Contact force crossed the halt threshold.
    Force,
    /// The finger ran out of travel or time without reaching the threshold.
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerHalt {
    /// Finger link, 0 (left) or 1 (right).
    pub finger: usize,
    pub step: u64,
    pub reason: HaltReason,
    /// Contact force at the halting step (N).
    pub force: f64,
    /// Contact force one step earlier (N).
    pub prev_force: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    SimFailed { phase: Phase, reason: FailureReason, detail: String },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::SimFailed { .. } => "sim-failed",
        }
    }
}

/// Everything recorded at the end of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub step: u64,
    pub time: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub contacts: Vec<ContactEvent>,
    /// Per soft tet: Cauchy xx, yy, zz, xy, yz, zx, then von Mises.
    pub stress: Vec<[f64; 7]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub object: String,
    pub candidate: Option<GraspCandidate>,
    pub protocol: TrialProtocol,
    pub solver: SolverParams,
    pub contact: ContactParams,
    pub phases: Vec<PhaseMarker>,
    pub halts: Vec<FingerHalt>,
    /// Whether the hold phase reached the steady-state criterion before its cap.
    pub steady: bool,
    /// Object COM displacement over each gravity phase (m).
    pub com_displacement: Vec<f64>,
    /// At least one object-gripper stencil within the activation distance at the last step.
    pub final_contact: bool,
    pub verdict: Verdict,
    pub metrics: Option<TrialMetrics>,
    pub n_vertices: usize,
    pub n_tets: usize,
    #[serde(skip)]
    pub frames: Vec<Frame>,
}

impl TrialRecord {
    pub fn is_completed(&self) -> bool {
        !matches!(self.verdict, Verdict::SimFailed { .. })
    }

    /// Displacement bound for the final gravity phase.
    pub fn displacement_threshold(&self) -> f64 {
        let n = self.protocol.gravity_phase_steps(self.solver.dt) as f64;
        self.protocol.stability_constant * n * self.contact.eps_v * self.solver.dt
    }
}

/// A prepared object shared by every trial on it.
#[derive(Clone)]
pub struct TrialObject {
    pub name: String,
    pub model: ObjectModel,
    pub material: MaterialParams,
    pub mesh: Arc<TetMesh>,
    pub surface: Arc<TriSurface>,
    pub sdf: Arc<Sdf>,
}

pub fn prepare_object(cfg: &ObjectConfig, base: &Path, cache: &mut AssetCache) -> Result<TrialObject, PipelineError> {
    let mesh = cache.tet_mesh(cfg.mesh(base)?);
    let surface = cache.surface(mesh.boundary.compacted());
    let key = format!("{}:{}", crate::multienv::content_hash(&*surface), cfg.sdf_resolution);
    let sdf = cache.try_sdf(&key, || build_sdf(&surface, cfg.sdf_resolution))?;
    Ok(TrialObject {
        name: cfg.name.clone(),
        model: cfg.model,
        material: cfg.material,
        mesh,
        surface,
        sdf,
    })
}

/// One trial to run: an object and an optional grasp.
#[derive(Clone)]
pub struct TrialJob {
    pub id: usize,
    pub object: TrialObject,
    pub candidate: Option<GraspCandidate>,
}

/// Antipodal candidates for `object`, keeping only those whose open
/// gripper clears the exact object surface by `clearance`.
pub fn synthesize_candidates(
    object: &TrialObject,
    config: &Config,
    n: usize,
    seed: u64,
) -> Result<(Vec<GraspCandidate>, SamplerStats), PipelineError> {
    let (mut candidates, stats) = sample_antipodal(&object.surface, &object.sdf, &config.gripper, &config.sampler, 4 * n, seed)
        .map_err(|e| PipelineError::Scene(e.to_string()))?;
    let exact = ExactSignedDistance::new(&object.surface)?;
    let clearance = config.sampler.clearance.max(config.contact.dhat);
    candidates.retain(|c| {
        config
            .gripper
            .link_surfaces(&c.pose, c.opening())
            .iter()
            .flat_map(|s| s.vertices.iter().copied())
            .chain(
                config
                    .gripper
                    .link_samples(&c.pose, c.opening(), config.sampler.samples_per_link)
                    .into_iter()
                    .flatten(),
            )
            .all(|p| exact.eval(&p) >= clearance)
    });
    candidates.truncate(n);
    Ok((candidates, stats))
}

/// `candidates_per_object` grasps on every configured object, ids in order.
pub fn regression_jobs(config: &Config, base: &Path) -> Result<Vec<TrialJob>, PipelineError> {
    let mut cache = AssetCache::default();
    let mut jobs = Vec::new();
    for (oi, cfg) in config.objects.iter().enumerate() {
        let object = prepare_object(cfg, base, &mut cache)?;
        let seed = config.seed.wrapping_add(oi as u64);
        let (candidates, _) = synthesize_candidates(&object, config, config.candidates_per_object, seed)?;
        for c in candidates {
            jobs.push(TrialJob {
                id: jobs.len(),
                object: object.clone(),
                candidate: Some(c),
            });
        }
    }
    Ok(jobs)
}

/// Hand-frame inward closing direction of each finger.
const INWARD: [f64; 2] = [1.0, -1.0];

#[derive(Clone, Copy, Debug)]
struct FingerState {
    base: Vec3,
    travel: f64,
    halted: bool,
    prev_force: f64,
}

/// Scenario driving one trial through settle, closing, hold and the six gravity phases.
pub struct GraspTrial {
    record: TrialRecord,
    gravity: [Vec3; 6],
    rotation: crate::math::Mat3,
    fingers: [FingerState; 2],
    max_travel: f64,
    phase: Phase,
    phase_start: u64,
    phase_steps: usize,
    steady_count: usize,
    com_start: Vec3,
    metric_samples: usize,
    metric_seed: u64,
    has_gripper: bool,
    tet_count: usize,
}

fn link_pose(hand: &Pose, center: &Vec3) -> Pose {
    Pose {
        rotation: hand.rotation,
        translation: hand.apply(center),
    }
}

/// Builds the trial environment. Scene bodies are the object, then the left
/// finger, right finger and palm when a candidate is given.
pub fn build_trial(job: &TrialJob, config: &Config) -> Result<Environment<GraspTrial>, Failure> {
    let object = &job.object;
    let model = match object.model {
        ObjectModel::Soft => BodyModel::Soft { mesh: object.mesh.clone() },
        ObjectModel::Rigid => BodyModel::affine(object.mesh.clone()),
    };
    let mut bodies = vec![BodySpec::new(&object.name, model, object.material, Pose::identity())];
    let gripper: &ParallelGripper = &config.gripper;
    let mut fingers = [FingerState {
        base: Vec3::zeros(),
        travel: 0.0,
        halted: true,
        prev_force: 0.0,
    }; 2];
    let mut max_travel = 0.0;
    let mut rotation = crate::math::Mat3::identity();
    if let Some(c) = &job.candidate {
        let opening = c.opening();
        rotation = c.pose.rotation;
        max_travel = 0.5 * opening;
        let names = ["left_finger", "right_finger", "palm"];
        for (i, link) in gripper.links(opening).iter().enumerate() {
            let surface = Arc::new(TriSurface::box_surface(link.size));
            let pose = link_pose(&c.pose, &link.center);
            if i < 2 {
                fingers[i] = FingerState {
                    base: pose.translation,
                    travel: 0.0,
                    halted: false,
                    prev_force: 0.0,
                };
            }
            bodies.push(BodySpec::new(
                names[i],
                BodyModel::Kinematic { surface },
                config.finger_material,
                pose,
            ));
        }
    }
    let sim = Simulation::new(&bodies, config.solver, config.contact).map_err(|e| match e {
        crate::solver::SolverError::Failed(f) => f,
        other => Failure::new(FailureReason::CcdViolation, other.to_string()),
    })?;
    let tet_count = sim.layout().soft_tets().len();
    let record = TrialRecord {
        id: job.id,
        object: object.name.clone(),
        candidate: job.candidate.clone(),
        protocol: config.protocol,
        solver: config.solver,
        contact: config.contact,
        phases: Vec::new(),
        halts: Vec::new(),
        steady: false,
        com_displacement: Vec::new(),
        final_contact: false,
        verdict: Verdict::Unstable,
        metrics: None,
        n_vertices: sim.layout().n_vertices(),
        n_tets: tet_count,
        frames: Vec::new(),
    };
    let scenario = GraspTrial {
        record,
        gravity: config.protocol.gravity_directions().map(|d| d * config.protocol.gravity),
        rotation,
        fingers,
        max_travel,
        phase: Phase::Settle,
        phase_start: 0,
        phase_steps: 0,
        steady_count: 0,
        com_start: Vec3::zeros(),
        metric_samples: config.metrics.samples,
        metric_seed: config.metrics.seed.wrapping_add(job.id as u64),
        has_gripper: job.candidate.is_some(),
        tet_count,
    };
    Ok(Environment::new(job.id, sim, scenario))
}

impl GraspTrial {
    pub fn record(&self) -> &TrialRecord {
        &self.record
    }

    pub fn into_record(self) -> TrialRecord {
        self.record
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    fn dt(&self) -> f64 {
        self.record.solver.dt
    }

    /// Step budget of the phase, if it runs for a fixed count.
    fn phase_limit(&self) -> Option<usize> {
        let p = &self.record.protocol;
        match self.phase {
            Phase::Settle => Some(p.steps(p.settle_duration, self.dt())),
            Phase::Closing => Some(p.steps(p.max_closing_duration, self.dt())),
            Phase::Hold => Some(p.steps(p.max_hold_duration, self.dt())),
            Phase::Gravity(_) => Some(p.gravity_phase_steps(self.dt())),
            Phase::Setup => None,
        }
    }

    fn close_phase(&mut self, end: u64) {
        self.record.phases.push(PhaseMarker {
            phase: self.phase,
            start: self.phase_start,
            end,
        });
    }

    fn enter(&mut self, next: Phase, step: u64) {
        self.close_phase(step);
        self.phase = next;
        self.phase_start = step;
        self.phase_steps = 0;
    }

    fn after_settle(&self) -> Phase {
        if self.has_gripper {
            Phase::Closing
        } else {
            Phase::Hold
        }
    }

    fn finger_pose(&self, finger: usize) -> Pose {
        let f = &self.fingers[finger];
        let dir = self.rotation.column(0) * INWARD[finger];
        Pose {
            rotation: self.rotation,
            translation: f.base + dir * f.travel,
        }
    }

    /// Finger travel as realized by the solver, which may lag the target.
    fn actual_travel(&self, sim: &Simulation, finger: usize) -> f64 {
        let body = FINGER_BODIES[finger];
        let center = sim.body_com(body);
        let dir = self.rotation.column(0) * INWARD[finger];
        (center - self.fingers[finger].base).dot(&dir)
    }

    fn record_frame(&mut self, sim: &Simulation, report: &StepReport) {
        let stress = sim.stress();
        let rows = stress
            .cauchy
            .iter()
            .zip(&stress.von_mises)
            .map(|(s, vm)| [s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(0, 1)], s[(1, 2)], s[(2, 0)], *vm])
            .collect();
        debug_assert_eq!(stress.von_mises.len(), self.tet_count);
        self.record.frames.push(Frame {
            step: report.step,
            time: sim.time(),
            positions: sim.positions().to_vec(),
            velocities: sim.velocities(),
            contacts: sim.contact_events(),
            stress: rows,
        });
    }

    fn object_gripper_contact(sim: &Simulation) -> bool {
        sim.active_stencils()
            .iter()
            .any(|s| (s.bodies[0] == OBJECT_BODY) != (s.bodies[1] == OBJECT_BODY))
    }

    fn finalize(&mut self, sim: &Simulation) {
        self.record.final_contact = Self::object_gripper_contact(sim);
        let last = self.record.com_displacement.last().copied().unwrap_or(f64::INFINITY);
        let still = last < self.record.displacement_threshold();
        self.record.verdict = if self.record.final_contact && still {
            Verdict::Stable
        } else {
            Verdict::Unstable
        };
        if self.has_gripper {
            self.record.metrics = final_metrics(sim, self.metric_samples, self.metric_seed);
        }
    }

    fn closing_step(&mut self, sim: &Simulation, step: u64) -> Result<(), Failure> {
        for f in 0..2 {
            if self.fingers[f].halted {
                continue;
            }
            let force = sim
                .contact_force_on(FINGER_BODIES[f])
                .map_err(|e| Failure::new(FailureReason::NonFiniteState, e.to_string()))?;
            let halt_force = self.record.protocol.halt_force;
            let exhausted = self.fingers[f].travel >= self.max_travel
                || self.phase_limit().is_some_and(|n| self.phase_steps >= n);
            let reason = if force > halt_force {
                Some(HaltReason::Force)
            } else if exhausted {
                Some(HaltReason::Limit)
            } else {
                None
            };
            if let Some(reason) = reason {
                self.fingers[f].halted = true;
                self.fingers[f].travel = self.actual_travel(sim, f);
                self.record.halts.push(FingerHalt {
                    finger: f,
                    step,
                    reason,
                    force,
                    prev_force: self.fingers[f].prev_force,
                });
            }
            self.fingers[f].prev_force = force;
        }
        Ok(())
    }
}

/// D1 and D2 of the final state against the exact deformed object surface.
fn final_metrics(sim: &Simulation, samples: usize, seed: u64) -> Option<TrialMetrics> {
    let layout = sim.layout();
    let x = sim.positions();
    let surface_of = |body: usize| {
        let range = layout.body_vertices(body);
        let tris = layout
            .body_triangles(body)
            .iter()
            .map(|t| t.map(|v| v - range.start))
            .collect();
        TriSurface::new(x[range].to_vec(), tris).ok()
    };
    let object = surface_of(OBJECT_BODY)?;
    let gripper: Vec<TriSurface> = FINGER_BODIES
        .iter()
        .chain(&[PALM_BODY])
        .map(|&b| surface_of(b))
        .collect::<Option<_>>()?;
    let exact = ExactSignedDistance::new(&object).ok()?;
    Some(gripper_distances(&exact, &gripper, samples, seed))
}

impl Scenario for GraspTrial {
    fn before_step(&mut self, sim: &mut Simulation) -> Result<(), Failure> {
        match self.phase {
            Phase::Settle | Phase::Hold | Phase::Setup => sim.set_gravity(Vec3::zeros()),
            Phase::Closing => {
                sim.set_gravity(Vec3::zeros());
                let step = self.record.protocol.closing_speed * 0.5 * self.dt();
                for f in 0..2 {
                    if !self.fingers[f].halted {
                        let travel = self.actual_travel(sim, f);
                        self.fingers[f].travel = (travel + step).min(self.max_travel);
                    }
                    sim.set_kinematic_target(FINGER_BODIES[f], self.finger_pose(f))
                        .map_err(|e| Failure::new(FailureReason::NonFiniteState, e.to_string()))?;
                }
            }
            Phase::Gravity(i) => {
                if self.phase_steps == 0 {
                    self.com_start = sim.body_com(OBJECT_BODY);
                }
                sim.set_gravity(self.gravity[i]);
            }
        }
        Ok(())
    }

    fn after_step(&mut self, sim: &Simulation, report: &StepReport) -> Control {
        self.record_frame(sim, report);
        self.phase_steps += 1;
        let next_step = report.step + 1;
        let limit = self.phase_limit().unwrap_or(usize::MAX);
        match self.phase {
            Phase::Settle => {
                if self.phase_steps >= limit {
                    let next = self.after_settle();
                    self.enter(next, next_step);
                }
            }
            Phase::Closing => {
                if let Err(f) = self.closing_step(sim, report.step) {
                    self.on_failure(&f);
                    return Control::Done;
                }
                if self.fingers.iter().all(|f| f.halted) {
                    self.enter(Phase::Hold, next_step);
                }
            }
            Phase::Hold => {
                if sim.max_free_vertex_speed() < self.record.contact.eps_v {
                    self.steady_count += 1;
                } else {
                    self.steady_count = 0;
                }
                if self.steady_count >= self.record.protocol.steady_steps {
                    self.record.steady = true;
                    self.enter(Phase::Gravity(0), next_step);
                } else if self.phase_steps >= limit {
                    self.enter(Phase::Gravity(0), next_step);
                }
            }
            Phase::Gravity(i) => {
                if self.phase_steps >= limit {
                    let d = (sim.body_com(OBJECT_BODY) - self.com_start).norm();
                    self.record.com_displacement.push(d);
                    if i + 1 < self.gravity.len() {
                        self.enter(Phase::Gravity(i + 1), next_step);
                    } else {
                        self.close_phase(next_step);
                        self.finalize(sim);
                        return Control::Done;
                    }
                }
            }
            Phase::Setup => return Control::Done,
        }
        Control::Continue
    }

    fn on_failure(&mut self, failure: &Failure) {
        let phase = self.phase;
        self.close_phase(self.phase_start + self.phase_steps as u64);
        self.record.verdict = Verdict::SimFailed {
            phase,
            reason: failure.reason,
            detail: failure.detail.clone(),
        };
    }
}

/// Upper bound on the steps a trial can take.
fn max_trial_steps(p: &TrialProtocol, dt: f64) -> usize {
    p.steps(p.settle_duration, dt)
        + p.steps(p.max_closing_duration, dt)
        + p.steps(p.max_hold_duration, dt)
        + 6 * p.gravity_phase_steps(dt)
        + 2
}

fn setup_failure(job: &TrialJob, config: &Config, failure: Failure) -> TrialRecord {
    TrialRecord {
        id: job.id,
        object: job.object.name.clone(),
        candidate: job.candidate.clone(),
        protocol: config.protocol,
        solver: config.solver,
        contact: config.contact,
        phases: vec![PhaseMarker {
            phase: Phase::Setup,
            start: 0,
            end: 0,
        }],
        halts: Vec::new(),
        steady: false,
        com_displacement: Vec::new(),
        final_contact: false,
        verdict: Verdict::SimFailed {
            phase: Phase::Setup,
            reason: failure.reason,
            detail: failure.detail,
        },
        metrics: None,
        n_vertices: 0,
        n_tets: 0,
        frames: Vec::new(),
    }
}

/// Runs a single trial on its own.
pub fn run_grasp_trial(job: &TrialJob, config: &Config) -> TrialRecord {
    match build_trial(job, config) {
        Ok(mut env) => {
            env.run_standalone(max_trial_steps(&config.protocol, config.solver.dt));
            env.scenario.into_record()
        }
        Err(f) => setup_failure(job, config, f),
    }
}

/// Runs trials as one lockstep batch; records come back in job order.
pub fn run_trials(jobs: &[TrialJob], config: &Config) -> Result<Vec<TrialRecord>, PipelineError> {
    run_trials_observed(jobs, config, |_| {})
}

/// As `run_trials`, calling `observe` after every batch step.
pub fn run_trials_observed(
    jobs: &[TrialJob],
    config: &Config,
    mut observe: impl FnMut(&BatchReport),
) -> Result<Vec<TrialRecord>, PipelineError> {
    let mut out: Vec<Option<TrialRecord>> = vec![None; jobs.len()];
    let mut envs = Vec::new();
    for (i, job) in jobs.iter().enumerate() {
        match build_trial(job, config) {
            Ok(mut env) => {
                env.id = i;
                envs.push(env);
            }
            Err(f) => out[i] = Some(setup_failure(job, config, f)),
        }
    }
    let mut batch = Batch::new(envs, config.scheduler).map_err(|e| PipelineError::Config(e.to_string()))?;
    for _ in 0..max_trial_steps(&config.protocol, config.solver.dt) {
        if batch.is_finished() {
            break;
        }
        observe(&batch.batch_step());
    }
    for env in batch.envs {
        let slot = env.id;
        out[slot] = Some(env.scenario.into_record());
    }
    Ok(out.into_iter().map(|r| r.expect("every job yields a record")).collect())
}
