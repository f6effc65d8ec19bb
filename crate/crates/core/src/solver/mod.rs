//! Implicit Euler time stepping by minimizing the incremental potential with
//! projected Newton and a CCD-filtered backtracking line search.
//!
//! One [`Simulation`] is one environment. A step is split into
//! [`Simulation::begin_step`], repeated [`Simulation::iterate`] calls and
//! [`Simulation::finish_step`] so a batch can interleave Newton sweeps across
//! environments; [`Simulation::step`] runs the whole sequence.

mod assembly;
pub mod linear;
pub mod scene;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{combine_friction, update_friction_anchors, ContactParams, ContactStencil, FrictionAnchor, StencilKind};
use crate::geometry::broad::{broad_phase, BroadPhaseInput, Primitive};
use crate::geometry::ccd::{ccd_max_step, primitive_distance, tet_inversion_step_filter};
use crate::geometry::mesh::tet_signed_volume;
use crate::materials::{snh_pk1, von_mises, StressField};
use crate::math::Vec3;

pub use linear::{linear_solve, LinearSolveError, LinearSolveInfo, LinearSolverKind};
pub use scene::{BodyModel, BodySpec, Pose, SceneLayout};
use scene::{BodyLayout, VertexDofs};

/// Newton iterations after which the unprojected Hessian is tried first.
pub const EXACT_HESSIAN_AFTER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Time step (s).
    pub dt: f64,
    /// Newton tolerance: converged once the largest vertex displacement of
    /// the Newton direction is below `rel_tol * dt * l`, with `l` the
    /// bounding-box diagonal of the free bodies.
    pub rel_tol: f64,
    pub max_iters: usize,
    pub linear_solver: LinearSolverKind,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            rel_tol: 1e-3,
            max_iters: 100,
            linear_solver: LinearSolverKind::Direct,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::InvalidParams("dt must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(SolverError::InvalidParams("rel_tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidParams("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    NonConvergence,
    NonFiniteState,
    CcdViolation,
    LinearSolveBreakdown,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureReason::NonConvergence => "non-convergence",
            FailureReason::NonFiniteState => "non-finite state",
            FailureReason::CcdViolation => "CCD violation",
            FailureReason::LinearSolveBreakdown => "linear-solve breakdown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub reason: FailureReason,
    pub detail: String,
}

impl Failure {
    pub fn new(reason: FailureReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("{}: {}", .0.reason, .0.detail)]
    Failed(Failure),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Converged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub status: StepStatus,
    pub failure: Option<Failure>,
    /// Newton directions computed, including the one that met the tolerance.
    pub iterations: usize,
    /// Last Newton displacement divided by `dt * l`; converged steps have this below `rel_tol`.
    pub residual: f64,
    /// Smallest primitive distance over all accepted states of the step (m).
    pub min_distance: f64,
    pub min_volume: f64,
    pub alphas: Vec<f64>,
    pub energies: Vec<f64>,
    /// Fraction of the prescribed kinematic motion applied this step.
    pub kinematic_alpha: f64,
    pub regularized: bool,
}

/// Result of one Newton iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum IterationOutcome {
    Continue,
    Converged,
    Failed(Failure),
}

/// Free DOFs, their velocities, and kinematic vertex positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Positions of kinematic vertices (entries of other vertices are unused).
    pub kinematic_x: Vec<Vec3>,
    pub gravity: Vec3,
}

#[derive(Clone, Debug)]
struct NewtonState {
    q_hat: Vec<f64>,
    ell: f64,
    lag_updates: usize,
    report: StepReport,
    done: Option<IterationOutcome>,
}

/// Per-stencil contact record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: StencilKind,
    pub bodies: [usize; 2],
    pub vertices: [usize; 4],
    pub distance: f64,
    /// Normal force (N).
    pub lambda: f64,
    /// Tangential relative displacement over the last step (m).
    pub slip: f64,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    layout: Arc<SceneLayout>,
    pub params: SolverParams,
    pub contact: ContactParams,
    state: DofState,
    rest: Arc<Vec<Vec3>>,
    targets: Vec<Option<Pose>>,
    x: Vec<Vec3>,
    x_start: Vec<Vec3>,
    q_start: Vec<f64>,
    anchors: Vec<FrictionAnchor>,
    newton: Option<NewtonState>,
    step_index: u64,
    time: f64,
    released: bool,
}

fn non_finite(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite())
}

impl Simulation {
    pub fn new(bodies: &[BodySpec], params: SolverParams, contact: ContactParams) -> Result<Self, SolverError> {
        params.validate()?;
        contact
            .validate()
            .map_err(|e| SolverError::InvalidParams(e.to_string()))?;
        let (layout, init) = SceneLayout::build(bodies)?;
        let mut kinematic_x = vec![Vec3::zeros(); layout.n_vertices];
        for (body, xs) in &init.kinematic_x {
            let r = layout.bodies[*body].vertices.clone();
            kinematic_x[r].copy_from_slice(xs);
        }
        let state = DofState {
            q: init.q,
            v: init.v,
            kinematic_x,
            gravity: Vec3::zeros(),
        };
        let mut x = Vec::new();
        layout.positions(&state.q, &state.kinematic_x, &mut x);
        let sim = Self {
            targets: vec![None; layout.bodies.len()],
            layout: Arc::new(layout),
            params,
            contact,
            rest: Arc::new(x.clone()),
            x_start: x.clone(),
            q_start: state.q.clone(),
            x,
            state,
            anchors: Vec::new(),
            newton: None,
            step_index: 0,
            time: 0.0,
            released: false,
        };
        let min_d = sim.min_distance_now();
        if !(min_d > 0.0) {
            return Err(SolverError::InvalidScene(format!(
                "initial configuration is intersecting (min distance {min_d})"
            )));
        }
        let min_v = sim.min_tet_volume();
        if !(min_v > 0.0) {
            return Err(SolverError::InvalidScene("initial configuration has an inverted tet".into()));
        }
        Ok(sim)
    }

    pub fn layout(&self) -> &SceneLayout {
        &self.layout
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.x
    }

    /// World vertex velocities over the last completed step.
    pub fn velocities(&self) -> Vec<Vec3> {
        self.x
            .iter()
            .zip(&self.x_start)
            .map(|(a, b)| (a - b) / self.params.dt)
            .collect()
    }

    pub fn dof_state(&self) -> &DofState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn gravity(&self) -> Vec3 {
        self.state.gravity
    }

    pub fn set_gravity(&mut self, g: Vec3) {
        self.state.gravity = g;
    }

    /// Prescribes the pose a kinematic body moves to during the next step.
    pub fn set_kinematic_target(&mut self, body: usize, pose: Pose) -> Result<(), SolverError> {
        match self.layout.bodies.get(body).map(|b| &b.layout) {
            Some(BodyLayout::Kinematic(_)) => {
                self.targets[body] = Some(pose);
                Ok(())
            }
            _ => Err(SolverError::InvalidScene(format!("body {body} is not kinematic"))),
        }
    }

    pub fn kinematic_target(&self, body: usize) -> Option<Pose> {
        self.targets.get(body).copied().flatten()
    }

    /// Overwrites a DOF with NaN; used to exercise failure handling.
    pub fn inject_nan(&mut self) {
        if let Some(v) = self.state.q.first_mut() {
            *v = f64::NAN;
        }
        self.layout.positions(&self.state.q, &self.state.kinematic_x, &mut self.x);
    }

    /// Drops the state of a failed environment.
    pub fn release(&mut self) {
        self.released = true;
        self.state.q = Vec::new();
        self.state.v = Vec::new();
        self.state.kinematic_x = Vec::new();
        self.x = Vec::new();
        self.x_start = Vec::new();
        self.q_start = Vec::new();
        self.anchors = Vec::new();
        self.newton = None;
    }

    pub fn is_released(&self) -> bool {
        self.released
    }

    fn candidates(&self, x: &[Vec3], dx: Option<&[Vec3]>) -> Vec<Primitive> {
        let input = BroadPhaseInput {
            topology: &self.layout.topology,
            x,
            dx,
        };
        let radius = self.contact.dhat;
        broad_phase(&[input], radius)
            .pop()
            .unwrap_or_default()
            .into_iter()
            .map(|c| c.prim)
            .collect()
    }

    fn min_distance_now(&self) -> f64 {
        self.candidates(&self.x, None)
            .iter()
            .map(|p| primitive_distance(p, &self.x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_tet_volume(&self) -> f64 {
        self.layout
            .soft_tets()
            .iter()
            .map(|t| tet_signed_volume(&self.x[t[0]], &self.x[t[1]], &self.x[t[2]], &self.x[t[3]]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Stencils currently within the activation distance.
    pub fn active_stencils(&self) -> Vec<ContactStencil> {
        self.candidates(&self.x, None)
            .into_iter()
            .map(|p| ContactStencil::new(p, &self.x, &self.rest, &self.layout.topology))
            .filter(|s| s.distance < self.contact.dhat)
            .collect()
    }

    /// Sum of barrier-force magnitudes over active stencils touching `body`.
    pub fn contact_force_on(&self, body: usize) -> Result<f64, SolverError> {
        if body >= self.layout.bodies.len() {
            return Err(SolverError::InvalidScene(format!("unknown body {body}")));
        }
        let mut total = 0.0;
        for s in self.active_stencils() {
            if s.bodies.contains(&body) {
                total += s
                    .normal_force(&self.x, &self.contact)
                    .map_err(|e| SolverError::Failed(Failure::new(FailureReason::CcdViolation, e.to_string())))?;
            }
        }
        Ok(total)
    }

    fn friction_of(&self, s: &ContactStencil) -> f64 {
        let a = self.layout.bodies[s.bodies[0]].spec.material.friction;
        let b = self.layout.bodies[s.bodies[1]].spec.material.friction;
        combine_friction(a, b)
    }

    pub fn contact_events(&self) -> Vec<ContactEvent> {
        let stencils = self.active_stencils();
        let Ok(anchors) = update_friction_anchors(&stencils, &self.x, &self.contact, |s| self.friction_of(s)) else {
            return Vec::new();
        };
        anchors
            .iter()
            .map(|a| ContactEvent {
                kind: a.stencil.kind,
                bodies: a.stencil.bodies,
                vertices: a.stencil.vertices(),
                distance: a.stencil.distance,
                lambda: a.lambda,
                slip: a.slip(&self.x, &self.x_start).norm(),
            })
            .collect()
    }

    /// Mass-weighted center of a body (vertex mean for kinematic bodies).
    pub fn body_com(&self, body: usize) -> Vec3 {
        let b = &self.layout.bodies[body];
        let xs = &self.x[b.vertices.clone()];
        let total: f64 = b.vertex_mass.iter().sum();
        if total > 0.0 {
            xs.iter().zip(&b.vertex_mass).fold(Vec3::zeros(), |acc, (p, m)| acc + p * *m) / total
        } else {
            xs.iter().fold(Vec3::zeros(), |acc, p| acc + p) / xs.len().max(1) as f64
        }
    }

    /// Largest speed over vertices of non-kinematic bodies during the last step.
    pub fn max_free_vertex_speed(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (i, d) in self.layout.vertex_dofs.iter().enumerate() {
            if !matches!(d, VertexDofs::Fixed) {
                m = m.max((self.x[i] - self.x_start[i]).norm() / self.params.dt);
            }
        }
        m
    }

    /// Cauchy and von Mises stress of every soft tet, in layout order.
    pub fn stress(&self) -> StressField {
        let mut out = StressField::default();
        for b in &self.layout.bodies {
            if let BodyLayout::Soft(s) = &b.layout {
                for (t, e) in s.tets.iter().zip(&s.elements) {
                    let f = e.deformation_gradient(t.map(|v| &self.x[v]));
                    let sigma = snh_pk1(&f, s.mu, s.lambda) * f.transpose() / f.determinant();
                    let sigma = (sigma + sigma.transpose()) * 0.5;
                    out.von_mises.push(von_mises(&sigma));
                    out.cauchy.push(sigma);
                }
            }
        }
        out
    }

    fn free_bounds_diagonal(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for (i, d) in self.layout.vertex_dofs.iter().enumerate() {
            if !matches!(d, VertexDofs::Fixed) {
                lo = lo.inf(&self.x[i]);
                hi = hi.sup(&self.x[i]);
            }
        }
        let diag = (hi - lo).norm();
        if diag.is_finite() && diag > 0.0 {
            diag
        } else {
            1.0
        }
    }

    /// Rebuilds friction anchors, applies the prescribed kinematic motion
    /// (limited by CCD) and prepares the Newton solve.
    pub fn begin_step(&mut self) -> Result<(), Failure> {
        if self.released {
            return Err(Failure::new(FailureReason::NonFiniteState, "environment state was released"));
        }
        if non_finite(&self.state.q) || non_finite(&self.state.v) {
            return Err(Failure::new(FailureReason::NonFiniteState, "state contains NaN or Inf"));
        }
        self.x_start = self.x.clone();
        self.q_start = self.state.q.clone();
        self.refresh_anchors()?;

        // Prescribed motion of kinematic bodies.
        let mut dx = vec![Vec3::zeros(); self.layout.n_vertices];
        let mut moving = false;
        for (bi, b) in self.layout.bodies.iter().enumerate() {
            if let (BodyLayout::Kinematic(k), Some(pose)) = (&b.layout, self.targets[bi]) {
                for (v, local) in b.vertices.clone().zip(&k.local) {
                    dx[v] = pose.apply(local) - self.state.kinematic_x[v];
                    moving |= dx[v] != Vec3::zeros();
                }
            }
        }
        let mut kinematic_alpha = 1.0;
        if moving {
            let cands = self.candidates(&self.x, Some(&dx));
            kinematic_alpha = ccd_max_step(&cands, &self.x, &dx)
                .map_err(|e| Failure::new(FailureReason::CcdViolation, e.to_string()))?;
            for (v, d) in dx.iter().enumerate() {
                if *d != Vec3::zeros() {
                    self.state.kinematic_x[v] += d * kinematic_alpha;
                    self.x[v] = self.state.kinematic_x[v];
                }
            }
        }

        let dt = self.params.dt;
        let g = self.layout.gravity_dofs(&self.state.gravity);
        let q_hat = self
            .state
            .q
            .iter()
            .zip(&self.state.v)
            .zip(&g)
            .map(|((q, v), g)| q + dt * v + dt * dt * g)
            .collect();
        let min_distance = self.min_distance_now();
        if !(min_distance > 0.0) {
            return Err(Failure::new(FailureReason::CcdViolation, "kinematic motion reached contact"));
        }
        self.newton = Some(NewtonState {
            q_hat,
            ell: self.free_bounds_diagonal(),
            lag_updates: 0,
            report: StepReport {
                step: self.step_index,
                status: StepStatus::Converged,
                failure: None,
                iterations: 0,
                residual: f64::INFINITY,
                min_distance,
                min_volume: self.min_tet_volume(),
                alphas: Vec::new(),
                energies: Vec::new(),
                kinematic_alpha,
                regularized: false,
            },
            done: None,
        });
        Ok(())
    }

    fn refresh_anchors(&mut self) -> Result<(), Failure> {
        let stencils: Vec<ContactStencil> = self
            .candidates(&self.x, None)
            .into_iter()
            .map(|p| ContactStencil::new(p, &self.x, &self.rest, &self.layout.topology))
            .filter(|s| s.distance < self.contact.dhat)
            .collect();
        let anchors = update_friction_anchors(&stencils, &self.x, &self.contact, |s| self.friction_of(s))
            .map_err(|e| Failure::new(FailureReason::CcdViolation, e.to_string()))?;
        self.anchors = anchors.into_iter().filter(|a| a.lambda > 0.0 && a.mu > 0.0).collect();
        Ok(())
    }

    /// One projected Newton iteration. Returns the terminal outcome again if
    /// called after the solve ended.
    pub fn iterate(&mut self) -> IterationOutcome {
        let Some(mut st) = self.newton.take() else {
            return IterationOutcome::Failed(Failure::new(FailureReason::NonConvergence, "no step in progress"));
        };
        let out = match st.done.clone() {
            Some(done) => done,
            None => {
                let out = self.newton_iteration(&mut st);
                if !matches!(out, IterationOutcome::Continue) {
                    st.done = Some(out.clone());
                }
                out
            }
        };
        self.newton = Some(st);
        out
    }

    fn newton_iteration(&mut self, st: &mut NewtonState) -> IterationOutcome {
        if st.report.iterations >= self.params.max_iters {
            return IterationOutcome::Failed(Failure::new(
                FailureReason::NonConvergence,
                format!("no convergence within {} iterations", self.params.max_iters),
            ));
        }
        st.report.iterations += 1;
        let cands = self.candidates(&self.x, None);
        // Per-term projection can overstate the curvature of near-neutral
        // modes and make late iterations crawl; once a step drags on, the
        // exact Hessian is used whenever it is positive definite.
        let exact = if st.report.iterations > EXACT_HESSIAN_AFTER {
            match assembly::assemble(self, &st.q_hat, &cands, false) {
                Ok(sys) if sys.energy.is_finite() && !non_finite(sys.gradient.as_slice()) => {
                    nalgebra::Cholesky::new(sys.hessian.clone()).map(|c| (c.solve(&(-&sys.gradient)), sys))
                }
                _ => None,
            }
        } else {
            None
        };
        let (p, sys) = match exact {
            Some(r) => r,
            None => {
                let sys = match assembly::assemble(self, &st.q_hat, &cands, true) {
                    Ok(s) => s,
                    Err(f) => return IterationOutcome::Failed(f),
                };
                if !sys.energy.is_finite() || non_finite(sys.gradient.as_slice()) {
                    return IterationOutcome::Failed(Failure::new(
                        FailureReason::NonFiniteState,
                        "energy or gradient is not finite",
                    ));
                }
                match linear_solve(&sys.hessian, &sys.gradient, self.params.linear_solver) {
                    Ok((p, info)) => {
                        st.report.regularized |= info.regularized;
                        (p, sys)
                    }
                    Err(e) => return IterationOutcome::Failed(Failure::new(FailureReason::LinearSolveBreakdown, e.0)),
                }
            }
        };
        let dx = self.layout.displacement(p.as_slice());
        let p_inf = self
            .layout
            .vertex_dofs
            .iter()
            .zip(&dx)
            .filter(|(d, _)| !matches!(d, VertexDofs::Fixed))
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        st.report.residual = p_inf / (self.params.dt * st.ell);
        let converged = st.report.residual < self.params.rel_tol;

        let traj = self.candidates(&self.x, Some(&dx));
        let alpha_ccd = match ccd_max_step(&traj, &self.x, &dx) {
            Ok(a) => a,
            Err(e) => return IterationOutcome::Failed(Failure::new(FailureReason::CcdViolation, e.to_string())),
        };
        let alpha_inv = match tet_inversion_step_filter(&self.layout.soft_tets(), &self.x, &dx) {
            Ok(a) => a,
            Err(e) => return IterationOutcome::Failed(Failure::new(FailureReason::CcdViolation, e.to_string())),
        };
        let mut alpha = alpha_ccd.min(alpha_inv);
        let e0 = sys.energy;

        if converged {
            // A full step that does not raise the energy is still taken: it
            // makes the momentum balance exact for quadratic problems.
            if alpha >= 1.0 {
                let q_new = axpy(&self.state.q, 1.0, &p);
                if let Some(e1) = self.energy_at(&q_new, &st.q_hat, &traj) {
                    if e1 <= e0 {
                        if let Err(f) = self.accept(st, q_new, &traj, 1.0, e1) {
                            return IterationOutcome::Failed(f);
                        }
                    }
                }
            }
            if st.lag_updates + 1 < self.contact.friction_iterations {
                st.lag_updates += 1;
                if let Err(f) = self.refresh_anchors() {
                    return IterationOutcome::Failed(f);
                }
                return IterationOutcome::Continue;
            }
            return IterationOutcome::Converged;
        }

        loop {
            let q_new = axpy(&self.state.q, alpha, &p);
            match self.energy_at(&q_new, &st.q_hat, &traj) {
                Some(e1) if e1 <= e0 => {
                    if let Err(f) = self.accept(st, q_new, &traj, alpha, e1) {
                        return IterationOutcome::Failed(f);
                    }
                    return IterationOutcome::Continue;
                }
                _ => {
                    alpha *= 0.5;
                    if alpha * p_inf < f64::EPSILON * st.ell {
                        return IterationOutcome::Failed(Failure::new(
                            FailureReason::NonConvergence,
                            "line search found no decrease",
                        ));
                    }
                }
            }
        }
    }

    fn energy_at(&self, q: &[f64], q_hat: &[f64], cands: &[Primitive]) -> Option<f64> {
        let mut x = Vec::new();
        self.layout.positions(q, &self.state.kinematic_x, &mut x);
        let e = assembly::energy(self, q, q_hat, &x, cands).ok()?;
        e.is_finite().then_some(e)
    }

    fn accept(&mut self, st: &mut NewtonState, q: Vec<f64>, traj: &[Primitive], alpha: f64, e: f64) -> Result<(), Failure> {
        let mut x = Vec::new();
        self.layout.positions(&q, &self.state.kinematic_x, &mut x);
        let min_d = traj.iter().map(|p| primitive_distance(p, &x)).fold(f64::INFINITY, f64::min);
        if !(min_d > 0.0) {
            return Err(Failure::new(FailureReason::CcdViolation, format!("accepted state has distance {min_d}")));
        }
        self.state.q = q;
        self.x = x;
        let min_v = self.min_tet_volume();
        if !(min_v > 0.0) {
            return Err(Failure::new(FailureReason::CcdViolation, "accepted state has an inverted tet"));
        }
        st.report.min_distance = st.report.min_distance.min(min_d);
        st.report.min_volume = st.report.min_volume.min(min_v);
        st.report.alphas.push(alpha);
        st.report.energies.push(e);
        Ok(())
    }

    /// Closes the current step: on convergence updates velocities and time.
    pub fn finish_step(&mut self) -> StepReport {
        let Some(st) = self.newton.take() else {
            return StepReport {
                step: self.step_index,
                status: StepStatus::Failed,
                failure: Some(Failure::new(FailureReason::NonConvergence, "no step in progress")),
                iterations: 0,
                residual: f64::INFINITY,
                min_distance: f64::NAN,
                min_volume: f64::NAN,
                alphas: Vec::new(),
                energies: Vec::new(),
                kinematic_alpha: 0.0,
                regularized: false,
            };
        };
        let mut report = st.report;
        match st.done {
            Some(IterationOutcome::Converged) => {
                let dt = self.params.dt;
                self.state.v = self.state.q.iter().zip(&self.q_start).map(|(a, b)| (a - b) / dt).collect();
                self.step_index += 1;
                self.time = self.step_index as f64 * dt;
            }
            Some(IterationOutcome::Failed(f)) => {
                report.status = StepStatus::Failed;
                report.failure = Some(f);
            }
            _ => {
                report.status = StepStatus::Failed;
                report.failure = Some(Failure::new(FailureReason::NonConvergence, "step closed before convergence"));
            }
        }
        report
    }

    /// Runs a full time step.
    pub fn step(&mut self) -> StepReport {
        if let Err(f) = self.begin_step() {
            return self.failed_report(f);
        }
        while let IterationOutcome::Continue = self.iterate() {}
        self.finish_step()
    }

    pub(crate) fn failed_report(&self, f: Failure) -> StepReport {
        StepReport {
            step: self.step_index,
            status: StepStatus::Failed,
            failure: Some(f),
            iterations: 0,
            residual: f64::INFINITY,
            min_distance: f64::NAN,
            min_volume: f64::NAN,
            alphas: Vec::new(),
            energies: Vec::new(),
            kinematic_alpha: 0.0,
            regularized: false,
        }
    }

    /// Incremental potential, gradient and projected Hessian at the current
    /// state, over the free DOFs.
    pub fn incremental_potential(&self) -> Result<(f64, DVector<f64>, nalgebra::DMatrix<f64>), Failure> {
        let q_hat = match &self.newton {
            Some(st) => st.q_hat.clone(),
            None => {
                let dt = self.params.dt;
                let g = self.layout.gravity_dofs(&self.state.gravity);
                (0..self.state.q.len())
                    .map(|i| self.state.q[i] + dt * self.state.v[i] + dt * dt * g[i])
                    .collect()
            }
        };
        let cands = self.candidates(&self.x, None);
        let sys = assembly::assemble(self, &q_hat, &cands, true)?;
        Ok((sys.energy, sys.gradient, sys.hessian))
    }

    /// Incremental potential at arbitrary DOFs `q` against the current step's target.
    pub fn incremental_energy_at(&self, q: &[f64]) -> Option<f64> {
        let q_hat = self.newton.as_ref()?.q_hat.clone();
        let mut x = Vec::new();
        self.layout.positions(q, &self.state.kinematic_x, &mut x);
        let cands = self.candidates(&x, None);
        assembly::energy(self, q, &q_hat, &x, &cands).ok()
    }
}

fn axpy(q: &[f64], a: f64, p: &DVector<f64>) -> Vec<f64> {
    q.iter().zip(p.iter()).map(|(q, p)| q + a * p).collect()
}
