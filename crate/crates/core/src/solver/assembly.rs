//! Incremental potential over the free DOFs: energy-only evaluation for the
//! line search and full dense assembly for Newton.

use nalgebra::{DMatrix, DVector};

use super::scene::{BodyLayout, VertexDofs};
use super::{Failure, FailureReason, Simulation};
use crate::contact::{barrier, friction_mollifier, ContactStencil};
use crate::geometry::broad::Primitive;
use crate::materials::{abd_orthogonality_energy, neo_hookean_energy, snh_energy_density, AffineBodyState, ElementEval};
use crate::math::{Mat3, Vec3};

pub(super) struct System {
    pub energy: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn contact_failure(e: impl std::fmt::Display) -> Failure {
    Failure::new(FailureReason::CcdViolation, e.to_string())
}

fn affine_state(q: &[f64], dof: usize, stiffness: f64) -> AffineBodyState {
    AffineBodyState {
        p: Vec3::new(q[dof], q[dof + 1], q[dof + 2]),
        a: Mat3::from_column_slice(&q[dof + 3..dof + 12]),
        stiffness,
    }
}

/// `1/2 (q - q_hat)^T M (q - q_hat)` and its gradient `M (q - q_hat)`.
fn inertia(sim: &Simulation, q: &[f64], q_hat: &[f64]) -> (f64, DVector<f64>) {
    let layout = &sim.layout;
    let n = layout.n_dofs;
    let mut g = DVector::zeros(n);
    for b in &layout.bodies {
        match &b.layout {
            BodyLayout::Affine(a) => {
                let d = DVector::from_iterator(12, (a.dof..a.dof + 12).map(|i| q[i] - q_hat[i]));
                let md = a.mass * nalgebra::SVector::<f64, 12>::from_column_slice(d.as_slice());
                g.rows_mut(a.dof, 12).copy_from(&md);
            }
            _ => {
                for i in b.dofs.clone() {
                    g[i] = layout.nodal_mass[i] * (q[i] - q_hat[i]);
                }
            }
        }
    }
    let e = 0.5 * (0..n).map(|i| g[i] * (q[i] - q_hat[i])).sum::<f64>();
    (e, g)
}

/// Incremental potential at `q` (positions `x`), without derivatives.
pub(super) fn energy(sim: &Simulation, q: &[f64], q_hat: &[f64], x: &[Vec3], cands: &[Primitive]) -> Result<f64, Failure> {
    let (mut e_inertia, _) = inertia(sim, q, q_hat);
    let mut potential = 0.0;
    for b in &sim.layout.bodies {
        match &b.layout {
            BodyLayout::Soft(s) => {
                for (t, el) in s.tets.iter().zip(&s.elements) {
                    let f = el.deformation_gradient(t.map(|v| &x[v]));
                    potential += el.volume * snh_energy_density(&f, s.mu, s.lambda);
                }
            }
            BodyLayout::Affine(a) => {
                let st = affine_state(q, a.dof, a.stiffness);
                let c = st.a.transpose() * st.a - Mat3::identity();
                potential += a.stiffness * a.volume * c.norm_squared();
            }
            BodyLayout::Kinematic(_) => {}
        }
    }
    let params = &sim.contact;
    for prim in cands {
        let s = ContactStencil::new(*prim, x, &sim.rest, &sim.layout.topology);
        if s.distance < params.dhat {
            let (b, _, _) = barrier(s.distance, params.dhat).map_err(contact_failure)?;
            potential += params.kappa * s.mollifier_weight(x) * b;
        }
    }
    let dt = sim.params.dt;
    for a in &sim.anchors {
        let y = a.slip(x, &sim.x_start).norm();
        potential += a.mu * a.lambda * friction_mollifier(y, params.eps_v, dt).0;
    }
    e_inertia += dt * dt * potential;
    Ok(e_inertia)
}

/// DOF blocks a vertex depends on: `(first dof, weight)` with the vertex
/// moving by `weight * dq[first..first + 3]`.
fn vertex_blocks(d: VertexDofs) -> ([(usize, f64); 4], usize) {
    match d {
        VertexDofs::Nodal(k) => ([(k, 1.0), (0, 0.0), (0, 0.0), (0, 0.0)], 1),
        VertexDofs::Affine(k, xb) => ([(k, 1.0), (k + 3, xb.x), (k + 6, xb.y), (k + 9, xb.z)], 4),
        VertexDofs::Fixed => ([(0, 0.0); 4], 0),
    }
}

/// Adds a four-vertex term, chaining through each vertex's DOF map.
fn scatter(sim: &Simulation, ids: &[usize; 4], t: &ElementEval<12>, scale: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
    let blocks = ids.map(|v| vertex_blocks(sim.layout.vertex_dofs[v]));
    for (a, (ba, na)) in blocks.iter().enumerate() {
        for &(da, wa) in &ba[..*na] {
            for r in 0..3 {
                g[da + r] += scale * wa * t.gradient[3 * a + r];
            }
            for (b, (bb, nb)) in blocks.iter().enumerate() {
                for &(db, wb) in &bb[..*nb] {
                    let w = scale * wa * wb;
                    for r in 0..3 {
                        for c in 0..3 {
                            h[(da + r, db + c)] += w * t.hessian[(3 * a + r, 3 * b + c)];
                        }
                    }
                }
            }
        }
    }
}

/// Energy, gradient and Hessian at the current state; per-term Hessians are
/// projected to SPD when `project` is set.
pub(super) fn assemble(sim: &Simulation, q_hat: &[f64], cands: &[Primitive], project: bool) -> Result<System, Failure> {
    let layout = &sim.layout;
    let q = &sim.state.q;
    let x = &sim.x;
    let n = layout.n_dofs;
    let dt2 = sim.params.dt * sim.params.dt;
    let (mut energy, mut gradient) = inertia(sim, q, q_hat);
    let mut hessian = layout.mass_matrix();
    let mut tmp_g = DVector::zeros(n);
    for b in &layout.bodies {
        match &b.layout {
            BodyLayout::Soft(s) => {
                for (t, el) in s.tets.iter().zip(&s.elements) {
                    let term = neo_hookean_energy(el, t.map(|v| &x[v]), s.mu, s.lambda, project);
                    energy += dt2 * term.energy;
                    scatter(sim, t, &term, dt2, &mut gradient, &mut hessian);
                }
            }
            BodyLayout::Affine(a) => {
                let term = abd_orthogonality_energy(&affine_state(q, a.dof, a.stiffness), a.volume, project);
                energy += dt2 * term.energy;
                for i in 0..12 {
                    tmp_g[a.dof + i] = term.gradient[i];
                    for j in 0..12 {
                        hessian[(a.dof + i, a.dof + j)] += dt2 * term.hessian[(i, j)];
                    }
                }
                for i in 0..12 {
                    gradient[a.dof + i] += dt2 * tmp_g[a.dof + i];
                }
            }
            BodyLayout::Kinematic(_) => {}
        }
    }
    let params = &sim.contact;
    for prim in cands {
        let s = ContactStencil::new(*prim, x, &sim.rest, &layout.topology);
        if s.distance >= params.dhat {
            continue;
        }
        if let Some(term) = s.barrier_term(x, params, project).map_err(contact_failure)? {
            energy += dt2 * term.energy;
            scatter(sim, &s.vertices(), &term, dt2, &mut gradient, &mut hessian);
        }
    }
    for a in &sim.anchors {
        let term = a.potential(x, &sim.x_start, params.eps_v, sim.params.dt, project);
        energy += dt2 * term.energy;
        scatter(sim, &a.stencil.vertices(), &term, dt2, &mut gradient, &mut hessian);
    }
    Ok(System { energy, gradient, hessian })
}
