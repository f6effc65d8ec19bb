//! Body descriptions and the mapping between body DOFs and world vertices.

use std::sync::Arc;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::geometry::{CollisionTopology, TetMesh, TriSurface};
use crate::materials::{MaterialParams, TetElement, DEFAULT_ABD_STIFFNESS};
use crate::math::{Mat3, Vec3};

use super::SolverError;

/// Rigid placement of a body's local frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

#[derive(Clone, Debug)]
pub enum BodyModel {
    /// Tetrahedral FEM body with stable Neo-Hookean elasticity.
    Soft { mesh: Arc<TetMesh> },
    /// Affine body; the mesh supplies collision geometry and mass.
    Affine { mesh: Arc<TetMesh>, stiffness: f64 },
    /// Scripted collider moved to prescribed poses.
    Kinematic { surface: Arc<TriSurface> },
}

impl BodyModel {
    pub fn affine(mesh: Arc<TetMesh>) -> Self {
        BodyModel::Affine {
            mesh,
            stiffness: DEFAULT_ABD_STIFFNESS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BodySpec {
    pub name: String,
    pub model: BodyModel,
    pub material: MaterialParams,
    pub pose: Pose,
    pub velocity: Vec3,
}

impl BodySpec {
    pub fn new(name: impl Into<String>, model: BodyModel, material: MaterialParams, pose: Pose) -> Self {
        Self {
            name: name.into(),
            model,
            material,
            pose,
            velocity: Vec3::zeros(),
        }
    }

    pub fn is_kinematic(&self) -> bool {
        matches!(self.model, BodyModel::Kinematic { .. })
    }
}

/// How a world vertex depends on the free DOFs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum VertexDofs {
    /// Three DOFs starting at the index.
    Nodal(usize),
    /// Twelve affine DOFs `[p, a0, a1, a2]` at the index, with the vertex's
    /// offset from the body's center of mass.
    Affine(usize, Vec3),
    Fixed,
}

#[derive(Clone, Debug)]
pub(crate) struct SoftLayout {
    pub tets: Vec<[usize; 4]>,
    pub elements: Vec<TetElement>,
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct AffineLayout {
    pub dof: usize,
    pub mass: SMatrix<f64, 12, 12>,
    pub volume: f64,
    pub stiffness: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct KinematicLayout {
    pub local: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub(crate) enum BodyLayout {
    Soft(SoftLayout),
    Affine(AffineLayout),
    Kinematic(KinematicLayout),
}

#[derive(Clone, Debug)]
pub(crate) struct BodyEntry {
    pub spec: BodySpec,
    pub vertices: std::ops::Range<usize>,
    pub dofs: std::ops::Range<usize>,
    pub layout: BodyLayout,
    /// Mass of each world vertex of this body (lumped), zero for kinematic bodies.
    pub vertex_mass: Vec<f64>,
    /// Surface triangles in world vertex indices.
    pub triangles: Vec<[usize; 3]>,
}

/// Immutable description of one environment's bodies and DOF layout.
#[derive(Clone, Debug)]
pub struct SceneLayout {
    pub(crate) bodies: Vec<BodyEntry>,
    pub(crate) vertex_dofs: Vec<VertexDofs>,
    pub(crate) topology: CollisionTopology,
    pub(crate) n_dofs: usize,
    pub(crate) n_vertices: usize,
    /// Diagonal of the lumped nodal masses; affine blocks live in the layouts.
    pub(crate) nodal_mass: Vec<f64>,
}

fn lumped_masses(mesh: &TetMesh, density: f64) -> Vec<f64> {
    let mut m = vec![0.0; mesh.vertices.len()];
    for (t, vol) in mesh.tets.iter().zip(&mesh.rest_volumes) {
        for &v in t {
            m[v] += density * vol / 4.0;
        }
    }
    m
}

/// Initial DOF values and velocities alongside the layout.
pub(crate) struct InitialState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub kinematic_x: Vec<(usize, Vec<Vec3>)>,
}

impl SceneLayout {
    pub(crate) fn build(specs: &[BodySpec]) -> Result<(Self, InitialState), SolverError> {
        let mut bodies = Vec::new();
        let mut vertex_dofs = Vec::new();
        let mut topology = CollisionTopology::default();
        let mut nodal_mass = Vec::new();
        let mut q = Vec::new();
        let mut v = Vec::new();
        let mut kinematic_x = Vec::new();
        for (bi, spec) in specs.iter().enumerate() {
            spec.material
                .validate()
                .map_err(|e| SolverError::InvalidScene(format!("body {}: {e}", spec.name)))?;
            let v0 = vertex_dofs.len();
            let d0 = q.len();
            let (surface, layout, vertex_mass): (&TriSurface, BodyLayout, Vec<f64>) = match &spec.model {
                BodyModel::Soft { mesh } => {
                    let (mu, lambda) = spec
                        .material
                        .lame()
                        .map_err(|e| SolverError::InvalidScene(e.to_string()))?;
                    let masses = lumped_masses(mesh, spec.material.density);
                    for (i, p) in mesh.vertices.iter().enumerate() {
                        vertex_dofs.push(VertexDofs::Nodal(d0 + 3 * i));
                        let w = spec.pose.apply(p);
                        q.extend_from_slice(w.as_slice());
                        v.extend_from_slice(spec.velocity.as_slice());
                        nodal_mass.extend([masses[i]; 3]);
                    }
                    let tets = mesh.tets.iter().map(|t| t.map(|i| i + v0)).collect();
                    let elements = mesh
                        .tets
                        .iter()
                        .map(|t| TetElement::new(t.map(|i| &mesh.rest[i])))
                        .collect();
                    (
                        &mesh.boundary,
                        BodyLayout::Soft(SoftLayout { tets, elements, mu, lambda }),
                        masses,
                    )
                }
                BodyModel::Affine { mesh, stiffness } => {
                    let masses = lumped_masses(mesh, spec.material.density);
                    let total: f64 = masses.iter().sum();
                    let com = mesh
                        .rest
                        .iter()
                        .zip(&masses)
                        .fold(Vec3::zeros(), |acc, (p, m)| acc + p * *m)
                        / total;
                    let mut mass = SMatrix::<f64, 12, 12>::zeros();
                    for (p, m) in mesh.rest.iter().zip(&masses) {
                        let xb = p - com;
                        let w = [1.0, xb.x, xb.y, xb.z];
                        for a in 0..4 {
                            for b in 0..4 {
                                for r in 0..3 {
                                    mass[(3 * a + r, 3 * b + r)] += m * w[a] * w[b];
                                }
                            }
                        }
                        vertex_dofs.push(VertexDofs::Affine(d0, xb));
                    }
                    let p = spec.pose.apply(&com);
                    q.extend_from_slice(p.as_slice());
                    q.extend_from_slice(spec.pose.rotation.as_slice());
                    v.extend_from_slice(spec.velocity.as_slice());
                    v.extend([0.0; 9]);
                    (
                        &mesh.boundary,
                        BodyLayout::Affine(AffineLayout {
                            dof: d0,
                            mass,
                            volume: mesh.total_volume(),
                            stiffness: *stiffness,
                        }),
                        masses,
                    )
                }
                BodyModel::Kinematic { surface } => {
                    vertex_dofs.extend(std::iter::repeat_n(VertexDofs::Fixed, surface.vertices.len()));
                    kinematic_x.push((bi, surface.vertices.iter().map(|p| spec.pose.apply(p)).collect()));
                    (
                        surface.as_ref(),
                        BodyLayout::Kinematic(KinematicLayout { local: surface.vertices.clone() }),
                        vec![0.0; surface.vertices.len()],
                    )
                }
            };
            let n = vertex_dofs.len() - v0;
            topology.vertex_body.extend(std::iter::repeat_n(bi, n));
            topology.self_collide.push(matches!(spec.model, BodyModel::Soft { .. }));
            topology.kinematic.push(spec.is_kinematic());
            topology.points.extend(surface.referenced_vertices().into_iter().map(|i| i + v0));
            topology.edges.extend(surface.edges().into_iter().map(|e| [e[0] + v0, e[1] + v0]));
            let triangles: Vec<[usize; 3]> = surface.triangles.iter().map(|t| t.map(|i| i + v0)).collect();
            topology.triangles.extend(&triangles);
            bodies.push(BodyEntry {
                spec: spec.clone(),
                vertices: v0..vertex_dofs.len(),
                dofs: d0..q.len(),
                layout,
                vertex_mass,
                triangles,
            });
        }
        let layout = SceneLayout {
            n_dofs: q.len(),
            n_vertices: vertex_dofs.len(),
            bodies,
            vertex_dofs,
            topology,
            nodal_mass,
        };
        Ok((layout, InitialState { q, v, kinematic_x }))
    }

    /// World positions of the non-kinematic vertices from DOFs; kinematic
    /// vertices are copied from `kinematic`.
    pub(crate) fn positions(&self, q: &[f64], kinematic: &[Vec3], out: &mut Vec<Vec3>) {
        out.clear();
        out.reserve(self.n_vertices);
        for (i, d) in self.vertex_dofs.iter().enumerate() {
            out.push(match *d {
                VertexDofs::Nodal(k) => Vec3::new(q[k], q[k + 1], q[k + 2]),
                VertexDofs::Affine(k, xb) => affine_point(&q[k..k + 12], &xb),
                VertexDofs::Fixed => kinematic[i],
            });
        }
    }

    /// Displacement of every world vertex for a DOF displacement `dq`
    /// (kinematic vertices do not move).
    pub(crate) fn displacement(&self, dq: &[f64]) -> Vec<Vec3> {
        self.vertex_dofs
            .iter()
            .map(|d| match *d {
                VertexDofs::Nodal(k) => Vec3::new(dq[k], dq[k + 1], dq[k + 2]),
                VertexDofs::Affine(k, xb) => affine_point(&dq[k..k + 12], &xb),
                VertexDofs::Fixed => Vec3::zeros(),
            })
            .collect()
    }

    /// Inertia matrix over the free DOFs.
    pub(crate) fn mass_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_dofs, self.n_dofs);
        for (i, mi) in self.nodal_mass.iter().enumerate() {
            m[(i, i)] = *mi;
        }
        for b in &self.bodies {
            if let BodyLayout::Affine(a) = &b.layout {
                m.view_mut((a.dof, a.dof), (12, 12)).copy_from(&a.mass);
            }
        }
        m
    }

    /// Acceleration expressed per DOF: applied to nodal DOFs and affine translations.
    pub(crate) fn gravity_dofs(&self, g: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for b in &self.bodies {
            match &b.layout {
                BodyLayout::Soft(_) => {
                    for k in b.dofs.clone().step_by(3) {
                        out[k..k + 3].copy_from_slice(g.as_slice());
                    }
                }
                BodyLayout::Affine(a) => out[a.dof..a.dof + 3].copy_from_slice(g.as_slice()),
                BodyLayout::Kinematic(_) => {}
            }
        }
        out
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn topology(&self) -> &CollisionTopology {
        &self.topology
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len()
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.spec.name == name)
    }

    pub fn body_spec(&self, body: usize) -> &BodySpec {
        &self.bodies[body].spec
    }

    pub fn body_vertices(&self, body: usize) -> std::ops::Range<usize> {
        self.bodies[body].vertices.clone()
    }

    pub fn body_triangles(&self, body: usize) -> &[[usize; 3]] {
        &self.bodies[body].triangles
    }

    /// All soft-body tets in world vertex indices.
    pub fn soft_tets(&self) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for b in &self.bodies {
            if let BodyLayout::Soft(s) = &b.layout {
                out.extend(&s.tets);
            }
        }
        out
    }

    /// Total linear momentum of the free bodies for DOF velocities `v`.
    pub fn linear_momentum(&self, v: &[f64]) -> Vec3 {
        let mut p = Vec3::zeros();
        for b in &self.bodies {
            match &b.layout {
                BodyLayout::Soft(_) => {
                    for k in b.dofs.clone().step_by(3) {
                        p += Vec3::new(v[k], v[k + 1], v[k + 2]) * self.nodal_mass[k];
                    }
                }
                BodyLayout::Affine(a) => {
                    let m = a.mass * nalgebra::SVector::<f64, 12>::from_column_slice(&v[a.dof..a.dof + 12]);
                    p += Vec3::new(m[0], m[1], m[2]);
                }
                BodyLayout::Kinematic(_) => {}
            }
        }
        p
    }

    pub fn body_mass(&self, body: usize) -> f64 {
        self.bodies[body].vertex_mass.iter().sum()
    }
}

/// `p + A xb` with `dofs = [p, a0, a1, a2]`.
pub(crate) fn affine_point(dofs: &[f64], xb: &Vec3) -> Vec3 {
    Vec3::new(
        dofs[0] + dofs[3] * xb.x + dofs[6] * xb.y + dofs[9] * xb.z,
        dofs[1] + dofs[4] * xb.x + dofs[7] * xb.y + dofs[10] * xb.z,
        dofs[2] + dofs[5] * xb.x + dofs[8] * xb.y + dofs[11] * xb.z,
    )
}
