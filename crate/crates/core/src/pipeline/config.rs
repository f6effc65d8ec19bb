//! TOML configuration for scenes, protocol and solver settings.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::contact::ContactParams;
use crate::geometry::io::{read_msh, read_vtk};
use crate::geometry::{TetMesh, TriSurface};
use crate::materials::MaterialParams;
use crate::math::Vec3;
use crate::multienv::SchedulerConfig;
use crate::solver::{BodyModel, SolverParams};
use crate::synth::{BimanualComposeParams, ParallelGripper, SamplerParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialProtocol {
    /// Gravity-free settling before closing (s).
    pub settle_duration: f64,
    /// Rate at which the opening width shrinks (m/s); each finger moves at half of it.
    pub closing_speed: f64,
    /// A finger stops once its contact force exceeds this (N).
    pub halt_force: f64,
    /// Longest closing phase before the fingers are stopped regardless (s).
    pub max_closing_duration: f64,
    /// Steady state: max vertex speed below `eps_v` for this many consecutive steps.
    pub steady_steps: usize,
    /// Longest hold phase (s).
    pub max_hold_duration: f64,
    /// Gravity magnitude during the shake phases (m/s^2).
    pub gravity: f64,
    /// Duration of each gravity phase (s).
    pub phase_duration: f64,
    /// Final-phase COM displacement must stay below `c * steps * eps_v * dt`.
    pub stability_constant: f64,
}

impl Default for TrialProtocol {
    fn default() -> Self {
        Self {
            settle_duration: 0.05,
            closing_speed: 0.05,
            halt_force: 50.0,
            max_closing_duration: 2.0,
            steady_steps: 5,
            max_hold_duration: 1.0,
            gravity: 9.8,
            phase_duration: 0.1,
            stability_constant: 1.0,
        }
    }
}

/// Gravity directions of the six shake phases, in order.
pub const GRAVITY_DIRECTIONS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

impl TrialProtocol {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("protocol.settle_duration", self.settle_duration),
            ("protocol.closing_speed", self.closing_speed),
            ("protocol.halt_force", self.halt_force),
            ("protocol.max_closing_duration", self.max_closing_duration),
            ("protocol.max_hold_duration", self.max_hold_duration),
            ("protocol.gravity", self.gravity),
            ("protocol.phase_duration", self.phase_duration),
            ("protocol.stability_constant", self.stability_constant),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipelineError::field(field, "must be positive"));
            }
        }
        if self.steady_steps == 0 {
            return Err(PipelineError::field("protocol.steady_steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn steps(&self, duration: f64, dt: f64) -> usize {
        // The small slack keeps 0.1 / 0.01 at 10 despite rounding.
        ((duration / dt) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn gravity_phase_steps(&self, dt: f64) -> usize {
        self.steps(self.phase_duration, dt)
    }

    pub fn gravity_directions(&self) -> [Vec3; 6] {
        GRAVITY_DIRECTIONS.map(Vec3::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Cube { size: f64, cells: usize },
    Sphere { radius: f64, level: usize },
    Mug { cell: f64 },
    /// Tetrahedral mesh file (`.msh` or `.vtk`).
    TetFile { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectModel {
    Soft,
    Rigid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub name: String,
    pub shape: Shape,
    pub model: ObjectModel,
    #[serde(default = "MaterialParams::soft_object")]
    pub material: MaterialParams,
    /// SDF resolution used for candidate clearance checks.
    #[serde(default = "default_sdf_resolution")]
    pub sdf_resolution: usize,
}

fn default_sdf_resolution() -> usize {
    64
}

impl ObjectConfig {
    pub fn mesh(&self, base: &Path) -> Result<TetMesh, PipelineError> {
        let mesh = match &self.shape {
            Shape::Cube { size, cells } => TetMesh::box_mesh(Vec3::repeat(*size), [*cells; 3]),
            Shape::Sphere { radius, level } => TetMesh::ball(*radius, *level),
            Shape::Mug { cell } => TetMesh::mug(*cell),
            Shape::TetFile { path } => {
                let path = base.join(path);
                let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
                match ext {
                    "msh" => read_msh(&path)?,
                    "vtk" => read_vtk(&path)?,
                    _ => {
                        return Err(PipelineError::field(
                            &format!("objects.{}.shape.path", self.name),
                            "expected a .msh or .vtk file",
                        ))
                    }
                }
            }
        };
        Ok(mesh)
    }

    pub fn body_model(&self, mesh: Arc<TetMesh>) -> BodyModel {
        match self.model {
            ObjectModel::Soft => BodyModel::Soft { mesh },
            ObjectModel::Rigid => BodyModel::affine(mesh),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let field = |f: &str| format!("objects.{}.{f}", self.name);
        self.material
            .validate()
            .map_err(|e| PipelineError::field(&field("material"), &e.to_string()))?;
        let ok = match &self.shape {
            Shape::Cube { size, cells } => *size > 0.0 && *cells >= 1,
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Mug { cell } => *cell > 0.0,
            Shape::TetFile { .. } => true,
        };
        if !ok {
            return Err(PipelineError::field(&field("shape"), "dimensions must be positive"));
        }
        if self.sdf_resolution < 2 {
            return Err(PipelineError::field(&field("sdf_resolution"), "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Gripper surface samples for D1 and D2.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { samples: 50_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub candidates_per_object: usize,
    /// Material of the gripper fingers.
    pub finger_material: MaterialParams,
    pub solver: SolverParams,
    pub contact: ContactParams,
    pub protocol: TrialProtocol,
    pub gripper: ParallelGripper,
    pub sampler: SamplerParams,
    pub compose: BimanualComposeParams,
    pub scheduler: SchedulerConfig,
    pub metrics: MetricsConfig,
    pub objects: Vec<ObjectConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            candidates_per_object: 5,
            finger_material: MaterialParams::umi_finger(),
            solver: SolverParams::default(),
            contact: ContactParams::default(),
            protocol: TrialProtocol::default(),
            gripper: ParallelGripper::default(),
            sampler: SamplerParams::default(),
            compose: BimanualComposeParams::default(),
            scheduler: SchedulerConfig::default(),
            metrics: MetricsConfig::default(),
            objects: Vec::new(),
        }
    }
}

impl Config {
    /// Parses and validates; errors name the offending line or field.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            context: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.solver
            .validate()
            .map_err(|e| PipelineError::field("solver", &e.to_string()))?;
        self.contact
            .validate()
            .map_err(|e| PipelineError::field("contact", &e.to_string()))?;
        self.protocol.validate()?;
        self.gripper
            .validate()
            .map_err(|e| PipelineError::field("gripper", &e.to_string()))?;
        self.compose
            .validate()
            .map_err(|e| PipelineError::field("compose", &e.to_string()))?;
        self.finger_material
            .validate()
            .map_err(|e| PipelineError::field("finger_material", &e.to_string()))?;
        if self.metrics.samples == 0 {
            return Err(PipelineError::field("metrics.samples", "must be at least 1"));
        }
        let mut names = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !names.insert(&o.name) {
                return Err(PipelineError::field(&format!("objects.{}", o.name), "duplicate object name"));
            }
            o.validate()?;
        }
        Ok(())
    }

    /// The regression scene set: soft and rigid cubes, spheres and mugs.
    pub fn regression() -> Self {
        let soft = MaterialParams {
            young_modulus: 5e5,
            ..MaterialParams::soft_object()
        };
        let rigid = MaterialParams {
            young_modulus: 1e9,
            density: 800.0,
            ..MaterialParams::soft_object()
        };
        let object = |name: &str, shape: Shape, model: ObjectModel| ObjectConfig {
            name: name.into(),
            shape,
            model,
            material: if model == ObjectModel::Soft { soft } else { rigid },
            sdf_resolution: 48,
        };
        let cube = Shape::Cube { size: 0.05, cells: 2 };
        let sphere = Shape::Sphere { radius: 0.025, level: 1 };
        let mug = Shape::Mug { cell: 0.0125 };
        Self {
            objects: vec![
                object("soft_cube", cube.clone(), ObjectModel::Soft),
                object("rigid_cube", cube, ObjectModel::Rigid),
                object("soft_sphere", sphere.clone(), ObjectModel::Soft),
                object("rigid_sphere", sphere, ObjectModel::Rigid),
                object("soft_mug", mug.clone(), ObjectModel::Soft),
                object("rigid_mug", mug, ObjectModel::Rigid),
            ],
            ..Self::default()
        }
    }
}

/// Merges surfaces into one, offsetting indices.
pub fn merge_surfaces(parts: &[TriSurface]) -> TriSurface {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for s in parts {
        let off = vertices.len();
        vertices.extend(&s.vertices);
        triangles.extend(s.triangles.iter().map(|t| t.map(|i| i + off)));
    }
    TriSurface::new(vertices, triangles).expect("parts are valid surfaces")
}
