//! Meshes, distance queries, signed distance fields, continuous collision
//! detection, and the environment-isolated broad phase.

pub mod broad;
pub mod bvh;
pub mod ccd;
pub mod distance;
pub mod io;
pub mod mesh;
pub mod sdf;

pub use broad::{broad_phase, BroadPhaseInput, Candidate, CollisionTopology, Primitive};
pub use bvh::TriangleBvh;
pub use ccd::{ccd_max_step, primitive_distance, tet_inversion_step_filter};
pub use distance::{
    edge_edge_distance, point_triangle_distance, EdgeEdgeRegion, EdgeEdgeResult, PointTriangleResult, TriangleRegion,
};
pub use mesh::{TetMesh, TriSurface};
pub use sdf::{build_sdf, ExactSignedDistance, Sdf, DEFAULT_SDF_RESOLUTION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("triangle {0} is degenerate")]
    DegenerateTriangle(usize),
    #[error("segment has zero length")]
    DegenerateSegment,
    #[error("tetrahedron {0} has non-positive volume")]
    InvertedTet(usize),
    #[error("surface is not watertight")]
    NotWatertight,
    #[error("configuration is already intersecting")]
    Intersecting,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
