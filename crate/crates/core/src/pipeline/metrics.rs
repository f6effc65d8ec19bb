//! Penetration (D1) and tightness (D2) of a grasp against an object's distance field.
//!
//! Object distances are negative inside. The metrics use the penetration
//! depth `-d`, so `D1 = max(0, max(-d))` and `D2 = |max(-d)|` over samples of
//! the gripper surface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::merge_surfaces;
use crate::geometry::{ExactSignedDistance, Sdf, TriSurface};
use crate::math::Vec3;

/// Signed distance to an object surface, negative inside.
pub trait SignedDistance {
    fn signed_distance(&self, p: &Vec3) -> f64;
}

impl SignedDistance for Sdf {
    fn signed_distance(&self, p: &Vec3) -> f64 {
        self.query(p)
    }
}

impl SignedDistance for ExactSignedDistance<'_> {
    fn signed_distance(&self, p: &Vec3) -> f64 {
        self.eval(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// Deepest gripper penetration into the object, zero if none (m).
    pub d1: f64,
    /// Magnitude of the largest penetration depth, i.e. the closest approach when outside (m).
    pub d2: f64,
    pub samples: usize,
}

/// Area-weighted, seed-deterministic samples over all gripper surfaces.
pub fn gripper_samples(gripper: &[TriSurface], n: usize, seed: u64) -> Vec<Vec3> {
    let merged = merge_surfaces(gripper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    merged.sample_points(n, &mut rng).into_iter().map(|(p, _)| p).collect()
}

/// Largest penetration depth `max(-d)` over the points.
pub fn max_penetration_depth(sdf: &impl SignedDistance, points: &[Vec3]) -> f64 {
    points
        .iter()
        .map(|p| -sdf.signed_distance(p))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn penetration_distance_d1(sdf: &impl SignedDistance, gripper: &[TriSurface], n: usize, seed: u64) -> f64 {
    gripper_distances(sdf, gripper, n, seed).d1
}

pub fn absolute_distance_d2(sdf: &impl SignedDistance, gripper: &[TriSurface], n: usize, seed: u64) -> f64 {
    gripper_distances(sdf, gripper, n, seed).d2
}

/// D1 and D2 from one shared sample set.
pub fn gripper_distances(sdf: &impl SignedDistance, gripper: &[TriSurface], n: usize, seed: u64) -> TrialMetrics {
    let points = gripper_samples(gripper, n, seed);
    let depth = max_penetration_depth(sdf, &points);
    TrialMetrics {
        d1: depth.max(0.0),
        d2: depth.abs(),
        samples: points.len(),
    }
}
