//! Exact primitive distances and their squared-distance kernels.
//!
//! The region-classifying queries ([`point_triangle_distance`],
//! [`edge_edge_distance`]) decide which closed-form squared distance is
//! active; the generic `*_sq` kernels are then differentiated with
//! [`crate::math::Dual2`] by the contact module.

use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::math::{Real, Vec3, V3};

const MIN_SEGMENT_LENGTH: f64 = 1e-12;
const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Relative threshold of the parallel-edge mollifier.
pub const MOLLIFIER_SCALE: f64 = 1e-3;

/// Voronoi region of a triangle realizing the closest point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriangleRegion {
    Face,
    /// Edge `i` runs from vertex `i` to vertex `(i + 1) % 3`.
    Edge(u8),
    Vertex(u8),
}

#[derive(Clone, Copy, Debug)]
pub struct PointTriangleResult {
    pub distance: f64,
    pub region: TriangleRegion,
    /// Barycentric coordinates of the closest point.
    pub bary: [f64; 3],
}

/// Where the closest pair of points of two segments lies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeEdgeRegion {
    /// Both closest points are interior to their segments.
    Interior,
    /// Endpoint `end` (0 or 1) of edge `edge` (0 = first, 1 = second) against the other edge's interior.
    PointEdge { edge: u8, end: u8 },
    /// Endpoint `end_a` of the first edge against endpoint `end_b` of the second.
    PointPoint { end_a: u8, end_b: u8 },
}

#[derive(Clone, Copy, Debug)]
pub struct EdgeEdgeResult {
    pub distance: f64,
    pub region: EdgeEdgeRegion,
    /// Parameters of the closest points along each segment.
    pub s: f64,
    pub t: f64,
    pub mollifier_weight: f64,
}

pub fn point_triangle_distance(p: &Vec3, tri: [&Vec3; 3]) -> Result<PointTriangleResult, GeometryError> {
    let [a, b, c] = tri;
    if 0.5 * (b - a).cross(&(c - a)).norm() <= MIN_TRIANGLE_AREA {
        return Err(GeometryError::DegenerateTriangle(0));
    }
    let (region, bary) = closest_on_triangle(p, a, b, c);
    let q = a * bary[0] + b * bary[1] + c * bary[2];
    Ok(PointTriangleResult {
        distance: (p - q).norm(),
        region,
        bary,
    })
}

/// Closest-point classification on a triangle (Voronoi region walk).
///
/// Points off the plane whose projection lands in the closed triangle are
/// classified `Face`; points lying on the triangle report the lowest
/// dimensional feature containing them.
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (TriangleRegion, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let n = ab.cross(&ac);
    let nn = n.norm_squared();
    let wb = ap.cross(&ac).dot(&n) / nn;
    let wc = ab.cross(&ap).dot(&n) / nn;
    let wa = 1.0 - wb - wc;
    if wa >= 0.0 && wb >= 0.0 && wc >= 0.0 {
        let bary = [wa, wb, wc];
        if ap.dot(&n) != 0.0 {
            return (TriangleRegion::Face, bary);
        }
        let zeros: Vec<usize> = (0..3).filter(|&i| bary[i] == 0.0).collect();
        return match zeros.as_slice() {
            [] => (TriangleRegion::Face, bary),
            [i] => (TriangleRegion::Edge(((i + 1) % 3) as u8), bary),
            _ => {
                let v = (0..3).find(|i| !zeros.contains(i)).unwrap_or(0);
                let mut b = [0.0; 3];
                b[v] = 1.0;
                (TriangleRegion::Vertex(v as u8), b)
            }
        };
    }
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (TriangleRegion::Vertex(0), [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (TriangleRegion::Vertex(1), [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (TriangleRegion::Edge(0), [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (TriangleRegion::Vertex(2), [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (TriangleRegion::Edge(2), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (TriangleRegion::Edge(1), [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (TriangleRegion::Face, [1.0 - v - w, v, w])
}

/// Closest points of two segments; returns `(s, t)` along each.
pub(crate) fn closest_segment_params(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (f64, f64) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

fn end_of(u: f64) -> Option<u8> {
    if u <= 0.0 {
        Some(0)
    } else if u >= 1.0 {
        Some(1)
    } else {
        None
    }
}

/// Mollifier weight in `[0, 1]` from the squared cross-product norm and its threshold.
pub fn mollifier(cross_sq: f64, eps_x: f64) -> f64 {
    if cross_sq < eps_x {
        let r = cross_sq / eps_x;
        -r * r + 2.0 * r
    } else {
        1.0
    }
}

pub fn mollifier_threshold(rest_a: (&Vec3, &Vec3), rest_b: (&Vec3, &Vec3)) -> f64 {
    MOLLIFIER_SCALE * (rest_a.1 - rest_a.0).norm_squared() * (rest_b.1 - rest_b.0).norm_squared()
}

/// Segment-segment distance with the parallel-edge mollifier evaluated
/// against the given edges' own lengths.
pub fn edge_edge_distance(e1: [&Vec3; 2], e2: [&Vec3; 2]) -> Result<EdgeEdgeResult, GeometryError> {
    if (e1[1] - e1[0]).norm() <= MIN_SEGMENT_LENGTH || (e2[1] - e2[0]).norm() <= MIN_SEGMENT_LENGTH {
        return Err(GeometryError::DegenerateSegment);
    }
    let (s, t) = closest_segment_params(e1[0], e1[1], e2[0], e2[1]);
    let pa = e1[0] + (e1[1] - e1[0]) * s;
    let pb = e2[0] + (e2[1] - e2[0]) * t;
    let region = match (end_of(s), end_of(t)) {
        (None, None) => EdgeEdgeRegion::Interior,
        (Some(end), None) => EdgeEdgeRegion::PointEdge { edge: 0, end },
        (None, Some(end)) => EdgeEdgeRegion::PointEdge { edge: 1, end },
        (Some(end_a), Some(end_b)) => EdgeEdgeRegion::PointPoint { end_a, end_b },
    };
    let cross_sq = (e1[1] - e1[0]).cross(&(e2[1] - e2[0])).norm_squared();
    let eps_x = mollifier_threshold((e1[0], e1[1]), (e2[0], e2[1]));
    Ok(EdgeEdgeResult {
        distance: (pa - pb).norm(),
        region,
        s,
        t,
        mollifier_weight: mollifier(cross_sq, eps_x),
    })
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

// Squared-distance kernels, generic over plain and dual scalars.

pub fn point_point_sq<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
    a.sub(b).norm_sq()
}

/// Squared distance from `p` to the infinite line through `e0`, `e1`.
pub fn point_line_sq<T: Real>(p: &V3<T>, e0: &V3<T>, e1: &V3<T>) -> T {
    let c = e0.sub(p).cross(&e1.sub(p));
    c.norm_sq() / e1.sub(e0).norm_sq()
}

/// Squared distance from `p` to the plane of triangle `t0 t1 t2`.
pub fn point_plane_sq<T: Real>(p: &V3<T>, t0: &V3<T>, t1: &V3<T>, t2: &V3<T>) -> T {
    let n = t1.sub(t0).cross(&t2.sub(t0));
    let h = p.sub(t0).dot(&n);
    h * h / n.norm_sq()
}

/// Squared distance between the infinite lines through two edges.
pub fn line_line_sq<T: Real>(a0: &V3<T>, a1: &V3<T>, b0: &V3<T>, b1: &V3<T>) -> T {
    let n = a1.sub(a0).cross(&b1.sub(b0));
    let h = a0.sub(b0).dot(&n);
    h * h / n.norm_sq()
}

pub fn edge_cross_sq<T: Real>(a0: &V3<T>, a1: &V3<T>, b0: &V3<T>, b1: &V3<T>) -> T {
    a1.sub(a0).cross(&b1.sub(b0)).norm_sq()
}

/// Mollifier as a differentiable function of the squared cross norm.
pub fn mollifier_generic<T: Real>(cross_sq: T, eps_x: f64) -> T {
    if cross_sq.value() < eps_x {
        let r = cross_sq / T::constant(eps_x);
        -(r * r) + r * T::constant(2.0)
    } else {
        T::constant(1.0)
    }
}
