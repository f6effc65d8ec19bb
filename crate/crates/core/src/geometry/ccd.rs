//! Step-size filters: additive conservative advancement for contact
//! primitives and the cubic volume bound for tetrahedra.

use super::broad::Primitive;
use super::distance::{closest_on_triangle, closest_segment_params};
use super::GeometryError;
use crate::math::Vec3;

/// Fraction of the current distance that one advancement may consume.
pub const CCD_ADVANCE_SCALE: f64 = 0.9;
/// Advancement stops once the distance falls below this fraction of the start distance.
pub const CCD_GAP_FRACTION: f64 = 0.01;
const CCD_MAX_ITERS: usize = 10_000;
/// Scaling applied to the first volume root along the step.
pub const INVERSION_SCALE: f64 = 0.9;

/// Current distance of a primitive pair.
pub fn primitive_distance(prim: &Primitive, x: &[Vec3]) -> f64 {
    match *prim {
        Primitive::PointTriangle { point, tri } => {
            let (a, b, c) = (&x[tri[0]], &x[tri[1]], &x[tri[2]]);
            let (_, w) = closest_on_triangle(&x[point], a, b, c);
            (x[point] - (a * w[0] + b * w[1] + c * w[2])).norm()
        }
        Primitive::EdgeEdge { a, b } => {
            let (s, t) = closest_segment_params(&x[a[0]], &x[a[1]], &x[b[0]], &x[b[1]]);
            let pa = x[a[0]] + (x[a[1]] - x[a[0]]) * s;
            let pb = x[b[0]] + (x[b[1]] - x[b[0]]) * t;
            (pa - pb).norm()
        }
    }
}

fn local_distance(prim: &Primitive, v: &[Vec3; 4]) -> f64 {
    match prim {
        Primitive::PointTriangle { .. } => {
            let (_, w) = closest_on_triangle(&v[0], &v[1], &v[2], &v[3]);
            (v[0] - (v[1] * w[0] + v[2] * w[1] + v[3] * w[2])).norm()
        }
        Primitive::EdgeEdge { .. } => {
            let (s, t) = closest_segment_params(&v[0], &v[1], &v[2], &v[3]);
            let pa = v[0] + (v[1] - v[0]) * s;
            let pb = v[2] + (v[3] - v[2]) * t;
            (pa - pb).norm()
        }
    }
}

/// Largest `t` in `(0, 1]` such that moving the primitive by `t * p` never
/// brings its distance to zero.
pub fn primitive_toi(prim: &Primitive, x: &[Vec3], p: &[Vec3]) -> Result<f64, GeometryError> {
    let ids = prim.vertices();
    let mut v = ids.map(|i| x[i]);
    let mut dp = ids.map(|i| p[i]);
    let mean = (dp[0] + dp[1] + dp[2] + dp[3]) / 4.0;
    for d in dp.iter_mut() {
        *d -= mean;
    }
    let n = |i: usize| dp[i].norm();
    let lp = match prim {
        Primitive::PointTriangle { .. } => n(0) + n(1).max(n(2)).max(n(3)),
        Primitive::EdgeEdge { .. } => n(0).max(n(1)) + n(2).max(n(3)),
    };
    let mut d = local_distance(prim, &v);
    if !(d > 0.0) {
        return Err(GeometryError::Intersecting);
    }
    if lp == 0.0 {
        return Ok(1.0);
    }
    let gap = CCD_GAP_FRACTION * d;
    let mut t = 0.0;
    let mut tl = CCD_ADVANCE_SCALE * d / lp;
    for _ in 0..CCD_MAX_ITERS {
        for (vi, di) in v.iter_mut().zip(&dp) {
            *vi += di * tl;
        }
        d = local_distance(prim, &v);
        if t > 0.0 && d < gap {
            return Ok(t);
        }
        t += tl;
        if t >= 1.0 {
            return Ok(1.0);
        }
        tl = CCD_ADVANCE_SCALE * d / lp;
    }
    Ok(t)
}

/// Step bound along `p` over a set of primitive candidates of one environment.
pub fn ccd_max_step(candidates: &[Primitive], x: &[Vec3], p: &[Vec3]) -> Result<f64, GeometryError> {
    let mut alpha: f64 = 1.0;
    for prim in candidates {
        alpha = alpha.min(primitive_toi(prim, x, p)?);
    }
    Ok(alpha)
}

/// Coefficients `[c0, c1, c2, c3]` of `6 * volume(t)` along the step.
pub fn tet_volume_cubic(x: [&Vec3; 4], p: [&Vec3; 4]) -> [f64; 4] {
    let d = [x[1] - x[0], x[2] - x[0], x[3] - x[0]];
    let q = [p[1] - p[0], p[2] - p[0], p[3] - p[0]];
    let det = |a: &Vec3, b: &Vec3, c: &Vec3| a.cross(b).dot(c);
    [
        det(&d[0], &d[1], &d[2]),
        det(&q[0], &d[1], &d[2]) + det(&d[0], &q[1], &d[2]) + det(&d[0], &d[1], &q[2]),
        det(&d[0], &q[1], &q[2]) + det(&q[0], &d[1], &q[2]) + det(&q[0], &q[1], &d[2]),
        det(&q[0], &q[1], &q[2]),
    ]
}

fn eval_cubic(c: &[f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

/// Smallest root of the cubic in `(0, 1]`, given a positive value at zero.
pub fn first_root_in_unit(c: &[f64; 4]) -> Option<f64> {
    // Split [0, 1] at the derivative's roots so every piece is monotone.
    let (a, b, cc) = (3.0 * c[3], 2.0 * c[2], c[1]);
    let mut cuts = vec![0.0];
    let mut crit = Vec::new();
    if a.abs() > 0.0 {
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let q = -0.5 * (b + b.signum() * s);
            if q != 0.0 {
                crit.push(q / a);
                crit.push(cc / q);
            } else {
                crit.push(0.0);
            }
        }
    } else if b.abs() > 0.0 {
        crit.push(-cc / b);
    }
    crit.retain(|&r| r > 0.0 && r < 1.0);
    crit.sort_by(f64::total_cmp);
    cuts.extend(crit);
    cuts.push(1.0);
    for w in cuts.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let f_lo = eval_cubic(c, lo);
        let f_hi = eval_cubic(c, hi);
        if f_lo <= 0.0 {
            return Some(lo.max(f64::MIN_POSITIVE));
        }
        if f_hi > 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if eval_cubic(c, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(lo);
    }
    None
}

/// Largest step fraction keeping every tet volume positive along `p`.
pub fn tet_inversion_step_filter(tets: &[[usize; 4]], x: &[Vec3], p: &[Vec3]) -> Result<f64, GeometryError> {
    let mut alpha: f64 = 1.0;
    for (i, t) in tets.iter().enumerate() {
        let c = tet_volume_cubic(t.map(|v| &x[v]), t.map(|v| &p[v]));
        if !(c[0] > 0.0) {
            return Err(GeometryError::InvertedTet(i));
        }
        if let Some(root) = first_root_in_unit(&c) {
            alpha = alpha.min(INVERSION_SCALE * root);
        }
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big_triangle() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(-10.0, -10.0, 0.0),
            Vec3::new(10.0, -10.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
        ]
    }

    const PT: Primitive = Primitive::PointTriangle { point: 0, tri: [1, 2, 3] };

    #[test]
    fn zero_motion_is_full_step() {
        let x = big_triangle();
        let p = vec![Vec3::zeros(); 4];
        assert_eq!(ccd_max_step(&[PT], &x, &p).unwrap(), 1.0);
    }

    #[test]
    fn falling_point_stops_before_contact() {
        let x = big_triangle();
        let mut p = vec![Vec3::zeros(); 4];
        p[0] = Vec3::new(0.0, 0.0, -2.0);
        let a = ccd_max_step(&[PT], &x, &p).unwrap();
        assert!(a > 0.45 && a <= 0.5, "alpha = {a}");
    }

    #[test]
    fn separating_motion_is_full_step() {
        let x = big_triangle();
        let mut p = vec![Vec3::zeros(); 4];
        p[0] = Vec3::new(0.3, 0.0, 2.0);
        for v in &mut p[1..] {
            *v = Vec3::new(0.0, 0.0, -1.0);
        }
        assert_eq!(ccd_max_step(&[PT], &x, &p).unwrap(), 1.0);
    }

    #[test]
    fn intersecting_start_is_an_error() {
        let mut x = big_triangle();
        x[0].z = 0.0;
        let p = vec![Vec3::zeros(); 4];
        assert!(matches!(ccd_max_step(&[PT], &x, &p), Err(GeometryError::Intersecting)));
    }

    #[test]
    fn inversion_filter_cases() {
        let x = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let tets = [[0, 1, 2, 3]];
        let shift = vec![Vec3::new(0.3, -2.0, 5.0); 4];
        assert_eq!(tet_inversion_step_filter(&tets, &x, &shift).unwrap(), 1.0);
        assert_eq!(tet_inversion_step_filter(&tets, &x, &[Vec3::zeros(); 4]).unwrap(), 1.0);
        let mut push = vec![Vec3::zeros(); 4];
        push[3] = Vec3::new(0.1, 0.1, -3.0);
        let a = tet_inversion_step_filter(&tets, &x, &push).unwrap();
        assert!(a < 1.0);
        let moved: Vec<Vec3> = x.iter().zip(&push).map(|(v, d)| v + d * a).collect();
        let vol = crate::geometry::mesh::tet_signed_volume(&moved[0], &moved[1], &moved[2], &moved[3]);
        assert!(vol > 0.0);
    }

    #[test]
    fn inverted_start_is_an_error() {
        let x = vec![Vec3::zeros(), Vec3::y(), Vec3::x(), Vec3::z()];
        assert!(tet_inversion_step_filter(&[[0, 1, 2, 3]], &x, &[Vec3::zeros(); 4]).is_err());
    }
}
