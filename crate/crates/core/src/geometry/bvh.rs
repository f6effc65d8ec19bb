//! Bounding volume hierarchy over triangles for closest-point queries.

use super::distance::{closest_on_triangle, TriangleRegion};
use super::mesh::TriSurface;
use crate::math::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Children for inner nodes, or `start..end` into `order` for leaves.
    kind: NodeKind,
}

#[derive(Clone, Debug)]
enum NodeKind {
    Inner(usize, usize),
    Leaf(usize, usize),
}

#[derive(Clone, Debug)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestHit {
    pub triangle: usize,
    pub dist_sq: f64,
    pub region: TriangleRegion,
    pub point: Vec3,
}

impl TriangleBvh {
    pub fn build(surface: &TriSurface) -> Self {
        let centroids: Vec<Vec3> = surface
            .triangles
            .iter()
            .map(|t| (surface.vertices[t[0]] + surface.vertices[t[1]] + surface.vertices[t[2]]) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..surface.triangles.len()).collect();
        let mut nodes = Vec::new();
        build_rec(surface, &centroids, &mut order, 0, surface.triangles.len(), &mut nodes);
        Self { nodes, order }
    }

    pub fn closest(&self, surface: &TriSurface, p: &Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut best_d = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if box_dist_sq(p, &node.lo, &node.hi) >= best_d {
                continue;
            }
            match node.kind {
                NodeKind::Leaf(s, e) => {
                    for &t in &self.order[s..e] {
                        let [a, b, c] = surface.triangles[t];
                        let (a, b, c) = (&surface.vertices[a], &surface.vertices[b], &surface.vertices[c]);
                        let (region, w) = closest_on_triangle(p, a, b, c);
                        let q = a * w[0] + b * w[1] + c * w[2];
                        let d = (p - q).norm_squared();
                        if d < best_d {
                            best_d = d;
                            best = Some(ClosestHit {
                                triangle: t,
                                dist_sq: d,
                                region,
                                point: q,
                            });
                        }
                    }
                }
                NodeKind::Inner(l, r) => {
                    let dl = box_dist_sq(p, &self.nodes[l].lo, &self.nodes[l].hi);
                    let dr = box_dist_sq(p, &self.nodes[r].lo, &self.nodes[r].hi);
                    // Visit the nearer child first.
                    if dl < dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
            }
        }
        best
    }
}

fn build_rec(
    surface: &TriSurface,
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &t in &order[start..end] {
        for &v in &surface.triangles[t] {
            lo = lo.inf(&surface.vertices[v]);
            hi = hi.sup(&surface.vertices[v]);
        }
    }
    let id = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Leaf(start, end),
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
    let l = build_rec(surface, centroids, order, start, mid, nodes);
    let r = build_rec(surface, centroids, order, mid, end, nodes);
    nodes[id].kind = NodeKind::Inner(l, r);
    id
}

fn box_dist_sq(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for i in 0..3 {
        let v = if p[i] < lo[i] {
            lo[i] - p[i]
        } else if p[i] > hi[i] {
            p[i] - hi[i]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let s = TriSurface::icosphere(1.0, 2);
        let bvh = TriangleBvh::build(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let p = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let hit = bvh.closest(&s, &p).unwrap();
            let brute = s
                .triangles
                .iter()
                .map(|t| {
                    let (_, w) = closest_on_triangle(&p, &s.vertices[t[0]], &s.vertices[t[1]], &s.vertices[t[2]]);
                    let q = s.vertices[t[0]] * w[0] + s.vertices[t[1]] * w[1] + s.vertices[t[2]] * w[2];
                    (p - q).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((hit.dist_sq - brute).abs() < 1e-14);
        }
    }
}
