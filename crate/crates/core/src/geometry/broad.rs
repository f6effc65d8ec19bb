//! Spatial-hash broad phase. Hash keys carry the environment id, so
//! primitives of different environments never share a bucket.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Candidate primitive pair, indices into one environment's world vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Primitive {
    PointTriangle { point: usize, tri: [usize; 3] },
    EdgeEdge { a: [usize; 2], b: [usize; 2] },
}

impl Primitive {
    /// The four vertices in stencil slot order.
    pub fn vertices(&self) -> [usize; 4] {
        match *self {
            Primitive::PointTriangle { point, tri } => [point, tri[0], tri[1], tri[2]],
            Primitive::EdgeEdge { a, b } => [a[0], a[1], b[0], b[1]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub env: usize,
    pub prim: Primitive,
}

/// Which collision primitives exist in an environment and which may touch.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CollisionTopology {
    pub points: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Owning body of each world vertex.
    pub vertex_body: Vec<usize>,
    /// Bodies allowed to collide with themselves (deformable bodies).
    pub self_collide: Vec<bool>,
    /// Kinematic bodies never collide with each other.
    pub kinematic: Vec<bool>,
}

impl CollisionTopology {
    pub fn pair_allowed(&self, a: usize, b: usize) -> bool {
        let (ba, bb) = (self.vertex_body[a], self.vertex_body[b]);
        if ba == bb {
            self.self_collide[ba]
        } else {
            !(self.kinematic[ba] && self.kinematic[bb])
        }
    }
}

/// One environment's view for the broad phase.
pub struct BroadPhaseInput<'a> {
    pub topology: &'a CollisionTopology,
    pub x: &'a [Vec3],
    /// Optional displacement; boxes then cover the swept segment `x .. x + dx`.
    pub dx: Option<&'a [Vec3]>,
}

type CellKey = (usize, i64, i64, i64);

/// Cells larger than this many per primitive go to a per-env brute-force list.
const MAX_CELLS_PER_PRIMITIVE: i64 = 4096;

struct Grid {
    cell: f64,
    buckets: HashMap<CellKey, Vec<usize>>,
    oversized: HashMap<usize, Vec<usize>>,
}

impl Grid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
            oversized: HashMap::new(),
        }
    }

    fn range(&self, lo: &Vec3, hi: &Vec3) -> ([i64; 3], [i64; 3]) {
        let f = |v: f64| (v / self.cell).floor() as i64;
        ([f(lo.x), f(lo.y), f(lo.z)], [f(hi.x), f(hi.y), f(hi.z)])
    }

    fn insert(&mut self, env: usize, id: usize, lo: &Vec3, hi: &Vec3) {
        let (a, b) = self.range(lo, hi);
        let count = (b[0] - a[0] + 1) * (b[1] - a[1] + 1) * (b[2] - a[2] + 1);
        if count > MAX_CELLS_PER_PRIMITIVE {
            self.oversized.entry(env).or_default().push(id);
            return;
        }
        for i in a[0]..=b[0] {
            for j in a[1]..=b[1] {
                for k in a[2]..=b[2] {
                    self.buckets.entry((env, i, j, k)).or_default().push(id);
                }
            }
        }
    }

    fn query(&self, env: usize, lo: &Vec3, hi: &Vec3, out: &mut Vec<usize>) {
        out.clear();
        let (a, b) = self.range(lo, hi);
        let count = (b[0] - a[0] + 1) * (b[1] - a[1] + 1) * (b[2] - a[2] + 1);
        if count > MAX_CELLS_PER_PRIMITIVE {
            // Scan the buckets of this env instead of enumerating cells.
            for (key, ids) in &self.buckets {
                if key.0 == env {
                    out.extend(ids);
                }
            }
        } else {
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    for k in a[2]..=b[2] {
                        if let Some(ids) = self.buckets.get(&(env, i, j, k)) {
                            out.extend(ids);
                        }
                    }
                }
            }
        }
        if let Some(ids) = self.oversized.get(&env) {
            out.extend(ids);
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn swept_box(ids: &[usize], x: &[Vec3], dx: Option<&[Vec3]>, r: f64) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in ids {
        lo = lo.inf(&x[i]);
        hi = hi.sup(&x[i]);
        if let Some(d) = dx {
            let e = x[i] + d[i];
            lo = lo.inf(&e);
            hi = hi.sup(&e);
        }
    }
    (lo - Vec3::repeat(r), hi + Vec3::repeat(r))
}

fn overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> bool {
    (0..3).all(|k| a.0[k] <= b.1[k] && b.0[k] <= a.1[k])
}

/// Candidate primitive pairs within `radius` (over the swept motion when
/// displacements are given), returned per environment in sorted order.
///
/// Boxes are inflated by `radius / 2` on each side so two boxes overlap
/// whenever their primitives come within `radius` of each other.
pub fn broad_phase(envs: &[BroadPhaseInput<'_>], radius: f64) -> Vec<Vec<Candidate>> {
    let half = 0.5 * radius;
    // Cell size never below the query radius; grown to the mean primitive
    // extent so large triangles do not explode into many cells.
    let mut extent_sum = 0.0;
    let mut extent_n = 0usize;
    for e in envs {
        for t in &e.topology.triangles {
            let (lo, hi) = swept_box(t, e.x, e.dx, 0.0);
            extent_sum += (hi - lo).max();
            extent_n += 1;
        }
    }
    let mean_extent = if extent_n > 0 { extent_sum / extent_n as f64 } else { 0.0 };
    let cell = radius.max(mean_extent).max(1e-9);

    let mut tri_grid = Grid::new(cell);
    let mut edge_grid = Grid::new(cell);
    let mut tri_boxes = Vec::with_capacity(envs.len());
    let mut edge_boxes = Vec::with_capacity(envs.len());
    for (env, e) in envs.iter().enumerate() {
        let tb: Vec<_> = e.topology.triangles.iter().map(|t| swept_box(t, e.x, e.dx, half)).collect();
        for (id, b) in tb.iter().enumerate() {
            tri_grid.insert(env, id, &b.0, &b.1);
        }
        let eb: Vec<_> = e.topology.edges.iter().map(|ed| swept_box(ed, e.x, e.dx, half)).collect();
        for (id, b) in eb.iter().enumerate() {
            edge_grid.insert(env, id, &b.0, &b.1);
        }
        tri_boxes.push(tb);
        edge_boxes.push(eb);
    }

    let mut out = Vec::with_capacity(envs.len());
    let mut scratch = Vec::new();
    for (env, e) in envs.iter().enumerate() {
        let topo = e.topology;
        let mut list = Vec::new();
        for &p in &topo.points {
            let pb = swept_box(&[p], e.x, e.dx, half);
            tri_grid.query(env, &pb.0, &pb.1, &mut scratch);
            for &ti in &scratch {
                let tri = topo.triangles[ti];
                if tri.contains(&p) || !topo.pair_allowed(p, tri[0]) {
                    continue;
                }
                if overlap(&pb, &tri_boxes[env][ti]) {
                    list.push(Candidate {
                        env,
                        prim: Primitive::PointTriangle { point: p, tri },
                    });
                }
            }
        }
        for (ei, ea) in topo.edges.iter().enumerate() {
            let eb_box = &edge_boxes[env][ei];
            edge_grid.query(env, &eb_box.0, &eb_box.1, &mut scratch);
            for &ej in &scratch {
                if ej <= ei {
                    continue;
                }
                let eb = topo.edges[ej];
                if ea.iter().any(|v| eb.contains(v)) || !topo.pair_allowed(ea[0], eb[0]) {
                    continue;
                }
                if overlap(eb_box, &edge_boxes[env][ej]) {
                    list.push(Candidate {
                        env,
                        prim: Primitive::EdgeEdge { a: *ea, b: eb },
                    });
                }
            }
        }
        list.sort_unstable();
        list.dedup();
        out.push(list);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::TriSurface;

    /// Two bodies (boxes) as one topology with the second offset by `gap` along x.
    pub(crate) fn two_boxes(gap: f64) -> (CollisionTopology, Vec<Vec3>) {
        let s = TriSurface::box_surface(Vec3::repeat(1.0));
        let n = s.vertices.len();
        let mut x = s.vertices.clone();
        x.extend(s.vertices.iter().map(|v| v + Vec3::new(1.0 + gap, 0.0, 0.0)));
        let mut topo = CollisionTopology {
            self_collide: vec![false, false],
            kinematic: vec![false, false],
            vertex_body: (0..2 * n).map(|i| i / n).collect(),
            ..Default::default()
        };
        for b in 0..2 {
            let off = b * n;
            topo.points.extend((0..n).map(|i| i + off));
            topo.edges.extend(s.edges().iter().map(|e| [e[0] + off, e[1] + off]));
            topo.triangles
                .extend(s.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        }
        (topo, x)
    }

    #[test]
    fn far_apart_bodies_have_no_candidates() {
        let (topo, x) = two_boxes(10.0);
        let c = broad_phase(&[BroadPhaseInput { topology: &topo, x: &x, dx: None }], 1.0);
        assert!(c[0].is_empty());
    }

    #[test]
    fn touching_bodies_produce_candidates_within_one_env_only() {
        let (topo, x) = two_boxes(1e-4);
        let inputs = [
            BroadPhaseInput { topology: &topo, x: &x, dx: None },
            BroadPhaseInput { topology: &topo, x: &x, dx: None },
        ];
        let c = broad_phase(&inputs, 1e-3);
        assert!(!c[0].is_empty());
        assert_eq!(c[0].len(), c[1].len());
        assert!(c[0].iter().all(|k| k.env == 0) && c[1].iter().all(|k| k.env == 1));
    }
}
