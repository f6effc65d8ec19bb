use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::math::Vec3;

const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle surface used for collision and distance queries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TriSurface {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub rest: Vec<Vec3>,
    watertight: bool,
}

impl TriSurface {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let rest = vertices.clone();
        Self::with_rest(vertices, triangles, rest)
    }

    pub fn with_rest(
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        rest: Vec<Vec3>,
    ) -> Result<Self, GeometryError> {
        if rest.len() != vertices.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "rest has {} vertices, current has {}",
                rest.len(),
                vertices.len()
            )));
        }
        for (ti, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {ti} references a vertex out of range"
                )));
            }
            let area = triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(GeometryError::DegenerateTriangle(ti));
            }
        }
        let watertight = is_closed_oriented(&triangles);
        Ok(Self {
            vertices,
            triangles,
            rest,
            watertight,
        })
    }

    /// Area-weighted uniform samples: `(point, triangle index)`.
    pub fn sample_points(&self, n: usize, rng: &mut impl rand::Rng) -> Vec<(Vec3, usize)> {
        let areas: Vec<f64> = self
            .triangles
            .iter()
            .map(|t| triangle_area(&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]))
            .collect();
        let Ok(pick) = rand::distr::weighted::WeightedIndex::new(&areas) else {
            return Vec::new();
        };
        (0..n)
            .map(|_| {
                let ti = rng.sample(&pick);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let t = self.triangles[ti];
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                (a + (b - a) * u + (c - a) * v, ti)
            })
            .collect()
    }

    /// Every edge is shared by exactly two triangles that traverse it in opposite directions.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| {
                [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                    .into_iter()
                    .map(|(a, b)| [a.min(b), a.max(b)])
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Vertex indices referenced by at least one triangle, sorted.
    pub fn referenced_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.triangles.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (&self.vertices[a], &self.vertices[b], &self.vertices[c]);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area(&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]))
            .sum()
    }

    /// Axis-aligned bounds of referenced vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds_of(self.referenced_vertices().iter().map(|&i| &self.vertices[i]))
    }

    /// Volume enclosed by a closed, outward oriented surface.
    pub fn enclosed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (&self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]);
                a.dot(&b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Compact copy containing only referenced vertices.
    pub fn compacted(&self) -> TriSurface {
        let used = self.referenced_vertices();
        let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let triangles = self
            .triangles
            .iter()
            .map(|t| [remap[&t[0]], remap[&t[1]], remap[&t[2]]])
            .collect();
        TriSurface {
            vertices: used.iter().map(|&i| self.vertices[i]).collect(),
            rest: used.iter().map(|&i| self.rest[i]).collect(),
            triangles,
            watertight: self.watertight,
        }
    }

    pub fn transformed(&self, rot: &crate::math::Mat3, trans: &Vec3) -> TriSurface {
        TriSurface {
            vertices: self.vertices.iter().map(|v| rot * v + trans).collect(),
            rest: self.rest.clone(),
            triangles: self.triangles.clone(),
            watertight: self.watertight,
        }
    }

    /// Unit sphere subdivision surface with `level` rounds of 4-way splitting.
    pub fn icosphere(radius: f64, level: usize) -> TriSurface {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let ab = midpoint(f[0], f[1], &mut verts);
                let bc = midpoint(f[1], f[2], &mut verts);
                let ca = midpoint(f[2], f[0], &mut verts);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        let verts = verts.into_iter().map(|v| v * radius).collect();
        TriSurface::new(verts, faces).expect("icosphere is well formed")
    }

    /// Closed box surface centered at the origin.
    pub fn box_surface(size: Vec3) -> TriSurface {
        TetMesh::box_mesh(size, [1, 1, 1]).boundary.compacted()
    }
}

/// Volumetric simulation mesh.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub rest: Vec<Vec3>,
    pub rest_volumes: Vec<f64>,
    pub boundary: TriSurface,
}

pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

impl TetMesh {
    /// Builds the mesh, computing rest volumes and the outward boundary.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self, GeometryError> {
        let mut rest_volumes = Vec::with_capacity(tets.len());
        for (i, t) in tets.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(GeometryError::InvalidMesh(format!(
                    "tet {i} references a vertex out of range"
                )));
            }
            let vol = tet_signed_volume(
                &vertices[t[0]],
                &vertices[t[1]],
                &vertices[t[2]],
                &vertices[t[3]],
            );
            if !(vol > 0.0) {
                return Err(GeometryError::InvertedTet(i));
            }
            rest_volumes.push(vol);
        }
        let faces = boundary_faces(&tets);
        let boundary = TriSurface::new(vertices.clone(), faces)?;
        if !boundary.is_watertight() {
            return Err(GeometryError::InvalidMesh(
                "tet mesh boundary is not a closed manifold".into(),
            ));
        }
        Ok(Self {
            rest: vertices.clone(),
            vertices,
            tets,
            rest_volumes,
            boundary,
        })
    }

    /// Like [`TetMesh::new`] but flips negatively oriented tets first.
    pub fn new_reoriented(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self, GeometryError> {
        for t in tets.iter_mut() {
            if t.iter().any(|&v| v >= vertices.len()) {
                continue;
            }
            let vol = tet_signed_volume(
                &vertices[t[0]],
                &vertices[t[1]],
                &vertices[t[2]],
                &vertices[t[3]],
            );
            if vol < 0.0 {
                t.swap(2, 3);
            }
        }
        Self::new(vertices, tets)
    }

    pub fn total_volume(&self) -> f64 {
        self.rest_volumes.iter().sum()
    }

    /// Axis-aligned box centered at the origin, each grid cell split into six tets.
    pub fn box_mesh(size: Vec3, cells: [usize; 3]) -> TetMesh {
        let occ = vec![true; cells[0] * cells[1] * cells[2]];
        let spacing = Vec3::new(
            size.x / cells[0] as f64,
            size.y / cells[1] as f64,
            size.z / cells[2] as f64,
        );
        Self::from_voxels(&occ, cells, spacing, -size * 0.5).expect("box grid is valid")
    }

    /// Tetrahedralizes occupied voxels of a grid (x fastest). The occupancy must
    /// form a manifold solid (no voxels touching along only an edge or corner).
    pub fn from_voxels(
        occupied: &[bool],
        dims: [usize; 3],
        spacing: Vec3,
        origin: Vec3,
    ) -> Result<TetMesh, GeometryError> {
        // Freudenthal split: the six monotone lattice paths from corner 000 to 111.
        const PATHS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut index: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        let mut vertices = Vec::new();
        let mut tets = Vec::new();
        let mut vid = |c: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
            *index.entry(c).or_insert_with(|| {
                vertices.push(
                    origin
                        + Vec3::new(
                            c[0] as f64 * spacing.x,
                            c[1] as f64 * spacing.y,
                            c[2] as f64 * spacing.z,
                        ),
                );
                vertices.len() - 1
            })
        };
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    if !occupied[i + dims[0] * (j + dims[1] * k)] {
                        continue;
                    }
                    for path in PATHS {
                        let mut c = [i, j, k];
                        let mut t = [0usize; 4];
                        t[0] = vid(c, &mut vertices);
                        for (s, &axis) in path.iter().enumerate() {
                            c[axis] += 1;
                            t[s + 1] = vid(c, &mut vertices);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        Self::new_reoriented(vertices, tets)
    }

    /// Solid ball: icosphere surface fanned to a center vertex.
    pub fn ball(radius: f64, level: usize) -> TetMesh {
        let surf = TriSurface::icosphere(radius, level);
        let mut vertices = surf.vertices.clone();
        let center = vertices.len();
        vertices.push(Vec3::zeros());
        let tets = surf
            .triangles
            .iter()
            .map(|t| [center, t[0], t[1], t[2]])
            .collect();
        Self::new_reoriented(vertices, tets).expect("ball fan is valid")
    }

    /// Open-top square cup with a loop handle, built from `cell`-sized voxels.
    pub fn mug(cell: f64) -> TetMesh {
        let dims = [6usize, 4, 4];
        let mut occ = vec![false; dims[0] * dims[1] * dims[2]];
        let at = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    let wall = i == 0 || i == 3 || j == 0 || j == 3;
                    if k == 0 || wall {
                        occ[at(i, j, k)] = true;
                    }
                }
            }
        }
        for j in 1..3 {
            for (i, k) in [(4, 1), (5, 1), (5, 2), (5, 3), (4, 3)] {
                occ[at(i, j, k)] = true;
            }
        }
        let origin = -Vec3::new(2.0 * cell, 2.0 * cell, 2.0 * cell);
        Self::from_voxels(&occ, dims, Vec3::repeat(cell), origin).expect("mug voxels are manifold")
    }

    pub fn translated(mut self, offset: Vec3) -> TetMesh {
        for v in self.vertices.iter_mut().chain(self.rest.iter_mut()) {
            *v += offset;
        }
        for v in self
            .boundary
            .vertices
            .iter_mut()
            .chain(self.boundary.rest.iter_mut())
        {
            *v += offset;
        }
        self
    }

    /// Uniform scaling of the rest shape.
    pub fn scaled(self, s: f64) -> TetMesh {
        let verts = self.vertices.iter().map(|v| v * s).collect();
        TetMesh::new(verts, self.tets).expect("scaling keeps orientation")
    }
}

fn boundary_faces(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    let mut count: BTreeMap<[usize; 3], ([usize; 3], usize)> = BTreeMap::new();
    for t in tets {
        let [a, b, c, d] = *t;
        for f in [[a, c, b], [a, b, d], [a, d, c], [b, c, d]] {
            let mut key = f;
            key.sort_unstable();
            count.entry(key).or_insert((f, 0)).1 += 1;
        }
    }
    count
        .into_values()
        .filter(|(_, n)| *n == 1)
        .map(|(f, _)| f)
        .collect()
}

fn is_closed_oriented(triangles: &[[usize; 3]]) -> bool {
    if triangles.is_empty() {
        return false;
    }
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *directed.entry((a, b)).or_default() += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub fn bounds_of<'a>(points: impl Iterator<Item = &'a Vec3>) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mesh_is_closed_and_has_exact_volume() {
        let m = TetMesh::box_mesh(Vec3::new(0.1, 0.2, 0.3), [2, 3, 2]);
        assert_eq!(m.tets.len(), 6 * 12);
        assert!((m.total_volume() - 0.006).abs() < 1e-15);
        assert!(m.boundary.is_watertight());
        assert!((m.boundary.enclosed_volume() - 0.006).abs() < 1e-15);
        assert!((m.boundary.area() - 2.0 * (0.02 + 0.03 + 0.06)).abs() < 1e-14);
    }

    #[test]
    fn ball_and_mug_are_valid_solids() {
        let b = TetMesh::ball(1.0, 1);
        assert!(b.boundary.is_watertight());
        assert!(b.boundary.enclosed_volume() > 0.0);
        let m = TetMesh::mug(0.02);
        assert!(m.boundary.is_watertight());
        assert!((m.boundary.enclosed_volume() - m.total_volume()).abs() < 1e-15);
    }

    #[test]
    fn open_surface_is_not_watertight() {
        let s = TriSurface::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(!s.is_watertight());
        let closed = TriSurface::icosphere(1.0, 2);
        assert!(closed.is_watertight());
        assert_eq!(closed.edges().len(), 3 * closed.triangles.len() / 2);
    }

    #[test]
    fn inconsistent_orientation_is_not_watertight() {
        let mut s = TriSurface::icosphere(1.0, 0);
        s.triangles[0].swap(1, 2);
        let s = TriSurface::new(s.vertices, s.triangles).unwrap();
        assert!(!s.is_watertight());
    }

    #[test]
    fn degenerate_and_out_of_range_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            TriSurface::new(v.clone(), vec![[0, 1, 2]]),
            Err(GeometryError::DegenerateTriangle(0))
        ));
        assert!(TriSurface::new(v, vec![[0, 1, 7]]).is_err());
    }

    #[test]
    fn inverted_tet_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(TetMesh::new(v.clone(), vec![[0, 1, 2, 3]]).is_ok());
        assert!(matches!(
            TetMesh::new(v, vec![[0, 2, 1, 3]]),
            Err(GeometryError::InvertedTet(0))
        ));
    }
}
