//! Grid signed distance fields (negative inside, positive outside).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bvh::TriangleBvh;
use super::distance::TriangleRegion;
use super::mesh::TriSurface;
use super::GeometryError;
use crate::math::Vec3;

pub const DEFAULT_SDF_RESOLUTION: usize = 128;
const SDF_MAGIC: &[u8; 8] = b"GRIPSDF1";

/// Sampled signed distance field with trilinear interpolation.
///
/// Samples are stored row-major over `(x, y, z)` with `z` varying fastest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sdf {
    /// Sample counts per axis.
    pub resolution: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

/// Face, edge and angle-weighted vertex pseudonormals of a closed surface.
struct Pseudonormals {
    face: Vec<Vec3>,
    edge: HashMap<(usize, usize), Vec3>,
    vertex: Vec<Vec3>,
}

impl Pseudonormals {
    fn new(s: &TriSurface) -> Self {
        let mut face = Vec::with_capacity(s.triangles.len());
        let mut edge: HashMap<(usize, usize), Vec3> = HashMap::new();
        let mut vertex = vec![Vec3::zeros(); s.vertices.len()];
        for t in &s.triangles {
            let p = [s.vertices[t[0]], s.vertices[t[1]], s.vertices[t[2]]];
            let n = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
            face.push(n);
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *edge.entry((a.min(b), a.max(b))).or_insert_with(Vec3::zeros) += n;
                let e1 = (p[(i + 1) % 3] - p[i]).normalize();
                let e2 = (p[(i + 2) % 3] - p[i]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex[t[i]] += n * angle;
            }
        }
        Self { face, edge, vertex }
    }

    fn at(&self, s: &TriSurface, tri: usize, region: TriangleRegion) -> Vec3 {
        let t = s.triangles[tri];
        match region {
            TriangleRegion::Face => self.face[tri],
            TriangleRegion::Edge(i) => {
                let (a, b) = (t[i as usize], t[(i as usize + 1) % 3]);
                self.edge[&(a.min(b), a.max(b))]
            }
            TriangleRegion::Vertex(i) => self.vertex[t[i as usize]],
        }
    }
}

/// Exact signed distance to a watertight surface, used to fill grids.
pub struct ExactSignedDistance<'a> {
    surface: &'a TriSurface,
    bvh: TriangleBvh,
    normals: Pseudonormals,
}

impl<'a> ExactSignedDistance<'a> {
    pub fn new(surface: &'a TriSurface) -> Result<Self, GeometryError> {
        if !surface.is_watertight() {
            return Err(GeometryError::NotWatertight);
        }
        Ok(Self {
            surface,
            bvh: TriangleBvh::build(surface),
            normals: Pseudonormals::new(surface),
        })
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        let hit = self.bvh.closest(self.surface, p).expect("surface is non-empty");
        let d = hit.dist_sq.sqrt();
        let n = self.normals.at(self.surface, hit.triangle, hit.region);
        if (p - hit.point).dot(&n) < 0.0 {
            -d
        } else {
            d
        }
    }
}

/// Samples the signed distance of a watertight surface on a padded grid with
/// `resolution` cells along the longest axis.
pub fn build_sdf(surface: &TriSurface, resolution: usize) -> Result<Sdf, GeometryError> {
    if resolution < 2 {
        return Err(GeometryError::InvalidMesh("sdf resolution must be at least 2".into()));
    }
    let exact = ExactSignedDistance::new(surface)?;
    let (lo, hi) = surface.bounds();
    let ext = hi - lo;
    let longest = ext.max();
    let pad = 0.1 * longest;
    let spacing = (longest + 2.0 * pad) / resolution as f64;
    let origin = lo - Vec3::repeat(pad);
    let counts = [0, 1, 2].map(|a| ((ext[a] + 2.0 * pad) / spacing).ceil() as usize + 1);
    let (ny, nz) = (counts[1], counts[2]);
    let values: Vec<f64> = (0..counts[0] * ny * nz)
        .into_par_iter()
        .map(|idx| {
            let k = idx % nz;
            let j = (idx / nz) % ny;
            let i = idx / (ny * nz);
            let p = origin + Vec3::new(i as f64, j as f64, k as f64) * spacing;
            exact.eval(&p)
        })
        .collect();
    Ok(Sdf {
        resolution: counts,
        origin,
        spacing,
        values,
    })
}

impl Sdf {
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.resolution[1] + j) * self.resolution[2] + k]
    }

    pub fn upper_corner(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                (self.resolution[0] - 1) as f64,
                (self.resolution[1] - 1) as f64,
                (self.resolution[2] - 1) as f64,
            ) * self.spacing
    }

    /// Trilinear interpolation. Points outside the grid get the value at the
    /// nearest grid point plus their distance to the grid box.
    pub fn query(&self, p: &Vec3) -> f64 {
        let hi = self.upper_corner();
        let clamped = p.sup(&self.origin).inf(&hi);
        let outside = (p - clamped).norm();
        let g = (clamped - self.origin) / self.spacing;
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let max_cell = self.resolution[a] - 2;
            let c = (g[a].floor().max(0.0) as usize).min(max_cell);
            idx[a] = c;
            frac[a] = (g[a] - c as f64).clamp(0.0, 1.0);
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.at(i, j, k), self.at(i + 1, j, k), fx);
        let c10 = lerp(self.at(i, j + 1, k), self.at(i + 1, j + 1, k), fx);
        let c01 = lerp(self.at(i, j, k + 1), self.at(i + 1, j, k + 1), fx);
        let c11 = lerp(self.at(i, j + 1, k + 1), self.at(i + 1, j + 1, k + 1), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        lerp(c0, c1, fz) + outside
    }

    /// Central-difference gradient of the interpolated field.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = 0.5 * self.spacing;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            g[a] = (self.query(&(p + e)) - self.query(&(p - e))) / (2.0 * h);
        }
        g
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(SDF_MAGIC)?;
        for r in self.resolution {
            w.write_all(&(r as f64).to_le_bytes())?;
        }
        for c in self.origin.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&self.spacing.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Sdf, GeometryError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SDF_MAGIC {
            return Err(GeometryError::Format("bad sdf magic".into()));
        }
        let mut next = || -> Result<f64, GeometryError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut resolution = [0usize; 3];
        for v in resolution.iter_mut() {
            let x = next()?;
            if !(x >= 2.0 && x.fract() == 0.0 && x < 1e5) {
                return Err(GeometryError::Format(format!("bad sdf resolution {x}")));
            }
            *v = x as usize;
        }
        let origin = Vec3::new(next()?, next()?, next()?);
        let spacing = next()?;
        let n = resolution.iter().product::<usize>();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(next()?);
        }
        Ok(Sdf {
            resolution,
            origin,
            spacing,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Sdf, GeometryError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::TetMesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> TriSurface {
        TriSurface::box_surface(Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn cube_center_and_surface() {
        let sdf = build_sdf(&unit_cube(), 32).unwrap();
        assert!((sdf.query(&Vec3::zeros()) + 0.5).abs() <= sdf.spacing);
        for p in [Vec3::new(0.5, 0.1, -0.2), Vec3::new(-0.3, -0.5, 0.4), Vec3::new(0.5, 0.5, 0.5)] {
            assert!(sdf.query(&p).abs() <= sdf.spacing);
        }
    }

    #[test]
    fn sphere_distance_far_point() {
        let s = TriSurface::icosphere(1.0, 4);
        let sdf = build_sdf(&s, 32).unwrap();
        // (0,0,2) lies outside the padded grid; the clamped extension still
        // reports the Euclidean distance.
        assert!((sdf.query(&Vec3::new(0.0, 0.0, 2.0)) - 1.0).abs() <= 2.0 * sdf.spacing);
        assert!((sdf.query(&Vec3::new(0.0, 0.0, 1.1)) - 0.1).abs() <= 2.0 * sdf.spacing);
    }

    #[test]
    fn open_surface_rejected() {
        let s = TriSurface::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(build_sdf(&s, 8), Err(GeometryError::NotWatertight)));
    }

    #[test]
    fn binary_cache_roundtrip() {
        let sdf = build_sdf(&TetMesh::mug(0.02).boundary, 12).unwrap();
        let mut buf = Vec::new();
        sdf.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"GRIPSDF1");
        assert_eq!(buf.len(), 8 + 7 * 8 + sdf.values.len() * 8);
        let back = Sdf::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.resolution, sdf.resolution);
        assert_eq!(back.origin, sdf.origin);
        assert!(back.values.iter().zip(&sdf.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn exact_distance_sign_matches_inside_test_for_mug() {
        let mesh = TetMesh::mug(0.02);
        let exact = ExactSignedDistance::new(&mesh.boundary).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.random_range(-0.05..0.08),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            // Voxel membership is the ground truth for the mug solid.
            let cell = ((p + Vec3::repeat(0.04)) / 0.02).map(|c| c.floor());
            let inside_voxel = mesh.tets.iter().any(|t| {
                let v = [t[0], t[1], t[2], t[3]].map(|i| mesh.rest[i]);
                point_in_tet(&p, &v)
            });
            let d = exact.eval(&p);
            if d.abs() > 1e-9 {
                assert_eq!(d < 0.0, inside_voxel, "p={p:?} cell={cell:?} d={d}");
            }
        }
    }

    fn point_in_tet(p: &Vec3, v: &[Vec3; 4]) -> bool {
        use crate::geometry::mesh::tet_signed_volume as vol;
        let total = vol(&v[0], &v[1], &v[2], &v[3]);
        let parts = [
            vol(p, &v[1], &v[2], &v[3]),
            vol(&v[0], p, &v[2], &v[3]),
            vol(&v[0], &v[1], p, &v[3]),
            vol(&v[0], &v[1], &v[2], p),
        ];
        parts.iter().all(|&x| x >= 0.0) && (parts.iter().sum::<f64>() - total).abs() < 1e-15
    }
}
