//! Grasp candidates: antipodal sampling for parallel grippers, normal
//! alignment scoring, penetration repair, a force-closure proxy, and bimanual
//! composition by k-means over contact centers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Sdf, TriSurface};
use crate::math::{matrix_to_quat, quat_to_matrix, tangent_basis, Mat3, Vec3};
use crate::solver::Pose;

/// Allowed deviation of a unit vector's length.
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Approach directions tried per antipodal pair.
pub const APPROACH_TRIES: usize = 30;
/// Damped least-squares iterations in [`repair_penetration`].
pub const REPAIR_ITERS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("contact {0} has a non-unit normal")]
    NonUnitNormal(usize),
    #[error("force closure needs at least two contacts, got {0}")]
    TooFewContacts(usize),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("no candidates for one hand")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sampled,
    Ingested,
    Composed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    /// World position (m).
    #[serde(rename = "p")]
    pub position: Vec3,
    /// Contact normal of the hand link, in the hand frame.
    pub n_h: Vec3,
    /// Outward object normal, world frame.
    pub n_o: Vec3,
    pub link: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspCandidate {
    pub gripper_id: String,
    pub pose: Pose,
    /// Parallel grippers: one entry, the opening width (m).
    pub joints: Vec<f64>,
    pub contacts: Vec<Contact>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct WirePose {
    /// `w, x, y, z`.
    quaternion: [f64; 4],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct WireCandidate {
    gripper_id: String,
    pose: WirePose,
    joints: Vec<f64>,
    contacts: Vec<Contact>,
    provenance: Provenance,
}

impl Serialize for GraspCandidate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireCandidate {
            gripper_id: self.gripper_id.clone(),
            pose: WirePose {
                quaternion: matrix_to_quat(&self.pose.rotation),
                translation: self.pose.translation.into(),
            },
            joints: self.joints.clone(),
            contacts: self.contacts.clone(),
            provenance: self.provenance,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GraspCandidate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireCandidate::deserialize(d)?;
        let q = w.pose.quaternion;
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(serde::de::Error::custom("pose quaternion has zero length"));
        }
        Ok(GraspCandidate {
            gripper_id: w.gripper_id,
            pose: Pose {
                rotation: quat_to_matrix(q.map(|v| v / n)),
                translation: w.pose.translation.into(),
            },
            joints: w.joints,
            contacts: w.contacts,
            provenance: w.provenance,
        })
    }
}

impl GraspCandidate {
    /// Mean contact position, the grouping key for composition.
    pub fn contact_center(&self) -> Vec3 {
        let sum = self.contacts.iter().fold(Vec3::zeros(), |a, c| a + c.position);
        sum / self.contacts.len().max(1) as f64
    }

    pub fn opening(&self) -> f64 {
        self.joints.first().copied().unwrap_or(0.0)
    }

    /// `|R^T R - I|_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.pose.rotation.transpose() * self.pose.rotation - Mat3::identity()).norm()
    }
}

/// Two-finger parallel gripper. In the hand frame the fingers close along x,
/// the palm spans `z` in `[-palm_thickness, 0]` and the fingers `z` in
/// `[0, finger_length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelGripper {
    pub id: String,
    pub max_opening: f64,
    pub finger_thickness: f64,
    pub finger_width: f64,
    pub finger_length: f64,
    pub palm_thickness: f64,
    /// Distance of the contact line from the fingertips.
    pub tip_inset: f64,
}

impl Default for ParallelGripper {
    fn default() -> Self {
        Self {
            id: "umi".into(),
            max_opening: 0.08,
            finger_thickness: 0.01,
            finger_width: 0.02,
            finger_length: 0.05,
            palm_thickness: 0.01,
            tip_inset: 0.012,
        }
    }
}

/// A gripper link as a box in the hand frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBox {
    pub center: Vec3,
    pub size: Vec3,
}

impl ParallelGripper {
    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = [
            self.max_opening,
            self.finger_thickness,
            self.finger_width,
            self.finger_length,
            self.palm_thickness,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(SynthError::Invalid("gripper dimensions must be positive".into()));
        }
        if !(self.tip_inset >= 0.0 && self.tip_inset < self.finger_length) {
            return Err(SynthError::Invalid("tip_inset must lie within the finger".into()));
        }
        Ok(())
    }

    /// Hand-frame boxes of the left finger, right finger and palm at `opening`.
    pub fn links(&self, opening: f64) -> [LinkBox; 3] {
        let t = self.finger_thickness;
        let finger = Vec3::new(t, self.finger_width, self.finger_length);
        let zc = 0.5 * self.finger_length;
        let half = 0.5 * opening + 0.5 * t;
        let palm_w = self.max_opening + 2.0 * t;
        [
            LinkBox {
                center: Vec3::new(-half, 0.0, zc),
                size: finger,
            },
            LinkBox {
                center: Vec3::new(half, 0.0, zc),
                size: finger,
            },
            LinkBox {
                center: Vec3::new(0.0, 0.0, -0.5 * self.palm_thickness),
                size: Vec3::new(palm_w, self.finger_width, self.palm_thickness),
            },
        ]
    }

    /// World surfaces of the three links.
    pub fn link_surfaces(&self, pose: &Pose, opening: f64) -> [TriSurface; 3] {
        self.links(opening).map(|l| {
            TriSurface::box_surface(l.size).transformed(&pose.rotation, &pose.apply(&l.center))
        })
    }

    /// Hand-frame contact line height.
    pub fn contact_height(&self) -> f64 {
        self.finger_length - self.tip_inset
    }

    /// Deterministic surface samples of each link, world frame.
    pub fn link_samples(&self, pose: &Pose, opening: f64, per_link: usize) -> [Vec<Vec3>; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        self.link_surfaces(pose, opening)
            .map(|s| s.sample_points(per_link, &mut rng).into_iter().map(|(p, _)| p).collect())
    }
}

/// `sum_i ((R n_h_i) . n_o_i + 1)^2`.
pub fn normal_alignment_energy(c: &GraspCandidate) -> Result<f64, SynthError> {
    let mut e = 0.0;
    for (i, k) in c.contacts.iter().enumerate() {
        if (k.n_h.norm() - 1.0).abs() > UNIT_TOLERANCE || (k.n_o.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(SynthError::NonUnitNormal(i));
        }
        let d = (c.pose.rotation * k.n_h).dot(&k.n_o) + 1.0;
        e += d * d;
    }
    Ok(e)
}

/// `|G n|` for the 6 x 3n grasp map about the contact centroid and the stacked normals.
pub fn force_closure_metric(points: &[Vec3], normals: &[Vec3]) -> Result<f64, SynthError> {
    if points.len() < 2 || points.len() != normals.len() {
        return Err(SynthError::TooFewContacts(points.len().min(normals.len())));
    }
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut force = Vec3::zeros();
    let mut torque = Vec3::zeros();
    for (p, n) in points.iter().zip(normals) {
        force += n;
        torque += (p - centroid).cross(n);
    }
    Ok((force.norm_squared() + torque.norm_squared()).sqrt())
}

fn contact_inward(c: &[Contact]) -> (Vec<Vec3>, Vec<Vec3>) {
    (c.iter().map(|k| k.position).collect(), c.iter().map(|k| -k.n_o).collect())
}

/// Force-closure metric of a candidate's contacts with inward normals.
pub fn candidate_force_closure(contacts: &[Contact]) -> Result<f64, SynthError> {
    let (p, n) = contact_inward(contacts);
    force_closure_metric(&p, &n)
}

fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let h = d.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 {
        return None;
    }
    let s = o - a;
    let u = s.dot(&h) / det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) / det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) / det;
    (t > 0.0).then_some(t)
}

/// Nearest surface crossing along a ray: `(t, triangle)`.
fn cast(surface: &TriSurface, o: &Vec3, d: &Vec3, skip: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (ti, t) in surface.triangles.iter().enumerate() {
        if ti == skip {
            continue;
        }
        let v = &surface.vertices;
        if let Some(h) = ray_triangle(o, d, &v[t[0]], &v[t[1]], &v[t[2]]) {
            if best.is_none_or(|(bt, _)| h < bt) {
                best = Some((h, ti));
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    /// Friction coefficient defining the cone half-angle `atan(mu)`.
    pub friction: f64,
    /// Required clearance between the open gripper and the object (m).
    pub clearance: f64,
    /// Surface points tried per requested candidate.
    pub attempts_per_candidate: usize,
    /// Gripper surface samples per link for the clearance check.
    pub samples_per_link: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            friction: 0.5,
            clearance: 1e-3,
            attempts_per_candidate: 50,
            samples_per_link: 200,
        }
    }
}

/// Counts kept so dataset yield can be audited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub attempts: usize,
    pub no_opposite_point: usize,
    pub outside_cone: usize,
    pub too_wide: usize,
    pub penetrating: usize,
    pub accepted: usize,
}

fn min_sdf(sdf: &Sdf, points: &[Vec3]) -> f64 {
    points.iter().map(|p| sdf.query(p)).fold(f64::INFINITY, f64::min)
}

/// Antipodal grasps on a watertight surface: up to `n` candidates with
/// anti-aligned normals inside the friction cone, a separation the gripper can
/// span, and a penetration-free open gripper.
pub fn sample_antipodal(
    surface: &TriSurface,
    sdf: &Sdf,
    gripper: &ParallelGripper,
    params: &SamplerParams,
    n: usize,
    seed: u64,
) -> Result<(Vec<GraspCandidate>, SamplerStats), SynthError> {
    gripper.validate()?;
    if !surface.is_watertight() {
        return Err(SynthError::Invalid("surface must be watertight".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_cone = params.friction.atan().cos();
    let mut stats = SamplerStats::default();
    let mut out = Vec::new();
    let normals: Vec<Vec3> = (0..surface.triangles.len()).map(|t| surface.triangle_normal(t)).collect();
    for _ in 0..n * params.attempts_per_candidate {
        if out.len() >= n {
            break;
        }
        stats.attempts += 1;
        let Some(&(p1, t1)) = surface.sample_points(1, &mut rng).first() else {
            break;
        };
        let n1 = normals[t1];
        let Some((depth, t2)) = cast(surface, &p1, &-n1, t1) else {
            stats.no_opposite_point += 1;
            continue;
        };
        let p2 = p1 - n1 * depth;
        let n2 = normals[t2];
        let axis = (p2 - p1) / depth;
        if n1.dot(&n2) >= -cos_cone || n1.dot(&-axis) < cos_cone || n2.dot(&axis) < cos_cone {
            stats.outside_cone += 1;
            continue;
        }
        if depth + 2.0 * params.clearance > gripper.max_opening {
            stats.too_wide += 1;
            continue;
        }
        let center = 0.5 * (p1 + p2);
        let (u, v) = tangent_basis(&axis);
        let mut accepted = false;
        for _ in 0..APPROACH_TRIES {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let z = u * theta.cos() + v * theta.sin();
            let y = z.cross(&axis);
            let rotation = Mat3::from_columns(&[axis, y, z]);
            let pose = Pose {
                rotation,
                translation: center - z * gripper.contact_height(),
            };
            let samples = gripper.link_samples(&pose, gripper.max_opening, params.samples_per_link);
            if samples.iter().all(|s| min_sdf(sdf, s) >= params.clearance) {
                out.push(GraspCandidate {
                    gripper_id: gripper.id.clone(),
                    pose,
                    joints: vec![gripper.max_opening],
                    contacts: vec![
                        Contact {
                            position: p1,
                            n_h: Vec3::x(),
                            n_o: n1,
                            link: 0,
                        },
                        Contact {
                            position: p2,
                            n_h: -Vec3::x(),
                            n_o: n2,
                            link: 1,
                        },
                    ],
                    provenance: Provenance::Sampled,
                });
                accepted = true;
                break;
            }
        }
        if accepted {
            stats.accepted += 1;
        } else {
            stats.penetrating += 1;
        }
    }
    Ok((out, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    Unchanged,
    Repaired,
    Rejected,
}

/// Widens a parallel gripper until every link sample clears the object by `dhat`.
///
/// Each penetrating finger asks to move along its contact's object normal by
/// its penetration plus a margin; the opening change is the damped
/// least-squares solution for those two fingertip targets.
pub fn repair_penetration(
    candidate: &GraspCandidate,
    gripper: &ParallelGripper,
    sdf: &Sdf,
    dhat: f64,
    samples_per_link: usize,
) -> (Option<GraspCandidate>, RepairOutcome) {
    const DAMPING: f64 = 1e-3;
    let mut c = candidate.clone();
    let axis = c.pose.rotation.column(0).into_owned();
    let normal_of = |link: usize| {
        c.contacts
            .iter()
            .find(|k| k.link == link)
            .map(|k| k.n_o)
            .unwrap_or(if link == 0 { -axis } else { axis })
    };
    let (n_left, n_right) = (normal_of(0), normal_of(1));
    let margin = 0.5 * dhat;
    for iter in 0..=REPAIR_ITERS {
        let samples = gripper.link_samples(&c.pose, c.opening(), samples_per_link);
        let mins = samples.each_ref().map(|s| min_sdf(sdf, s));
        if mins.iter().all(|m| *m >= dhat) {
            let outcome = if iter == 0 { RepairOutcome::Unchanged } else { RepairOutcome::Repaired };
            return (Some(c), outcome);
        }
        if iter == REPAIR_ITERS {
            break;
        }
        let push = |m: f64| if m < dhat { dhat + margin - m } else { 0.0 };
        // Fingertips move by -axis/2 and +axis/2 per unit opening.
        let target = [n_left * push(mins[0]), n_right * push(mins[1])];
        let jt_f = -axis.dot(&target[0]) * 0.5 + axis.dot(&target[1]) * 0.5;
        let delta = jt_f / (0.5 + DAMPING * DAMPING);
        if !(delta > 0.0) {
            break;
        }
        let w = c.opening() + delta;
        if w > gripper.max_opening {
            break;
        }
        c.joints[0] = w;
    }
    (None, RepairOutcome::Rejected)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimanualComposeParams {
    pub k: usize,
    pub r1: f64,
    pub n_target: usize,
}

impl Default for BimanualComposeParams {
    fn default() -> Self {
        Self {
            k: 26,
            r1: 0.25,
            n_target: 1000,
        }
    }
}

impl BimanualComposeParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.k < 1 {
            return Err(SynthError::Invalid("k must be at least 1".into()));
        }
        if !(self.r1 > 0.0 && self.r1 <= 1.0) {
            return Err(SynthError::Invalid("r1 must lie in (0, 1]".into()));
        }
        if self.n_target < 1 {
            return Err(SynthError::Invalid("n_target must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec3>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest(centroids: &[Vec3], p: &Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        // Strict comparison keeps the lowest index on ties.
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding, at most 100 iterations.
pub fn kmeans(points: &[Vec3], k: usize, rng: &mut impl Rng) -> KMeans {
    const MAX_ITERS: usize = 100;
    let k = k.min(points.len()).max(1);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| (p - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // Duplicate points: fill with the first unused ones.
            centroids.push(points[centroids.len() % points.len()]);
            continue;
        }
        let mut r = rng.random_range(0.0..total);
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        centroids.push(points[pick]);
    }
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, a) in points.iter().zip(&assignment) {
            sums[*a] += p;
            counts[*a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centroids[i] = sums[i] / counts[i] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    KMeans {
        centroids,
        assignment,
        iterations,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPair {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub members: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BimanualCandidate {
    pub left: usize,
    pub right: usize,
    pub cluster_pair: (usize, usize),
    pub contacts: Vec<Contact>,
    pub force_closure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub params: BimanualComposeParams,
    pub seed: u64,
    pub k_left: usize,
    pub k_right: usize,
    pub n_filtered: usize,
    pub r2: f64,
    pub pairs: Vec<ClusterPair>,
    pub candidates: Vec<BimanualCandidate>,
}

/// Pairs left and right hand candidates: cluster each hand's contact centers,
/// keep the `ceil(r1 k^2)` most distant cluster pairs, and within each keep
/// the best `r2 = n_target / n_filtered` fraction by force closure.
pub fn compose_bimanual(
    left: &[GraspCandidate],
    right: &[GraspCandidate],
    params: &BimanualComposeParams,
    seed: u64,
) -> Result<Composition, SynthError> {
    params.validate()?;
    if left.is_empty() || right.is_empty() {
        return Err(SynthError::Empty);
    }
    for (hand, list) in [("left", left), ("right", right)] {
        if list.len() < params.k {
            tracing::warn!(hand, candidates = list.len(), k = params.k, "fewer candidates than clusters; k clamped");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = |c: &[GraspCandidate]| c.iter().map(GraspCandidate::contact_center).collect::<Vec<_>>();
    let kl = kmeans(&centers(left), params.k, &mut rng);
    let kr = kmeans(&centers(right), params.k, &mut rng);
    let mut ranked = Vec::new();
    for (i, cl) in kl.centroids.iter().enumerate() {
        for (j, cr) in kr.centroids.iter().enumerate() {
            ranked.push((i, j, (cl - cr).norm()));
        }
    }
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let keep = ((params.r1 * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
    ranked.truncate(keep);
    let members = |km: &KMeans, c: usize| -> Vec<usize> {
        km.assignment.iter().enumerate().filter(|(_, a)| **a == c).map(|(i, _)| i).collect()
    };
    let groups: Vec<(Vec<usize>, Vec<usize>)> = ranked.iter().map(|&(i, j, _)| (members(&kl, i), members(&kr, j))).collect();
    let n_filtered: usize = groups.iter().map(|(a, b)| a.len() * b.len()).sum();
    let r2 = (params.n_target as f64 / n_filtered.max(1) as f64).min(1.0);
    let mut pairs = Vec::new();
    let mut candidates = Vec::new();
    for (&(i, j, distance), (ls, rs)) in ranked.iter().zip(&groups) {
        let mut scored = Vec::with_capacity(ls.len() * rs.len());
        for &a in ls {
            for &b in rs {
                let mut contacts = left[a].contacts.clone();
                contacts.extend(right[b].contacts.iter().copied());
                let metric = candidate_force_closure(&contacts)?;
                scored.push(BimanualCandidate {
                    left: a,
                    right: b,
                    cluster_pair: (i, j),
                    contacts,
                    force_closure: metric,
                });
            }
        }
        scored.sort_by(|x, y| x.force_closure.total_cmp(&y.force_closure).then((x.left, x.right).cmp(&(y.left, y.right))));
        let kept = (r2 * scored.len() as f64).ceil() as usize;
        pairs.push(ClusterPair {
            left: i,
            right: j,
            distance,
            members: scored.len(),
            kept,
        });
        scored.truncate(kept);
        candidates.extend(scored);
    }
    Ok(Composition {
        params: *params,
        seed,
        k_left: kl.centroids.len(),
        k_right: kr.centroids.len(),
        n_filtered,
        r2,
        pairs,
        candidates,
    })
}
