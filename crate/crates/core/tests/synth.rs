use std::collections::BTreeSet;

use grip_core::geometry::{build_sdf, TriSurface};
use grip_core::math::{Mat3, Vec3};
use grip_core::solver::Pose;
use grip_core::synth::*;
use nalgebra::Rotation3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DHAT: f64 = 1e-3;

fn contact(p: Vec3, n_h: Vec3, n_o: Vec3, link: usize) -> Contact {
    Contact {
        position: p,
        n_h,
        n_o,
        link,
    }
}

fn candidate(rotation: Mat3, contacts: Vec<Contact>) -> GraspCandidate {
    GraspCandidate {
        gripper_id: "test".into(),
        pose: Pose {
            rotation,
            translation: Vec3::zeros(),
        },
        joints: vec![0.08],
        contacts,
        provenance: Provenance::Ingested,
    }
}

#[test]
fn normal_alignment_closed_forms() {
    let n = [Vec3::x(), Vec3::y(), Vec3::z()];
    let anti = candidate(Mat3::identity(), n.iter().map(|v| contact(Vec3::zeros(), *v, -v, 0)).collect());
    assert_eq!(normal_alignment_energy(&anti).unwrap(), 0.0);
    let aligned = candidate(Mat3::identity(), n.iter().map(|v| contact(Vec3::zeros(), *v, *v, 0)).collect());
    assert_eq!(normal_alignment_energy(&aligned).unwrap(), 12.0);
    let mixed = candidate(
        Mat3::identity(),
        vec![contact(Vec3::zeros(), Vec3::x(), -Vec3::x(), 0), contact(Vec3::zeros(), Vec3::x(), Vec3::y(), 1)],
    );
    assert_eq!(normal_alignment_energy(&mixed).unwrap(), 1.0);
    let bad = candidate(Mat3::identity(), vec![contact(Vec3::zeros(), Vec3::x() * 1.1, Vec3::x(), 0)]);
    assert_eq!(normal_alignment_energy(&bad), Err(SynthError::NonUnitNormal(0)));
}

#[test]
fn force_closure_closed_forms() {
    let p = [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
    let inward = [Vec3::x(), -Vec3::x()];
    assert!(force_closure_metric(&p, &inward).unwrap().abs() < 1e-15);
    let same = [Vec3::z(); 3];
    let pts = [Vec3::zeros(), Vec3::x(), Vec3::y()];
    let m = force_closure_metric(&pts, &same).unwrap();
    // Forces add to 3 and the torques about the centroid cancel.
    assert!((m - 3.0).abs() < 1e-12, "{m}");
    assert_eq!(force_closure_metric(&p[..1], &inward[..1]), Err(SynthError::TooFewContacts(1)));
}

fn unit(v: [f64; 3]) -> Vec3 {
    let v = Vec3::from(v);
    if v.norm() < 1e-6 {
        Vec3::x()
    } else {
        v.normalize()
    }
}

proptest! {
    #[test]
    fn normal_alignment_is_bounded(raw in proptest::collection::vec((proptest::array::uniform3(-1.0f64..1.0), proptest::array::uniform3(-1.0f64..1.0)), 1..8), angles in proptest::array::uniform3(-3.0f64..3.0)) {
        let r = *Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).matrix();
        let contacts: Vec<Contact> = raw.iter().map(|(a, b)| contact(Vec3::zeros(), unit(*a), unit(*b), 0)).collect();
        let n = contacts.len() as f64;
        let e = normal_alignment_energy(&candidate(r, contacts)).unwrap();
        prop_assert!((0.0..=4.0 * n + 1e-12).contains(&e));
    }

    #[test]
    fn force_closure_is_rotation_invariant(raw in proptest::collection::vec((proptest::array::uniform3(-1.0f64..1.0), proptest::array::uniform3(-1.0f64..1.0)), 2..8), angles in proptest::array::uniform3(-3.0f64..3.0)) {
        let r = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]);
        let p: Vec<Vec3> = raw.iter().map(|(a, _)| Vec3::from(*a)).collect();
        let n: Vec<Vec3> = raw.iter().map(|(_, b)| unit(*b)).collect();
        let m0 = force_closure_metric(&p, &n).unwrap();
        let rp: Vec<Vec3> = p.iter().map(|v| r * v).collect();
        let rn: Vec<Vec3> = n.iter().map(|v| r * v).collect();
        let m1 = force_closure_metric(&rp, &rn).unwrap();
        prop_assert!((m0 - m1).abs() < 1e-10);
    }
}

#[test]
fn sphere_wider_than_the_gripper_gives_nothing() {
    let s = TriSurface::icosphere(1.0, 2);
    let sdf = build_sdf(&s, 32).unwrap();
    let g = ParallelGripper {
        max_opening: 0.5,
        ..Default::default()
    };
    let (c, stats) = sample_antipodal(&s, &sdf, &g, &SamplerParams::default(), 5, 1).unwrap();
    assert!(c.is_empty());
    assert!(stats.too_wide > 0);
}

#[test]
fn box_candidates_are_antipodal_and_clear() {
    let s = TriSurface::box_surface(Vec3::repeat(0.05));
    let sdf = build_sdf(&s, 64).unwrap();
    let g = ParallelGripper::default();
    let params = SamplerParams::default();
    let (c, stats) = sample_antipodal(&s, &sdf, &g, &params, 20, 3).unwrap();
    assert!(!c.is_empty());
    assert_eq!(stats.accepted, c.len());
    let cos = params.friction.atan().cos();
    for k in &c {
        assert!(k.contacts[0].n_o.dot(&k.contacts[1].n_o) < -cos);
        assert!(k.orthonormality_error() < 1e-9);
        assert!(normal_alignment_energy(k).unwrap() < 1e-12);
        let samples = g.link_samples(&k.pose, k.opening(), params.samples_per_link);
        for p in samples.iter().flatten() {
            assert!(sdf.query(p) >= params.clearance);
        }
    }
    let (again, _) = sample_antipodal(&s, &sdf, &g, &params, 20, 3).unwrap();
    assert_eq!(c, again);
}

#[test]
fn candidate_json_round_trips() {
    let s = TriSurface::box_surface(Vec3::repeat(0.05));
    let sdf = build_sdf(&s, 32).unwrap();
    let (c, _) = sample_antipodal(&s, &sdf, &ParallelGripper::default(), &SamplerParams::default(), 3, 9).unwrap();
    let json = serde_json::to_string(&c).unwrap();
    assert!(json.contains("\"quaternion\""));
    let back: Vec<GraspCandidate> = serde_json::from_str(&json).unwrap();
    for (a, b) in c.iter().zip(&back) {
        assert!((a.pose.rotation - b.pose.rotation).norm() < 1e-12);
        assert_eq!(a.contacts, b.contacts);
        assert_eq!(a.joints, b.joints);
    }
}

/// Parallel grasp across the x faces of a 5 cm cube at `opening`, hand origin `height` below the contacts.
fn cube_grasp(opening: f64, height: f64) -> GraspCandidate {
    GraspCandidate {
        gripper_id: "umi".into(),
        pose: Pose::from_translation(Vec3::new(0.0, 0.0, -height)),
        joints: vec![opening],
        contacts: vec![
            contact(Vec3::new(-0.025, 0.0, 0.0), Vec3::x(), -Vec3::x(), 0),
            contact(Vec3::new(0.025, 0.0, 0.0), -Vec3::x(), Vec3::x(), 1),
        ],
        provenance: Provenance::Ingested,
    }
}

#[test]
fn repair_cases() {
    let s = TriSurface::box_surface(Vec3::repeat(0.05));
    let sdf = build_sdf(&s, 64).unwrap();
    let g = ParallelGripper::default();
    let h = g.contact_height();

    let clear = cube_grasp(0.07, h);
    let (out, outcome) = repair_penetration(&clear, &g, &sdf, DHAT, 300);
    assert_eq!(outcome, RepairOutcome::Unchanged);
    assert_eq!(out.unwrap(), clear);

    let tight = cube_grasp(0.05 - 2.0 * DHAT, h);
    let samples = g.link_samples(&tight.pose, tight.opening(), 300);
    let worst = samples[0].iter().map(|p| sdf.query(p)).fold(f64::INFINITY, f64::min);
    assert!((worst + DHAT).abs() < 2e-4, "{worst}");
    let (out, outcome) = repair_penetration(&tight, &g, &sdf, DHAT, 300);
    assert_eq!(outcome, RepairOutcome::Repaired);
    let fixed = out.unwrap();
    assert!(fixed.opening() > tight.opening());
    for p in g.link_samples(&fixed.pose, fixed.opening(), 1000).iter().flatten() {
        assert!(sdf.query(p) >= DHAT - sdf.spacing);
    }

    let palm_inside = cube_grasp(0.07, 0.012);
    let (out, outcome) = repair_penetration(&palm_inside, &g, &sdf, DHAT, 300);
    assert_eq!(outcome, RepairOutcome::Rejected);
    assert!(out.is_none());
}

fn blob_candidates(centers: &[Vec3], per_blob: usize, rng: &mut ChaCha8Rng) -> Vec<GraspCandidate> {
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..per_blob {
            let jitter = Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
            let m = c + jitter;
            let tilt = rng.random_range(-0.3..0.3);
            let n = Vec3::new(1.0, tilt, 0.0).normalize();
            out.push(candidate(
                Mat3::identity(),
                vec![
                    contact(m - n * 0.02, Vec3::x(), -n, 0),
                    contact(m + n * 0.02, -Vec3::x(), n, 1),
                ],
            ));
        }
    }
    out
}

#[test]
fn four_blob_composition_keeps_the_most_distant_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lc = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.1, 0.0), Vec3::new(0.2, 1.3, 0.0), Vec3::new(0.1, 0.2, 1.7)];
    let rc = [Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 3.5, 0.3), Vec3::new(-2.0, -1.0, 0.5), Vec3::new(0.5, 0.5, -2.5)];
    let per = 6;
    let left = blob_candidates(&lc, per, &mut rng);
    let right = blob_candidates(&rc, per, &mut rng);
    let params = BimanualComposeParams { k: 4, r1: 0.25, n_target: 40 };
    let out = compose_bimanual(&left, &right, &params, 5).unwrap();

    let mut brute: Vec<(usize, usize, f64)> = Vec::new();
    for (i, a) in lc.iter().enumerate() {
        for (j, b) in rc.iter().enumerate() {
            brute.push((i, j, (a - b).norm()));
        }
    }
    brute.sort_by(|a, b| b.2.total_cmp(&a.2));
    let expected: BTreeSet<(usize, usize)> = brute[..4].iter().map(|&(i, j, _)| (i, j)).collect();
    // Map clusters back to blobs through their members.
    let got: BTreeSet<(usize, usize)> = out
        .candidates
        .iter()
        .map(|c| (c.left / per, c.right / per))
        .collect();
    assert_eq!(got, expected);
    assert_eq!(out.pairs.len(), 4);
    assert_eq!(out.n_filtered, 4 * per * per);
    for p in &out.pairs {
        assert_eq!(p.kept, (out.r2 * p.members as f64).ceil() as usize);
    }
    let n = out.candidates.len() as i64;
    let slack = (params.k * params.k) as i64;
    assert!((n - params.n_target as i64).abs() <= slack, "{n}");
    assert_eq!(out, compose_bimanual(&left, &right, &params, 5).unwrap());
}

#[test]
fn single_candidates_compose_to_one_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let left = blob_candidates(&[Vec3::zeros()], 1, &mut rng);
    let right = blob_candidates(&[Vec3::x()], 1, &mut rng);
    let params = BimanualComposeParams { k: 26, r1: 1.0, n_target: 10 };
    let out = compose_bimanual(&left, &right, &params, 0).unwrap();
    assert_eq!((out.k_left, out.k_right), (1, 1));
    assert_eq!(out.candidates.len(), 1);
}

#[test]
fn default_compose_params_round_trip() {
    let p = BimanualComposeParams::default();
    assert_eq!((p.k, p.r1), (26, 0.25));
    let text = toml::to_string(&p).unwrap();
    let back: BimanualComposeParams = toml::from_str(&text).unwrap();
    assert_eq!(back, p);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let left = blob_candidates(&[Vec3::zeros()], 30, &mut rng);
    let right = blob_candidates(&[Vec3::x()], 30, &mut rng);
    let out = compose_bimanual(&left, &right, &p, 0).unwrap();
    let meta = serde_json::to_value(&out).unwrap();
    assert_eq!(meta["params"]["k"], 26);
    assert_eq!(meta["params"]["r1"], 0.25);
}
