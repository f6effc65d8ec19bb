use std::path::Path;
use std::sync::Arc;

use grip_core::contact::ContactParams;
use grip_core::geometry::{build_sdf, ExactSignedDistance, TetMesh, TriSurface};
use grip_core::materials::MaterialParams;
use grip_core::math::{Mat3, Vec3};
use grip_core::multienv::AssetCache;
use grip_core::pipeline::dataset::{emit_dataset, load_manifest, load_trial, validate_record, verify_manifest};
use grip_core::pipeline::metrics::{absolute_distance_d2, gripper_distances, penetration_distance_d1};
use grip_core::pipeline::*;
use grip_core::solver::{BodyModel, BodySpec, Pose, Simulation, SolverParams, StepStatus};
use grip_core::synth::{Contact, GraspCandidate, Provenance};
use proptest::prelude::*;

const DHAT: f64 = 1e-3;
const CUBE: f64 = 0.05;

fn cube_object(model: ObjectModel, friction: f64, density: f64) -> TrialObject {
    let cfg = ObjectConfig {
        name: "cube".into(),
        shape: Shape::Cube { size: CUBE, cells: 1 },
        model,
        material: MaterialParams {
            young_modulus: 1e9,
            density,
            friction,
            ..MaterialParams::soft_object()
        },
        sdf_resolution: 16,
    };
    prepare_object(&cfg, Path::new("."), &mut AssetCache::default()).unwrap()
}

/// Flat fingers straddling the cube along x with 1.5 mm of clearance each side.
fn clamp_candidate(config: &Config) -> GraspCandidate {
    let h = config.gripper.contact_height();
    GraspCandidate {
        gripper_id: config.gripper.id.clone(),
        pose: Pose {
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, -h),
        },
        joints: vec![CUBE + 3e-3],
        contacts: vec![
            Contact {
                position: Vec3::new(-CUBE / 2.0, 0.0, 0.0),
                n_h: Vec3::x(),
                n_o: -Vec3::x(),
                link: 0,
            },
            Contact {
                position: Vec3::new(CUBE / 2.0, 0.0, 0.0),
                n_h: -Vec3::x(),
                n_o: Vec3::x(),
                link: 1,
            },
        ],
        provenance: Provenance::Ingested,
    }
}

/// Slow closing keeps the force overshoot at the halt small.
fn clamp_config(friction: f64) -> Config {
    let mut config = Config::default();
    config.finger_material.friction = friction;
    config.protocol.closing_speed = 0.005;
    config.metrics.samples = 20_000;
    config
}

fn clamp_job(friction: f64, density: f64, config: &Config) -> TrialJob {
    TrialJob {
        id: 0,
        object: cube_object(ObjectModel::Rigid, friction, density),
        candidate: Some(clamp_candidate(config)),
    }
}

#[test]
fn protocol_defaults_and_validation() {
    let p = TrialProtocol::default();
    assert_eq!(p.halt_force, 50.0);
    assert_eq!(p.gravity, 9.8);
    assert_eq!(p.gravity_phase_steps(0.01), 10);
    let dirs = p.gravity_directions();
    assert_eq!(dirs.len(), 6);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut v = Vec3::zeros();
            v[axis] = sign;
            assert_eq!(dirs.iter().filter(|d| **d == v).count(), 1);
        }
    }
    let bad = TrialProtocol {
        phase_duration: 0.0,
        ..p
    };
    assert!(bad.validate().unwrap_err().to_string().contains("protocol.phase_duration"));
    let bad = TrialProtocol { halt_force: -1.0, ..p };
    assert!(bad.validate().is_err());
}

#[test]
fn config_round_trips_and_names_bad_fields() {
    let config = Config::regression();
    let text = config.to_toml();
    assert_eq!(Config::from_toml(&text).unwrap(), config);

    let err = Config::from_toml("[protocol]\nhalt_forse = 50.0\n").unwrap_err().to_string();
    assert!(err.contains("halt_forse"), "{err}");
    let err = Config::from_toml("[protocol]\nphase_duration = -0.1\n").unwrap_err().to_string();
    assert!(err.contains("protocol.phase_duration"), "{err}");
    let err = Config::from_toml("[contact]\ndhat = 0.0\n").unwrap_err().to_string();
    assert!(err.contains("contact"), "{err}");
    let err = Config::from_toml("[[objects]]\nname = \"a\"\nmodel = \"soft\"\nshape = { kind = \"cube\", size = -1.0, cells = 1 }\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("objects.a.shape"), "{err}");
}

#[test]
fn no_gripper_is_unstable() {
    let config = Config::default();
    let job = TrialJob {
        id: 3,
        object: cube_object(ObjectModel::Rigid, 0.5, 1000.0),
        candidate: None,
    };
    let r = run_grasp_trial(&job, &config);
    assert_eq!(r.verdict, Verdict::Unstable);
    assert!(!r.final_contact);
    assert!(r.metrics.is_none());
    assert!(validate_record(&r).is_empty(), "{:?}", validate_record(&r));
    // The object free-falls through the last phase: about g t^2 / 2 over 0.1 s plus earlier velocity.
    assert!(*r.com_displacement.last().unwrap() > 0.04);
}

#[test]
fn rigid_cube_with_friction_holds() {
    let config = clamp_config(0.5);
    let r = run_grasp_trial(&clamp_job(0.5, 1000.0, &config), &config);
    assert_eq!(r.verdict, Verdict::Stable, "{:?}", r.com_displacement);
    assert!(validate_record(&r).is_empty(), "{:?}", validate_record(&r));
    let m = r.metrics.unwrap();
    assert_eq!(m.d1, 0.0);
    assert!(m.d2 > 0.5 * DHAT && m.d2 < DHAT, "D2 = {}", m.d2);
    // Symmetric fingers see the same force.
    let [a, b] = [r.halts[0], r.halts[1]];
    assert_eq!(a.step, b.step);
    assert!((a.force - b.force).abs() <= 1e-6 * a.force, "{} vs {}", a.force, b.force);
    assert!(a.force > 50.0 && a.prev_force <= 50.0);
    let threshold = r.displacement_threshold();
    assert!((threshold - 1e-4).abs() < 1e-15);
    assert!(r.com_displacement.iter().all(|d| *d < threshold));
}

#[test]
fn slippery_heavy_cube_falls() {
    let config = clamp_config(0.01);
    let density = 8000.0;
    let r = run_grasp_trial(&clamp_job(0.01, density, &config), &config);
    // Coulomb limit: twice mu times the clamp force cannot carry the weight.
    let weight = density * CUBE.powi(3) * 9.8;
    let clamp = r.halts.iter().map(|h| h.force).fold(0.0, f64::max);
    assert!(2.0 * 0.01 * clamp < weight, "clamp {clamp} N vs weight {weight} N");
    assert_eq!(r.verdict, Verdict::Unstable, "{:?}", r.com_displacement);
    assert!(validate_record(&r).is_empty(), "{:?}", validate_record(&r));
}

#[test]
fn finger_force_statics() {
    let floor = BodySpec::new(
        "floor",
        BodyModel::Kinematic {
            surface: Arc::new(TriSurface::box_surface(Vec3::new(1.0, 1.0, 0.1))),
        },
        MaterialParams::soft_object(),
        Pose::from_translation(Vec3::new(0.0, 0.0, -0.05)),
    );
    let cube = BodySpec::new(
        "cube",
        BodyModel::affine(Arc::new(TetMesh::box_mesh(Vec3::repeat(0.1), [1, 1, 1]))),
        MaterialParams::soft_object(),
        Pose::from_translation(Vec3::new(0.0, 0.0, 0.05 + 1.5e-3)),
    );
    let mut sim = Simulation::new(&[floor, cube], SolverParams::default(), ContactParams::default()).unwrap();
    assert_eq!(sim.contact_force_on(0).unwrap(), 0.0);
    assert!(sim.contact_force_on(7).is_err());
    sim.set_gravity(Vec3::new(0.0, 0.0, -9.8));
    for _ in 0..100 {
        assert_eq!(sim.step().status, StepStatus::Converged);
    }
    let weight = 1000.0 * 1e-3 * 9.8;
    let f = sim.contact_force_on(0).unwrap();
    assert!((f - weight).abs() < 0.02 * weight, "{f} vs {weight}");
}

fn unit_sphere_sdf() -> (TriSurface, grip_core::geometry::Sdf) {
    let s = TriSurface::icosphere(1.0, 3);
    let sdf = build_sdf(&s, 64).unwrap();
    (s, sdf)
}

#[test]
fn d1_d2_closed_forms() {
    let (sphere, sdf) = unit_sphere_sdf();
    let spacing = sdf.spacing;
    // Fully outside.
    let far = TriSurface::box_surface(Vec3::repeat(0.1)).transformed(&Mat3::identity(), &Vec3::new(3.0, 0.0, 0.0));
    assert_eq!(penetration_distance_d1(&sdf, std::slice::from_ref(&far), 2000, 1), 0.0);
    // A tiny sphere centered 0.4 below the surface.
    let small = TriSurface::icosphere(1e-3, 1).transformed(&Mat3::identity(), &Vec3::new(0.6, 0.0, 0.0));
    let d1 = penetration_distance_d1(&sdf, std::slice::from_ref(&small), 2000, 1);
    assert!((d1 - 0.4).abs() < 2.0 * spacing, "D1 = {d1}, spacing {spacing}");
    let exact = ExactSignedDistance::new(&sphere).unwrap();
    let d1 = penetration_distance_d1(&exact, &[small], 2000, 1);
    assert!((d1 - 0.4).abs() < 0.01, "exact D1 = {d1}");

    // Flat object face at x = 0.5.
    let block = TriSurface::box_surface(Vec3::repeat(1.0));
    let exact = ExactSignedDistance::new(&block).unwrap();
    let on_face = TriSurface::new(
        vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.5, 0.1, 0.0), Vec3::new(0.5, 0.0, 0.1)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let m = gripper_distances(&exact, &[on_face], 500, 2);
    assert!(m.d1 == 0.0 && m.d2 < 1e-12, "{m:?}");
    // A pad whose nearest face sits 1.2 mm off the object.
    let pad = TriSurface::box_surface(Vec3::new(0.01, 0.1, 0.1))
        .transformed(&Mat3::identity(), &Vec3::new(0.5 + 1.2e-3 + 0.005, 0.0, 0.0));
    let d2 = absolute_distance_d2(&exact, std::slice::from_ref(&pad), 50_000, 3);
    assert!((d2 - 1.2e-3).abs() < 1e-9, "D2 = {d2}");
    assert_eq!(penetration_distance_d1(&exact, &[pad], 50_000, 3), 0.0);
}

#[test]
fn metrics_are_seed_deterministic() {
    let (_, sdf) = unit_sphere_sdf();
    let g = [TriSurface::box_surface(Vec3::repeat(0.3)).transformed(&Mat3::identity(), &Vec3::new(0.9, 0.0, 0.0))];
    let a = gripper_distances(&sdf, &g, 5000, 42);
    assert_eq!(a, gripper_distances(&sdf, &g, 5000, 42));
    assert_eq!(a.samples, 5000);
    assert!(a.d1 > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn d1_and_d2_relations(offset in -0.3f64..0.3, size in 0.02f64..0.2, seed in 0u64..1000) {
        let block = TriSurface::box_surface(Vec3::repeat(1.0));
        let exact = ExactSignedDistance::new(&block).unwrap();
        let pad = TriSurface::box_surface(Vec3::repeat(size))
            .transformed(&Mat3::identity(), &Vec3::new(0.5 + offset, 0.0, 0.0));
        let m = gripper_distances(&exact, &[pad], 500, seed);
        prop_assert!(m.d1 >= 0.0);
        prop_assert!(m.d2 >= m.d1);
        if m.d1 > 0.0 {
            prop_assert_eq!(m.d1, m.d2);
        }
    }

    #[test]
    fn gravity_phase_length_is_ceil(dt in 1e-4f64..0.05) {
        let p = TrialProtocol::default();
        let n = p.gravity_phase_steps(dt);
        prop_assert!(n as f64 * dt >= 0.1 - 1e-9 * dt);
        prop_assert!((n - 1) as f64 * dt < 0.1);
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let config = clamp_config(0.5);
    let mut records = run_trials(&[clamp_job(0.5, 1000.0, &config)], &config).unwrap();
    let soft = TrialJob {
        id: 1,
        object: cube_object(ObjectModel::Soft, 0.5, 1000.0),
        candidate: None,
    };
    records.push(run_grasp_trial(&soft, &config));
    let dir = tempfile::tempdir().unwrap();
    let manifest = emit_dataset(&records, dir.path()).unwrap();
    assert_eq!(manifest.trials.len(), 2);
    assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
    assert!(verify_manifest(dir.path(), &manifest).unwrap().is_empty());
    for (r, entry) in records.iter().zip(&manifest.trials) {
        let loaded = load_trial(&dir.path().join(&entry.dir)).unwrap();
        assert_eq!(&loaded, r);
        for (a, b) in loaded.frames.iter().zip(&r.frames) {
            let bits = |f: &Frame| f.positions.iter().flat_map(|v| v.iter().map(|c| c.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
    // Tampering is detected.
    let meta = dir.path().join(&manifest.trials[0].dir).join("traj.bin");
    let mut bytes = std::fs::read(&meta).unwrap();
    bytes[20] ^= 1;
    std::fs::write(&meta, bytes).unwrap();
    assert_eq!(verify_manifest(dir.path(), &manifest).unwrap(), vec![meta]);
}

#[test]
fn empty_dataset_has_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = emit_dataset(&[], dir.path()).unwrap();
    assert!(m.trials.is_empty());
    assert!(load_manifest(dir.path()).unwrap().trials.is_empty());
}

fn synthetic_record(n_tets: usize, steps: usize) -> TrialRecord {
    let config = Config::default();
    TrialRecord {
        id: 9,
        object: "tet".into(),
        candidate: None,
        protocol: config.protocol,
        solver: config.solver,
        contact: config.contact,
        phases: Vec::new(),
        halts: Vec::new(),
        steady: false,
        com_displacement: Vec::new(),
        final_contact: false,
        verdict: Verdict::Unstable,
        metrics: None,
        n_vertices: 4,
        n_tets,
        frames: (0..steps)
            .map(|s| Frame {
                step: s as u64,
                time: 0.01 * (s + 1) as f64,
                positions: vec![Vec3::new(s as f64, 1.0 / 3.0, -0.1); 4],
                velocities: vec![Vec3::new(1e-300, -0.0, f64::MAX); 4],
                contacts: Vec::new(),
                stress: vec![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0 / 3.0]; n_tets],
            })
            .collect(),
    }
}

#[test]
fn stress_file_size_follows_the_format() {
    let dir = tempfile::tempdir().unwrap();
    let record = synthetic_record(1, 10);
    emit_dataset(std::slice::from_ref(&record), dir.path()).unwrap();
    let trial = dir.path().join("trial_00009");
    let stress = std::fs::metadata(trial.join("stress.bin")).unwrap().len();
    // Two header words, then a step word and 7 values per tet for each step.
    assert_eq!(stress, 16 + 10 * 8 + 10 * 7 * 8);
    let traj = std::fs::metadata(trial.join("traj.bin")).unwrap().len();
    assert_eq!(traj, 16 + 10 * (16 + 2 * 4 * 3 * 8));
    assert_eq!(load_trial(&trial).unwrap(), record);
}

#[test]
fn validator_flags_protocol_violations() {
    let config = clamp_config(0.5);
    let good = run_grasp_trial(&clamp_job(0.5, 1000.0, &config), &config);
    assert!(validate_record(&good).is_empty());

    let mut r = good.clone();
    r.phases.pop();
    assert!(!validate_record(&r).is_empty());

    let mut r = good.clone();
    r.halts[0].prev_force = 60.0;
    assert!(validate_record(&r).iter().any(|m| m.contains("halt forces")));

    let mut r = good.clone();
    r.verdict = Verdict::Unstable;
    assert!(validate_record(&r).iter().any(|m| m.contains("verdict")));

    let mut r = good.clone();
    *r.com_displacement.last_mut().unwrap() = 1.0;
    assert!(validate_record(&r).iter().any(|m| m.contains("verdict")));

    let mut r = good;
    r.frames.pop();
    assert!(validate_record(&r).iter().any(|m| m.contains("frames")));
}

#[test]
fn trials_are_deterministic_and_batch_invariant() {
    let config = clamp_config(0.5);
    let jobs: Vec<TrialJob> = (0..3)
        .map(|i| {
            let mut j = clamp_job(0.5, 1000.0 + 500.0 * i as f64, &config);
            j.id = i;
            j
        })
        .collect();
    let batched = run_trials(&jobs, &config).unwrap();
    for (job, r) in jobs.iter().zip(&batched) {
        assert_eq!(&run_grasp_trial(job, &config), r);
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = emit_dataset(&batched, a.path()).unwrap();
    let mb = emit_dataset(&run_trials(&jobs, &config).unwrap(), b.path()).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn summary_counts_verdicts() {
    let mut a = synthetic_record(0, 0);
    a.verdict = Verdict::Stable;
    a.metrics = Some(TrialMetrics {
        d1: 0.0,
        d2: 1e-3,
        samples: 10,
    });
    let mut b = a.clone();
    b.verdict = Verdict::Unstable;
    b.metrics = Some(TrialMetrics {
        d1: 2e-3,
        d2: 2e-3,
        samples: 10,
    });
    let s = summarize(&[a, b]);
    assert_eq!(s.objects.len(), 1);
    assert_eq!((s.total.stable, s.total.unstable, s.total.failed), (1, 1, 0));
    assert_eq!(s.total.mean_d2_stable, 1e-3);
    assert_eq!(s.total.max_d1, 2e-3);
    let csv = summary_csv(&s);
    assert_eq!(csv.lines().count(), 3);
    assert!(summary_svg(&s).starts_with("<svg"));
}
