use std::sync::Arc;

use grip_core::contact::ContactParams;
use grip_core::geometry::{TetMesh, TriSurface};
use grip_core::materials::MaterialParams;
use grip_core::math::{Mat3, Vec3};
use grip_core::solver::{BodyModel, BodySpec, Pose, Simulation, SolverParams, StepStatus};
use nalgebra::Rotation3;

const G: f64 = 9.8;

fn tet() -> Arc<TetMesh> {
    let v = vec![Vec3::zeros(), Vec3::x() * 0.1, Vec3::y() * 0.1, Vec3::z() * 0.1];
    Arc::new(TetMesh::new(v, vec![[0, 1, 2, 3]]).unwrap())
}

fn soft(name: &str, mesh: Arc<TetMesh>) -> BodySpec {
    BodySpec::new(name, BodyModel::Soft { mesh }, MaterialParams::soft_object(), Pose::identity())
}

fn momentum(sim: &Simulation) -> Vec3 {
    sim.layout().linear_momentum(&sim.dof_state().v)
}

#[test]
fn free_fall_matches_implicit_euler() {
    let mut sim = Simulation::new(&[soft("tet", tet())], SolverParams::default(), ContactParams::default()).unwrap();
    sim.set_gravity(Vec3::new(0.0, 0.0, -G));
    let z0: Vec<f64> = sim.positions().iter().map(|p| p.z).collect();
    let r = sim.step();
    assert_eq!(r.status, StepStatus::Converged);
    assert!(r.iterations <= 2, "{r:?}");
    for (p, z) in sim.positions().iter().zip(&z0) {
        assert!((p.z - z - (-G * 1e-4)).abs() < 1e-10);
    }
    for v in sim.velocities() {
        assert!((v.z + 0.098).abs() < 1e-8);
    }
}

#[test]
fn rest_state_is_a_minimizer() {
    let sim = Simulation::new(&[soft("tet", tet())], SolverParams::default(), ContactParams::default()).unwrap();
    let (e, g, _) = sim.incremental_potential().unwrap();
    assert!(e.abs() < 1e-15);
    assert!(g.norm() < 1e-12);
}

fn stretched_bar() -> Arc<TetMesh> {
    let mut m = TetMesh::box_mesh(Vec3::new(0.2, 0.05, 0.05), [4, 1, 1]);
    for v in &mut m.vertices {
        v.x *= 1.01;
    }
    Arc::new(m)
}

#[test]
fn stretched_bar_energy_never_increases_within_a_solve() {
    let mut sim = Simulation::new(&[soft("bar", stretched_bar())], SolverParams::default(), ContactParams::default()).unwrap();
    for _ in 0..5 {
        let r = sim.step();
        assert_eq!(r.status, StepStatus::Converged);
        for w in r.energies.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(r.min_volume > 0.0);
    }
}

#[test]
fn free_body_conserves_momentum() {
    let mut spec = soft("bar", stretched_bar());
    spec.velocity = Vec3::new(0.3, -0.1, 0.2);
    let mut sim = Simulation::new(&[spec], SolverParams::default(), ContactParams::default()).unwrap();
    let p0 = momentum(&sim);
    let mut prev = p0;
    for _ in 0..20 {
        assert_eq!(sim.step().status, StepStatus::Converged);
        let p = momentum(&sim);
        assert!((p - prev).norm() < 1e-8, "drift {}", (p - prev).norm());
        prev = p;
    }
}

/// Rigid 10 cm cube resting on a kinematic slab tilted by `angle` about y.
fn incline(angle: f64, mu: f64) -> (Simulation, Vec3) {
    let rot: Mat3 = *Rotation3::from_axis_angle(&Vec3::y_axis(), angle).matrix();
    let normal = rot * Vec3::z();
    let slab = Arc::new(TriSurface::box_surface(Vec3::new(2.0, 1.0, 0.1)));
    let mut plane_mat = MaterialParams::soft_object();
    plane_mat.friction = mu;
    let plane = BodySpec::new(
        "plane",
        BodyModel::Kinematic { surface: slab },
        plane_mat,
        Pose { rotation: rot, translation: -normal * 0.05 },
    );
    let cube = Arc::new(TetMesh::box_mesh(Vec3::repeat(0.1), [1, 1, 1]));
    let mut mat = MaterialParams::soft_object();
    mat.friction = mu;
    let gap = 0.9e-3;
    let body = BodySpec::new(
        "cube",
        BodyModel::affine(cube),
        mat,
        Pose { rotation: rot, translation: normal * (0.05 + gap) },
    );
    let mut sim = Simulation::new(&[plane, body], SolverParams::default(), ContactParams::default()).unwrap();
    sim.set_gravity(Vec3::new(0.0, 0.0, -G));
    let downhill = rot * Vec3::x();
    let downhill = if downhill.z < 0.0 { downhill } else { -downhill };
    (sim, downhill)
}

#[test]
fn cube_holds_on_a_rough_incline() {
    let (mut sim, down) = incline(30f64.to_radians(), 1.0);
    let eps = sim.contact.eps_v * sim.params.dt;
    let mut prev = sim.body_com(1);
    for step in 0..60 {
        let r = sim.step();
        assert_eq!(r.status, StepStatus::Converged, "step {step}: {r:?}");
        assert!(r.min_distance > 0.0);
        let com = sim.body_com(1);
        let drift = (com - prev).dot(&down);
        assert!(drift.abs() < eps, "step {step}: drift {drift}");
        prev = com;
    }
    let weight_normal = sim.layout().body_mass(1) * G * 30f64.to_radians().cos();
    let force = sim.contact_force_on(1).unwrap();
    assert!((force - weight_normal).abs() < 0.05 * weight_normal, "{force} vs {weight_normal}");
}

#[test]
fn cube_slides_on_a_frictionless_incline() {
    let (mut sim, down) = incline(30f64.to_radians(), 0.0);
    let mut speeds = Vec::new();
    for _ in 0..50 {
        assert_eq!(sim.step().status, StepStatus::Converged);
        speeds.push(sim.dof_state().v[0..3].iter().zip(down.iter()).map(|(a, b)| a * b).sum::<f64>());
    }
    let dt = sim.params.dt;
    let a = (speeds[49] - speeds[9]) / (40.0 * dt);
    let expected = G * 0.5;
    assert!((a - expected).abs() < 0.02 * expected, "a = {a}");
    assert!(sim.contact_force_on(1).unwrap() > 0.0);
}

#[test]
fn identical_runs_are_bitwise_equal() {
    let run = || {
        let (mut sim, _) = incline(0.4, 0.5);
        for _ in 0..10 {
            sim.step();
        }
        sim.positions().to_vec()
    };
    assert_eq!(run(), run());
}
