mod common;

use beavr_core::kinematics::JointState;
use rand::Rng;

use common::*;

fn random_q(rng: &mut impl Rng, n: usize) -> JointState {
    JointState::new((0..n).map(|_| rng.random_range(-2.5..2.5)).collect())
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = rng(31);
    let h = 1e-6;
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let chain = random_serial_chain(&mut rng, n);
        let q = random_q(&mut rng, n);
        for marker in chain.markers().iter().map(|m| m.name.clone()) {
            let jac = chain.point_jacobian(&q, &marker).unwrap();
            for j in 0..n {
                let mut plus = q.clone();
                let mut minus = q.clone();
                plus.q[j] += h;
                minus.q[j] -= h;
                let fd = (chain.marker_position(&plus, &marker).unwrap() - chain.marker_position(&minus, &marker).unwrap())
                    / (2.0 * h);
                assert!((jac.column(j) - fd).amax() <= 1e-5, "marker {marker} joint {j}");
            }
        }
    }
}

#[test]
fn link_frames_stay_rigid() {
    let mut rng = rng(32);
    for _ in 0..100 {
        let chain = random_serial_chain(&mut rng, 6);
        let q = random_q(&mut rng, 6);
        let poses = chain.link_poses(&q.q).unwrap();
        for pose in &poses {
            assert!(pose.rotation_error() <= 1e-9);
        }
        // markers on the same link keep their separation for any q
        let q2 = random_q(&mut rng, 6);
        for i in 0..6 {
            let (a, b) = (format!("m{i}_0"), format!("m{i}_1"));
            let d1 = (chain.marker_position(&q, &a).unwrap() - chain.marker_position(&q, &b).unwrap()).norm();
            let d2 = (chain.marker_position(&q2, &a).unwrap() - chain.marker_position(&q2, &b).unwrap()).norm();
            assert!((d1 - d2).abs() < 1e-12);
        }
    }
}

#[test]
fn linearisation_error_decays_quadratically() {
    let mut rng = rng(33);
    let chain = random_serial_chain(&mut rng, 5);
    let q = random_q(&mut rng, 5);
    let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let jac = chain.point_jacobian(&q, "m4_0").unwrap();
    let p0 = chain.marker_position(&q, "m4_0").unwrap();
    let err = |eps: f64| {
        let mut moved = q.clone();
        for (v, d) in moved.q.iter_mut().zip(&dir) {
            *v += eps * d;
        }
        let predicted = p0 + &jac * nalgebra::DVector::from_iterator(5, dir.iter().map(|d| eps * d));
        (chain.marker_position(&moved, "m4_0").unwrap() - predicted).norm()
    };
    for eps in [1e-2, 1e-3] {
        let ratio = err(eps) / err(eps / 10.0);
        assert!((80.0..120.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn planar_forward_kinematics_closed_form() {
    let chain = planar_two_link();
    let mut rng = rng(34);
    for _ in 0..100 {
        let q = random_q(&mut rng, 2);
        let p = chain.marker_position(&q, "end").unwrap();
        let (a, b) = (q.q[0], q.q[0] + q.q[1]);
        assert!((p.x - (a.cos() + b.cos())).abs() < 1e-12);
        assert!((p.y - (a.sin() + b.sin())).abs() < 1e-12);
        assert_eq!(p.z, 0.0);
    }
}
