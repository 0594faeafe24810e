#![allow(dead_code)]

use beavr_core::geometry::{Quaternion, Transform, Vec3};
use beavr_core::kinematics::{ChainDescription, JointDescription, KinematicChain, MarkerDescription, OffsetDescription};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_quaternion(rng: &mut impl Rng) -> Quaternion {
    let q = Quaternion::new_unchecked(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng));
    q.normalized()
}

pub fn random_transform(rng: &mut impl Rng) -> Transform {
    Transform::from_pose(random_vec(rng, 2.0), &random_quaternion(rng))
}

pub fn planar_two_link() -> KinematicChain {
    let joint = |name: &str, x: f64, end: Option<[f64; 3]>| JointDescription {
        name: name.into(),
        link: None,
        parent: None,
        offset: OffsetDescription { translation: [x, 0.0, 0.0], rpy: [0.0; 3] },
        axis: [0.0, 0.0, 1.0],
        limits: [-3.1, 3.1],
        capsule_end: end,
    };
    KinematicChain::from_description(&ChainDescription {
        name: "planar2".into(),
        capsule_radius: 0.01,
        joints: vec![joint("j1", 0.0, None), joint("j2", 1.0, Some([1.0, 0.0, 0.0]))],
        markers: vec![MarkerDescription { name: "end".into(), link: "j2".into(), offset: [1.0, 0.0, 0.0] }],
        home: None,
    })
    .unwrap()
}

/// Random serial chain with arbitrary axes, offsets and two markers per link.
pub fn random_serial_chain(rng: &mut impl Rng, joints: usize) -> KinematicChain {
    let mut desc =
        ChainDescription { name: "random".into(), capsule_radius: 0.01, joints: Vec::new(), markers: Vec::new(), home: None };
    for i in 0..joints {
        let axis = random_vec(rng, 1.0).normalize();
        let t = random_vec(rng, 0.3);
        desc.joints.push(JointDescription {
            name: format!("j{i}"),
            link: None,
            parent: None,
            offset: OffsetDescription {
                translation: [t.x, t.y, t.z],
                rpy: [rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)],
            },
            axis: [axis.x, axis.y, axis.z],
            limits: [-3.0, 3.0],
            capsule_end: None,
        });
        for k in 0..2 {
            let o = random_vec(rng, 0.2);
            desc.markers.push(MarkerDescription { name: format!("m{i}_{k}"), link: format!("j{i}"), offset: [o.x, o.y, o.z] });
        }
    }
    KinematicChain::from_description(&desc).unwrap()
}
