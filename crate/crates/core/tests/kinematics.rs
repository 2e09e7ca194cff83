//! Forward kinematics checked against plain 4x4 homogeneous transforms
//! built from the Rodrigues formula, independent of the library's
//! quaternion code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use abc_core::arm::{ChainLink, KinematicChain};

type Mat4 = [[f64; 4]; 4];

fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// R = I + sin(q) K + (1 - cos(q)) K^2 for unit axis k.
fn rodrigues(axis: [f64; 3], q: f64) -> Mat4 {
    let [x, y, z] = axis;
    let k = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let mut k2 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k2[i][j] = (0..3).map(|n| k[i][n] * k[n][j]).sum();
        }
    }
    let mut m = identity();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += q.sin() * k[i][j] + (1.0 - q.cos()) * k2[i][j];
        }
    }
    m
}

fn translate_x(d: f64) -> Mat4 {
    let mut m = identity();
    m[0][3] = d;
    m
}

fn oracle(links: &[ChainLink], q: &[f64]) -> Mat4 {
    links.iter().zip(q).fold(identity(), |acc, (link, &angle)| {
        mul(&mul(&acc, &rodrigues(link.axis, angle)), &translate_x(link.link_length))
    })
}

fn quat_to_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[test]
fn zero_pose_is_straight_along_x() {
    let chain = KinematicChain::default_arm();
    let pose = chain.forward_kinematics(&[0.0; 8]).unwrap();
    let reach = 0.30 + 0.25 + 0.08;
    assert!((pose.position[0] - reach).abs() < 1e-12);
    assert!(pose.position[1].abs() < 1e-12 && pose.position[2].abs() < 1e-12);
    assert_eq!(pose.orientation, [1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn random_angles_match_homogeneous_oracle() {
    let chain = KinematicChain::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0_0D);
    for _ in 0..500 {
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        let expected = oracle(chain.links(), &q);
        let pose = chain.forward_kinematics(&q).unwrap();
        for i in 0..3 {
            assert!((pose.position[i] - expected[i][3]).abs() < 1e-9, "position {i} at {q:?}");
        }
        let r = quat_to_matrix(pose.orientation);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - expected[i][j]).abs() < 1e-9, "rotation ({i},{j}) at {q:?}");
            }
        }
        let points = chain.joint_points(&q).unwrap();
        assert_eq!(points.len(), 9);
        assert_eq!(points[8], pose.position);
    }
}

#[test]
fn random_chains_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let links: Vec<ChainLink> = (0..n)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
                ChainLink { axis: v.map(|c| c / norm), link_length: rng.random_range(0.0..0.5) }
            })
            .collect();
        let chain = KinematicChain::new(links.clone()).unwrap();
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let expected = oracle(&links, &q);
        let pose = chain.forward_kinematics(&q).unwrap();
        for i in 0..3 {
            assert!((pose.position[i] - expected[i][3]).abs() < 1e-9);
        }
    }
}

#[test]
fn wrong_joint_count_is_rejected() {
    let chain = KinematicChain::default_arm();
    assert!(chain.forward_kinematics(&[0.0; 7]).is_err());
}
