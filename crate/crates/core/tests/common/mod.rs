//! Shared fixtures and reference implementations for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use hybrid_ik::model::{builtin, extend_dof, JointKind, JointSpec, Limits};
use hybrid_ik::RobotModel;
use nalgebra::{Isometry3, Matrix3, Matrix4, Matrix6xX, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn lever() -> RobotModel {
    RobotModel::new(
        "lever",
        vec![JointSpec::revolute(
            "j",
            Isometry3::identity(),
            Vector3::z(),
            Limits::new(-PI, PI).unwrap(),
        )
        .unwrap()],
        Isometry3::translation(1.0, 0.0, 0.0),
    )
    .unwrap()
}

pub fn planar2() -> RobotModel {
    let lim = Limits::new(-PI, PI).unwrap();
    RobotModel::new(
        "planar2",
        vec![
            JointSpec::revolute("j1", Isometry3::identity(), Vector3::z(), lim).unwrap(),
            JointSpec::revolute("j2", Isometry3::translation(1.0, 0.0, 0.0), Vector3::z(), lim)
                .unwrap(),
        ],
        Isometry3::translation(1.0, 0.0, 0.0),
    )
    .unwrap()
}

/// The 1, 2, 7 and 24 joint models used by the oracle sweeps.
pub fn oracle_models() -> Vec<RobotModel> {
    let panda = builtin::panda();
    let panda24 = extend_dof(&panda, 24).unwrap();
    vec![lever(), planar2(), panda, panda24]
}

pub fn uniform_config(model: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
    model
        .limits()
        .iter()
        .map(|l| rng.random_range(l.lower..=l.upper))
        .collect()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for a unit axis.
fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

fn homogeneous(rot: Matrix3<f64>) -> Matrix4<f64> {
    let mut h = Matrix4::identity();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    h
}

/// End-effector transform as a product of 4x4 homogeneous matrices.
pub fn fk_matrix(model: &RobotModel, theta: &[f64]) -> Matrix4<f64> {
    let mut t = Matrix4::<f64>::identity();
    let mut q = theta.iter();
    for joint in model.joints() {
        t *= joint.origin.to_homogeneous();
        if let JointKind::Revolute { axis, .. } = &joint.kind {
            t *= homogeneous(rodrigues(axis, *q.next().unwrap()));
        }
    }
    t * model.ee_offset().to_homogeneous()
}

pub fn split(t: &Matrix4<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    (
        t.fixed_view::<3, 1>(0, 3).into_owned(),
        t.fixed_view::<3, 3>(0, 0).into_owned(),
    )
}

/// Rotation vector of `r` via the matrix logarithm.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-9 {
        return w / 2.0;
    }
    w * (angle / (2.0 * angle.sin()))
}

/// Central-difference geometric Jacobian: linear velocity rows from position
/// differences, angular rows from the rotation between the two probes.
pub fn fd_jacobian(model: &RobotModel, theta: &[f64], h: f64) -> Matrix6xX<f64> {
    let mut jac = Matrix6xX::zeros(theta.len());
    for j in 0..theta.len() {
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let (pp, rp) = split(&fk_matrix(model, &plus));
        let (pm, rm) = split(&fk_matrix(model, &minus));
        let lin = (pp - pm) / (2.0 * h);
        let ang = log_so3(&(rp * rm.transpose())) / (2.0 * h);
        for i in 0..3 {
            jac[(i, j)] = lin[i];
            jac[(3 + i, j)] = ang[i];
        }
    }
    jac
}

/// `|a - b| <= max(rel * |b|, abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * b.abs()).max(abs)
}

/// Writes `index` in `base`, reverses the digit string and reads it back as a
/// fraction.
pub fn digit_reversal(index: u64, base: u64) -> f64 {
    let mut digits = Vec::new();
    let mut i = index;
    while i > 0 {
        digits.push(i % base);
        i /= base;
    }
    // digits[0] is the least significant, which becomes the first fractional digit
    let (num, den) = digits
        .iter()
        .fold((0u64, 1u64), |(n, d), &digit| (n * base + digit, d * base));
    num as f64 / den as f64
}
