//! Forward kinematics, the geometric Jacobian, and SE(3) error maps.
//!
//! Quaternions are stored as nalgebra [`UnitQuaternion`]s and exchanged with
//! the outside world in `[w, x, y, z]` order. Every [`Pose`] is canonicalized
//! to `w >= 0`.

use nalgebra::{Isometry3, Matrix6xX, Quaternion, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{IkError, Result};
use crate::model::{JointKind, RobotModel};

/// Joint angles in radians, one per revolute joint.
pub type JointConfig = Vec<f64>;

/// 6 x dof matrix; rows 0..3 are linear velocity, rows 3..6 angular.
pub type Jacobian = Matrix6xX<f64>;

/// Quaternion norm tolerance for externally supplied orientations.
pub const QUAT_INPUT_TOLERANCE: f64 = 1e-6;

const SMALL_VECTOR: f64 = 1e-12;
const SMALL_ANGLE: f64 = 1e-9;

/// End-effector or target pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", try_from = "PoseRecord")]
pub struct Pose {
    pub position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: canonical(orientation),
        }
    }

    /// Builds a pose from a raw `[w, x, y, z]` quaternion, rejecting inputs
    /// whose norm is off by more than `tolerance`, and normalizing otherwise.
    pub fn from_wxyz(position: [f64; 3], wxyz: [f64; 4], tolerance: f64) -> Result<Self> {
        let [w, x, y, z] = wxyz;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tolerance {
            return Err(IkError::NonUnitQuaternion { norm });
        }
        Ok(Self::new(
            Vector3::from(position),
            UnitQuaternion::from_quaternion(q),
        ))
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    position: [f64; 3],
    quaternion: [f64; 4],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        Self {
            position: p.position.into(),
            quaternion: p.wxyz(),
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = IkError;

    fn try_from(r: PoseRecord) -> Result<Self> {
        Pose::from_wxyz(r.position, r.quaternion, QUAT_INPUT_TOLERANCE)
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::new_normalize(q.into_inner());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// World-frame joint positions and axes, plus the end-effector pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub positions: Vec<Vector3<f64>>,
    pub axes: Vec<Unit<Vector3<f64>>>,
    pub ee: Pose,
}

/// Position error `p_t - p_ee` (meters) and orientation error vector (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskResidual {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl TaskResidual {
    pub fn position_norm(&self) -> f64 {
        self.position.norm()
    }

    pub fn orientation_norm(&self) -> f64 {
        self.orientation.norm()
    }

    pub fn norm(&self) -> f64 {
        self.stacked().norm()
    }

    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.orientation.x,
            self.orientation.y,
            self.orientation.z,
        )
    }

    pub fn within(&self, position_tol: f64, orientation_tol: f64) -> bool {
        self.position_norm() < position_tol && self.orientation_norm() < orientation_tol
    }
}

/// Walks the chain, calling `visit(k, frame)` with the world frame of each
/// revolute joint `k` before its rotation is applied. Returns the
/// end-effector transform.
#[inline]
fn walk(
    model: &RobotModel,
    theta: &[f64],
    mut visit: impl FnMut(usize, &Isometry3<f64>, &Unit<Vector3<f64>>),
) -> Isometry3<f64> {
    let mut frame = Isometry3::identity();
    let mut k = 0;
    for joint in model.joints() {
        frame *= joint.origin;
        if let JointKind::Revolute { axis, .. } = &joint.kind {
            visit(k, &frame, axis);
            frame *= UnitQuaternion::from_axis_angle(axis, theta[k]);
            k += 1;
        }
    }
    frame * model.ee_offset()
}

pub(crate) fn fk(model: &RobotModel, theta: &[f64]) -> Pose {
    Pose::from_isometry(&walk(model, theta, |_, _, _| {}))
}

pub(crate) fn frames(model: &RobotModel, theta: &[f64]) -> FrameSet {
    let n = model.dof();
    let mut positions = Vec::with_capacity(n);
    let mut axes = Vec::with_capacity(n);
    let ee = walk(model, theta, |_, frame, axis| {
        positions.push(frame.translation.vector);
        axes.push(Unit::new_normalize(frame.rotation * axis.into_inner()));
    });
    FrameSet {
        positions,
        axes,
        ee: Pose::from_isometry(&ee),
    }
}

pub(crate) fn jacobian_from_frames(frames: &FrameSet) -> Jacobian {
    let n = frames.positions.len();
    let mut j = Jacobian::zeros(n);
    for (i, (p, z)) in frames.positions.iter().zip(&frames.axes).enumerate() {
        let linear = z.cross(&(frames.ee.position - p));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(z);
    }
    j
}

pub(crate) fn residual(model: &RobotModel, theta: &[f64], target: &Pose) -> TaskResidual {
    residual_between(&fk(model, theta), target)
}

pub(crate) fn residual_between(achieved: &Pose, target: &Pose) -> TaskResidual {
    TaskResidual {
        position: target.position - achieved.position,
        orientation: orientation_error(&target.orientation, &achieved.orientation),
    }
}

/// Rotation vector taking `q_e` onto `q_t` in the world frame, shortest arc.
pub(crate) fn orientation_error(
    q_t: &UnitQuaternion<f64>,
    q_e: &UnitQuaternion<f64>,
) -> Vector3<f64> {
    let mut q = (q_t.into_inner() * q_e.into_inner().conjugate()).coords;
    if q.w < 0.0 {
        q = -q;
    }
    let v = Vector3::new(q.x, q.y, q.z);
    let nv = v.norm();
    if nv < SMALL_VECTOR {
        return Vector3::zeros();
    }
    v * (2.0 * nv.atan2(q.w.abs()) / nv)
}

pub(crate) fn angle_axis(
    q_t: &UnitQuaternion<f64>,
    q_e: &UnitQuaternion<f64>,
) -> (f64, Unit<Vector3<f64>>) {
    let mut q = (q_t.into_inner() * q_e.into_inner().conjugate()).coords;
    if q.w < 0.0 {
        q = -q;
    }
    let phi = 2.0 * q.w.clamp(-1.0, 1.0).acos();
    let v = Vector3::new(q.x, q.y, q.z);
    if phi < SMALL_ANGLE || v.norm() < SMALL_VECTOR {
        return (0.0, Vector3::z_axis());
    }
    (phi, Unit::new_normalize(v / (0.5 * phi).sin()))
}

fn unit_input(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUAT_INPUT_TOLERANCE {
        return Err(IkError::NonUnitQuaternion { norm });
    }
    Ok(UnitQuaternion::new_normalize(*q))
}

/// End-effector pose at `theta`.
pub fn forward_kinematics(model: &RobotModel, theta: &[f64]) -> Result<Pose> {
    model.check_config(theta)?;
    Ok(fk(model, theta))
}

/// World positions and axes of every revolute joint, and the end-effector pose.
pub fn frame_set(model: &RobotModel, theta: &[f64]) -> Result<FrameSet> {
    model.check_config(theta)?;
    Ok(frames(model, theta))
}

/// Geometric Jacobian: column `i` is `[z_i x (p_ee - p_i); z_i]`.
pub fn jacobian(model: &RobotModel, theta: &[f64]) -> Result<Jacobian> {
    model.check_config(theta)?;
    Ok(jacobian_from_frames(&frames(model, theta)))
}

/// Orientation error `omega` of `q_t * q_e^-1`; `|omega| <= pi`.
pub fn quat_error(q_t: &Quaternion<f64>, q_e: &Quaternion<f64>) -> Result<Vector3<f64>> {
    Ok(orientation_error(&unit_input(q_t)?, &unit_input(q_e)?))
}

/// Angle-axis decomposition `(phi, axis)` of `q_t * q_e^-1`. Below 1e-9 rad the
/// angle is reported as exactly zero with the +z axis.
pub fn angle_axis_error(
    q_t: &Quaternion<f64>,
    q_e: &Quaternion<f64>,
) -> Result<(f64, Unit<Vector3<f64>>)> {
    Ok(angle_axis(&unit_input(q_t)?, &unit_input(q_e)?))
}

pub fn task_residual(model: &RobotModel, theta: &[f64], target: &Pose) -> Result<TaskResidual> {
    model.check_config(theta)?;
    Ok(residual(model, theta, target))
}
