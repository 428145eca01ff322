//! Serial-chain robot models.
//!
//! A [`RobotModel`] is an ordered list of joints from the base link to the
//! last actuated joint, followed by a fixed end-effector offset. Fixed joints
//! between revolute joints stay in the chain; trailing fixed joints are folded
//! into [`RobotModel::ee_offset`].
//!
//! Models come from a subset of the URDF XML format ([`parse_robot`]), from a
//! compact TOML description ([`parse_native`]), or from the bundled
//! descriptions in [`builtin`].

mod native;
mod urdf;

pub use native::{parse_native, to_native_string};
pub use urdf::{parse_robot, parse_robot_with_tip, to_urdf_string};

use nalgebra::{Isometry3, Unit, UnitQuaternion, Vector3};

use crate::error::{IkError, Result};

/// Tolerance applied to unit axes and origin quaternions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Closed joint range in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

impl Limits {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower > upper {
            return Err(IkError::InvalidModel(format!(
                "joint limits [{lower}, {upper}] are not an ordered finite range"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Limits used for continuous joints.
    pub fn full_turn() -> Self {
        Self {
            lower: -std::f64::consts::PI,
            upper: std::f64::consts::PI,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointKind {
    Revolute {
        /// Rotation axis in the joint frame.
        axis: Unit<Vector3<f64>>,
        limits: Limits,
    },
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Transform from the parent link frame to the joint frame.
    pub origin: Isometry3<f64>,
    pub kind: JointKind,
}

impl JointSpec {
    pub fn revolute(
        name: impl Into<String>,
        origin: Isometry3<f64>,
        axis: Vector3<f64>,
        limits: Limits,
    ) -> Result<Self> {
        let name = name.into();
        let norm = axis.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(IkError::InvalidModel(format!(
                "joint `{name}` has a zero-length axis"
            )));
        }
        Ok(Self {
            name,
            origin,
            kind: JointKind::Revolute {
                axis: Unit::new_normalize(axis),
                limits,
            },
        })
    }

    pub fn fixed(name: impl Into<String>, origin: Isometry3<f64>) -> Self {
        Self {
            name: name.into(),
            origin,
            kind: JointKind::Fixed,
        }
    }

    pub fn is_revolute(&self) -> bool {
        matches!(self.kind, JointKind::Revolute { .. })
    }

    pub fn limits(&self) -> Option<Limits> {
        match self.kind {
            JointKind::Revolute { limits, .. } => Some(limits),
            JointKind::Fixed => None,
        }
    }
}

/// An immutable serial kinematic chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    joints: Vec<JointSpec>,
    ee_offset: Isometry3<f64>,
    revolute: Vec<usize>,
    limits: Vec<Limits>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec>,
        ee_offset: Isometry3<f64>,
    ) -> Result<Self> {
        for joint in &joints {
            check_unit_rotation(&joint.name, &joint.origin.rotation)?;
            if let JointKind::Revolute { axis, limits } = &joint.kind {
                if (axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(IkError::InvalidModel(format!(
                        "joint `{}` axis is not unit length",
                        joint.name
                    )));
                }
                Limits::new(limits.lower, limits.upper)?;
            }
        }
        check_unit_rotation("end-effector offset", &ee_offset.rotation)?;

        let revolute: Vec<usize> = joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.is_revolute())
            .map(|(i, _)| i)
            .collect();
        if revolute.is_empty() {
            return Err(IkError::InvalidModel(
                "chain has no revolute joints".into(),
            ));
        }
        let limits = revolute
            .iter()
            .filter_map(|&i| joints[i].limits())
            .collect();
        Ok(Self {
            name: name.into(),
            joints,
            ee_offset,
            revolute,
            limits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn ee_offset(&self) -> &Isometry3<f64> {
        &self.ee_offset
    }

    /// Number of revolute joints.
    pub fn dof(&self) -> usize {
        self.revolute.len()
    }

    /// Indices into [`Self::joints`] of the revolute joints, base to tip.
    pub fn revolute_indices(&self) -> &[usize] {
        &self.revolute
    }

    /// Joint limits of the revolute joints, base to tip.
    pub fn limits(&self) -> &[Limits] {
        &self.limits
    }

    /// Clamps every coordinate of `theta` into its joint range.
    pub fn clamp_in_place(&self, theta: &mut [f64]) {
        for (value, limits) in theta.iter_mut().zip(&self.limits) {
            *value = limits.clamp(*value);
        }
    }

    pub fn within_limits(&self, theta: &[f64]) -> bool {
        theta.len() == self.dof()
            && theta
                .iter()
                .zip(&self.limits)
                .all(|(value, limits)| limits.contains(*value))
    }

    pub(crate) fn check_config(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dof() {
            return Err(IkError::DimensionMismatch {
                expected: self.dof(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Upper bound on the distance from the base frame to the end effector:
    /// the summed lengths of every origin translation plus the tip offset.
    pub fn max_reach(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation.vector.norm())
            .sum::<f64>()
            + self.ee_offset.translation.vector.norm()
    }

    /// Structural equality with a numeric tolerance on axes and transforms.
    pub fn approx_eq(&self, other: &RobotModel, tol: f64) -> bool {
        self.joints.len() == other.joints.len()
            && self
                .joints
                .iter()
                .zip(&other.joints)
                .all(|(a, b)| joint_approx_eq(a, b, tol))
            && isometry_approx_eq(&self.ee_offset, &other.ee_offset, tol)
    }
}

fn check_unit_rotation(what: &str, q: &UnitQuaternion<f64>) -> Result<()> {
    let norm = q.as_ref().norm();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(IkError::InvalidModel(format!(
            "{what}: origin rotation has norm {norm}"
        )));
    }
    Ok(())
}

fn isometry_approx_eq(a: &Isometry3<f64>, b: &Isometry3<f64>, tol: f64) -> bool {
    (a.translation.vector - b.translation.vector).norm() <= tol
        && a.rotation.angle_to(&b.rotation) <= tol
}

fn joint_approx_eq(a: &JointSpec, b: &JointSpec, tol: f64) -> bool {
    let kinds = match (&a.kind, &b.kind) {
        (JointKind::Fixed, JointKind::Fixed) => true,
        (
            JointKind::Revolute {
                axis: axis_a,
                limits: lim_a,
            },
            JointKind::Revolute {
                axis: axis_b,
                limits: lim_b,
            },
        ) => {
            (axis_a.into_inner() - axis_b.into_inner()).norm() <= tol
                && (lim_a.lower - lim_b.lower).abs() <= tol
                && (lim_a.upper - lim_b.upper).abs() <= tol
        }
        _ => false,
    };
    kinds && a.name == b.name && isometry_approx_eq(&a.origin, &b.origin, tol)
}

/// Extends `model` to `target_dof` revolute joints by cycling through its
/// revolute joints base to tip and appending copies (axis, origin, limits)
/// before the end-effector offset.
pub fn extend_dof(model: &RobotModel, target_dof: usize) -> Result<RobotModel> {
    if target_dof < model.dof() {
        return Err(IkError::InvalidArgument(format!(
            "target dof {target_dof} is below the model dof {}",
            model.dof()
        )));
    }
    let mut joints = model.joints.clone();
    let originals = model.revolute_indices();
    for k in 0..target_dof - model.dof() {
        let source = &model.joints[originals[k % originals.len()]];
        let round = k / originals.len() + 1;
        joints.push(JointSpec {
            name: format!("{}_rep{round}", source.name),
            ..source.clone()
        });
    }
    RobotModel::new(
        format!("{}_{}dof", model.name, target_dof),
        joints,
        model.ee_offset,
    )
}

/// Robot descriptions shipped with the crate.
pub mod builtin {
    use super::{parse_robot, RobotModel};

    pub const PANDA_URDF: &str = include_str!("../../models/panda.urdf");
    pub const FETCH_ARM_URDF: &str = include_str!("../../models/fetch_arm.urdf");

    /// 7-DoF Franka Panda, end effector at `panda_hand`.
    pub fn panda() -> RobotModel {
        parse_robot(PANDA_URDF).expect("bundled panda description is valid")
    }

    /// 7-DoF Fetch-like arm, end effector at `gripper_link`.
    pub fn fetch_arm() -> RobotModel {
        parse_robot(FETCH_ARM_URDF).expect("bundled fetch description is valid")
    }

    /// Looks up a bundled model by name.
    pub fn by_name(name: &str) -> Option<RobotModel> {
        match name {
            "panda" => Some(panda()),
            "fetch" | "fetch_arm" => Some(fetch_arm()),
            _ => None,
        }
    }
}
