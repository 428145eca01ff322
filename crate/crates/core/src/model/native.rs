//! Compact TOML chain description, one `[[joints]]` table per joint.
//!
//! ```toml
//! name = "planar2"
//!
//! [[joints]]
//! name = "j1"
//! kind = "revolute"
//! axis = [0.0, 0.0, 1.0]
//! limits = [-3.14159, 3.14159]
//!
//! [[joints]]
//! name = "j2"
//! kind = "revolute"
//! xyz = [1.0, 0.0, 0.0]
//! axis = [0.0, 0.0, 1.0]
//! limits = [-3.14159, 3.14159]
//!
//! [ee_offset]
//! xyz = [1.0, 0.0, 0.0]
//! ```
//!
//! `quat` is `[w, x, y, z]`; origins default to the identity.

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{JointKind, JointSpec, Limits, RobotModel};
use crate::error::{IkError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeModel {
    name: String,
    joints: Vec<NativeJoint>,
    #[serde(default)]
    ee_offset: NativeTransform,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NativeKind {
    Revolute,
    Fixed,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeJoint {
    name: String,
    kind: NativeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xyz: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quat: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limits: Option<[f64; 2]>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeTransform {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xyz: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quat: Option<[f64; 4]>,
}

impl NativeTransform {
    fn to_isometry(&self, what: &str) -> Result<Isometry3<f64>> {
        let t = self.xyz.unwrap_or([0.0; 3]);
        let rotation = match self.quat {
            Some([w, x, y, z]) => {
                let q = Quaternion::new(w, x, y, z);
                let norm = q.norm();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(IkError::InvalidModel(format!(
                        "{what}: quaternion norm {norm} is not unit"
                    )));
                }
                UnitQuaternion::from_quaternion(q)
            }
            None => UnitQuaternion::identity(),
        };
        Ok(Isometry3::from_parts(
            Translation3::new(t[0], t[1], t[2]),
            rotation,
        ))
    }

    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        Self {
            xyz: Some([t.x, t.y, t.z]),
            quat: Some([q.w, q.i, q.j, q.k]),
        }
    }
}

pub fn parse_native(text: &str) -> Result<RobotModel> {
    let doc: NativeModel = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].matches('\n').count() as u32 + 1)
            .unwrap_or(0);
        IkError::Parse {
            line,
            element: "toml".into(),
            message: e.message().to_string(),
        }
    })?;
    let mut joints = Vec::with_capacity(doc.joints.len());
    for j in doc.joints {
        let origin = NativeTransform {
            xyz: j.xyz,
            quat: j.quat,
        }
        .to_isometry(&j.name)?;
        let spec = match j.kind {
            NativeKind::Fixed => JointSpec::fixed(j.name, origin),
            NativeKind::Revolute => {
                let [lo, hi] = j
                    .limits
                    .ok_or_else(|| IkError::MissingLimits { joint: j.name.clone() })?;
                let axis = j.axis.map(Vector3::from).unwrap_or_else(Vector3::z);
                JointSpec::revolute(j.name, origin, axis, Limits::new(lo, hi)?)?
            }
        };
        joints.push(spec);
    }
    let ee = doc.ee_offset.to_isometry("ee_offset")?;
    RobotModel::new(doc.name, joints, ee)
}

pub fn to_native_string(model: &RobotModel) -> String {
    let doc = NativeModel {
        name: model.name().to_string(),
        joints: model
            .joints()
            .iter()
            .map(|j| {
                let (kind, axis, limits) = match &j.kind {
                    JointKind::Fixed => (NativeKind::Fixed, None, None),
                    JointKind::Revolute { axis, limits } => (
                        NativeKind::Revolute,
                        Some([axis.x, axis.y, axis.z]),
                        Some([limits.lower, limits.upper]),
                    ),
                };
                let origin = NativeTransform::from_isometry(&j.origin);
                NativeJoint {
                    name: j.name.clone(),
                    kind,
                    xyz: origin.xyz,
                    quat: origin.quat,
                    axis,
                    limits,
                }
            })
            .collect(),
        ee_offset: NativeTransform::from_isometry(model.ee_offset()),
    };
    toml::to_string(&doc).expect("native model serializes")
}
