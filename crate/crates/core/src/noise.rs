use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{IkError, Result};
use crate::model::RobotModel;

/// A scalar applied to every joint, or one value per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerJoint {
    Uniform(f64),
    Values(Vec<f64>),
}

impl PerJoint {
    pub fn get(&self, joint: usize) -> f64 {
        match self {
            PerJoint::Uniform(v) => *v,
            PerJoint::Values(v) => v[joint],
        }
    }

    fn check(&self, dof: usize, what: &str) -> Result<()> {
        match self {
            PerJoint::Values(v) if v.len() != dof => Err(IkError::InvalidConfig(format!(
                "{what} has {} entries for a {dof}-joint model",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerJoint::Uniform(v) => vec![*v],
            PerJoint::Values(v) => v.clone(),
        }
    }
}

/// Independent Gaussian noise per joint: mean in radians, variance in rad².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointNoise {
    pub mean: PerJoint,
    pub variance: PerJoint,
}

impl JointNoise {
    pub fn isotropic(mean: f64, std_dev: f64) -> Self {
        Self {
            mean: PerJoint::Uniform(mean),
            variance: PerJoint::Uniform(std_dev * std_dev),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad_var = self
            .variance
            .values()
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0);
        let bad_mean = self.mean.values().iter().any(|m| !m.is_finite());
        if bad_var || bad_mean {
            return Err(IkError::InvalidConfig(
                "noise mean must be finite and variance finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn check_dof(&self, dof: usize) -> Result<()> {
        self.mean.check(dof, "noise mean")?;
        self.variance.check(dof, "noise variance")
    }

    /// Adds one draw per joint and clamps the result into the joint limits.
    /// A normal deviate is consumed for every joint, even at zero variance.
    pub fn perturb(&self, model: &RobotModel, theta: &mut [f64], rng: &mut impl Rng) {
        for (i, value) in theta.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *value += self.mean.get(i) + self.variance.get(i).sqrt() * z;
        }
        model.clamp_in_place(theta);
    }
}
