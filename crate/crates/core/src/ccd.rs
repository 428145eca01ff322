//! Stage one: cyclic coordinate descent.
//!
//! [`classic_ccd`] is the textbook position-only sweep from tip to base.
//! [`po_ccd_solve_one`] is the greedy orientation-aware variant used to seed
//! the polishing stage: every iteration scores a position step and an
//! orientation step for each joint, applies the best of each, and falls back
//! to a random kick when the update does not improve either error by more
//! than `min_improvement`.
//!
//! Candidate scores are computed without a full FK pass: turning joint `j` by
//! `d` moves the end effector rigidly about the world axis through `p_j`, so
//! the new pose is `p_j + R(d) (p_ee - p_j)` with orientation `R(d) q_ee`.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IkError, Result};
use crate::kinematics::{self, FrameSet, JointConfig, Pose, TaskResidual};
use crate::model::RobotModel;
use crate::noise::JointNoise;
use crate::stream::{stream, Domain};

const DEGENERATE: f64 = 1e-9;

/// Geometric decay `max(floor, initial * rate^k)` applied to orientation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anneal {
    pub initial: f64,
    pub rate: f64,
    pub floor: f64,
}

impl Default for Anneal {
    fn default() -> Self {
        Self {
            initial: 1.0,
            rate: 0.98,
            floor: 0.1,
        }
    }
}

impl Anneal {
    pub fn factor(&self, iteration: usize) -> f64 {
        let exp = i32::try_from(iteration).unwrap_or(i32::MAX);
        (self.initial * self.rate.powi(exp)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcdConfig {
    pub max_iters: usize,
    /// Coarse position tolerance, meters.
    pub position_tolerance: f64,
    /// Coarse orientation tolerance, radians.
    pub orientation_tolerance: f64,
    /// Minimum decrease of either error norm for a greedy update to stick.
    pub min_improvement: f64,
    pub anneal: Anneal,
    pub perturbation: JointNoise,
    pub rng_master_seed: u64,
}

impl Default for CcdConfig {
    fn default() -> Self {
        Self {
            max_iters: 64,
            position_tolerance: 5e-3,
            orientation_tolerance: 5e-2,
            min_improvement: 1e-6,
            anneal: Anneal::default(),
            perturbation: JointNoise::isotropic(0.0, 0.05),
            rng_master_seed: crate::DEFAULT_SEED,
        }
    }
}

impl CcdConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(IkError::InvalidConfig(format!("ccd: {m}")));
        if self.max_iters < 1 {
            return fail("max_iters must be at least 1");
        }
        let positive = [
            self.position_tolerance,
            self.orientation_tolerance,
            self.min_improvement,
            self.anneal.initial,
            self.anneal.floor,
        ];
        if positive.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return fail("tolerances, min_improvement and anneal factors must be positive");
        }
        if !(self.anneal.rate > 0.0 && self.anneal.rate <= 1.0) {
            return fail("anneal rate must lie in (0, 1]");
        }
        if self.anneal.floor > self.anneal.initial {
            return fail("anneal floor exceeds the initial factor");
        }
        self.perturbation.validate()
    }
}

/// One PO-CCD seed after termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub theta: JointConfig,
    pub residual: TaskResidual,
    pub iters_used: usize,
    pub converged: bool,
}

/// Outcome of one PO-CCD iteration, recorded when logging is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct CcdStep {
    pub iteration: usize,
    /// Whether the greedy update was kept (otherwise the seed was perturbed).
    pub accepted: bool,
    pub before: (f64, f64),
    pub candidate: (f64, f64),
    pub within_limits: bool,
}

fn position_step_raw(
    joint: &Vector3<f64>,
    axis: &Unit<Vector3<f64>>,
    ee: &Vector3<f64>,
    target: &Vector3<f64>,
) -> f64 {
    let u = ee - joint;
    let v = target - joint;
    let (nu, nv) = (u.norm(), v.norm());
    if nu < DEGENERATE || nv < DEGENERATE {
        return 0.0;
    }
    let r = axis.as_ref();
    let u = u / nu;
    let v = v / nv;
    let u_proj = u - r * u.dot(r);
    let v_proj = v - r * v.dot(r);
    let (npu, npv) = (u_proj.norm(), v_proj.norm());
    if npu < DEGENERATE || npv < DEGENERATE {
        return 0.0;
    }
    let magnitude = (u_proj.dot(&v_proj) / (npu * npv)).clamp(-1.0, 1.0).acos();
    let turn = u_proj.cross(&v_proj).dot(r);
    if turn < 0.0 {
        -magnitude
    } else if turn > 0.0 || magnitude > 0.0 {
        // turn == 0 with a nonzero angle means the vectors are antiparallel
        magnitude
    } else {
        0.0
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// CCD position update for revolute joint `joint` (an index into `frames`):
/// the signed angle about the joint axis that swings the projected
/// end-effector direction onto the projected target direction.
pub fn ccd_position_step(frames: &FrameSet, target: &Pose, joint: usize) -> Result<f64> {
    if joint >= frames.positions.len() {
        return Err(IkError::InvalidArgument(format!(
            "joint index {joint} out of range for {} revolute joints",
            frames.positions.len()
        )));
    }
    Ok(position_step_raw(
        &frames.positions[joint],
        &frames.axes[joint],
        &frames.ee.position,
        &target.position,
    ))
}

/// Annealed orientation update for a joint with world axis `axis`.
pub fn ccd_orientation_step(
    q_t: &UnitQuaternion<f64>,
    q_e: &UnitQuaternion<f64>,
    axis: &Unit<Vector3<f64>>,
    iteration: usize,
    anneal: &Anneal,
) -> f64 {
    let (phi, a) = kinematics::angle_axis(q_t, q_e);
    if phi == 0.0 {
        return 0.0;
    }
    anneal.factor(iteration) * sgn(a.dot(axis)) * phi
}

/// Position-only CCD result.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicCcdResult {
    pub theta: JointConfig,
    pub sweeps: usize,
    pub converged: bool,
}

/// Textbook CCD: sweeps joints tip to base, clamping to the joint limits, and
/// stops once the squared position error drops below `position_tolerance²`.
pub fn classic_ccd(
    model: &RobotModel,
    theta0: &[f64],
    target: &Pose,
    cfg: &CcdConfig,
) -> Result<ClassicCcdResult> {
    model.check_config(theta0)?;
    let tol2 = cfg.position_tolerance * cfg.position_tolerance;
    let mut theta = theta0.to_vec();
    let close = |theta: &[f64]| {
        (kinematics::fk(model, theta).position - target.position).norm_squared() < tol2
    };
    if close(&theta) {
        return Ok(ClassicCcdResult {
            theta,
            sweeps: 0,
            converged: true,
        });
    }
    let limits = model.limits();
    for sweep in 1..=cfg.max_iters {
        // Upstream joint frames do not move when a downstream joint turns.
        let frames = kinematics::frames(model, &theta);
        let mut ee = frames.ee.position;
        for j in (0..model.dof()).rev() {
            let (p, z) = (&frames.positions[j], &frames.axes[j]);
            let step = position_step_raw(p, z, &ee, &target.position);
            let next = limits[j].clamp(theta[j] + step);
            let applied = next - theta[j];
            theta[j] = next;
            ee = p + UnitQuaternion::from_axis_angle(z, applied) * (ee - p);
        }
        if close(&theta) {
            return Ok(ClassicCcdResult {
                theta,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    Ok(ClassicCcdResult {
        theta,
        sweeps: cfg.max_iters,
        converged: false,
    })
}

/// Draws the uniform starting configuration for `sample_index` and returns
/// the stream positioned for the perturbations that follow.
fn seeded(model: &RobotModel, cfg: &CcdConfig, sample_index: u64) -> (JointConfig, ChaCha8Rng) {
    let mut rng = stream(cfg.rng_master_seed, Domain::CcdSample, sample_index);
    let theta = model
        .limits()
        .iter()
        .map(|l| l.lower + rng.random::<f64>() * l.width())
        .collect();
    (theta, rng)
}

/// The uniform starting configuration PO-CCD uses for `sample_index`.
pub fn sample_seed(model: &RobotModel, cfg: &CcdConfig, sample_index: u64) -> JointConfig {
    seeded(model, cfg, sample_index).0
}

#[derive(Clone, Copy)]
struct Candidate {
    joint: usize,
    delta: f64,
    score: f64,
}

fn best(candidates: impl Iterator<Item = Candidate>) -> Option<Candidate> {
    // strict < keeps the lowest index on ties
    candidates.fold(None, |acc: Option<Candidate>, c| match acc {
        Some(a) if a.score <= c.score || c.score.is_nan() => Some(a),
        _ => Some(c),
    })
}

/// Runs one orientation-aware greedy CCD seed.
pub fn po_ccd_solve_one(
    model: &RobotModel,
    target: &Pose,
    sample_index: u64,
    cfg: &CcdConfig,
) -> SeedResult {
    run_seed(model, target, sample_index, cfg, None)
}

/// [`po_ccd_solve_one`], appending one [`CcdStep`] per iteration to `log`.
pub fn po_ccd_solve_one_logged(
    model: &RobotModel,
    target: &Pose,
    sample_index: u64,
    cfg: &CcdConfig,
    log: &mut Vec<CcdStep>,
) -> SeedResult {
    run_seed(model, target, sample_index, cfg, Some(log))
}

fn run_seed(
    model: &RobotModel,
    target: &Pose,
    sample_index: u64,
    cfg: &CcdConfig,
    mut log: Option<&mut Vec<CcdStep>>,
) -> SeedResult {
    let (mut theta, mut rng) = seeded(model, cfg, sample_index);
    let limits = model.limits();
    let q_t = target.orientation();
    let mut residual = kinematics::residual(model, &theta, target);
    let done = |r: &TaskResidual| r.within(cfg.position_tolerance, cfg.orientation_tolerance);

    let mut iters_used = 0;
    let mut converged = done(&residual);
    let mut candidate = theta.clone();
    while !converged && iters_used < cfg.max_iters {
        let k = iters_used;
        let frames = kinematics::frames(model, &theta);
        let ee = frames.ee;
        let (phi, err_axis) = kinematics::angle_axis(q_t, ee.orientation());
        let anneal = cfg.anneal.factor(k);

        let turned = |j: usize, raw: f64| {
            let delta = limits[j].clamp(theta[j] + raw) - theta[j];
            let rot = UnitQuaternion::from_axis_angle(&frames.axes[j], delta);
            let p = frames.positions[j];
            (delta, p + rot * (ee.position - p), rot * ee.orientation())
        };
        let position_best = best((0..model.dof()).map(|j| {
            let raw = position_step_raw(
                &frames.positions[j],
                &frames.axes[j],
                &ee.position,
                &target.position,
            );
            let (delta, p, _) = turned(j, raw);
            Candidate {
                joint: j,
                delta,
                score: (target.position - p).norm(),
            }
        }));
        let orientation_best = best((0..model.dof()).map(|j| {
            let raw = if phi == 0.0 {
                0.0
            } else {
                anneal * sgn(err_axis.dot(&frames.axes[j])) * phi
            };
            let (delta, _, q) = turned(j, raw);
            Candidate {
                joint: j,
                delta,
                score: kinematics::orientation_error(q_t, &q).norm(),
            }
        }));

        candidate.copy_from_slice(&theta);
        match (position_best, orientation_best) {
            (Some(p), Some(o)) if p.joint == o.joint => {
                let pick = if o.delta.abs() > p.delta.abs() { o } else { p };
                candidate[pick.joint] += pick.delta;
            }
            (p, o) => {
                for c in [o, p].into_iter().flatten() {
                    candidate[c.joint] += c.delta;
                }
            }
        }
        model.clamp_in_place(&mut candidate);
        let next = kinematics::residual(model, &candidate, target);

        let before = (residual.position_norm(), residual.orientation_norm());
        let after = (next.position_norm(), next.orientation_norm());
        let accepted = before.0 - after.0 > cfg.min_improvement
            || before.1 - after.1 > cfg.min_improvement;
        if accepted {
            theta.copy_from_slice(&candidate);
            residual = next;
        } else {
            cfg.perturbation.perturb(model, &mut theta, &mut rng);
            residual = kinematics::residual(model, &theta, target);
        }
        if let Some(log) = log.as_deref_mut() {
            log.push(CcdStep {
                iteration: k,
                accepted,
                before,
                candidate: after,
                within_limits: model.within_limits(&theta),
            });
        }
        iters_used += 1;
        converged = done(&residual);
    }

    SeedResult {
        theta,
        residual,
        iters_used,
        converged,
    }
}

/// `m` independent PO-CCD seeds with sample indices `0..m`, evaluated in
/// parallel. The result does not depend on the worker count.
pub fn po_ccd_batch(
    model: &RobotModel,
    target: &Pose,
    m: usize,
    cfg: &CcdConfig,
) -> Result<Vec<SeedResult>> {
    if m == 0 {
        return Err(IkError::EmptyInput("po-ccd batch size must be at least 1"));
    }
    cfg.validate()?;
    cfg.perturbation.check_dof(model.dof())?;
    Ok((0..m as u64)
        .into_par_iter()
        .map(|i| po_ccd_solve_one(model, target, i, cfg))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, frame_set};
    use crate::model::{JointSpec, Limits};
    use approx::assert_relative_eq;
    use nalgebra::Isometry3;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn lever() -> RobotModel {
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

    fn at(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    #[test]
    fn position_step_quarter_turn() {
        let frames = frame_set(&lever(), &[0.0]).unwrap();
        let step = ccd_position_step(&frames, &at(0.0, 1.0, 0.0), 0).unwrap();
        assert_relative_eq!(step, FRAC_PI_2, epsilon = 1e-12);
        let step = ccd_position_step(&frames, &at(0.0, -1.0, 0.0), 0).unwrap();
        assert_relative_eq!(step, -FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn position_step_degenerate_cases() {
        let frames = frame_set(&lever(), &[0.0]).unwrap();
        assert_eq!(ccd_position_step(&frames, &at(1.0, 0.0, 0.0), 0).unwrap(), 0.0);
        assert_eq!(ccd_position_step(&frames, &at(0.0, 0.0, 1.0), 0).unwrap(), 0.0);
        assert!(ccd_position_step(&frames, &at(0.0, 1.0, 0.0), 1).is_err());
    }

    #[test]
    fn orientation_step_cases() {
        let id = UnitQuaternion::identity();
        let z = Vector3::z_axis();
        let anneal = Anneal::default();
        assert_eq!(ccd_orientation_step(&id, &id, &z, 0, &anneal), 0.0);
        let qz = UnitQuaternion::from_axis_angle(&z, FRAC_PI_2);
        assert_relative_eq!(
            ccd_orientation_step(&qz, &id, &z, 0, &anneal),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_eq!(ccd_orientation_step(&qz, &id, &Vector3::x_axis(), 0, &anneal), 0.0);
    }

    #[test]
    fn anneal_schedule() {
        let a = Anneal::default();
        assert_eq!(a.factor(0), 1.0);
        assert!(a.factor(10) < a.factor(9));
        assert_eq!(a.factor(10_000), 0.1);
    }

    #[test]
    fn classic_already_there() {
        let m = lever();
        let r = classic_ccd(&m, &[0.3], &forward_kinematics(&m, &[0.3]).unwrap(), &CcdConfig::default())
            .unwrap();
        assert_eq!(r.theta, vec![0.3]);
        assert_eq!(r.sweeps, 0);
    }

    #[test]
    fn classic_unreachable_runs_out() {
        let m = lever();
        let cfg = CcdConfig {
            max_iters: 17,
            ..CcdConfig::default()
        };
        let r = classic_ccd(&m, &[0.0], &at(5.0, 5.0, 0.0), &cfg).unwrap();
        assert_eq!(r.sweeps, 17);
        assert!(!r.converged);
    }

    #[test]
    fn seeded_on_the_answer() {
        let m = crate::model::builtin::panda();
        let cfg = CcdConfig::default();
        let theta = sample_seed(&m, &cfg, 11);
        let target = forward_kinematics(&m, &theta).unwrap();
        let r = po_ccd_solve_one(&m, &target, 11, &cfg);
        assert!(r.converged);
        assert_eq!(r.iters_used, 0);
        assert_eq!(r.theta, theta);
    }

    #[test]
    fn infinite_gamma_is_random_walk() {
        let m = crate::model::builtin::panda();
        let cfg = CcdConfig {
            min_improvement: f64::INFINITY,
            max_iters: 20,
            ..CcdConfig::default()
        };
        let target = at(0.4, 0.1, 0.5);
        let mut log = Vec::new();
        let r = po_ccd_solve_one_logged(&m, &target, 0, &cfg, &mut log);
        assert_eq!(log.len(), 20);
        assert!(log.iter().all(|s| !s.accepted && s.within_limits));
        assert!(m.within_limits(&r.theta));
        assert!(!r.converged);
    }

    #[test]
    fn batch_of_one_matches_single() {
        let m = crate::model::builtin::panda();
        let cfg = CcdConfig::default();
        let target = at(0.4, 0.1, 0.5);
        let batch = po_ccd_batch(&m, &target, 1, &cfg).unwrap();
        assert_eq!(batch, vec![po_ccd_solve_one(&m, &target, 0, &cfg)]);
        assert!(po_ccd_batch(&m, &target, 0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CcdConfig::default().validate().is_ok());
        let bad = CcdConfig {
            anneal: Anneal {
                initial: 0.05,
                rate: 0.9,
                floor: 0.1,
            },
            ..CcdConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CcdConfig {
            max_iters: 0,
            ..CcdConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
