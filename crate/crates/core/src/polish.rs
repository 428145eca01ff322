//! Stage two: Jacobian-based polishing.
//!
//! Each seed is refined independently with a damped, weighted Gauss-Newton
//! (LM) step under a trust region and backtracking line search. When that
//! fails to reduce the weighted objective the cascade tries a dogleg step,
//! then a single-coordinate step along the steepest joint, then a random
//! kick.
//!
//! Sign convention: the residual is `r = [p_t - p_ee; omega]`, whose
//! derivative with respect to `theta` is `-J` for the geometric Jacobian `J`.
//! The LM step therefore solves `(J^T W^2 J + lambda D) d = +J^T W^2 r`, which
//! is a descent direction for `f = 1/2 |W r|^2`, and the gradient of `f` is
//! `-J^T W^2 r`.
//!
//! The weights `W` are recomputed from the Jacobian at the start of every
//! iteration and held fixed while candidate steps are compared.

use nalgebra::{DMatrix, DVector, Vector6};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IkError, Result};
use crate::kinematics::{self, Jacobian, JointConfig, Pose, TaskResidual};
use crate::model::RobotModel;
use crate::noise::JointNoise;
use crate::stream::{stream, Domain};

const ZERO_GRADIENT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolishConfig {
    pub max_iters: usize,
    /// Fine position tolerance, meters.
    pub position_tolerance: f64,
    /// Fine orientation tolerance, radians.
    pub orientation_tolerance: f64,
    /// LM damping factor.
    pub damping: f64,
    /// Trust-region radius on joint updates, radians.
    pub trust_radius: f64,
    /// Line-search backoff factor (> 1).
    pub backoff: f64,
    /// Number of backoff levels after the full step.
    pub line_search_depth: u32,
    pub position_weight: f64,
    pub orientation_weight: f64,
    /// Lower bound on the diagonal of `D = diag(J^T J)`.
    pub damping_floor: f64,
    pub perturbation: JointNoise,
    pub rng_master_seed: u64,
}

impl Default for PolishConfig {
    fn default() -> Self {
        Self {
            max_iters: 128,
            position_tolerance: 1e-9,
            orientation_tolerance: 1e-8,
            damping: 1e-3,
            trust_radius: 0.5,
            backoff: 2.0,
            line_search_depth: 8,
            position_weight: 1.0,
            orientation_weight: 0.5,
            damping_floor: 1e-8,
            perturbation: JointNoise::isotropic(0.0, 0.05),
            rng_master_seed: crate::DEFAULT_SEED,
        }
    }
}

impl PolishConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(IkError::InvalidConfig(format!("polish: {m}")));
        if self.max_iters < 1 {
            return fail("max_iters must be at least 1");
        }
        let positive = [
            self.position_tolerance,
            self.orientation_tolerance,
            self.damping,
            self.trust_radius,
            self.damping_floor,
        ];
        if positive.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return fail("tolerances, damping, trust_radius and damping_floor must be positive");
        }
        if self.backoff.is_nan() || self.backoff <= 1.0 {
            return fail("backoff must exceed 1");
        }
        if self.line_search_depth < 1 {
            return fail("line_search_depth must be at least 1");
        }
        let weights = [self.position_weight, self.orientation_weight];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0)
        {
            return fail("weights must be non-negative and not both zero");
        }
        self.perturbation.validate()
    }
}

/// Diagonal of the residual weighting matrix `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights(pub Vector6<f64>);

impl Weights {
    /// Position rows get `w_p / (1 + |J_row|)` each. The orientation rows share
    /// one factor `w_o / (1 + rms(|J_row|))` over the three angular rows, which
    /// keeps `-J^T W^2 r` the exact gradient of the frozen-weight objective.
    pub fn from_jacobian(jac: &Jacobian, cfg: &PolishConfig) -> Self {
        let mut w = Vector6::zeros();
        for i in 0..3 {
            w[i] = cfg.position_weight / (1.0 + jac.row(i).norm());
        }
        let angular_rms = ((0..3)
            .map(|i| jac.row(3 + i).norm_squared())
            .sum::<f64>()
            / 3.0)
            .sqrt();
        let wo = cfg.orientation_weight / (1.0 + angular_rms);
        for i in 3..6 {
            w[i] = wo;
        }
        Self(w)
    }

    pub fn apply(&self, r: &TaskResidual) -> Vector6<f64> {
        self.0.component_mul(&r.stacked())
    }

    /// `1/2 |W r|^2`.
    pub fn objective(&self, r: &TaskResidual) -> f64 {
        0.5 * self.apply(r).norm_squared()
    }

    fn squared(&self) -> Vector6<f64> {
        self.0.component_mul(&self.0)
    }
}

/// Linearization of the problem at one configuration.
struct Local {
    residual: TaskResidual,
    jac: Jacobian,
    weights: Weights,
    objective: f64,
}

impl Local {
    fn at(model: &RobotModel, theta: &[f64], target: &Pose, cfg: &PolishConfig) -> Self {
        let frames = kinematics::frames(model, theta);
        let residual = kinematics::residual_between(&frames.ee, target);
        let jac = kinematics::jacobian_from_frames(&frames);
        let weights = Weights::from_jacobian(&jac, cfg);
        let objective = weights.objective(&residual);
        Self {
            residual,
            jac,
            weights,
            objective,
        }
    }

    /// `-J^T W^2 r`, the gradient of the frozen-weight objective.
    fn gradient(&self) -> DVector<f64> {
        let wr = self.weights.squared().component_mul(&self.residual.stacked());
        -(self.jac.transpose() * wr)
    }
}

/// `1/2 |W r(theta)|^2` with `W` built from the Jacobian at `theta`.
pub fn weighted_residual_norm(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<f64> {
    model.check_config(theta)?;
    Ok(Local::at(model, theta, target, cfg).objective)
}

/// Gradient of the weighted objective with `W` frozen at `theta`.
pub fn weighted_gradient(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<DVector<f64>> {
    model.check_config(theta)?;
    Ok(Local::at(model, theta, target, cfg).gradient())
}

fn lm_direction(local: &Local, cfg: &PolishConfig) -> Result<DVector<f64>> {
    let w2 = local.weights.squared();
    let wj = DMatrix::from_fn(6, local.jac.ncols(), |i, j| w2[i] * local.jac[(i, j)]);
    let jt = local.jac.transpose();
    let normal = &jt * wj;
    let rhs = &jt * w2.component_mul(&local.residual.stacked());
    let gram_diag = DVector::from_iterator(
        local.jac.ncols(),
        local
            .jac
            .column_iter()
            .map(|c| c.norm_squared().max(cfg.damping_floor)),
    );
    for damping in [cfg.damping, cfg.damping * 100.0] {
        let mut a = normal.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += damping * gram_diag[i];
        }
        if let Some(chol) = a.cholesky() {
            let mut step = chol.solve(&rhs);
            if step.iter().all(|v| v.is_finite()) {
                step.apply(|v| *v = v.clamp(-cfg.trust_radius, cfg.trust_radius));
                return Ok(step);
            }
        }
    }
    Err(IkError::SingularSystem)
}

/// Damped weighted Gauss-Newton step, each component clamped to the trust
/// radius. Retries once with 100x damping before reporting a singular system.
pub fn lm_step(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<DVector<f64>> {
    model.check_config(theta)?;
    lm_direction(&Local::at(model, theta, target, cfg), cfg)
}

struct Trial {
    alpha: f64,
    theta: JointConfig,
}

/// Scans `alpha = 1, 1/beta, ..., 1/beta^A`; the first `alpha` whose clamped
/// iterate strictly lowers the frozen-weight objective wins.
fn search(
    model: &RobotModel,
    theta: &[f64],
    step: &DVector<f64>,
    target: &Pose,
    local: &Local,
    cfg: &PolishConfig,
) -> Option<Trial> {
    let mut alpha = 1.0;
    let mut trial = theta.to_vec();
    for _ in 0..=cfg.line_search_depth {
        for ((t, base), d) in trial.iter_mut().zip(theta).zip(step.iter()) {
            *t = base + alpha * d;
        }
        model.clamp_in_place(&mut trial);
        let r = kinematics::residual(model, &trial, target);
        if local.weights.objective(&r) < local.objective {
            return Some(Trial {
                alpha,
                theta: trial,
            });
        }
        alpha /= cfg.backoff;
    }
    None
}

/// Backtracking line search along `step`; returns 0 when no scale helps.
pub fn line_search(
    model: &RobotModel,
    theta: &[f64],
    step: &DVector<f64>,
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<f64> {
    model.check_config(theta)?;
    if step.len() != theta.len() {
        return Err(IkError::DimensionMismatch {
            expected: theta.len(),
            got: step.len(),
        });
    }
    if step.iter().any(|v| !v.is_finite()) {
        return Err(IkError::InvalidArgument("step is not finite".into()));
    }
    let local = Local::at(model, theta, target, cfg);
    Ok(search(model, theta, step, target, &local, cfg).map_or(0.0, |t| t.alpha))
}

fn dogleg_direction(local: &Local, cfg: &PolishConfig) -> Result<DVector<f64>> {
    let r = local.residual.stacked();
    let jt = local.jac.transpose();
    let g = &jt * r;
    let g_norm2 = g.norm_squared();
    if g_norm2.sqrt() < ZERO_GRADIENT {
        return Err(IkError::ZeroGradient);
    }
    let jg = &local.jac * &g;
    let cauchy = g_norm2 / jg.norm_squared();
    let gd = &g * cauchy;

    let mut gram = &jt * &local.jac;
    for i in 0..gram.nrows() {
        gram[(i, i)] += cfg.damping_floor;
    }
    let gn = gram.cholesky().ok_or(IkError::SingularSystem)?.solve(&g);

    let radius = cfg.trust_radius;
    if gn.norm() <= radius {
        return Ok(gn);
    }
    // |gn + tau (gd - gn)|^2 = R^2, smallest root in [0, 1]
    let d = &gd - &gn;
    let a = d.norm_squared();
    let b = 2.0 * gn.dot(&d);
    let c = gn.norm_squared() - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 && disc >= 0.0 {
        let sq = disc.sqrt();
        // numerically stable pair of roots
        let q = -0.5 * (b + b.signum() * sq);
        let mut roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
        roots.sort_by(f64::total_cmp);
        if let Some(tau) = roots.into_iter().find(|t| (0.0..=1.0).contains(t)) {
            return Ok(&gd * tau + &gn * (1.0 - tau));
        }
    }
    let gd_norm = gd.norm();
    Ok(if gd_norm > radius {
        gd * (radius / gd_norm)
    } else {
        gd
    })
}

/// Trust-region dogleg blend of the Cauchy step and the Gauss-Newton step on
/// the unweighted residual: `tau = 0` is pure Gauss-Newton, `tau = 1` pure
/// gradient.
pub fn dogleg_step(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<DVector<f64>> {
    model.check_config(theta)?;
    dogleg_direction(&Local::at(model, theta, target, cfg), cfg)
}

/// Moves only the joint with the largest gradient magnitude (ties go to the
/// lowest index), by `-sign(g_i) min(|g_i|, radius)`.
pub fn single_coord_from_gradient(gradient: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    let (index, g) = gradient
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bg), (i, g)| {
            if g.abs() > bg.abs() {
                (i, g)
            } else {
                (bi, bg)
            }
        });
    if g.abs() < ZERO_GRADIENT {
        return Err(IkError::ZeroGradient);
    }
    let mut step = DVector::zeros(gradient.len());
    step[index] = -g.signum() * g.abs().min(radius);
    Ok(step)
}

pub fn single_coord_step(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    cfg: &PolishConfig,
) -> Result<DVector<f64>> {
    let g = weighted_gradient(model, theta, target, cfg)?;
    single_coord_from_gradient(&g, cfg.trust_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Lm,
    Dogleg,
    SingleCoordinate,
    Perturbation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    pub lm: usize,
    pub dogleg: usize,
    pub single_coordinate: usize,
    pub perturbation: usize,
}

impl StepCounts {
    pub fn total(&self) -> usize {
        self.lm + self.dogleg + self.single_coordinate + self.perturbation
    }

    fn bump(&mut self, kind: StepKind) {
        match kind {
            StepKind::Lm => self.lm += 1,
            StepKind::Dogleg => self.dogleg += 1,
            StepKind::SingleCoordinate => self.single_coordinate += 1,
            StepKind::Perturbation => self.perturbation += 1,
        }
    }
}

/// One step taken by the polisher, recorded when logging is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct PolishStep {
    pub kind: StepKind,
    /// Frozen-weight objective before and after the step.
    pub objective: (f64, f64),
    /// Unweighted residual norm before and after the step.
    pub residual_norm: (f64, f64),
    /// Applied change in joint space, after clamping to the joint limits.
    pub step_inf_norm: f64,
    pub step_l2_norm: f64,
    pub within_limits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishResult {
    pub theta: JointConfig,
    pub residual: TaskResidual,
    /// `|W r|` at `theta`, with `W` built from the Jacobian at `theta`.
    pub weighted_norm: f64,
    pub converged: bool,
    pub step_counts: StepCounts,
}

/// Refines one seed. `seed_index` selects the perturbation stream.
pub fn polish_seed(
    model: &RobotModel,
    target: &Pose,
    seed: &[f64],
    seed_index: u64,
    cfg: &PolishConfig,
) -> Result<PolishResult> {
    model.check_config(seed)?;
    Ok(refine(model, target, seed, seed_index, cfg, None))
}

/// [`polish_seed`], appending every step taken to `log`.
pub fn polish_seed_logged(
    model: &RobotModel,
    target: &Pose,
    seed: &[f64],
    seed_index: u64,
    cfg: &PolishConfig,
    log: &mut Vec<PolishStep>,
) -> Result<PolishResult> {
    model.check_config(seed)?;
    Ok(refine(model, target, seed, seed_index, cfg, Some(log)))
}

fn refine(
    model: &RobotModel,
    target: &Pose,
    seed: &[f64],
    seed_index: u64,
    cfg: &PolishConfig,
    mut log: Option<&mut Vec<PolishStep>>,
) -> PolishResult {
    let mut rng: Option<ChaCha8Rng> = None;
    let mut theta = seed.to_vec();
    model.clamp_in_place(&mut theta);
    let done = |r: &TaskResidual| r.within(cfg.position_tolerance, cfg.orientation_tolerance);

    let mut counts = StepCounts::default();
    let mut best: Option<(f64, JointConfig, TaskResidual)> = None;
    let mut local = Local::at(model, &theta, target, cfg);
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        if done(&local.residual) {
            converged = true;
            break;
        }
        let weighted = (2.0 * local.objective).sqrt();
        if best.as_ref().is_none_or(|(w, _, _)| weighted < *w) {
            best = Some((weighted, theta.clone(), local.residual));
        }

        let (kind, next) = cascade(model, &theta, target, &local, cfg).unwrap_or_else(|| {
            let mut kicked = theta.clone();
            let rng = rng.get_or_insert_with(|| {
                stream(cfg.rng_master_seed, Domain::PolishSeed, seed_index)
            });
            cfg.perturbation.perturb(model, &mut kicked, rng);
            (StepKind::Perturbation, kicked)
        });
        counts.bump(kind);

        if let Some(log) = log.as_deref_mut() {
            let after = kinematics::residual(model, &next, target);
            let diff = next.iter().zip(&theta).map(|(a, b)| a - b);
            log.push(PolishStep {
                kind,
                objective: (local.objective, local.weights.objective(&after)),
                residual_norm: (local.residual.norm(), after.norm()),
                step_inf_norm: diff.clone().fold(0.0, |m, d| m.max(d.abs())),
                step_l2_norm: diff.map(|d| d * d).sum::<f64>().sqrt(),
                within_limits: model.within_limits(&next),
            });
        }
        theta = next;
        local = Local::at(model, &theta, target, cfg);
    }

    if !converged && done(&local.residual) {
        converged = true;
    }
    let weighted = (2.0 * local.objective).sqrt();
    if !converged {
        if let Some((w, best_theta, best_residual)) = best {
            if w < weighted {
                let weights = Weights::from_jacobian(&kinematics::jacobian_from_frames(
                    &kinematics::frames(model, &best_theta),
                ), cfg);
                return PolishResult {
                    weighted_norm: weights.apply(&best_residual).norm(),
                    theta: best_theta,
                    residual: best_residual,
                    converged: false,
                    step_counts: counts,
                };
            }
        }
    }
    PolishResult {
        theta,
        residual: local.residual,
        weighted_norm: weighted,
        converged,
        step_counts: counts,
    }
}

/// LM, then dogleg, then single coordinate. `None` means all three failed.
fn cascade(
    model: &RobotModel,
    theta: &[f64],
    target: &Pose,
    local: &Local,
    cfg: &PolishConfig,
) -> Option<(StepKind, JointConfig)> {
    if let Ok(step) = lm_direction(local, cfg) {
        if let Some(trial) = search(model, theta, &step, target, local, cfg) {
            return Some((StepKind::Lm, trial.theta));
        }
    }
    if let Ok(step) = dogleg_direction(local, cfg) {
        let mut trial: JointConfig = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
        model.clamp_in_place(&mut trial);
        if kinematics::residual(model, &trial, target).norm() < local.residual.norm() {
            return Some((StepKind::Dogleg, trial));
        }
    }
    if let Ok(step) = single_coord_from_gradient(&local.gradient(), cfg.trust_radius) {
        if let Some(trial) = search(model, theta, &step, target, local, cfg) {
            return Some((StepKind::SingleCoordinate, trial.theta));
        }
    }
    None
}

/// Polished batch: every refined seed plus the best one.
#[derive(Debug, Clone, PartialEq)]
pub struct PolishBatch {
    pub best: PolishResult,
    pub best_index: usize,
    pub all: Vec<PolishResult>,
}

/// Refines every seed in parallel; seed `i` perturbs from stream `i`. The best
/// result minimizes `|W r|`, ties going to the lowest index.
pub fn pj_ik(
    model: &RobotModel,
    target: &Pose,
    seeds: &[JointConfig],
    cfg: &PolishConfig,
) -> Result<PolishBatch> {
    if seeds.is_empty() {
        return Err(IkError::EmptyInput("no seeds to polish"));
    }
    cfg.validate()?;
    cfg.perturbation.check_dof(model.dof())?;
    for seed in seeds {
        model.check_config(seed)?;
    }
    let all: Vec<PolishResult> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, seed)| refine(model, target, seed, i as u64, cfg, None))
        .collect();
    let best_index = best_index(&all);
    Ok(PolishBatch {
        best: all[best_index].clone(),
        best_index,
        all,
    })
}

pub(crate) fn best_index(results: &[PolishResult]) -> usize {
    results
        .iter()
        .enumerate()
        .fold(0, |bi, (i, r)| {
            if r.weighted_norm < results[bi].weighted_norm {
                i
            } else {
                bi
            }
        })
}
