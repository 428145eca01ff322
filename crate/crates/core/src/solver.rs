//! The two-stage driver: coarse PO-CCD seeds, rank, replicate, polish.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccd::{self, CcdConfig, SeedResult};
use crate::error::{IkError, Result};
use crate::kinematics::{self, JointConfig, Pose};
use crate::model::RobotModel;
use crate::noise::JointNoise;
use crate::polish::{self, PolishConfig, PolishResult, Weights};
use crate::stream::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Number of PO-CCD seeds (`M`).
    pub seeds: usize,
    /// Number of coarse seeds kept for polishing (`K`).
    pub keep: usize,
    /// Polishing batch size (`B`).
    pub batch: usize,
    /// Noise added to every replicated copy after the first.
    pub replication: JointNoise,
    pub ccd: CcdConfig,
    pub polish: PolishConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            seeds: 1000,
            keep: 50,
            batch: 100,
            replication: JointNoise::isotropic(0.0, 0.02),
            ccd: CcdConfig::default(),
            polish: PolishConfig::default(),
        }
    }
}

impl SolverConfig {
    /// Parses a TOML document. Missing keys take their defaults and unknown
    /// keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| IkError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("solver config serializes")
    }

    /// Reseeds both stochastic stages.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ccd.rng_master_seed = seed;
        self.polish.rng_master_seed = seed;
        self
    }

    /// Rescales `seeds` and `keep` proportionally to a new polishing batch
    /// size, keeping at least one of each.
    pub fn scaled(&self, batch: usize) -> Self {
        let ratio = batch as f64 / self.batch as f64;
        let seeds = ((self.seeds as f64 * ratio).round() as usize).max(1);
        let keep = ((self.keep as f64 * ratio).round() as usize).clamp(1, seeds.min(batch).max(1));
        Self {
            seeds,
            keep,
            batch,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep < 1 || self.keep > self.seeds || self.keep > self.batch {
            return Err(IkError::InvalidConfig(format!(
                "need 1 <= keep <= seeds and keep <= batch (seeds {}, keep {}, batch {})",
                self.seeds, self.keep, self.batch
            )));
        }
        self.replication.validate()?;
        self.ccd.validate()?;
        self.polish.validate()
    }

    fn check_dof(&self, dof: usize) -> Result<()> {
        self.replication.check_dof(dof)?;
        self.ccd.perturbation.check_dof(dof)?;
        self.polish.perturbation.check_dof(dof)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub target: Pose,
    pub best: PolishResult,
    pub best_index: usize,
    pub batch: Vec<PolishResult>,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
    pub total_time: Duration,
}

impl SolveReport {
    /// Equality that ignores the timing fields.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.target == other.target
            && self.best == other.best
            && self.best_index == other.best_index
            && self.batch == other.batch
    }
}

/// `|W r|` of each coarse seed, with `W` built from the polish-stage weights
/// at the seed configuration.
pub fn seed_scores(
    model: &RobotModel,
    target: &Pose,
    seeds: &[SeedResult],
    cfg: &PolishConfig,
) -> Vec<f64> {
    seeds
        .iter()
        .map(|s| {
            let frames = kinematics::frames(model, &s.theta);
            let jac = kinematics::jacobian_from_frames(&frames);
            let r = kinematics::residual_between(&frames.ee, target);
            Weights::from_jacobian(&jac, cfg).apply(&r).norm()
        })
        .collect()
}

/// Keeps the `keep` lowest-scoring seeds (ties to the lower index) and emits
/// `batch / keep` rounds over them. The first round is the seeds themselves;
/// later rounds add one `noise` draw per joint and clamp.
pub fn rank_and_replicate(
    model: &RobotModel,
    seeds: &[SeedResult],
    scores: &[f64],
    keep: usize,
    batch: usize,
    noise: &JointNoise,
    rng: &mut impl Rng,
) -> Result<Vec<JointConfig>> {
    if seeds.len() != scores.len() {
        return Err(IkError::DimensionMismatch {
            expected: seeds.len(),
            got: scores.len(),
        });
    }
    if keep < 1 || keep > seeds.len() || keep > batch {
        return Err(IkError::InvalidArgument(format!(
            "cannot keep {keep} of {} seeds for a batch of {batch}",
            seeds.len()
        )));
    }
    noise.validate()?;
    noise.check_dof(model.dof())?;

    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(keep);

    let rounds = batch / keep;
    let mut out = Vec::with_capacity(keep * rounds);
    out.extend(order.iter().map(|&i| seeds[i].theta.clone()));
    for _ in 1..rounds {
        for &i in &order {
            let mut theta = seeds[i].theta.clone();
            noise.perturb(model, &mut theta, rng);
            out.push(theta);
        }
    }
    Ok(out)
}

/// Solves one target. Unreachable targets yield a best-effort report with
/// every result unconverged.
pub fn solve(model: &RobotModel, target: &Pose, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    cfg.check_dof(model.dof())?;
    let start = Instant::now();

    let coarse = ccd::po_ccd_batch(model, target, cfg.seeds, &cfg.ccd)?;
    let scores = seed_scores(model, target, &coarse, &cfg.polish);
    let mut rng = stream(cfg.ccd.rng_master_seed, Domain::Replicate, 0);
    let starts = rank_and_replicate(
        model,
        &coarse,
        &scores,
        cfg.keep,
        cfg.batch,
        &cfg.replication,
        &mut rng,
    )?;
    let stage1_time = start.elapsed();

    let polished = polish::pj_ik(model, target, &starts, &cfg.polish)?;
    let total_time = start.elapsed();
    Ok(SolveReport {
        target: *target,
        best: polished.best,
        best_index: polished.best_index,
        batch: polished.all,
        stage1_time,
        stage2_time: total_time - stage1_time,
        total_time,
    })
}

/// Independent solves for each target, in input order.
pub fn solve_batch(
    model: &RobotModel,
    targets: &[Pose],
    cfg: &SolverConfig,
) -> Result<Vec<SolveReport>> {
    if targets.is_empty() {
        return Err(IkError::EmptyInput("no targets"));
    }
    targets.par_iter().map(|t| solve(model, t, cfg)).collect()
}
