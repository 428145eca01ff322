//! Evaluation harness: Halton targets, pose errors, batch-size sweeps and
//! solution-diversity scoring.
//!
//! Diversity is measured with the maximum mean discrepancy between a solver's
//! retained solutions and a reference set produced by independent polishing
//! runs from uniform starts. The kernel is a Gaussian RBF whose bandwidth is
//! the median pairwise distance of the pooled samples; scores are only
//! comparable between runs that share this choice, which is recorded in
//! [`MmdMetadata`].

use std::io::Write;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IkError, Result};
use crate::kinematics::{self, JointConfig, Pose};
use crate::model::RobotModel;
use crate::polish;
use crate::solver::{self, SolverConfig};
use crate::stream::{stream, Domain};

pub const DEFAULT_HALTON_SKIP: u64 = 20;

/// Radical inverse of `index` in `base`.
pub fn halton(index: u64, base: u64) -> Result<f64> {
    if base < 2 {
        return Err(IkError::InvalidArgument(format!("halton base {base} is below 2")));
    }
    if index == 0 {
        return Err(IkError::InvalidArgument("halton index starts at 1".into()));
    }
    // reversed digits over base^digits, divided once
    let b = u128::from(base);
    let (mut i, mut num, mut den) = (u128::from(index), 0u128, 1u128);
    while i > 0 {
        num = num * b + i % b;
        den *= b;
        i /= b;
    }
    Ok(num as f64 / den as f64)
}

pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|p| *p * *p <= candidate)
            .all(|p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Point `index` of the `dim`-dimensional Halton sequence over the first
/// `dim` primes.
pub fn halton_point(index: u64, dim: usize) -> Result<Vec<f64>> {
    first_primes(dim).into_iter().map(|b| halton(index, b)).collect()
}

/// Reachable targets together with the configurations that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub targets: Vec<Pose>,
    pub source_configs: Vec<JointConfig>,
    pub halton_skip: u64,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Maps Halton points `skip + 1 ..= skip + count` into the joint box and takes
/// their forward kinematics.
pub fn gen_targets(model: &RobotModel, count: usize, skip: u64) -> Result<TargetSet> {
    if count == 0 {
        return Err(IkError::EmptyInput("target count must be at least 1"));
    }
    let primes = first_primes(model.dof());
    let mut source_configs = Vec::with_capacity(count);
    for index in skip + 1..=skip + count as u64 {
        let theta = model
            .limits()
            .iter()
            .zip(&primes)
            .map(|(l, &b)| halton(index, b).map(|h| l.lower + h * l.width()))
            .collect::<Result<JointConfig>>()?;
        source_configs.push(theta);
    }
    let targets = source_configs
        .iter()
        .map(|t| kinematics::fk(model, t))
        .collect();
    Ok(TargetSet {
        targets,
        source_configs,
        halton_skip: skip,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub position_mm: f64,
    pub orientation_rad: f64,
}

impl PoseError {
    /// `position_mm + 1000 * orientation_rad`, a single sortable error.
    pub fn combined(&self) -> f64 {
        self.position_mm + 1000.0 * self.orientation_rad
    }
}

pub fn pose_error(achieved: &Pose, target: &Pose) -> PoseError {
    let r = kinematics::residual_between(achieved, target);
    PoseError {
        position_mm: 1000.0 * r.position_norm(),
        orientation_rad: r.orientation_norm(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdScore {
    pub mmd: f64,
    pub mmd_squared: f64,
    pub kernel_bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the pairwise distances over `X ∪ Y`, or 1 when every point
/// coincides.
pub fn median_bandwidth(x: &[JointConfig], y: &[JointConfig]) -> f64 {
    let pooled: Vec<&JointConfig> = x.iter().chain(y).collect();
    let mut dists: Vec<f64> = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for (i, a) in pooled.iter().enumerate() {
        for b in &pooled[i + 1..] {
            dists.push(sq_dist(a, b).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    match median(&mut dists) {
        h if h > 0.0 => h,
        _ => 1.0,
    }
}

fn kernel_mean(a: &[JointConfig], b: &[JointConfig], gamma: f64) -> f64 {
    let mut values: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| (-gamma * sq_dist(x, y)).exp()))
        .collect();
    // summing in sorted order makes the estimate independent of sample order
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Biased (V-statistic) estimate of the squared MMD under a Gaussian kernel
/// `exp(-|x - y|^2 / (2 h^2))`. `bandwidth` defaults to [`median_bandwidth`].
pub fn mmd(x: &[JointConfig], y: &[JointConfig], bandwidth: Option<f64>) -> Result<MmdScore> {
    if x.is_empty() || y.is_empty() {
        return Err(IkError::EmptyInput("mmd needs two nonempty samples"));
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().chain(y).find(|p| p.len() != dim) {
        return Err(IkError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => {
            return Err(IkError::InvalidArgument(format!(
                "kernel bandwidth must be positive, got {h}"
            )))
        }
        None => median_bandwidth(x, y),
    };
    let gamma = 1.0 / (2.0 * h * h);
    let kxx = kernel_mean(x, x, gamma);
    let kyy = kernel_mean(y, y, gamma);
    let kxy = kernel_mean(x, y, gamma);
    let mmd_squared = (kxx + kyy - 2.0 * kxy).max(0.0);
    Ok(MmdScore {
        mmd: mmd_squared.sqrt(),
        mmd_squared,
        kernel_bandwidth: h,
    })
}

/// How diversity scores were computed, carried in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdMetadata {
    pub kernel: String,
    pub estimator: String,
    pub bandwidth: String,
    pub reference: String,
    pub reference_starts: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub solver: SolverConfig,
    /// Success thresholds for [`BenchRow::success_rate`].
    pub success_position_mm: f64,
    pub success_orientation_rad: f64,
    /// Lowest-error solutions kept per target for diversity scoring.
    pub retained: usize,
    /// Uniform starts polished per target to build the reference set.
    pub reference_starts: usize,
    /// Skip diversity scoring entirely.
    pub skip_diversity: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            success_position_mm: 1e-3,
            success_orientation_rad: 1e-5,
            retained: 50,
            reference_starts: 50,
            skip_diversity: false,
        }
    }
}

/// Aggregate accuracy and latency for one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub median_position_mm: f64,
    pub mean_position_mm: f64,
    pub median_orientation_rad: f64,
    pub mean_orientation_rad: f64,
    pub median_combined: f64,
    pub mean_time_ms: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub batch_size: usize,
    pub target: usize,
    pub error: PoseError,
    pub converged: bool,
    pub theta: JointConfig,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDiversity {
    pub target: usize,
    /// Retained solutions of the largest batch against the reference set.
    pub retained: MmdScore,
    /// The single best solution repeated `retained` times, same reference.
    pub degenerate: MmdScore,
    pub reference_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub dof: usize,
    pub config: BenchConfig,
    pub targets: TargetSet,
    pub rows: Vec<BenchRow>,
    pub outcomes: Vec<TargetOutcome>,
    pub diversity: Vec<TargetDiversity>,
    pub mmd: MmdMetadata,
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The `count` lowest-combined-error configurations of a batch, ties to the
/// lower batch index.
pub fn retain_best(
    model: &RobotModel,
    target: &Pose,
    batch: &[JointConfig],
    count: usize,
) -> Vec<JointConfig> {
    let errors: Vec<f64> = batch
        .iter()
        .map(|t| pose_error(&kinematics::fk(model, t), target).combined())
        .collect();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(count)
        .map(|i| batch[i].clone())
        .collect()
}

/// Polishes `starts` configurations drawn uniformly from the joint box. The
/// converged solutions form the reference; if none converge all are used.
pub fn reference_solutions(
    model: &RobotModel,
    target: &Pose,
    target_index: u64,
    starts: usize,
    cfg: &SolverConfig,
) -> Result<Vec<JointConfig>> {
    let mut rng = stream(cfg.ccd.rng_master_seed, Domain::Reference, target_index);
    let seeds: Vec<JointConfig> = (0..starts)
        .map(|_| {
            model
                .limits()
                .iter()
                .map(|l| l.lower + rng.random::<f64>() * l.width())
                .collect()
        })
        .collect();
    let polished = polish::pj_ik(model, target, &seeds, &cfg.polish)?;
    let converged: Vec<JointConfig> = polished
        .all
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.theta.clone())
        .collect();
    if converged.is_empty() {
        Ok(polished.all.into_iter().map(|r| r.theta).collect())
    } else {
        Ok(converged)
    }
}

/// Solves every target at every batch size (with the solver configuration
/// rescaled to that size), aggregates one row per size, and scores the
/// diversity of the largest size's retained solutions.
pub fn run_benchmark(
    model: &RobotModel,
    targets: &TargetSet,
    batch_sizes: &[usize],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if batch_sizes.is_empty() {
        return Err(IkError::EmptyInput("no batch sizes"));
    }
    if targets.is_empty() {
        return Err(IkError::EmptyInput("no targets"));
    }
    if batch_sizes.contains(&0) {
        return Err(IkError::InvalidArgument("batch sizes must be positive".into()));
    }
    let largest = *batch_sizes.iter().max().expect("nonempty");

    let mut rows = Vec::with_capacity(batch_sizes.len());
    let mut outcomes = Vec::with_capacity(batch_sizes.len() * targets.len());
    let mut largest_reports = None;
    for &b in batch_sizes {
        let scaled = cfg.solver.scaled(b);
        let reports = solver::solve_batch(model, &targets.targets, &scaled)?;
        let per_target: Vec<TargetOutcome> = reports
            .iter()
            .enumerate()
            .map(|(i, r)| TargetOutcome {
                batch_size: b,
                target: i,
                error: pose_error(&kinematics::fk(model, &r.best.theta), &targets.targets[i]),
                converged: r.best.converged,
                theta: r.best.theta.clone(),
                time_ms: millis(r.total_time),
            })
            .collect();
        rows.push(aggregate(b, &per_target, cfg));
        outcomes.extend(per_target);
        if b == largest && largest_reports.is_none() {
            largest_reports = Some(reports);
        }
    }

    let mut diversity = Vec::new();
    if !cfg.skip_diversity {
        for (i, report) in largest_reports.expect("largest batch ran").iter().enumerate() {
            let target = &targets.targets[i];
            let batch: Vec<JointConfig> = report.batch.iter().map(|r| r.theta.clone()).collect();
            let retained = retain_best(model, target, &batch, cfg.retained);
            let reference =
                reference_solutions(model, target, i as u64, cfg.reference_starts, &cfg.solver)?;
            let degenerate = vec![retained[0].clone(); retained.len()];
            diversity.push(TargetDiversity {
                target: i,
                retained: mmd(&retained, &reference, None)?,
                degenerate: mmd(&degenerate, &reference, None)?,
                reference_size: reference.len(),
            });
        }
    }

    Ok(BenchReport {
        model: model.name().to_string(),
        dof: model.dof(),
        config: cfg.clone(),
        targets: targets.clone(),
        rows,
        outcomes,
        diversity,
        mmd: MmdMetadata {
            kernel: "gaussian_rbf".into(),
            estimator: "biased_v_statistic".into(),
            bandwidth: "median_pairwise_distance".into(),
            reference: "multi_start_polish_uniform".into(),
            reference_starts: cfg.reference_starts,
            retained: cfg.retained,
        },
    })
}

fn aggregate(batch_size: usize, outcomes: &[TargetOutcome], cfg: &BenchConfig) -> BenchRow {
    let mut pos: Vec<f64> = outcomes.iter().map(|o| o.error.position_mm).collect();
    let mut ori: Vec<f64> = outcomes.iter().map(|o| o.error.orientation_rad).collect();
    let mut combined: Vec<f64> = outcomes.iter().map(|o| o.error.combined()).collect();
    let times: Vec<f64> = outcomes.iter().map(|o| o.time_ms).collect();
    let successes = outcomes
        .iter()
        .filter(|o| {
            o.error.position_mm < cfg.success_position_mm
                && o.error.orientation_rad < cfg.success_orientation_rad
        })
        .count();
    BenchRow {
        batch_size,
        mean_position_mm: mean(&pos),
        median_position_mm: median(&mut pos),
        mean_orientation_rad: mean(&ori),
        median_orientation_rad: median(&mut ori),
        median_combined: median(&mut combined),
        mean_time_ms: mean(&times),
        success_rate: successes as f64 / outcomes.len() as f64,
    }
}

/// Writes one CSV line per row under a header.
pub fn write_rows_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| IkError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(report: &BenchReport, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, report).map_err(|e| IkError::Io(e.to_string()))
}
