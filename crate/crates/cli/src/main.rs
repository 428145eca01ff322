//! Command-line front end for the `hybrid-ik` library.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hybrid_ik::bench::{self, BenchConfig, TargetSet, DEFAULT_HALTON_SKIP};
use hybrid_ik::model::{self, builtin};
use hybrid_ik::{forward_kinematics, solve, Pose, RobotModel, SolverConfig, DEFAULT_SEED};

/// Quaternion norms further than this from 1 are rejected on input.
const POSE_QUAT_TOLERANCE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "hybrid-ik", version, about = "Two-stage inverse kinematics for serial arms")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "HYBRID_IK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one target pose.
    Solve(SolveArgs),
    /// Run the batch-size sweep on Halton targets.
    Bench(BenchArgs),
    /// Write a JSON set of reachable Halton targets.
    GenTargets(GenTargetsArgs),
    /// Score two JSON configuration sets with the maximum mean discrepancy.
    Mmd(MmdArgs),
    /// Append cyclic joint copies to a model.
    ExtendModel(ExtendArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// URDF or `.toml` model file, or `builtin:panda` / `builtin:fetch`.
    #[arg(long)]
    model: String,
    /// End-effector link when the URDF chain continues past it.
    #[arg(long)]
    tip: Option<String>,
}

#[derive(Args)]
struct SolverArgs {
    /// TOML solver configuration; unknown keys are errors.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Target pose as `px py pz qw qx qy qz` (meters, scalar-first quaternion).
    #[arg(long, num_args = 7, allow_negative_numbers = true, value_names = ["PX", "PY", "PZ", "QW", "QX", "QY", "QZ"], conflicts_with = "from_config", required_unless_present = "from_config")]
    target: Option<Vec<f64>>,
    /// Target given as the forward kinematics of these joint angles.
    #[arg(long, num_args = 1.., allow_negative_numbers = true, value_delimiter = ',')]
    from_config: Option<Vec<f64>>,
    /// Write the full JSON report here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Number of Halton targets to generate.
    #[arg(long, default_value_t = 100, conflicts_with = "targets_file")]
    targets: usize,
    /// Read targets from a `gen-targets` file instead.
    #[arg(long)]
    targets_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HALTON_SKIP)]
    skip: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    batch_sizes: Vec<usize>,
    /// Skip the diversity scoring pass.
    #[arg(long)]
    no_diversity: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenTargetsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_HALTON_SKIP)]
    skip: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct MmdArgs {
    /// JSON array of joint configurations, or a `gen-targets` file.
    x: PathBuf,
    y: PathBuf,
    /// Fixed kernel bandwidth instead of the median heuristic.
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelFormat {
    Urdf,
    Toml,
}

#[derive(Args)]
struct ExtendArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dof: usize,
    #[arg(long)]
    output: PathBuf,
    /// Output format; inferred from the output extension when omitted.
    #[arg(long, value_enum)]
    format: Option<ModelFormat>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::GenTargets(args) => cmd_gen_targets(args),
        Command::Mmd(args) => cmd_mmd(args),
        Command::ExtendModel(args) => cmd_extend_model(args),
    }
}

fn load_model(args: &ModelArgs) -> Result<RobotModel> {
    if let Some(name) = args.model.strip_prefix("builtin:") {
        return builtin::by_name(name)
            .with_context(|| format!("unknown builtin model `{name}` (try panda or fetch)"));
    }
    let path = Path::new(&args.model);
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        model::parse_native(&text)
    } else {
        model::parse_robot_with_tip(&text, args.tip.as_deref())
    };
    parsed.with_context(|| format!("loading {}", path.display()))
}

fn load_solver(args: &SolverArgs) -> Result<SolverConfig> {
    let cfg = match &args.config {
        Some(path) => SolverConfig::from_toml_file(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => SolverConfig::default(),
    };
    Ok(cfg.with_seed(args.seed))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(bytes).context("writing stdout"),
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let cfg = load_solver(&args.solver)?;
    let target = match (&args.target, &args.from_config) {
        (Some(v), _) => Pose::from_wxyz([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]], POSE_QUAT_TOLERANCE)?,
        (None, Some(theta)) => forward_kinematics(&model, theta)?,
        (None, None) => bail!("either --target or --from-config is required"),
    };
    let report = solve(&model, &target, &cfg)?;
    let achieved = forward_kinematics(&model, &report.best.theta)?;
    let err = bench::pose_error(&achieved, &target);

    println!("converged: {}", report.best.converged);
    println!("theta: {:?}", report.best.theta);
    println!("position_error_mm: {:e}", err.position_mm);
    println!("orientation_error_rad: {:e}", err.orientation_rad);
    println!("stage1_ms: {:.3}", report.stage1_time.as_secs_f64() * 1e3);
    println!("stage2_ms: {:.3}", report.stage2_time.as_secs_f64() * 1e3);
    println!("total_ms: {:.3}", report.total_time.as_secs_f64() * 1e3);

    if let Some(path) = &args.output {
        let json = serde_json::to_vec_pretty(&report)?;
        write_out(Some(path), &json)?;
    }
    Ok(if report.best.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn read_targets(path: &Path) -> Result<TargetSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let targets = match &args.targets_file {
        Some(path) => read_targets(path)?,
        None => bench::gen_targets(&model, args.targets, args.skip)?,
    };
    let cfg = BenchConfig {
        solver: load_solver(&args.solver)?,
        skip_diversity: args.no_diversity,
        ..BenchConfig::default()
    };
    let report = bench::run_benchmark(&model, &targets, &args.batch_sizes, &cfg)?;
    let mut bytes = Vec::new();
    match args.format {
        Format::Csv => bench::write_rows_csv(&report.rows, &mut bytes)?,
        Format::Json => bench::write_report_json(&report, &mut bytes)?,
    }
    write_out(args.output.as_deref(), &bytes)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_targets(args: GenTargetsArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let set = bench::gen_targets(&model, args.count, args.skip)?;
    write_out(Some(&args.output), &serde_json::to_vec_pretty(&set)?)?;
    Ok(ExitCode::SUCCESS)
}

fn read_configs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let configs = match value.get("source_configs") {
        Some(inner) => serde_json::from_value(inner.clone()),
        None => serde_json::from_value(value),
    };
    configs.with_context(|| format!("{} is not a list of joint configurations", path.display()))
}

fn cmd_mmd(args: MmdArgs) -> Result<ExitCode> {
    let x = read_configs(&args.x)?;
    let y = read_configs(&args.y)?;
    let score = bench::mmd(&x, &y, args.bandwidth)?;
    println!("mmd: {}", score.mmd);
    println!("mmd_squared: {}", score.mmd_squared);
    println!("kernel_bandwidth: {}", score.kernel_bandwidth);
    Ok(ExitCode::SUCCESS)
}

fn cmd_extend_model(args: ExtendArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let extended = model::extend_dof(&model, args.dof)?;
    let format = args.format.unwrap_or(
        if args.output.extension().is_some_and(|e| e == "toml") {
            ModelFormat::Toml
        } else {
            ModelFormat::Urdf
        },
    );
    let text = match format {
        ModelFormat::Urdf => model::to_urdf_string(&extended),
        ModelFormat::Toml => model::to_native_string(&extended),
    };
    write_out(Some(&args.output), text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}
