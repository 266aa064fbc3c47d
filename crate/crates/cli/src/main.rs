//! Experiment driver: toy benchmark sweeps, RL trainings, and the
//! pro-vs-plappert comparison, with CSV artifacts and summary tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use paramnoise::envs::make_env;
use paramnoise::fmt_float;
use paramnoise::noise::{exploration_log_csv_row, EXPLORATION_LOG_HEADER};
use paramnoise::rlcore::{
    learning_curve_csv_row, run_training, ExplorationStrategy, TrainConfig, TrainResult,
    LEARNING_CURVE_HEADER,
};
use paramnoise::toybench::{
    per_seed_csv, run_sweep, run_toy, trajectory_csv, Strategy, ToyConfig, PER_SEED_HEADER,
    TRAJECTORY_HEADER,
};
use rayon::prelude::*;

const EXIT_CONFIG: u8 = 2;
const EXIT_ENV_NOT_FOUND: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
enum CliError {
    Config(String),
    EnvNotFound(String),
    Io(std::io::Error),
    Other(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::EnvNotFound(n) => write!(f, "environment not found: {n}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<paramnoise::Error> for CliError {
    fn from(e: paramnoise::Error) -> Self {
        match e {
            paramnoise::Error::EnvNotFound(n) => CliError::EnvNotFound(n),
            paramnoise::Error::ConfigInvalid(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::EnvNotFound(_) => EXIT_ENV_NOT_FOUND,
            CliError::Io(_) => EXIT_IO,
            CliError::Other(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "paramnoise", version, about = "Parameter-space noise exploration experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// 2D toy benchmark seed sweep (FV / AC / Pro strategies).
    Toy(ToyArgs),
    /// Train a perturbed-actor DDPG agent on one environment.
    Rl(RlArgs),
    /// Run the Pro and Plappert arms and emit a joint summary.
    BaselineCompare(RlArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds in the sweep.
    #[arg(long)]
    seeds: Option<usize>,
    /// First seed of the sweep.
    #[arg(long)]
    seed_base: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Clone)]
struct ToyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// fv | ac | pro
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Use the gated sparse reward.
    #[arg(long)]
    sparse: bool,
    /// Force the dense reward (overrides a sparse config file).
    #[arg(long, conflicts_with = "sparse")]
    dense: bool,
    /// Fixed isotropic variance sigma_fix^2.
    #[arg(long)]
    sigma_sq: Option<f64>,
    /// Cap on parameter updates per run.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Also write a trajectory CSV for the first seed.
    #[arg(long)]
    trajectory: bool,
    /// Also write the per-window exploration log for the first seed.
    #[arg(long)]
    windows: bool,
}

#[derive(Args, Clone)]
struct RlArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Environment registry name, e.g. sparse-cartpole-swingup.
    #[arg(long)]
    env: Option<String>,
    /// pro | plappert (ignored by baseline-compare).
    #[arg(long)]
    strategy: Option<ExplorationStrategy>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Initial perturbation scale (default 0.6 on sparse-* envs, 0.2 otherwise).
    #[arg(long)]
    sigma_init: Option<f64>,
}

// ---------------------------------------------------------------------------
// Experiment configs (the on-disk format; dry-run echoes these back)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ToyExperiment {
    seeds: usize,
    out: String,
    trajectory: bool,
    windows: bool,
    #[serde(flatten)]
    toy: ToyConfig,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        ToyExperiment {
            seeds: 100,
            out: "out/toy".into(),
            trajectory: false,
            windows: false,
            toy: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RlExperiment {
    env: String,
    env_overrides: Option<toml::Table>,
    seeds: usize,
    out: String,
    /// Resolved before running: 0.6 on sparse-* envs, 0.2 otherwise.
    sigma_init: Option<f64>,
    #[serde(flatten)]
    train: TrainConfig,
}

impl Default for RlExperiment {
    fn default() -> Self {
        RlExperiment {
            env: "sparse-cartpole-swingup".into(),
            env_overrides: None,
            seeds: 10,
            out: "out/rl".into(),
            sigma_init: None,
            train: TrainConfig::default(),
        }
    }
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Write-temp-then-rename so parallel runs never leave partial files.
fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // ignore the error if a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn echo_config<T: Serialize>(cfg: &T) -> CliResult<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| CliError::Other(format!("config echo failed: {e}")))?;
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Summary statistics, recomputed from the emitted per-seed CSVs so the
// summary always matches what a reader of those files would compute.
// ---------------------------------------------------------------------------

fn parse_csv_column(text: &str, col: usize) -> Vec<Option<f64>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').nth(col).and_then(|f| f.parse::<f64>().ok()))
        .collect()
}

const TOY_SUMMARY_HEADER: &str =
    "label,seeds,moved,optimized,mean_steps,std_steps,mean_distance,std_distance";

fn toy_summary_row(label: &str, per_seed: &str) -> String {
    let optimized = parse_csv_column(per_seed, 2);
    let moved = parse_csv_column(per_seed, 1);
    let steps = parse_csv_column(per_seed, 3);
    let distance = parse_csv_column(per_seed, 4);
    let n = optimized.len();
    let n_moved = moved.iter().filter(|v| **v == Some(1.0)).count();
    let n_opt = optimized.iter().filter(|v| **v == Some(1.0)).count();
    let opt_steps: Vec<f64> = steps.iter().flatten().copied().collect();
    let (mean_steps, std_steps) = mean_std(&opt_steps);
    let dists: Vec<f64> = distance.iter().flatten().copied().collect();
    let (mean_d, std_d) = mean_std(&dists);
    let fmt_opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    format!(
        "{label},{n},{n_moved},{n_opt},{},{},{},{}",
        fmt_opt(mean_steps),
        fmt_opt(std_steps),
        fmt_opt(mean_d),
        fmt_opt(std_d)
    )
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(mean), None);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Median and quartiles by linear interpolation on the sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

const RL_SUMMARY_HEADER: &str =
    "strategy,seeds,median_final_return,q1_final_return,q3_final_return,nonzero_seeds";

fn rl_summary_row(strategy: &str, per_seed: &str) -> String {
    let finals: Vec<f64> = parse_csv_column(per_seed, 1).into_iter().flatten().collect();
    let nonzero = finals.iter().filter(|v| **v != 0.0).count();
    let mut sorted = finals.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (median, q1, q3) = if sorted.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            quantile(&sorted, 0.5),
            quantile(&sorted, 0.25),
            quantile(&sorted, 0.75),
        )
    };
    format!(
        "{strategy},{},{},{},{},{nonzero}",
        finals.len(),
        fmt_float(median),
        fmt_float(q1),
        fmt_float(q3)
    )
}

// ---------------------------------------------------------------------------
// Subcommand drivers
// ---------------------------------------------------------------------------

fn toy_label(cfg: &ToyConfig) -> String {
    format!(
        "{}-{}-{}",
        cfg.strategy.name(),
        if cfg.sparse { "sparse" } else { "dense" },
        cfg.sigma_fix_sq
    )
}

fn run_toy_cmd(args: &ToyArgs) -> CliResult<()> {
    let mut exp: ToyExperiment = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.strategy {
        exp.toy.strategy = s;
    }
    if args.sparse {
        exp.toy.sparse = true;
    }
    if args.dense {
        exp.toy.sparse = false;
    }
    if let Some(v) = args.sigma_sq {
        exp.toy.sigma_fix_sq = v;
    }
    if let Some(v) = args.max_steps {
        exp.toy.max_steps = v;
    }
    if let Some(v) = args.common.seeds {
        exp.seeds = v;
    }
    if let Some(v) = args.common.seed_base {
        exp.toy.seed = v;
    }
    if let Some(v) = &args.common.out {
        exp.out = v.display().to_string();
    }
    if args.trajectory {
        exp.trajectory = true;
    }
    if args.windows {
        exp.windows = true;
    }
    exp.toy.validate()?;

    if args.common.dry_run {
        return echo_config(&exp);
    }
    set_jobs(args.common.jobs);

    let label = toy_label(&exp.toy);
    let out = PathBuf::from(&exp.out);
    let sweep = run_sweep(&exp.toy, exp.seeds)?;
    let per_seed = per_seed_csv(&sweep);
    write_atomic(&out.join(format!("{label}_per_seed.csv")), &per_seed)?;
    let summary = format!("{TOY_SUMMARY_HEADER}\n{}\n", toy_summary_row(&label, &per_seed));
    write_atomic(&out.join(format!("{label}_summary.csv")), &summary)?;

    if exp.trajectory || exp.windows {
        let diag_cfg = ToyConfig {
            record_trajectory: exp.trajectory,
            record_windows: exp.windows,
            ..exp.toy.clone()
        };
        let diag = run_toy(&diag_cfg)?;
        if exp.trajectory {
            let text = trajectory_csv(diag.trajectory.as_deref().unwrap_or(&[]));
            debug_assert!(text.starts_with(TRAJECTORY_HEADER));
            write_atomic(&out.join(format!("{label}_trajectory.csv")), &text)?;
        }
        if exp.windows {
            let mut text = String::from(EXPLORATION_LOG_HEADER);
            text.push('\n');
            for log in diag.window_logs.iter().flatten() {
                text.push_str(&exploration_log_csv_row(log));
                text.push('\n');
            }
            write_atomic(&out.join(format!("{label}_exploration.csv")), &text)?;
        }
    }

    debug_assert!(per_seed.starts_with(PER_SEED_HEADER));
    println!("{label}: {}", paramnoise::toybench::summary_row(&label, &sweep.stats));
    Ok(())
}

struct SeedRun {
    seed: u64,
    result: TrainResult,
}

fn resolve_rl(args: &RlArgs, forced_strategy: Option<ExplorationStrategy>) -> CliResult<RlExperiment> {
    let mut exp: RlExperiment = load_config(args.common.config.as_deref())?;
    if let Some(e) = &args.env {
        exp.env = e.clone();
    }
    if let Some(s) = args.strategy {
        exp.train.strategy = s;
    }
    if let Some(s) = forced_strategy {
        exp.train.strategy = s;
    }
    if let Some(v) = args.epochs {
        exp.train.epochs = v;
    }
    if let Some(v) = args.steps_per_epoch {
        exp.train.steps_per_epoch = v;
    }
    if let Some(v) = args.sigma_init {
        exp.sigma_init = Some(v);
    }
    if let Some(v) = args.common.seeds {
        exp.seeds = v;
    }
    if let Some(v) = args.common.seed_base {
        exp.train.seed = v;
    }
    if let Some(v) = &args.common.out {
        exp.out = v.display().to_string();
    }
    let sigma = exp
        .sigma_init
        .unwrap_or(if exp.env.starts_with("sparse-") { 0.6 } else { 0.2 });
    exp.sigma_init = Some(sigma);
    exp.train.noise.sigma_init = sigma;
    exp.train.validate()?;
    Ok(exp)
}

fn env_overrides_text(exp: &RlExperiment) -> CliResult<Option<String>> {
    match &exp.env_overrides {
        None => Ok(None),
        Some(table) => toml::to_string(table)
            .map(Some)
            .map_err(|e| CliError::Config(format!("env_overrides: {e}"))),
    }
}

fn run_rl_arm(exp: &RlExperiment) -> CliResult<Vec<SeedRun>> {
    let overrides = env_overrides_text(exp)?;
    // fail fast (before any files) if the environment name is unknown
    make_env(&exp.env, overrides.as_deref())?;
    let runs: Result<Vec<SeedRun>, paramnoise::Error> = (0..exp.seeds as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = make_env(&exp.env, overrides.as_deref())?;
            let cfg = TrainConfig {
                seed: exp.train.seed + i,
                ..exp.train.clone()
            };
            run_training(env.as_mut(), &cfg).map(|result| SeedRun {
                seed: cfg.seed,
                result,
            })
        })
        .collect();
    Ok(runs?)
}

const RL_PER_SEED_HEADER: &str = "seed,final_return,first_nonzero_episode";

fn write_rl_arm(out: &Path, strategy: &str, runs: &[SeedRun]) -> CliResult<String> {
    let dir = out.join(strategy);
    let mut per_seed = String::from(RL_PER_SEED_HEADER);
    per_seed.push('\n');
    for run in runs {
        let first = run
            .result
            .first_nonzero_episode
            .map(|e| e.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            per_seed,
            "{},{},{first}",
            run.seed,
            fmt_float(run.result.final_return)
        );

        let mut curve = String::from(LEARNING_CURVE_HEADER);
        curve.push('\n');
        for p in &run.result.curve {
            curve.push_str(&learning_curve_csv_row(p));
            curve.push('\n');
        }
        write_atomic(&dir.join(format!("seed{}_curve.csv", run.seed)), &curve)?;

        let mut logs = String::from(EXPLORATION_LOG_HEADER);
        logs.push('\n');
        for log in &run.result.exploration {
            logs.push_str(&exploration_log_csv_row(log));
            logs.push('\n');
        }
        write_atomic(&dir.join(format!("seed{}_exploration.csv", run.seed)), &logs)?;
    }
    write_atomic(&dir.join("per_seed.csv"), &per_seed)?;
    let summary = format!("{RL_SUMMARY_HEADER}\n{}\n", rl_summary_row(strategy, &per_seed));
    write_atomic(&dir.join("summary.csv"), &summary)?;
    Ok(per_seed)
}

fn run_rl_cmd(args: &RlArgs) -> CliResult<()> {
    let exp = resolve_rl(args, None)?;
    if args.common.dry_run {
        return echo_config(&exp);
    }
    set_jobs(args.common.jobs);
    let runs = run_rl_arm(&exp)?;
    let out = PathBuf::from(&exp.out);
    let strategy = exp.train.strategy.name();
    let per_seed = write_rl_arm(&out, strategy, &runs)?;
    println!("{}", rl_summary_row(strategy, &per_seed));
    Ok(())
}

fn run_compare_cmd(args: &RlArgs) -> CliResult<()> {
    let pro = resolve_rl(args, Some(ExplorationStrategy::Pro))?;
    let plappert = resolve_rl(args, Some(ExplorationStrategy::Plappert))?;
    if args.common.dry_run {
        return echo_config(&pro);
    }
    set_jobs(args.common.jobs);
    let out = PathBuf::from(&pro.out);
    let mut joint = String::from(RL_SUMMARY_HEADER);
    joint.push('\n');
    for exp in [&pro, &plappert] {
        let runs = run_rl_arm(exp)?;
        let strategy = exp.train.strategy.name();
        let per_seed = write_rl_arm(&out, strategy, &runs)?;
        let row = rl_summary_row(strategy, &per_seed);
        println!("{row}");
        joint.push_str(&row);
        joint.push('\n');
    }
    write_atomic(&out.join("compare.csv"), &joint)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Toy(args) => run_toy_cmd(args),
        Cmd::Rl(args) => run_rl_cmd(args),
        Cmd::BaselineCompare(args) => run_compare_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_round_trips_through_echo() {
        let exp = ToyExperiment::default();
        let text = toml::to_string_pretty(&exp).unwrap();
        let back: ToyExperiment = toml::from_str(&text).unwrap();
        assert_eq!(back.seeds, exp.seeds);
        assert_eq!(back.toy.sigma_fix_sq, exp.toy.sigma_fix_sq);
        assert_eq!(back.toy.strategy, exp.toy.strategy);
    }

    #[test]
    fn rl_config_round_trips_through_echo() {
        let mut exp = RlExperiment::default();
        exp.sigma_init = Some(0.6);
        let mut table = toml::Table::new();
        table.insert("horizon".into(), toml::Value::Integer(100));
        exp.env_overrides = Some(table);
        let text = toml::to_string_pretty(&exp).unwrap();
        let back: RlExperiment = toml::from_str(&text).unwrap();
        assert_eq!(back.env, exp.env);
        assert_eq!(back.sigma_init, exp.sigma_init);
        assert_eq!(back.train.gamma, exp.train.gamma);
        assert_eq!(back.env_overrides, exp.env_overrides);
    }

    #[test]
    fn toy_summary_matches_recomputation() {
        let per_seed = "seed,moved,optimized,steps,distance\n\
                        0,1,1,100,1.00000000e-3\n\
                        1,1,0,,5.00000000e-1\n\
                        2,1,1,300,2.00000000e-3\n";
        let row = toy_summary_row("pro-dense-1", per_seed);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "3");
        assert_eq!(fields[2], "3");
        assert_eq!(fields[3], "2");
        assert_eq!(fields[4], fmt_float(200.0));
        // std over {100, 300} with n-1
        assert_eq!(fields[5], fmt_float(f64::sqrt(20000.0)));
    }

    #[test]
    fn rl_summary_median_and_iqr() {
        let per_seed = "seed,final_return,first_nonzero_episode\n\
                        0,0.00000000e0,\n\
                        1,4.00000000e0,3\n\
                        2,2.00000000e0,7\n";
        let row = rl_summary_row("pro", per_seed);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "3");
        assert_eq!(fields[2], fmt_float(2.0));
        assert_eq!(fields[3], fmt_float(1.0));
        assert_eq!(fields[4], fmt_float(3.0));
        assert_eq!(fields[5], "2");
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn sigma_init_defaults_follow_env() {
        let args = RlArgs {
            common: CommonArgs {
                config: None,
                seeds: Some(1),
                seed_base: None,
                out: None,
                jobs: None,
                dry_run: true,
            },
            env: Some("cartpole-swingup".into()),
            strategy: None,
            epochs: None,
            steps_per_epoch: None,
            sigma_init: None,
        };
        let exp = resolve_rl(&args, None).unwrap();
        assert_eq!(exp.train.noise.sigma_init, 0.2);
        let mut sparse_args = args.clone();
        sparse_args.env = Some("sparse-cartpole-swingup".into());
        let exp = resolve_rl(&sparse_args, None).unwrap();
        assert_eq!(exp.train.noise.sigma_init, 0.6);
        sparse_args.sigma_init = Some(0.4);
        let exp = resolve_rl(&sparse_args, None).unwrap();
        assert_eq!(exp.train.noise.sigma_init, 0.4);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = std::env::temp_dir().join(format!("paramnoise-test-{}", std::process::id()));
        let path = dir.join("x.csv");
        write_atomic(&path, "a,b\n1,2\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        let names: Vec<String> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["x.csv".to_string()]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
