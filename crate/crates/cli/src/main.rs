//! `nslmdp` — experiment runner for nonstationary linear-MDP agents.
//!
//! Subcommands: `run` (execute a preset or a TOML config and export CSV
//! curves), `gen-env` (write an environment as a portable JSON document),
//! and `plot-data` (reshape run outputs into tidy long-format files).
//!
//! Exit codes: 0 success, 1 configuration/spec error (the message names the
//! offending field), 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};

use nslmdp_core::config::ExperimentConfig;
use nslmdp_core::env::{
    abrupt_schedule, build_combination_lock, build_hard_instance, gradual_schedule,
    lower_bound_schedule, stationary_schedule, Environment, HardInstanceSpec, InitialStateRule,
};
use nslmdp_core::harness::{export_csv, run_experiment, HarnessError};
use nslmdp_core::schema;

#[derive(Parser)]
#[command(
    name = "nslmdp",
    version,
    about = "Nonstationary linear-MDP experiments: restarting optimistic value iteration and baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset or a TOML config and export CSV curves.
    Run(RunArgs),
    /// Generate an environment and write it as a JSON document.
    GenEnv(GenEnvArgs),
    /// Reshape run outputs into tidy long-format plot data.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Bundled preset name (paper-abrupt, paper-gradual).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum concurrent trials (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
    /// Base seed (overrides the config and the NSLMDP_SEED variable).
    #[arg(long)]
    seed: Option<u64>,
    /// Also write full per-trial traces to traces.json.
    #[arg(long, default_value_t = false)]
    dump_traces: bool,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EnvKindArg {
    CombinationLock,
    HardInstance,
    LowerBound,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Abrupt,
    Gradual,
    Stationary,
}

#[derive(Args)]
struct GenEnvArgs {
    /// Environment family to generate.
    #[arg(long, value_enum)]
    kind: EnvKindArg,
    /// Construction seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output JSON path.
    #[arg(long, default_value = "env.json")]
    out: PathBuf,
    /// States (combination lock).
    #[arg(long, default_value_t = 15)]
    num_states: usize,
    /// Actions (combination lock; the chain instance derives 2^(d-3)).
    #[arg(long, default_value_t = 7)]
    num_actions: usize,
    /// Episode length H.
    #[arg(long = "H", default_value_t = 10)]
    horizon: usize,
    /// Feature dimension d.
    #[arg(long = "d", default_value_t = 10)]
    dim: usize,
    /// Lock regimes to rotate through.
    #[arg(long, default_value_t = 5)]
    num_chains: usize,
    /// Total steps T (episodes = T/H).
    #[arg(long = "T", default_value_t = 20000)]
    total_steps: usize,
    /// Drift pattern (combination lock).
    #[arg(long, value_enum, default_value_t = ScheduleArg::Abrupt)]
    schedule: ScheduleArg,
    /// Episodes per drift period (cyclic schedules).
    #[arg(long, default_value_t = 100)]
    period: usize,
    /// Total variation budget (lower-bound schedule).
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Directory holding a run's CSV outputs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory to write plot data into.
    #[arg(long)]
    out: PathBuf,
}

/// Failure classified by exit code.
enum Failure {
    /// Exit 1: bad configuration or environment spec.
    Config(anyhow::Error),
    /// Exit 2: valid setup, failed execution.
    Runtime(anyhow::Error),
}

impl Failure {
    fn config(err: impl Into<anyhow::Error>) -> Self {
        Failure::Config(err.into())
    }

    fn runtime(err: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(err.into())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(err)) => {
            eprintln!("configuration error: {err:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("runtime error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GenEnv(args) => cmd_gen_env(args),
        Command::PlotData(args) => cmd_plot_data(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), None) => ExperimentConfig::preset(name).map_err(Failure::config)?,
        (None, Some(path)) => ExperimentConfig::from_path(path).map_err(Failure::config)?,
        _ => {
            return Err(Failure::Config(anyhow!("exactly one of --preset or --config is required")))
        }
    };
    if let Ok(text) = std::env::var("NSLMDP_SEED") {
        config.base_seed = text
            .parse()
            .map_err(|e| Failure::Config(anyhow!("NSLMDP_SEED `{text}` is not a seed: {e}")))?;
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    config.validate().map_err(Failure::config)?;

    let results = run_experiment(&config, args.jobs, args.dump_traces).map_err(|e| match e {
        HarnessError::Config(inner) => Failure::config(inner),
        other => Failure::runtime(other),
    })?;
    let out_dir = PathBuf::from(&config.out_dir);
    let written = export_csv(&results, &out_dir).map_err(Failure::runtime)?;

    for agent in &results.agents {
        println!(
            "{}: final cumulative reward {:.2} ± {:.2}, final regret {:.2} ± {:.2}, mean trial time {:.2}s",
            agent.label,
            agent.final_mean_cum_reward(),
            agent.final_std_cum_reward(),
            agent.final_mean_cum_regret(),
            agent.final_std_cum_regret(),
            agent.wall_clock_mean_s,
        );
    }
    println!(
        "wrote {} files to {} ({} episodes x {} trials, seed {})",
        written.len(),
        out_dir.display(),
        results.num_episodes,
        results.trials,
        results.base_seed,
    );
    Ok(())
}

fn cmd_gen_env(args: GenEnvArgs) -> Result<(), Failure> {
    if args.horizon == 0 || args.total_steps == 0 || !args.total_steps.is_multiple_of(args.horizon)
    {
        return Err(Failure::Config(anyhow!(
            "field `T`: {} is not a positive multiple of the horizon {}",
            args.total_steps,
            args.horizon
        )));
    }
    let episodes = args.total_steps / args.horizon;
    let env: Environment = match args.kind {
        EnvKindArg::CombinationLock => {
            let family = build_combination_lock(
                args.num_states,
                args.num_actions,
                args.horizon,
                args.dim,
                args.num_chains,
                args.seed,
            )
            .map_err(Failure::config)?;
            let params = match args.schedule {
                ScheduleArg::Abrupt => abrupt_schedule(&family, args.period, episodes),
                ScheduleArg::Gradual => gradual_schedule(&family, args.period, episodes),
                ScheduleArg::Stationary => stationary_schedule(&family, episodes),
            }
            .map_err(Failure::config)?;
            Environment::new(params, InitialStateRule::Uniform).map_err(Failure::config)?
        }
        EnvKindArg::HardInstance => build_hard_instance(
            HardInstanceSpec {
                dim: args.dim,
                horizon: args.horizon,
                total_steps: args.total_steps,
            },
            args.seed,
        )
        .map_err(Failure::config)?,
        EnvKindArg::LowerBound => {
            lower_bound_schedule(args.budget, args.dim, args.horizon, episodes, args.seed)
                .map_err(Failure::config)?
        }
    };
    let violations = env.params().validate();
    if !violations.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "generated environment failed validation ({} violations; first: {})",
            violations.len(),
            violations[0].detail
        )));
    }
    schema::save_json(&env, &args.out).map_err(Failure::runtime)?;
    println!(
        "wrote {} ({} states, {} actions, horizon {}, {} episodes)",
        args.out.display(),
        env.params().num_states(),
        env.params().num_actions(),
        env.params().horizon(),
        env.params().num_episodes(),
    );
    Ok(())
}

/// Splits one of our own CSV lines; labels are validated to be comma-free.
fn split_csv(line: &str) -> Vec<&str> {
    line.split(',').collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(anyhow!("missing input {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn cmd_plot_data(args: PlotDataArgs) -> Result<(), Failure> {
    let summary_path = args.input.join("summary.csv");
    let summary = read_lines(&summary_path)?;
    if summary.len() < 2 {
        return Err(Failure::Config(anyhow!("{} has no agent rows", summary_path.display())));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Runtime(anyhow!("cannot create {}: {e}", args.out.display())))?;

    let mut reward_long = String::from("agent,episode,mean_cum_reward,std_cum_reward\n");
    let mut runtime = String::from("agent,mean_wall_clock_s,std_wall_clock_s\n");
    for row in &summary[1..] {
        let fields = split_csv(row);
        if fields.len() != 8 {
            return Err(Failure::Config(anyhow!(
                "unexpected summary row ({} fields): {row}",
                fields.len()
            )));
        }
        let label = fields[0];
        runtime.push_str(&format!("{label},{},{}\n", fields[6], fields[7]));

        let curve_path = args.input.join(format!("{label}.csv"));
        let curve = read_lines(&curve_path)?;
        for line in curve.iter().skip(1) {
            let cols = split_csv(line);
            if cols.len() != 5 {
                return Err(Failure::Config(anyhow!(
                    "unexpected curve row in {}: {line}",
                    curve_path.display()
                )));
            }
            reward_long.push_str(&format!("{label},{},{},{}\n", cols[0], cols[1], cols[2]));
        }
    }

    let reward_path = args.out.join("cum_reward_long.csv");
    std::fs::write(&reward_path, reward_long)
        .map_err(|e| Failure::Runtime(anyhow!("cannot write {}: {e}", reward_path.display())))?;
    let runtime_path = args.out.join("runtime.csv");
    std::fs::write(&runtime_path, runtime)
        .map_err(|e| Failure::Runtime(anyhow!("cannot write {}: {e}", runtime_path.display())))?;
    println!("wrote {} and {}", reward_path.display(), runtime_path.display());
    Ok(())
}
