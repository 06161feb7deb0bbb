use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rachsim::harness::{
    compare, convergence_report, mean_curve, pretrain_agents, pretrain_corrector, read_episode_curves,
    run_experiment, write_corrector_curve, write_episode_csv, write_outputs, ExperimentConfig, OptimizerKind,
    Resources, RunOptions, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
};
use rachsim::neural::write_checkpoint;
use rachsim::Error;

#[derive(Parser)]
#[command(name = "rachsim", version, about = "Framed-ALOHA random-access simulator and optimizer workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    DnnCorrector,
    DqnAgent,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write frame/episode CSVs and a summary.
    Simulate {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Pretrained agent bundle (DQN, CPCL) or correction network (SL_formula).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Offline pretraining of the correction network or of DQN/CPCL agents.
    Pretrain {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Where to write the checkpoint (default: <out>/<target>.rachnn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run several configs on shared seeds and report paired differences.
    Compare {
        /// Two or more JSON configs; the first is the baseline.
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Directory for compare.json; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Episodes-to-converge of the training curves in an episode CSV.
    Convergence {
        /// Episode CSV written by `simulate`.
        csv: PathBuf,
        /// Relative distance from the final-window mean counted as converged.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Trailing-window length in episodes.
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Directory for convergence.json; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, printing the fully resolved document.
    ValidateConfig {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn load(path: &Path, seed: Option<u64>, trials: Option<usize>) -> rachsim::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, name: &str, json: String) -> rachsim::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), json + "\n")?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> rachsim::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, trials, out, checkpoint } => {
            let mut cfg = load(&config, seed, trials)?;
            if let Some(path) = checkpoint {
                let path = Some(path.to_string_lossy().into_owned());
                match cfg.optimizer {
                    OptimizerKind::Dqn | OptimizerKind::Cpcl => cfg.hyper.agent_checkpoint = path,
                    OptimizerKind::SlFormula => cfg.hyper.corrector_checkpoint = path,
                    other => {
                        return Err(Error::config(
                            "checkpoint",
                            format!("optimizer {} loads no checkpoint", other.as_str()),
                        ))
                    }
                }
                cfg.validate()?;
            }
            let result = run_experiment(&cfg, RunOptions::default())?;
            write_outputs(&out, &result)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
        }
        Command::Pretrain { config, target, seed, out, checkpoint } => {
            let cfg = load(&config, seed, None)?;
            std::fs::create_dir_all(&out)?;
            match target {
                Target::DnnCorrector => {
                    let result = pretrain_corrector(&cfg)?;
                    let path = checkpoint.unwrap_or_else(|| out.join("dnn_corrector.rachnn"));
                    write_checkpoint(&path, &result.corrector.to_records())?;
                    write_corrector_curve(std::fs::File::create(out.join("dnn_corrector_curve.csv"))?, &result.report)?;
                    let json = serde_json::to_string_pretty(&result.summary)?;
                    std::fs::write(out.join("dnn_corrector_summary.json"), json.clone() + "\n")?;
                    println!("{json}");
                }
                Target::DqnAgent => {
                    let res = Resources::load(&cfg)?;
                    let result = pretrain_agents(&cfg, &res)?;
                    let path = checkpoint.unwrap_or_else(|| out.join("dqn_agent.rachnn"));
                    write_checkpoint(&path, &result.layers)?;
                    let curve = rachsim::harness::TrialResult {
                        trial: 0,
                        seed: 0,
                        frames: Vec::new(),
                        episodes: result.curve.clone(),
                        checkpoint: None,
                        q_table_csv: None,
                    };
                    write_episode_csv(std::fs::File::create(out.join("dqn_agent_curve.csv"))?, &[curve])?;
                    let json = serde_json::to_string_pretty(&result.summary)?;
                    std::fs::write(out.join("dqn_agent_summary.json"), json.clone() + "\n")?;
                    println!("{json}");
                }
            }
            info!("pretraining finished");
        }
        Command::Compare { config, seed, trials, out } => {
            let configs = config.iter().map(|p| load(p, seed, trials)).collect::<rachsim::Result<Vec<_>>>()?;
            let report = compare(&configs)?;
            emit(out.as_deref(), "compare.json", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Convergence { csv, tolerance, window, out } => {
            let curves = read_episode_curves(&csv)?;
            let mut per_trial = Vec::new();
            for (trial, curve) in &curves {
                per_trial.push(serde_json::json!({
                    "trial": trial,
                    "report": convergence_report(curve, tolerance, window)?,
                }));
            }
            let overall = convergence_report(&mean_curve(&curves)?, tolerance, window)?;
            let json = serde_json::json!({ "mean_curve": overall, "trials": per_trial });
            emit(out.as_deref(), "convergence.json", serde_json::to_string_pretty(&json)?)?;
        }
        Command::ValidateConfig { config } => {
            let cfg = load(&config, None, None)?;
            println!("{}", cfg.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
