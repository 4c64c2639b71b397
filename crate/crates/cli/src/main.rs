use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cdpo_core::eval::Metric;
use cdpo_core::exec::Exec;
use cdpo_core::genmodels::Family;
use cdpo_core::losses::LossKind;
use cdpo_core::nn::Restriction;
use cdpo_lab::commands::{self, SCALING_FILE};
use cdpo_lab::config::{ExperimentConfig, Overrides};
use cdpo_lab::plot;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cdpo-lab", version, about = "Learners for conditional distributions of potential outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides CDPO_LAB_OUT and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// plugin, ra, iptw or gdr.
    #[arg(long, global = true)]
    learner: Option<LossKind>,
    /// cnf, cgan, cvae or cdm.
    #[arg(long, global = true)]
    family: Option<Family>,
    /// full or linear target class.
    #[arg(long, global = true)]
    restriction: Option<Restriction>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write moons train/test splits in the tabular format.
    Generate,
    /// Train one learner per seed and write its run record.
    Train,
    /// Evaluate a trained run record.
    Evaluate {
        /// Run directory or record.json written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// w2 or log_prob; repeatable.
        #[arg(long, value_parser = parse_metric)]
        metric: Vec<Metric>,
    },
    /// Run the learner × family × n_train × seed grid (resumable).
    Benchmark,
    /// Run the exact orthogonality and double-robustness checks.
    Orthocheck {
        /// Flip the sign of the GDR correction term.
        #[arg(long, hide = true)]
        inject_sign_error: bool,
    },
    /// Render figures from benchmark records.
    Plot {
        /// Directory of benchmark records; defaults to the output root's.
        results: Option<PathBuf>,
    },
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "w2" => Ok(Metric::W2),
        "log_prob" | "logprob" => Ok(Metric::LogProb),
        other => Err(format!("unknown metric '{other}' (expected w2 or log_prob)")),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let over = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        learner: cli.learner,
        family: cli.family,
        restriction: cli.restriction,
        jobs: cli.jobs,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &over)?;
    match cli.command {
        Command::Generate => commands::cmd_generate(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Evaluate { checkpoint, metric } => {
            let mut eval = cli.config.is_some().then(|| cfg.eval.clone());
            if !metric.is_empty() {
                let mut e = eval.unwrap_or_default();
                e.metrics = metric;
                eval = Some(e);
            }
            commands::cmd_evaluate(&checkpoint, eval, cli.seed, cli.out.as_deref())
        }
        Command::Benchmark => Ok(commands::cmd_benchmark(&cfg)?.failed == 0),
        Command::Orthocheck { inject_sign_error } => {
            let exec = if cfg.jobs == 1 { Exec::Sequential } else { Exec::Parallel };
            commands::cmd_orthocheck(&cfg, inject_sign_error, exec)
        }
        Command::Plot { results } => {
            let root = cfg.out_root();
            let results = results.unwrap_or_else(|| commands::benchmark_dir(&cfg));
            let scaling = root.join("orthocheck").join(SCALING_FILE);
            plot::cmd_plot(&results, Some(&scaling), &root.join("plots"))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
