use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlar::trainer::{Checkpoint, Trainer};
use rlar::Error;
use rlar_harness::experiments::median;
use rlar_harness::{ablate, report_dir, run_evaluation, sweep, train, ExperimentConfig, Overrides, Variant};

#[derive(Parser)]
#[command(name = "rlar", version, about = "Train and evaluate MPC-regularized actor-critic controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run this seed only instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Use the full-scale episode count from the config.
    #[arg(long)]
    full_scale: bool,
    /// Seeds trained concurrently.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and evaluate the result.
    Train(RunArgs),
    /// Deterministic evaluation of a checkpoint.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Pretrain the focus module and write it as a checkpoint.
    PretrainFocus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Failure counts over the configured parameter-discrepancy grid.
    Sweep(RunArgs),
    /// Compare the full method against switched-off variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// scalar-beta, no-regularizer, no-learning or all.
        #[arg(long, default_value = "all")]
        variant: String,
    },
    /// Aggregate run summaries under a directory into mean (std) tables.
    Report {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Defaults to `<runs>/report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path)
}

fn overrides(a: &RunArgs) -> Overrides {
    Overrides {
        seed: a.seed,
        episodes: a.episodes,
        full_scale: a.full_scale,
        workers: a.jobs,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(a) => {
            let exp = load(&a.config)?;
            for r in train(&exp, &overrides(&a), &a.out)? {
                let s = &r.summary;
                println!(
                    "{} seed {}: {} failures in {} episodes, final-quarter return {:.4}, evaluation {:.4}",
                    s.mode,
                    s.seed,
                    s.failures,
                    s.episodes,
                    s.final_quarter_return,
                    s.eval_normalized_return.unwrap_or(f64::NAN)
                );
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let exp = load(&config)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let cfg = exp.trainer_for(seed.unwrap_or(ck.config.seed), None, false);
            let (dir, log) = run_evaluation(&cfg, &ck, &out)?;
            println!(
                "normalized return {:.6}, {} steps, failed {} -> {}",
                log.record.normalized_return,
                log.record.steps,
                log.record.failed,
                dir.display()
            );
        }
        Command::PretrainFocus { config, seed, out } => {
            let exp = load(&config)?;
            let cfg = exp.trainer_for(seed.unwrap_or(exp.seeds[0]), None, false);
            if cfg.mode() != rlar::trainer::Mode::RlAr {
                return Err(Error::Config("pretraining needs both the regularizer and learning enabled".into()));
            }
            let trainer = Trainer::new(cfg.clone())?;
            let report = trainer.pretrain_report().expect("full method pretrains");
            let hash = rlar_harness::config_hash(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("focus-{}-{}-seed{}.json", cfg.plant, &hash[..12], cfg.seed));
            trainer.checkpoint()?.save(&path)?;
            println!(
                "pretrained in {} iterations, held-out min beta {:.6} -> {}",
                report.iterations,
                report.min_beta,
                path.display()
            );
        }
        Command::Sweep(a) => {
            let exp = load(&a.config)?;
            let (root, rows) = sweep(&exp, &overrides(&a), &a.out)?;
            for r in &rows {
                println!("{} seed {}: {}/{} failed", r.cell, r.seed, r.failures, r.episodes);
            }
            println!("-> {}", root.join("cells.csv").display());
        }
        Command::Ablate { run, variant } => {
            let exp = load(&run.config)?;
            let variants = Variant::parse(&variant)?;
            let (root, rows) = ablate(&exp, &variants, &overrides(&run), &run.out)?;
            let mut names: Vec<&str> = rows.iter().map(|r| r.variant).collect();
            names.dedup();
            for name in names {
                let mut eps: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.variant == name)
                    .map(|r| r.episodes_to_threshold as f64)
                    .collect();
                let failures: usize = rows.iter().filter(|r| r.variant == name).map(|r| r.failures).sum();
                println!(
                    "{name}: median episodes to threshold {}, total failures {failures}",
                    median(&mut eps)
                );
            }
            println!("-> {}", root.join("ablation.csv").display());
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.join("report.csv"));
            let rows = report_dir(&runs, &out)?;
            println!("{:<10} {:<10} {:<14} {:>4} {:>12} {:>22}", "plant", "mode", "config", "runs", "failures", "final-quarter return");
            for r in &rows {
                println!(
                    "{:<10} {:<10} {:<14} {:>4} {:>12} {:>22}",
                    r.plant,
                    r.mode,
                    &r.config_hash[..12],
                    r.runs,
                    r.failures,
                    format!("{:.4} ({:.4})", r.final_quarter_return_mean, r.final_quarter_return_std)
                );
            }
            println!("-> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Toml(_) | Error::Dimension { .. })) => {
            eprintln!("invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run aborted: {e}");
            ExitCode::from(1)
        }
    }
}
