use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rlar::trainer::{Checkpoint, EpisodeLog, RunRecord, Trainer, TrainerConfig};
use rlar::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::config_hash;

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub plant: String,
    pub mode: String,
    pub episodes: usize,
    pub failures: usize,
    pub mean_normalized_return: f64,
    pub final_quarter_return: f64,
    pub first_quarter_beta: f64,
    pub final_quarter_beta: f64,
    pub eval_normalized_return: Option<f64>,
    pub eval_failed: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
    pub records: Vec<RunRecord>,
    pub evaluation: Option<EpisodeLog>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    versions: Versions,
    status: String,
    episodes_completed: usize,
    pretrain_iterations: Option<usize>,
    pretrain_min_beta: Option<f64>,
    config: &'a TrainerConfig,
}

#[derive(Serialize)]
struct Versions {
    rlar_core: &'static str,
    rlar_harness: &'static str,
}

fn versions() -> Versions {
    Versions {
        rlar_core: rlar::VERSION,
        rlar_harness: env!("CARGO_PKG_VERSION"),
    }
}

fn quarter_mean(values: &[f64], last: bool) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let q = (values.len() / 4).max(1);
    let slice = if last { &values[values.len() - q..] } else { &values[..q] };
    slice.iter().sum::<f64>() / q as f64
}

pub fn summarize(cfg: &TrainerConfig, hash: &str, records: &[RunRecord], eval: Option<&EpisodeLog>) -> Summary {
    let returns: Vec<f64> = records.iter().map(|r| r.normalized_return).collect();
    let betas: Vec<f64> = records.iter().map(|r| r.mean_beta).collect();
    Summary {
        config_hash: hash.to_string(),
        seed: cfg.seed,
        plant: cfg.plant.name().to_string(),
        mode: cfg.mode().name().to_string(),
        episodes: records.len(),
        failures: records.iter().filter(|r| r.failed).count(),
        mean_normalized_return: returns.iter().sum::<f64>() / returns.len().max(1) as f64,
        final_quarter_return: quarter_mean(&returns, true),
        first_quarter_beta: quarter_mean(&betas, false),
        final_quarter_beta: quarter_mean(&betas, true),
        eval_normalized_return: eval.map(|e| e.record.normalized_return),
        eval_failed: eval.map(|e| e.record.failed),
    }
}

pub fn run_id(cfg: &TrainerConfig, hash: &str) -> String {
    format!("{}-{}-{}-seed{}", cfg.plant, cfg.mode().name(), &hash[..12], cfg.seed)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn vec_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_trajectory(path: &Path, hash: &str, seed: u64, log: &EpisodeLog) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = log.initial_state.len();
    let k = log.steps.first().map_or(0, |s| s.action.len());
    let mut header: Vec<String> = ["config_hash", "seed", "step", "t"].iter().map(|s| s.to_string()).collect();
    header.extend(vec_header("x", n));
    header.extend(vec_header("action", k));
    header.extend(vec_header("reg_action", k));
    header.extend(vec_header("rl_action", k));
    header.extend(vec_header("beta", k));
    header.push("reward".into());
    w.write_record(&header).map_err(csv_err)?;
    let blank = vec![String::new(); k];
    let mut row0 = vec![hash.to_string(), seed.to_string(), "0".into(), "0".into()];
    row0.extend(log.initial_state.iter().map(|v| fmt(*v)));
    row0.extend(std::iter::repeat_n(String::new(), 4 * k + 1));
    w.write_record(&row0).map_err(csv_err)?;
    for s in &log.steps {
        let mut row = vec![hash.to_string(), seed.to_string(), s.step.to_string(), fmt(s.t)];
        row.extend(s.state.iter().map(|v| fmt(*v)));
        row.extend(s.action.iter().map(|v| fmt(*v)));
        row.extend(s.reg_action.as_ref().map_or(blank.clone(), |a| a.iter().map(|v| fmt(*v)).collect()));
        row.extend(s.rl_action.as_ref().map_or(blank.clone(), |a| a.iter().map(|v| fmt(*v)).collect()));
        row.extend(s.beta.iter().map(|v| fmt(*v)));
        row.push(fmt(s.reward));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.serialize(summary).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .next()
        .ok_or_else(|| Error::Config(format!("{} has no rows", path.display())))?
        .map_err(csv_err)
}

/// Trains one seed and writes `episodes.csv`, `beta.csv`, `trajectory.csv`
/// (deterministic evaluation after training), `summary.csv`, checkpoints
/// and `manifest.json` under `out/<run id>/`. Episode rows are flushed as
/// they complete; on an abort the manifest records the error.
pub fn run_training(cfg: &TrainerConfig, out: &Path, command: &str, evaluate: bool) -> Result<RunOutcome> {
    let hash = config_hash(cfg)?;
    let dir = out.join(run_id(cfg, &hash));
    fs::create_dir_all(&dir)?;
    let manifest = |status: String, done: usize, trainer: Option<&Trainer>| -> Result<()> {
        let report = trainer.and_then(|t| t.pretrain_report());
        let m = Manifest {
            command,
            config_hash: &hash,
            seed: cfg.seed,
            versions: versions(),
            status,
            episodes_completed: done,
            pretrain_iterations: report.map(|r| r.iterations),
            pretrain_min_beta: report.map(|r| r.min_beta),
            config: cfg,
        };
        let mut f = File::create(dir.join("manifest.json"))?;
        f.write_all(serde_json::to_string_pretty(&m)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    };
    let mut trainer = match Trainer::new(cfg.clone()) {
        Ok(t) => t,
        Err(e) => {
            manifest(format!("error: {e}"), 0, None)?;
            return Err(e);
        }
    };
    let mut episodes = csv_writer(&dir.join("episodes.csv"))?;
    episodes
        .write_record([
            "config_hash",
            "seed",
            "episode",
            "steps",
            "return",
            "normalized_return",
            "failed",
            "mean_beta",
            "mpc_iterations",
        ])
        .map_err(csv_err)?;
    let k = cfg.env_config().actions.dim();
    let mut beta = csv_writer(&dir.join("beta.csv"))?;
    let mut header: Vec<String> = ["config_hash", "seed", "episode", "step"].iter().map(|s| s.to_string()).collect();
    header.extend(vec_header("beta", k));
    beta.write_record(&header).map_err(csv_err)?;

    let mut records = Vec::new();
    let mut result = Ok(());
    for _ in 0..cfg.episodes {
        let log = match trainer.train_episode() {
            Ok(log) => log,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        let r = &log.record;
        episodes
            .write_record([
                hash.clone(),
                cfg.seed.to_string(),
                r.episode.to_string(),
                r.steps.to_string(),
                fmt(r.total_return),
                fmt(r.normalized_return),
                r.failed.to_string(),
                fmt(r.mean_beta),
                r.mpc_iterations.to_string(),
            ])
            .map_err(csv_err)?;
        episodes.flush()?;
        for s in &log.steps {
            let mut row = vec![hash.clone(), cfg.seed.to_string(), r.episode.to_string(), s.step.to_string()];
            row.extend(s.beta.iter().map(|v| fmt(*v)));
            beta.write_record(&row).map_err(csv_err)?;
        }
        beta.flush()?;
        records.push(log.record);
        let done = trainer.episodes_done();
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            trainer.checkpoint()?.save(&dir.join(format!("checkpoint-ep{done}.json")))?;
        }
    }
    if let Err(e) = result {
        manifest(format!("error: {e}"), records.len(), Some(&trainer))?;
        write_summary(&dir.join("summary.csv"), &summarize(cfg, &hash, &records, None))?;
        return Err(e);
    }
    trainer.checkpoint()?.save(&dir.join("checkpoint.json"))?;
    let evaluation = if evaluate {
        match trainer.evaluate() {
            Ok(log) => {
                write_trajectory(&dir.join("trajectory.csv"), &hash, cfg.seed, &log)?;
                Some(log)
            }
            Err(e) => {
                manifest(format!("error during evaluation: {e}"), records.len(), Some(&trainer))?;
                return Err(e);
            }
        }
    } else {
        None
    };
    let summary = summarize(cfg, &hash, &records, evaluation.as_ref());
    write_summary(&dir.join("summary.csv"), &summary)?;
    manifest("ok".into(), records.len(), Some(&trainer))?;
    Ok(RunOutcome {
        dir,
        summary,
        records,
        evaluation,
    })
}

/// Deterministic evaluation of a checkpoint into `out/<run id>-eval/`.
pub fn run_evaluation(cfg: &TrainerConfig, checkpoint: &Checkpoint, out: &Path) -> Result<(PathBuf, EpisodeLog)> {
    let hash = config_hash(cfg)?;
    let dir = out.join(format!("{}-eval", run_id(cfg, &hash)));
    fs::create_dir_all(&dir)?;
    let log = rlar::trainer::evaluate(cfg.clone(), checkpoint)?;
    write_trajectory(&dir.join("trajectory.csv"), &hash, cfg.seed, &log)?;
    let summary = summarize(cfg, &hash, &[], Some(&log));
    write_summary(&dir.join("summary.csv"), &summary)?;
    Ok((dir, log))
}

/// Runs `jobs` in up to `workers` threads; results come back in input order.
pub fn fan_out<T, F>(jobs: Vec<T>, workers: usize, f: F) -> Vec<Result<RunOutcome>>
where
    T: Sync,
    F: Fn(&T) -> Result<RunOutcome> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let out = f(&jobs[i]);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
