use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rlar::trainer::TrainerConfig;
use rlar::{Error, Result};
use serde::Serialize;

use crate::config::{config_hash, ExperimentConfig};
use crate::run::{csv_err, fan_out, read_summary, run_training, RunOutcome, Summary};

/// Command-line overrides shared by the training commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub full_scale: bool,
    pub workers: usize,
}

impl Overrides {
    pub fn seeds(&self, exp: &ExperimentConfig) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => exp.seeds.clone(),
        }
    }

    fn trainer(&self, exp: &ExperimentConfig, seed: u64) -> TrainerConfig {
        exp.trainer_for(seed, self.episodes, self.full_scale)
    }
}

/// Rejects bad overrides before any run directory is created.
fn validate_jobs<'a, I: IntoIterator<Item = &'a TrainerConfig>>(jobs: I) -> Result<()> {
    jobs.into_iter().try_for_each(|t| t.validate())
}

fn collect(results: Vec<Result<RunOutcome>>) -> Result<Vec<RunOutcome>> {
    results.into_iter().collect()
}

pub fn train(exp: &ExperimentConfig, ov: &Overrides, out: &Path) -> Result<Vec<RunOutcome>> {
    let jobs: Vec<TrainerConfig> = ov.seeds(exp).into_iter().map(|s| ov.trainer(exp, s)).collect();
    validate_jobs(&jobs)?;
    collect(fan_out(jobs, ov.workers, |cfg| run_training(cfg, out, "train", true)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_hash: String,
    pub cell: String,
    pub multipliers: BTreeMap<String, f64>,
    pub seed: u64,
    pub episodes: usize,
    pub failures: usize,
}

fn cell_label(cell: &BTreeMap<String, f64>) -> String {
    cell.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Trains every grid cell on every seed. Multipliers scale the planning
/// model's parameters to form the stepped plant, so the all-ones cell has
/// no mismatch. Writes `cells.csv` next to the per-run directories.
pub fn sweep(exp: &ExperimentConfig, ov: &Overrides, out: &Path) -> Result<(PathBuf, Vec<SweepRow>)> {
    let grid = exp
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] table with axes".into()))?;
    let base_hash = config_hash(&exp.trainer)?;
    let root = out.join(format!("sweep-{}", &base_hash[..12]));
    let mut jobs = Vec::new();
    for cell in grid.cells() {
        for seed in ov.seeds(exp) {
            let mut t = ov.trainer(exp, seed);
            t.plant_role = t.model_role;
            t.plant_perturb = cell.clone();
            jobs.push((cell.clone(), t));
        }
    }
    validate_jobs(jobs.iter().map(|(_, t)| t))?;
    fs::create_dir_all(&root)?;
    let results = collect(fan_out(jobs.clone(), ov.workers, |(_, cfg)| run_training(cfg, &root, "sweep", false)))?;
    let rows: Vec<SweepRow> = jobs
        .iter()
        .zip(&results)
        .map(|((cell, cfg), r)| SweepRow {
            config_hash: r.summary.config_hash.clone(),
            cell: cell_label(cell),
            multipliers: cell.clone(),
            seed: cfg.seed,
            episodes: r.summary.episodes,
            failures: r.summary.failures,
        })
        .collect();
    let mut w = csv::Writer::from_path(root.join("cells.csv")).map_err(csv_err)?;
    let axes: Vec<&String> = grid.axes.keys().collect();
    let mut header = vec!["config_hash".to_string(), "seed".into()];
    header.extend(axes.iter().map(|a| a.to_string()));
    header.extend(["episodes".to_string(), "failures".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![r.config_hash.clone(), r.seed.to_string()];
        rec.extend(axes.iter().map(|a| format!("{}", r.multipliers[*a])));
        rec.extend([r.episodes.to_string(), r.failures.to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok((root, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Full,
    ScalarBeta,
    NoRegularizer,
    NoLearning,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "state-dependent",
            Variant::ScalarBeta => "scalar-beta",
            Variant::NoRegularizer => "no-regularizer",
            Variant::NoLearning => "no-learning",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<Variant>> {
        Ok(match s {
            "scalar-beta" => vec![Variant::ScalarBeta],
            "no-regularizer" => vec![Variant::NoRegularizer],
            "no-learning" => vec![Variant::NoLearning],
            "all" => vec![Variant::ScalarBeta, Variant::NoRegularizer, Variant::NoLearning],
            other => return Err(Error::Config(format!("unknown ablation variant '{other}'"))),
        })
    }

    fn apply(self, t: &mut TrainerConfig) {
        match self {
            Variant::Full => {}
            Variant::ScalarBeta => t.scalar_beta = true,
            Variant::NoRegularizer => t.disable_regularizer = true,
            Variant::NoLearning => t.disable_learning = true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub failures: usize,
    pub final_quarter_return: f64,
    pub eval_normalized_return: Option<f64>,
    /// First training episode whose normalized return reaches the
    /// threshold, or `episodes` when none does.
    pub episodes_to_threshold: usize,
}

pub fn episodes_to_threshold(outcome: &RunOutcome, threshold: f64) -> usize {
    outcome
        .records
        .iter()
        .position(|r| r.normalized_return >= threshold)
        .unwrap_or(outcome.records.len())
}

/// Runs the full method alongside each requested variant on every seed.
pub fn ablate(exp: &ExperimentConfig, variants: &[Variant], ov: &Overrides, out: &Path) -> Result<(PathBuf, Vec<AblationRow>)> {
    let threshold = exp
        .ablation
        .as_ref()
        .map(|a| a.return_threshold)
        .ok_or_else(|| Error::Config("ablate needs an [ablation] table with return_threshold".into()))?;
    let base_hash = config_hash(&exp.trainer)?;
    let root = out.join(format!("ablate-{}", &base_hash[..12]));
    let mut all = vec![Variant::Full];
    all.extend(variants.iter().copied().filter(|v| *v != Variant::Full));
    let mut jobs = Vec::new();
    for v in &all {
        for seed in ov.seeds(exp) {
            let mut t = ov.trainer(exp, seed);
            v.apply(&mut t);
            jobs.push((*v, t));
        }
    }
    validate_jobs(jobs.iter().map(|(_, t)| t))?;
    fs::create_dir_all(&root)?;
    let results = collect(fan_out(jobs.clone(), ov.workers, |(_, cfg)| run_training(cfg, &root, "ablate", true)))?;
    let rows: Vec<AblationRow> = jobs
        .iter()
        .zip(&results)
        .map(|((v, cfg), r)| AblationRow {
            variant: v.name(),
            config_hash: r.summary.config_hash.clone(),
            seed: cfg.seed,
            failures: r.summary.failures,
            final_quarter_return: r.summary.final_quarter_return,
            eval_normalized_return: r.summary.eval_normalized_return,
            episodes_to_threshold: episodes_to_threshold(r, threshold),
        })
        .collect();
    let mut w = csv::Writer::from_path(root.join("ablation.csv")).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok((root, rows))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub plant: String,
    pub mode: String,
    pub config_hash: String,
    pub runs: usize,
    pub episodes: usize,
    pub failures_mean: f64,
    pub failures_std: f64,
    /// `mean (std)` with one decimal.
    pub failures: String,
    pub final_quarter_return_mean: f64,
    pub final_quarter_return_std: f64,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Every `summary.csv` at most three directory levels below `root`.
pub fn find_summaries(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, depth: usize, found: &mut Vec<PathBuf>) -> Result<()> {
        let candidate = dir.join("summary.csv");
        if candidate.is_file() {
            found.push(candidate);
        }
        if depth == 0 {
            return Ok(());
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for e in entries {
            walk(&e, depth - 1, found)?;
        }
        Ok(())
    }
    let mut found = Vec::new();
    walk(root, 3, &mut found)?;
    Ok(found)
}

/// Groups run summaries by plant, mode and config hash into mean and
/// standard deviation across seeds.
pub fn report(summaries: &[Summary]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&Summary>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.episodes > 0) {
        groups
            .entry((s.plant.clone(), s.mode.clone(), s.config_hash.clone()))
            .or_default()
            .push(s);
    }
    groups
        .into_iter()
        .map(|((plant, mode, hash), runs)| {
            let failures: Vec<f64> = runs.iter().map(|s| s.failures as f64).collect();
            let returns: Vec<f64> = runs.iter().map(|s| s.final_quarter_return).collect();
            let evals: Vec<f64> = runs.iter().filter_map(|s| s.eval_normalized_return).collect();
            let (fm, fs) = mean_std(&failures);
            let (rm, rs) = mean_std(&returns);
            let (em, es) = if evals.len() == runs.len() {
                let (m, s) = mean_std(&evals);
                (Some(m), Some(s))
            } else {
                (None, None)
            };
            ReportRow {
                plant,
                mode,
                config_hash: hash,
                runs: runs.len(),
                episodes: runs.iter().map(|s| s.episodes).max().unwrap_or(0),
                failures_mean: fm,
                failures_std: fs,
                failures: format!("{fm:.1} ({fs:.1})"),
                final_quarter_return_mean: rm,
                final_quarter_return_std: rs,
                eval_return_mean: em,
                eval_return_std: es,
            }
        })
        .collect()
}

pub fn report_dir(root: &Path, out_file: &Path) -> Result<Vec<ReportRow>> {
    let summaries = find_summaries(root)?
        .iter()
        .map(|p| read_summary(p))
        .collect::<Result<Vec<_>>>()?;
    if summaries.is_empty() {
        return Err(Error::Config(format!("no summary.csv found under {}", root.display())));
    }
    let rows = report(&summaries);
    let mut w = csv::Writer::from_path(out_file).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}
