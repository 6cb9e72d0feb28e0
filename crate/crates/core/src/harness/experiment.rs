//! Mask ON/OFF trial populations, their statistics and the report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{run_trial, verify_run_outputs, RunConfig, RunOutput, METRICS_HEADER};
use crate::dataset::{fmt9, read_numeric_csv, write_rows, Dataset};
use crate::error::{Result, VioError};
use crate::metrics::{boxplot, one_way_anova, AnovaResult, BoxplotStats};

pub const SUMMARY_HEADER: &str =
    "trial,trial_seed,insertions_total,terminal_d_optimality,final_position_error,hygiene_violations";

/// Per-trial totals as stored in `summary.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub trial_seed: u64,
    pub insertions_total: u64,
    pub terminal_d_optimality: f64,
    /// `None` without ground truth.
    pub final_position_error: Option<f64>,
    pub hygiene_violations: usize,
}

impl TrialSummary {
    fn from_run(trial: usize, run: &RunOutput) -> Self {
        TrialSummary {
            trial,
            trial_seed: run.trial_seed,
            insertions_total: run.insertions_total(),
            terminal_d_optimality: run.terminal_d_optimality().unwrap_or(f64::NAN),
            final_position_error: run.trajectory_error.map(|e| e.final_position_error),
            hygiene_violations: run.hygiene.violations,
        }
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.trial.to_string(),
            self.trial_seed.to_string(),
            self.insertions_total.to_string(),
            fmt9(self.terminal_d_optimality),
            self.final_position_error.map(fmt9).unwrap_or_default(),
            self.hygiene_violations.to_string(),
        ]
    }
}

fn read_summary(path: &Path) -> Result<TrialSummary> {
    let err = |row, message: String| VioError::Ingest {
        file: path.to_path_buf(),
        row,
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| VioError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(err(1, format!("expected header `{SUMMARY_HEADER}`")));
    }
    let line = lines
        .next()
        .ok_or_else(|| err(2, "missing summary row".into()))?;
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 6 {
        return Err(err(2, format!("expected 6 fields, found {}", f.len())));
    }
    let parse_err = |col: &str, v: &str| err(2, format!("{col}: cannot parse `{v}`"));
    Ok(TrialSummary {
        trial: f[0].parse().map_err(|_| parse_err("trial", f[0]))?,
        trial_seed: f[1].parse().map_err(|_| parse_err("trial_seed", f[1]))?,
        insertions_total: f[2]
            .parse()
            .map_err(|_| parse_err("insertions_total", f[2]))?,
        terminal_d_optimality: f[3]
            .parse()
            .map_err(|_| parse_err("terminal_d_optimality", f[3]))?,
        final_position_error: if f[4].is_empty() {
            None
        } else {
            Some(
                f[4].parse()
                    .map_err(|_| parse_err("final_position_error", f[4]))?,
            )
        },
        hygiene_violations: f[5]
            .parse()
            .map_err(|_| parse_err("hygiene_violations", f[5]))?,
    })
}

/// Statistics of the ON and OFF populations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub on: Vec<TrialSummary>,
    pub off: Vec<TrialSummary>,
    pub on_insertions: BoxplotStats,
    pub off_insertions: BoxplotStats,
    /// Needs at least two trials per population.
    pub anova: Option<AnovaResult>,
    /// Paired trials whose terminal D-optimality is lower with the mask.
    pub dopt_on_below_off: usize,
    pub pairs: usize,
}

impl ExperimentReport {
    /// Flat `key = value` text.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trials = {}", self.pairs);
        for (name, pop, b) in [
            ("on", &self.on, &self.on_insertions),
            ("off", &self.off, &self.off_insertions),
        ] {
            let _ = writeln!(s, "{name}.insertions.median = {}", fmt9(b.median));
            let _ = writeln!(s, "{name}.insertions.q1 = {}", fmt9(b.q1));
            let _ = writeln!(s, "{name}.insertions.q3 = {}", fmt9(b.q3));
            let _ = writeln!(s, "{name}.insertions.whisker_low = {}", fmt9(b.whisker_low));
            let _ = writeln!(
                s,
                "{name}.insertions.whisker_high = {}",
                fmt9(b.whisker_high)
            );
            let outliers: Vec<String> = b.outliers.iter().map(|v| fmt9(*v)).collect();
            let _ = writeln!(s, "{name}.insertions.outliers = {}", outliers.join(";"));
            let errors: Vec<f64> = pop.iter().filter_map(|t| t.final_position_error).collect();
            if !errors.is_empty() {
                let mean = errors.iter().sum::<f64>() / errors.len() as f64;
                let _ = writeln!(s, "{name}.final_position_error.mean = {}", fmt9(mean));
            }
            let violations: usize = pop.iter().map(|t| t.hygiene_violations).sum();
            let _ = writeln!(s, "{name}.hygiene_violations = {violations}");
        }
        match &self.anova {
            Some(a) => {
                let _ = writeln!(s, "anova.f_statistic = {}", fmt9(a.f_statistic));
                let _ = writeln!(s, "anova.df_between = {}", a.df_between);
                let _ = writeln!(s, "anova.df_within = {}", a.df_within);
                let _ = writeln!(s, "anova.p_value = {}", fmt9(a.p_value));
                let _ = writeln!(s, "anova.degenerate = {}", a.degenerate);
            }
            None => {
                let _ = writeln!(s, "anova = unavailable");
            }
        }
        let _ = writeln!(s, "dopt.terminal_on_below_off = {}", self.dopt_on_below_off);
        s
    }
}

fn trial_dir(out: &Path, mask: bool, trial: usize) -> PathBuf {
    out.join(if mask { "on" } else { "off" })
        .join(format!("trial_{trial:03}"))
}

/// Runs `config.trials` paired trials with the mask on and off, in parallel, writes every
/// trial's CSVs under `output_dir/{on,off}/trial_NNN/` and aggregates them.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let dataset = Dataset::open(&config.dataset_path)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| VioError::io(out, e))?;
    let p = out.join("config.toml");
    std::fs::write(&p, config.to_toml()).map_err(|e| VioError::io(&p, e))?;

    let jobs: Vec<(bool, usize)> = [true, false]
        .into_iter()
        .flat_map(|m| (0..config.trials).map(move |i| (m, i)))
        .collect();
    jobs.par_iter()
        .map(|&(mask, trial)| {
            let cfg = RunConfig {
                mask_enabled: mask,
                ..config.clone()
            };
            let dir = trial_dir(out, mask, trial);
            let debug = config.debug_masks.then(|| dir.join("masks"));
            let seed = config.seed_base + trial as u64;
            let run = run_trial(&cfg, &dataset, seed, debug.as_deref())?;
            run.write(&dir)?;
            verify_run_outputs(&dir)?;
            write_rows(
                &dir.join("summary.csv"),
                SUMMARY_HEADER,
                &[TrialSummary::from_run(trial, &run)],
                |t| t.row(),
            )
        })
        .collect::<Result<Vec<()>>>()?;
    aggregate(out)
}

fn population(out: &Path, mask: bool) -> Result<Vec<TrialSummary>> {
    let dir = out.join(if mask { "on" } else { "off" });
    let mut trials: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| VioError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.csv").is_file())
        .collect();
    trials.sort();
    trials
        .iter()
        .map(|t| read_summary(&t.join("summary.csv")))
        .collect()
}

fn metrics_series(dir: &Path) -> Result<Vec<(f64, f64)>> {
    let rows = read_numeric_csv(&dir.join("metrics.csv"), METRICS_HEADER)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1])).collect())
}

/// Recomputes the report from the per-trial files under `out` and writes `report.txt`,
/// `population_on.csv`, `population_off.csv` and `dopt_paired.csv`.
pub fn aggregate(out: &Path) -> Result<ExperimentReport> {
    let on = population(out, true)?;
    let off = population(out, false)?;
    if on.is_empty() || off.is_empty() {
        return Err(VioError::invalid(format!(
            "{}: no completed trials to aggregate",
            out.display()
        )));
    }
    let ins = |p: &[TrialSummary]| {
        p.iter()
            .map(|t| t.insertions_total as f64)
            .collect::<Vec<f64>>()
    };
    let (on_ins, off_ins) = (ins(&on), ins(&off));
    let anova = if on.len() >= 2 && off.len() >= 2 {
        Some(one_way_anova(&[on_ins.clone(), off_ins.clone()])?)
    } else {
        None
    };
    let pairs: Vec<(TrialSummary, TrialSummary)> = on
        .iter()
        .filter_map(|a| off.iter().find(|b| b.trial == a.trial).map(|b| (*a, *b)))
        .collect();
    let dopt_on_below_off = pairs
        .iter()
        .filter(|(a, b)| a.terminal_d_optimality < b.terminal_d_optimality)
        .count();

    for (name, pop) in [("population_on.csv", &on), ("population_off.csv", &off)] {
        write_rows(&out.join(name), SUMMARY_HEADER, pop, |t| t.row())?;
    }

    let mut header = String::from("timestamp_s");
    let mut columns: Vec<Vec<(f64, f64)>> = Vec::new();
    for (a, b) in &pairs {
        let _ = write!(header, ",on_{:03},off_{:03}", a.trial, b.trial);
        columns.push(metrics_series(&trial_dir(out, true, a.trial))?);
        columns.push(metrics_series(&trial_dir(out, false, b.trial))?);
    }
    let len = columns.iter().map(Vec::len).min().unwrap_or(0);
    let rows: Vec<usize> = (0..len).collect();
    write_rows(&out.join("dopt_paired.csv"), &header, &rows, |&i| {
        std::iter::once(fmt9(columns[0][i].0))
            .chain(columns.iter().map(|c| fmt9(c[i].1)))
            .collect()
    })?;

    let report = ExperimentReport {
        on_insertions: boxplot(&on_ins)?,
        off_insertions: boxplot(&off_ins)?,
        on,
        off,
        anova,
        dopt_on_below_off,
        pairs: pairs.len(),
    };
    let p = out.join("report.txt");
    std::fs::write(&p, report.render()).map_err(|e| VioError::io(&p, e))?;
    Ok(report)
}
