use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use vtvio::dataset::Dataset;
use vtvio::harness::{aggregate, run_experiment, run_once, ExperimentReport, RunConfig};
use vtvio::sim::{render_sequence, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "vtvio",
    version,
    about = "Entropy-masked visual-thermal-inertial odometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Simulate {
        /// Scenario TOML file, or one of the presets `clean`, `noisy`, `dusty`.
        #[arg(long, default_value = "noisy")]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single trial.
    Run(RunArgs),
    /// Run paired mask-on and mask-off trial populations.
    Experiment(RunArgs),
    /// Recompute the report of an experiment directory from its per-trial files.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    mask: Option<Toggle>,
    #[arg(long)]
    trials: Option<usize>,
    /// Trial seed for `run`, first trial seed for `experiment`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    debug_masks: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset_path = d.clone();
        }
        if let Some(m) = self.mask {
            cfg.mask_enabled = matches!(m, Toggle::On);
        }
        if let Some(n) = self.trials {
            cfg.trials = n;
        }
        if let Some(s) = self.seed {
            cfg.seed_base = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.debug_masks |= self.debug_masks;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn scenario(name: &str) -> Result<ScenarioConfig> {
    Ok(match name {
        "clean" => ScenarioConfig::clean(),
        "noisy" => ScenarioConfig::noisy(),
        "dusty" => ScenarioConfig::dusty(),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            ScenarioConfig::from_toml(&text).map_err(|e| anyhow::anyhow!("{path}: {e}"))?
        }
    })
}

fn print_report(report: &ExperimentReport, out: &Path) {
    print!("{}", report.render());
    println!("report = {}", out.join("report.txt").display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = scenario(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            render_sequence(&cfg, &out)?;
            let ds = Dataset::open(&out).context("reading back the rendered dataset")?;
            info!(
                "{}: {} visual, {} thermal frames, {} IMU samples",
                out.display(),
                ds.visual.len(),
                ds.thermal.len(),
                ds.imu.len()
            );
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let run = run_once(&cfg, cfg.seed_base)?;
            println!("frames = {}", run.frames_processed);
            println!("insertions_total = {}", run.insertions_total());
            if let Some(d) = run.terminal_d_optimality() {
                println!("terminal_d_optimality = {d:e}");
            }
            if let Some(e) = run.trajectory_error {
                println!("final_position_error = {:.6}", e.final_position_error);
                println!("rmse_position = {:.6}", e.rmse);
            }
            if run.hygiene.violations > 0 {
                bail!(
                    "covariance hygiene violated on {} frames",
                    run.hygiene.violations
                );
            }
        }
        Command::Experiment(args) => {
            let cfg = args.resolve()?;
            let report = run_experiment(&cfg)?;
            print_report(&report, &cfg.output_dir);
        }
        Command::Report { out } => {
            let report = aggregate(&out)?;
            print_report(&report, &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
