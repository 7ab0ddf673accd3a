//! `vlbc` command line: run experiments, sweep minority fractions, aggregate
//! reports, and inspect dataset statistics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vlbc_harness::config::{ExperimentConfig, Method};
use vlbc_harness::error::{HarnessError, Result};
use vlbc_harness::{report, runner};

#[derive(Parser)]
#[command(name = "vlbc", version, about = "Bias control experiments on a seeded synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config file (TOML). Defaults apply for missing fields.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,

    /// Rerun from a manifest written by a previous run.
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// Override the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the configured method.
    #[arg(long, value_enum)]
    method: Option<Method>,

    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigSource {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.manifest) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(path)) => runner::config_from_manifest(path)?,
            (None, None) => ExperimentConfig::default(),
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(
                    "--config and --manifest are mutually exclusive".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            cfg.run.seeds = vec![seed];
        }
        if let Some(method) = self.method {
            cfg.run.method = method;
        }
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.run.output));
        cfg.run.output = out.to_string_lossy().into_owned();
        cfg.validate()?;
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method over all seeds and write reports.
    Run(ConfigSource),
    /// Sweep minority-cell fractions and write per-method sweep CSVs.
    Ablate {
        #[command(flatten)]
        source: ConfigSource,
        /// Comma-separated fractions in (0, 1], overriding the config.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// Methods to sweep, overriding the config.
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Aggregate a run directory's reports.csv into mean/std rows.
    Report {
        /// Run directory containing reports.csv.
        dir: PathBuf,
    },
    /// Print per-attribute contingency tables of the configured dataset.
    InspectStats(ConfigSource),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(source) => {
            let (cfg, out) = source.load()?;
            let summary = runner::run_experiment(&cfg, &out)?;
            println!(
                "wrote {} seed reports to {}",
                summary.rows.len(),
                summary.out_dir.display()
            );
            Ok(())
        }
        Command::Ablate {
            source,
            fractions,
            methods,
        } => {
            let (mut cfg, out) = source.load()?;
            if !fractions.is_empty() {
                cfg.run.fractions = fractions;
            }
            if !methods.is_empty() {
                cfg.run.ablation_methods = methods;
            }
            cfg.validate()?;
            let summary = runner::run_ablation(&cfg, &out)?;
            println!(
                "wrote {} sweep files to {}",
                summary.rows_per_method.len(),
                summary.out_dir.display()
            );
            Ok(())
        }
        Command::Report { dir } => {
            let text = std::fs::read_to_string(dir.join("reports.csv"))?;
            let rows = report::parse_reports_csv(&text)?;
            let groups = report::aggregate_rows(&rows)?;
            let csv = report::aggregate_csv(&groups);
            std::fs::write(dir.join("aggregate.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::InspectStats(source) => {
            let (cfg, _) = source.load()?;
            print!("{}", runner::render_stats(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "error": err.to_string(),
                "kind": err.kind(),
            });
            eprintln!("{record}");
            ExitCode::from(1)
        }
    }
}
