//! `tacsnn`: run spiking-network benchmark configurations, sweep group
//! sizes, and emit machine-readable reports.

mod config;
mod experiment;
mod report;

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{load_preset, parse_config, ExperimentKind, RunConfig};
use report::{write_sweep_csv, SweepRow};

#[derive(Parser)]
#[command(name = "tacsnn", version, about = "Temporal-aggregation spiking network benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (a bundled preset or a TOML file).
    Run(RunArgs),
    /// Run one base configuration across several group sizes K.
    Sweep(SweepArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Bundled preset name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed list, e.g. `--seeds 0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the operator group size K.
    #[arg(long)]
    k: Option<usize>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory for report.json and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the stdout table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Group sizes to sweep, e.g. `--k-values 1,2,4`.
    #[arg(long, value_delimiter = ',', required = true)]
    k_values: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn load_config(preset: &Option<String>, path: &Option<PathBuf>) -> Result<RunConfig> {
    match (preset, path) {
        (Some(name), None) => load_preset(name),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))
        }
        _ => Err(anyhow!("exactly one of --preset or --config is required")),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = load_config(&args.preset, &args.config)?
        .with_overrides(args.seeds, args.k, args.epochs)?;
    let report = experiment::run_experiment(&config)?;
    if let Some(dir) = &args.out {
        report.write_files(dir)?;
    }
    if !args.quiet {
        report.print_table(&mut std::io::stdout())?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = load_config(&args.preset, &args.config)?;
    if base.kind != ExperimentKind::Train {
        return Err(anyhow!("sweep applies only to train configurations"));
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &k in &args.k_values {
        let operator = base
            .model
            .as_ref()
            .map(|m| m.operator.as_str().to_string())
            .unwrap_or_default();
        match base
            .clone()
            .with_overrides(args.seeds.clone(), Some(k), args.epochs)
            .and_then(|cfg| experiment::run_experiment(&cfg))
        {
            Ok(report) => {
                let t = report.train.as_ref().expect("train report");
                rows.push(SweepRow {
                    operator,
                    k,
                    mean_acc: Some(t.summary.mean_best_acc),
                    std_acc: Some(t.summary.std_best_acc),
                    conv_calls: Some(t.summary.conv_calls),
                    elapsed_s: Some(t.summary.mean_elapsed_seconds),
                    status: "ok".into(),
                });
                if !args.quiet {
                    report.print_table(&mut std::io::stdout())?;
                }
                reports.push(report);
            }
            Err(err) => {
                rows.push(SweepRow {
                    operator,
                    k,
                    mean_acc: None,
                    std_acc: None,
                    conv_calls: None,
                    elapsed_s: None,
                    status: format!("error: {err:#}"),
                });
                if !args.quiet {
                    eprintln!("k={k}: {err:#}");
                }
            }
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        for report in &reports {
            let sub = dir.join(format!("k{}", report.config.model.as_ref().map_or(0, |m| m.k)));
            report.write_files(&sub)?;
        }
        write_sweep_csv(&rows, &dir.join("summary.csv"))?;
    }
    if !args.quiet {
        println!("{:<10} {:>4} {:>10} {:>8} {:>11} {:>10}  status", "operator", "k", "mean_acc", "std_acc", "conv_calls", "elapsed_s");
        for r in &rows {
            println!(
                "{:<10} {:>4} {:>10} {:>8} {:>11} {:>10}  {}",
                r.operator,
                r.k,
                r.mean_acc.map(|v| format!("{v:.4}")).unwrap_or_default(),
                r.std_acc.map(|v| format!("{v:.4}")).unwrap_or_default(),
                r.conv_calls.map(|v| v.to_string()).unwrap_or_default(),
                r.elapsed_s.map(|v| format!("{v:.2}")).unwrap_or_default(),
                r.status
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
