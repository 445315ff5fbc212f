//! `maxcon` command line: batch runs, scene generation, ICP studies and
//! single-epoch inspection.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maxcon_cli::{evaluate_epoch, generate, icp_batch, run_batch, EpochReport, Mode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "maxcon", version, about = "Maximum consensus LiDAR localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(short, long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Output {
    /// Overrides the configured output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Epochs processed in parallel; 0 uses every core.
    #[arg(short, long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Localize every epoch and write reports.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Write synthetic scans and maps as XYZ files with a replay config.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Run the 5×5 ICP initialization study on every epoch.
    IcpStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Print the metrics of a single epoch.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value_t = 0)]
        epoch: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, String> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(config: &RunConfig, output: &Output) -> PathBuf {
    output.out.clone().unwrap_or_else(|| config.output_dir.clone())
}

fn print_report(report: &EpochReport) {
    println!("epoch {}", report.epoch);
    if let Some(e) = &report.error {
        println!("  error: {e}");
        return;
    }
    println!("  scan points {}, map points {}", report.scan_points, report.map_points);
    for o in &report.objectives {
        match (&o.best, &o.error) {
            (_, Some(e)) => println!("  {}: error: {e}", o.objective.name()),
            (Some(b), None) => {
                println!(
                    "  {}: best cell ({}, {}, h{}) offset [{:+.3}, {:+.3}] m, heading {:+.2}°, value {}",
                    o.objective.name(),
                    b.index.i,
                    b.index.j,
                    b.index.h,
                    b.offset_m[0],
                    b.offset_m[1],
                    b.heading_offset_deg,
                    b.value
                );
                match (&o.metrics, &o.metrics_undefined) {
                    (Some(m), _) => println!(
                        "    peak ratio {:.4}, kurtosis {}, KL {:.4}, plateau {} cells",
                        m.peak_ratio,
                        m.kurtosis.map_or("undefined".to_string(), |k| format!("{k:.3}")),
                        m.kl_divergence,
                        m.plateau_distance
                    ),
                    (None, Some(why)) => println!("    metrics undefined: {why}"),
                    (None, None) => {}
                }
            }
            (None, None) => {}
        }
    }
    if let Some(icp) = &report.icp {
        println!("  icp: {} of {} initializations missed the truth", icp.failed_runs, icp.total_runs);
    }
    if let Some(e) = &report.icp_error {
        println!("  icp: error: {e}");
    }
}

fn execute(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { common, output } => {
            let config = load_config(&common)?;
            let dir = out_dir(&config, &output);
            let outcome = run_batch(&config, &dir, output.workers).map_err(|e| e.to_string())?;
            let failed = outcome.reports.iter().filter(|r| r.errored()).count();
            println!(
                "{} epochs, {failed} with errors; summary in {}",
                outcome.reports.len(),
                outcome.csv_path.display()
            );
            Ok(failed == 0)
        }
        Command::Gen { common, output } => {
            let config = load_config(&common)?;
            let dir = out_dir(&config, &output);
            let failed = generate(&config, &dir, output.workers).map_err(|e| e.to_string())?;
            for (epoch, why) in &failed {
                eprintln!("epoch {epoch}: {why}");
            }
            println!("wrote {}", dir.join("inputs.toml").display());
            Ok(failed.is_empty())
        }
        Command::IcpStudy { common, output } => {
            let config = load_config(&common)?;
            let dir = out_dir(&config, &output);
            let reports = icp_batch(&config, &dir, output.workers).map_err(|e| e.to_string())?;
            let mut ok = true;
            for r in &reports {
                match (&r.study, &r.error) {
                    (Some(s), _) => println!(
                        "epoch {}: {} of {} initializations missed the truth",
                        r.epoch,
                        s.failed_runs(),
                        s.runs.len()
                    ),
                    (None, e) => {
                        ok = false;
                        println!("epoch {}: error: {}", r.epoch, e.as_deref().unwrap_or("unknown"));
                    }
                }
            }
            Ok(ok)
        }
        Command::Inspect { common, epoch } => {
            let config = load_config(&common)?;
            if config.mode == Mode::FromFiles && epoch >= config.epoch_count() {
                return Err(format!("epoch {epoch} out of range (config has {})", config.epoch_count()));
            }
            let report = evaluate_epoch(&config, epoch, None::<&Path>).map_err(|e| e.to_string())?;
            print_report(&report);
            Ok(!report.errored())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
