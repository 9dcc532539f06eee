use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparselab::harness::{available_metrics, emit_svg, parse_csv, run_sweep, write_outputs, ExperimentConfig};
use sparselab::model::checkpoint;
use sparselab::sparsity::{connectivity_report, MaskSet};
use sparselab::Error;

#[derive(Parser)]
#[command(name = "sparselab", version, about = "Capacity-matched sparse network sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot one metric of a results CSV as SVG.
    Plot {
        results: PathBuf,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the architecture, nonzero counts and connectivity of a checkpoint.
    Inspect { checkpoint: PathBuf },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, workers, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("sparselab-out"));
            cfg.output_dir = Some(dir.clone());
            let result = run_sweep(&cfg, workers)?;
            write_outputs(&result, &dir)?;
            println!("{} rows written to {}", result.rows.len(), dir.join("results.csv").display());
            for f in &result.failures {
                eprintln!("run failed at point {} seed {}: {}", f.scale_point, f.seed, f.message);
            }
        }
        Command::Plot { results, metric, out } => {
            let text = std::fs::read_to_string(&results).map_err(|e| Error::io(&results, e))?;
            let rows = parse_csv(&text)?;
            let metric = metric.unwrap_or_default();
            if metric.is_empty() {
                return Err(Error::Config(format!(
                    "--metric is required; available: {}",
                    available_metrics(&rows).join(", ")
                )));
            }
            emit_svg(&rows, &metric, &out)?;
        }
        Command::Inspect { checkpoint: path } => {
            let (model, masks) = checkpoint::load(&path)?;
            println!("spec: {}", model.spec().to_json());
            println!("init seed: {}", model.seed());
            let dense;
            let masks = match &masks {
                Some(m) => {
                    println!("mask: keep_fraction={} schedule={:?}", m.keep_fraction(), m.schedule());
                    m
                }
                None => {
                    dense = MaskSet::dense(&model);
                    &dense
                }
            };
            for i in model.weight_indices() {
                let p = &model.param_specs()[i];
                let t = &model.params()[i];
                println!("{}: {:?} nonzero {}/{}", p.name, t.shape(), t.count_nonzero(), t.len());
            }
            println!("nonzero weights: {}", model.nonzero_weights());
            let conn = connectivity_report(&model, masks)?;
            for l in &conn.layers {
                println!("{}: {} units, {} dead", l.name, l.units, l.dead_units);
            }
            println!(
                "dead fraction: {}; reachable outputs {}/{}; connected: {}",
                conn.dead_fraction, conn.reachable_outputs, conn.outputs, conn.is_connected
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sparselab: {e}");
            match e {
                Error::Io { .. } | Error::Format { .. } => ExitCode::from(3),
                e if e.is_config() => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
