use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nfalign::channel::mw_to_dbm;
use nfalign::finenet::{generate_dataset, save_weights, train, Architecture, TrainConfig};
use nfalign::harness::{
    emit_csv, emit_plot, flops_report, monte_carlo, parse_csv, SimConfig,
};
use nfalign::Error;

/// Near-field beam alignment simulator: model-based coarse alignment, a
/// learned fine stage, reference baselines, and Monte Carlo evaluation.
#[derive(Parser)]
#[command(name = "nfalign", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo sweep and print the metric table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scheme list (comma separated).
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Synthesize a dataset and train the fine-alignment network.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the trained weights.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the per-scheme operation counts and pilot overheads.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the sweep and write the CSV table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG charts from a previously written CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let workers = nfalign::worker_count();
    if workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                Error::Config(_) | Error::Domain(_) | Error::Io(_) => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> nfalign::Result<()> {
    match cli.command {
        Command::Simulate { config, trials, seed, schemes } => {
            let mut sim = SimConfig::from_file(&config)?;
            if let Some(t) = trials {
                sim.trials = t;
            }
            if let Some(s) = seed {
                sim.seed = s;
            }
            if let Some(list) = schemes {
                sim.schemes = list
                    .split(',')
                    .map(str::parse)
                    .collect::<nfalign::Result<Vec<_>>>()?;
            }
            sim.validate()?;
            let rows = monte_carlo(&sim)?;
            print_metrics(&rows);
            if let Some(path) = &sim.out_csv {
                emit_csv(&rows, path)?;
                println!("wrote {}", path.display());
            }
            if let Some(dir) = &sim.out_dir {
                for p in emit_plot(&rows, dir)? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(())
        }
        Command::Train { config, out } => {
            let sim = SimConfig::from_file(&config)?;
            let u = nfalign::finenet::max_input_len(&sim.array, sim.epsilon)?;
            println!(
                "synthesizing {} samples over [{:.0}, {:.0}] dBm (input length {u})",
                sim.train_samples, sim.train_power_range_dbm.0, sim.train_power_range_dbm.1
            );
            let (dataset, report) = generate_dataset(
                &sim.array,
                sim.train_samples,
                sim.train_power_range_dbm,
                sim.phi_max_rad,
                sim.epsilon,
                sim.gamma_exponent,
                sim.seed,
            )?;
            println!(
                "dataset ready: {} samples, {:.1}% of attempts discarded",
                report.produced,
                100.0 * report.discard_rate
            );
            let tc = TrainConfig {
                epochs: sim.train_epochs,
                batch_size: sim.train_batch,
                lr: sim.train_lr,
                patience: sim.train_patience,
                seed: sim.seed,
                val_fraction: sim.train_val_fraction,
                parallel: sim.train_parallel,
            };
            let (weights, report) = train(&dataset, Architecture::standard(u), &tc)?;
            println!(
                "trained {} epochs; best validation loss {:.4} at epoch {}",
                report.epochs_run, report.best_val_loss, report.best_epoch
            );
            save_weights(&weights, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Flops { config } => {
            let sim = SimConfig::from_file(&config)?;
            let rows = flops_report(&sim)?;
            println!("{:<18} {:>14} {:>14}", "scheme", "flops", "pilot symbols");
            for r in rows {
                println!("{:<18} {:>14} {:>14}", r.scheme, r.flops, r.pilot_symbols);
            }
            println!(
                "noise power: {:.4} dBm over {:.0} MHz",
                mw_to_dbm(sim.array.noise_power_mw()),
                sim.array.bandwidth_hz / 1e6
            );
            Ok(())
        }
        Command::Sweep { config, out } => {
            let sim = SimConfig::from_file(&config)?;
            let rows = monte_carlo(&sim)?;
            emit_csv(&rows, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Plot { csv, out_dir } => {
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| Error::Io(format!("reading {}: {e}", csv.display())))?;
            let rows = parse_csv(&text)?;
            for p in emit_plot(&rows, &out_dir)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn print_metrics(rows: &[nfalign::harness::MetricsRow]) {
    println!(
        "{:<10} {:>7} {:>12} {:>12} {:>10} {:>9} {:>10} {:>12} {:>8}",
        "scheme", "P_t", "nmse_range", "nmse_angle", "mean_gain", "success", "rate", "flops", "pilots"
    );
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<10} {:>7.1} {:>12} {:>12} {:>10.4} {:>9.4} {:>10.4} {:>12} {:>8}",
            r.scheme,
            r.p_t_dbm,
            opt(r.nmse_range),
            opt(r.nmse_angle),
            r.mean_gain,
            r.success_rate,
            r.rate_bps_hz,
            r.flops,
            r.pilot_symbols
        );
    }
}
