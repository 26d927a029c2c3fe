use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpdr::experiment::{
    calibrate, calibration_json, compare, execute, plot_data, resolve, write_atomic,
    CalibrateRequest, PlotKind, RunConfig, RunError,
};
use dpdr::{Conversion, RunOptions};

#[derive(Parser)]
#[command(name = "dpdr", version, about = "Private training runs, calibration and comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConversionArg {
    Classic,
    Improved,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Norms,
    Convergence,
    HistPerp,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config and write metrics.csv, summary.json and perp_snapshot.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Record wall-clock times (artifacts are then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Find noise multipliers for a privacy budget.
    Calibrate {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        switch: u64,
        #[arg(long)]
        sigma_alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        ratio_g: f64,
        #[arg(long, value_enum, default_value = "improved")]
        conversion: ConversionArg,
    },
    /// Run configs over several seeds and tabulate them.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
        /// Defaults to the first config's mean final loss.
        #[arg(long)]
        target_loss: Option<f64>,
    },
    /// Emit plot-ready text data from a metrics CSV.
    PlotData {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    RunConfig::load(path).map_err(RunError::Config)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            timing,
        } => {
            let mut config = load(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let resolved = resolve(config)?;
            let a = execute(&resolved, &out, RunOptions {
                    record_timing: timing,
                    ..RunOptions::default()
                })?;
            let s = &a.summary;
            println!(
                "{} steps: final loss {:.4}, accuracy {:.4}, eps {}",
                resolved.train.total_steps,
                s.final_metrics.loss,
                s.final_metrics.accuracy,
                s.privacy.eps.map_or("-".into(), |e| format!("{e:.4}"))
            );
            println!("wrote {}", out.display());
        }
        Command::Calibrate {
            eps,
            delta,
            n,
            batch,
            steps,
            switch,
            sigma_alpha,
            ratio_g,
            conversion,
        } => {
            let cal = calibrate(&CalibrateRequest {
                eps,
                delta,
                n,
                batch,
                steps,
                switch,
                sigma_alpha,
                ratio_g,
                conversion: match conversion {
                    ConversionArg::Classic => Conversion::Classic,
                    ConversionArg::Improved => Conversion::Improved,
                },
            })?;
            println!("{}", calibration_json(&cal));
        }
        Command::Compare {
            configs,
            seeds,
            out,
            target_loss,
        } => {
            let loaded = configs
                .iter()
                .map(|p| load(p).map(|c| (p.clone(), c)))
                .collect::<Result<Vec<_>, _>>()?;
            let comparison = compare(&loaded, seeds, target_loss, &out)?;
            print!("{}", comparison.table());
        }
        Command::PlotData {
            metrics,
            kind,
            out,
            bins,
        } => {
            let kind = match kind {
                KindArg::Norms => PlotKind::Norms,
                KindArg::Convergence => PlotKind::Convergence,
                KindArg::HistPerp => PlotKind::HistPerp,
            };
            let text = plot_data(&metrics, kind, bins)?;
            write_atomic(&out, &text).map_err(RunError::Output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
