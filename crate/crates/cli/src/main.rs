use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_intervals::experiment::{
    cmd_calibrate, cmd_compare, cmd_evaluate, cmd_generate, cmd_sweep, cmd_train,
    EvaluateInputs, ExperimentConfig, SweepKind,
};
use adaptive_intervals::{Error, ErrorClass, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Calibrated prediction intervals for multivariate traffic forecasting.
#[derive(Debug, Parser)]
#[command(name = "adaptive-intervals", version)]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true, env = "ADAPTIVE_INTERVALS_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Panel CSV to use instead of the synthetic generator.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic panel described by the config.
    Generate {
        /// Destination; defaults to panel.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Train the quantile forecaster (and the dropout model if MC dropout is selected).
    Train,
    /// Build the calibration table and the global CQR adjustment.
    Calibrate {
        /// Model checkpoint; defaults to model.json in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate every selected method on the test split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        global: Option<PathBuf>,
        #[arg(long)]
        mc_model: Option<PathBuf>,
    },
    /// Run one of the sweep studies.
    Sweep {
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Rank evaluation reports by coverage deviation, then width.
    Compare {
        /// Report JSON files (at least two).
        reports: Vec<PathBuf>,
        /// Also write the rendered table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Coverage,
    Split,
    Grid,
}

impl From<Kind> for SweepKind {
    fn from(kind: Kind) -> Self {
        match kind {
            Kind::Coverage => SweepKind::Coverage,
            Kind::Split => SweepKind::Split,
            Kind::Grid => SweepKind::Grid,
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Config => 3,
        ErrorClass::Data => 4,
        ErrorClass::Divergence => 5,
        ErrorClass::MissingArtifact => 6,
        ErrorClass::Other => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(data) = &cli.data {
        cfg.dataset.path = Some(data.clone());
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Compare { reports, out } = &cli.command {
        let comparison = cmd_compare(reports)?;
        let rendered = comparison.render();
        print!("{rendered}");
        if let Some(out) = out {
            std::fs::write(out, rendered)?;
        }
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { out, force } => {
            let path = cmd_generate(&cfg, out.as_deref(), force)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let trained = cmd_train(&cfg)?;
            let h = &trained.history;
            println!(
                "trained {} epochs{}, best validation loss {:.5} at epoch {}; artifacts in {}",
                h.epochs(),
                if h.stopped_early { " (early stop)" } else { "" },
                h.best_validation(),
                h.best_epoch,
                cfg.output_dir.display()
            );
        }
        Command::Calibrate { model } => {
            let (table, global) = cmd_calibrate(&cfg, model.as_deref())?;
            println!(
                "calibration table {}x{} ({} missing cells), global delta {:.5}",
                table.nodes(),
                table.horizons(),
                table.metadata().missing_cells,
                global.delta
            );
        }
        Command::Evaluate {
            model,
            table,
            global,
            mc_model,
        } => {
            let inputs = EvaluateInputs {
                model,
                table,
                global,
                mc_model,
            };
            let reports = cmd_evaluate(&cfg, &inputs)?;
            println!("method       PICP     MPIW  deviation");
            for r in &reports {
                println!(
                    "{:<10} {:>6.2}% {:>8.3} {:>+9.2}",
                    r.method,
                    r.overall.picp * 100.0,
                    r.overall.mpiw,
                    r.coverage_deviation()
                );
            }
        }
        Command::Sweep { kind } => {
            let (report, path) = cmd_sweep(&cfg, kind.into())?;
            print!("{}", report.to_csv());
            println!("wrote {}", path.display());
        }
        Command::Compare { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
