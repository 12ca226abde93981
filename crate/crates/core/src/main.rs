use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nldiff::experiment::{self, Check, CheckSelection, ExperimentConfig, Tolerances};
use nldiff::{reference_functionals, ModelParams};

/// Radial simulations of u_t = Δ(u^p) checked against Barenblatt references.
#[derive(Debug, Parser)]
#[command(name = "nldiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Maximum number of concurrent runs for sweep.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,

    /// Multiplies every default tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and evaluate its checks.
    Run { config: PathBuf },
    /// Run every config in a directory (*.json) or listed in a file.
    Sweep { target: PathBuf },
    /// Print closed-form reference functionals as JSON.
    Reference {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p: f64,
    },
    /// Run an experiment with a single check.
    Verify {
        config: PathBuf,
        #[arg(long)]
        check: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> nldiff::Result<bool> {
    if !(cli.tol_scale > 0.0) || !cli.tol_scale.is_finite() {
        return Err(nldiff::Error::Config(format!("--tol-scale must be positive, got {}", cli.tol_scale)));
    }
    let tol = Tolerances::scaled(cli.tol_scale);
    match &cli.command {
        Command::Run { config } => run(ExperimentConfig::load(config)?, cli.out.as_deref(), &tol),
        Command::Verify { config, check } => {
            let mut config = ExperimentConfig::load(config)?;
            let check = Check::parse(check)?;
            config.checks = CheckSelection::List(vec![check.name().into()]);
            config.validate()?;
            run(config, cli.out.as_deref(), &tol)
        }
        Command::Sweep { target } => {
            let sources = experiment::sweep_sources(target)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let report = experiment::sweep(&sources, Some(&out), cli.parallel, &tol)?;
            experiment::write_sweep(&report, &out)?;
            print!("{}", experiment::sweep_matrix(&report));
            Ok(report.passed)
        }
        Command::Reference { d, p } => {
            let params = ModelParams::new(*d, *p)?;
            let reference = reference_functionals(params)?;
            println!("{}", serde_json::to_string_pretty(&reference)?);
            Ok(true)
        }
    }
}

fn run(config: ExperimentConfig, out: Option<&Path>, tol: &Tolerances) -> nldiff::Result<bool> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(config.display_name()));
    let output = experiment::execute(&config, tol)?;
    experiment::write_outputs(&output, &dir)?;
    print!("{}", experiment::summary_text(&output.report));
    Ok(output.report.passed)
}
