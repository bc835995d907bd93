//! Command-line front end for the foliated X-ray laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use folxray::config::ExperimentConfig;
use folxray::runner::{run, Command};

#[derive(Parser)]
#[command(
    name = "folxray",
    about = "Numerical laboratory for a localized, attenuated normal operator \
             of the geodesic X-ray transform on convexly foliated domains",
    version
)]
struct Cli {
    /// Configuration file (line-based key = value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration entry, e.g. --set normal_op.h=0.05.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory for run folders (default: the configured output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: FOLXRAY_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Shorthand for --set normal_op.variant=VALUE.
    #[arg(long, global = true, value_parser = ["global", "scattering"])]
    variant: Option<String>,

    /// Shorthand for --set normal_op.h=VALUE.
    #[arg(long, global = true)]
    h: Option<f64>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Trace a sample of geodesics and tabulate entry/exit data.
    Trace,
    /// Certify the convexity constants of the configured foliation.
    Certify,
    /// Compute ray data for the configured phantom.
    Forward,
    /// Apply the localized attenuated operator to the phantom on a grid.
    Apply,
    /// Tabulate the principal symbol over a frequency grid.
    Symbol,
    /// Certify a uniform lower bound on the principal symbol.
    CertifyEllipticity,
    /// Reconstruct the phantom from ray data.
    Reconstruct {
        /// Sinogram file; omitted means data is synthesized in-process.
        data: Option<PathBuf>,
    },
    /// Reconstruct across the configured list of h values.
    SweepH,
    /// Run the built-in oracle comparisons; output is byte-reproducible.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn try_main(cli: Cli) -> folxray::Result<PathBuf> {
    let workers = cli.workers.or_else(|| {
        std::env::var("FOLXRAY_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        if n == 0 {
            return Err(folxray::Error::Argument(
                "worker count must be positive".into(),
            ));
        }
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for assignment in &cli.sets {
        cfg.set_path(assignment)?;
    }
    if let Some(v) = &cli.variant {
        cfg.set("normal_op", "variant", v)?;
    }
    if let Some(h) = cli.h {
        cfg.set("normal_op", "h", &h.to_string())?;
    }

    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let cmd = match cli.command {
        Sub::Trace => Command::Trace,
        Sub::Certify => Command::Certify,
        Sub::Forward => Command::Forward,
        Sub::Apply => Command::Apply,
        Sub::Symbol => Command::Symbol,
        Sub::CertifyEllipticity => Command::CertifyEllipticity,
        Sub::Reconstruct { data } => Command::Reconstruct { data },
        Sub::SweepH => Command::SweepH,
        Sub::Selftest => Command::Selftest,
    };
    run(&cmd, &cfg, &out)
}
