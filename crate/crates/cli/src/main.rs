use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use copula_deconv_cli::{configure_threads, run, CliError, Command, LoadedConfig};

#[derive(Parser)]
#[command(
    name = "deconv",
    version,
    about = "Copula density deconvolution of replicate recall data"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; overrides `threads` in the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the environment and the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Draw a synthetic dataset and its truth sidecar.
    Simulate,
    /// Run the sampler and store posterior draws.
    Fit,
    /// Integrated squared error of a fit against a simulation truth.
    Evaluate,
    /// Posterior mean density grids.
    ExportDensity,
    /// Adjacent-occasion residual correlations.
    Diagnose,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Fit => Command::Fit,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::ExportDensity => Command::ExportDensity,
        Cmd::Diagnose => Command::Diagnose,
    };
    let result = (|| -> Result<Vec<PathBuf>, CliError> {
        let path = cli
            .config
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let cfg = LoadedConfig::from_file(&path)?;
        configure_threads(cli.threads.or(cfg.config.threads))?;
        run(command, &cfg, cli.output.as_deref())
    })();
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("deconv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
