use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoslab_core::config::{load_config, RunConfig};
use chaoslab_core::plot::PlotKind;
use chaoslab_core::{par, runner, Error, Result};
use clap::{Parser, Subcommand};

/// Particle-system experiments for McKean-Vlasov diffusions.
///
/// Exit status: 0 success, 1 validation error, 2 divergence, 3 I/O error.
#[derive(Debug, Parser)]
#[command(name = "chaoslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override `output.directory` (for `replot`: where the SVG goes).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config or a previous run's manifest.jsonl.
    Run { config: PathBuf },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Redraw the SVG for a CSV table: loglog, loglinear or timeseries.
    Replot { table: PathBuf, kind: String },
}

fn configured(path: &Path, cli: &Cli) -> Result<RunConfig> {
    let mut config = load_config(path)?;
    if let Some(seed) = cli.seed {
        config.sim.seed = Some(seed);
    }
    if let Some(dir) = &cli.output_dir {
        config.output.directory = Some(dir.display().to_string());
    }
    config.resolve()
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate { config } => {
            let config = configured(config, cli)?;
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::Run { config } => {
            let config = configured(config, cli)?;
            let manifest = par::with_threads(cli.threads, || runner::run(&config))?;
            println!(
                "{} finished: {} files in {}",
                manifest.experiment,
                manifest.files.len(),
                config.output.directory.as_deref().unwrap_or("output")
            );
            Ok(())
        }
        Command::Replot { table, kind } => {
            let kind = PlotKind::parse(kind)
                .ok_or_else(|| Error::invalid(format!("unknown plot kind \"{kind}\"; use loglog, loglinear or timeseries")))?;
            let out = runner::replot(table, kind, cli.output_dir.as_deref())?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
