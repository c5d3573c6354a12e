use clap::{Parser, Subcommand, ValueEnum};
use holonomy::cli::{default_verify_config, error_exit_code, run, Command, ExperimentConfig, RunReport};
use holonomy::{Error, Result};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "holonomy", version, about = "Open-path adiabatic phases and Hannay angles")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// JSON experiment config. Optional for verify.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config `out`, else ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Open-path Berry phase by every route.
    Phase,
    /// Hannay angle from dgamma/dn, coherent states and the classical ensemble.
    Hannay,
    /// Time-dependent propagation against the adiabatic prediction.
    Evolve,
    /// Wigner functions and the Moyal-to-Poisson limit.
    Wigner,
    /// Gauge, route and quadrature invariance suite.
    Verify,
    /// Parameter sweep.
    Sweep,
    /// Revival-time extraction of the angle shift.
    Revival,
}

#[derive(ValueEnum, Clone, Copy)]
enum Format {
    Json,
    Csv,
}

impl Sub {
    fn command(self) -> Command {
        match self {
            Sub::Phase => Command::Phase,
            Sub::Hannay => Command::Hannay,
            Sub::Evolve => Command::Evolve,
            Sub::Wigner => Command::Wigner,
            Sub::Verify => Command::Verify,
            Sub::Sweep => Command::Sweep,
            Sub::Revival => Command::Revival,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.command) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Sub::Verify) => default_verify_config(),
        (None, _) => return Err(Error::InvalidInput("--config is required".into())),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print(report: &RunReport, format: Format) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match format {
        Format::Json => writeln!(lock, "{}", report.to_json()?)?,
        Format::Csv => report.write_rows_csv(&mut lock)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|cfg| {
        let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let report = run(cli.command.command(), &cfg, Some(&out))?;
        print(&report, cli.format)?;
        Ok(report.exit_code())
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
