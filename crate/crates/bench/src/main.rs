use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sublsvi_bench::config::Variant;
use sublsvi_bench::{commands, report, sweep, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "sublsvi", version, about = "Sublinear least-squares value iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `variant`.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and validate a synthetic linear MDP.
    Generate(Common),
    /// Run LSVI or LSVI-UCB for each configured seed.
    Run(Common),
    /// Compare exact and sublinear LSVI across `A_list`.
    Sweep(Common),
    /// Summarize the CSV files in a directory.
    Report {
        #[arg(long = "out")]
        out: Option<PathBuf>,
        dir: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(out) = &common.out {
        cfg.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &common.variant {
        cfg.variant = Variant::parse(cfg.algorithm, v)?;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate(c) => {
            let path = commands::generate(&load(&c)?)?;
            println!("wrote {}", path.display());
        }
        Command::Run(c) => {
            for line in commands::run(&load(&c)?)? {
                println!("{line}");
            }
        }
        Command::Sweep(c) => {
            let cfg = load(&c)?;
            let res = sweep::sweep(&cfg)?;
            for r in &res.rows {
                println!(
                    "{} A={} probes={:.2} suboptimality={:.6} fallbacks={} probe_slope={:.3}",
                    r.mode.as_str(),
                    r.num_actions,
                    r.probes_mean,
                    r.suboptimality_mean,
                    r.fallbacks_total,
                    r.probe_slope
                );
            }
        }
        Command::Report { out, dir } => {
            let dir = out.or(dir).unwrap_or_else(|| PathBuf::from("out"));
            print!("{}", report::report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
