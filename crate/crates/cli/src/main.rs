use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fwdreg_cli::commands::{cmd_gains, cmd_simulate, cmd_sweep, cmd_verify, Context};
use fwdreg_cli::config::load;
use fwdreg_cli::{CliError, Outcome};

#[derive(Parser)]
#[command(
    name = "fwdreg",
    version,
    about = "Forwarding-based output regulation: gains, simulation, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel checks and sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Controller constants and feasibility.
    Gains,
    /// Closed-loop runs for every configured scenario.
    Simulate,
    /// The verification battery.
    Verify,
    /// Equilibrium search over a grid of disturbance and reference sizes.
    Sweep,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let ctx = Context::new(load(path)?, cli.seed, cli.out.clone())?;
    let outcome = match cli.command {
        Command::Gains => {
            let (r, o) = cmd_gains(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("gains serialize"));
            o
        }
        Command::Simulate => {
            let (runs, o) = cmd_simulate(&ctx)?;
            for s in &runs {
                let r = &s.report;
                println!(
                    "{}: final |y - y_ref| = {:.3e}, averaged = {:.3e}, rate = {}, aborted = {}",
                    s.name,
                    r.final_output_error,
                    r.averaged_output_error,
                    r.fitted_rate.map_or("n/a".to_string(), |x| format!("{x:.4}")),
                    s.aborted
                );
            }
            o
        }
        Command::Verify => {
            let (rep, o) = cmd_verify(&ctx)?;
            for (name, c) in &rep.checks {
                println!(
                    "{:<24} {:>5}  value = {:.4e}  bound = {:.4e}{}",
                    name,
                    if c.pass { "ok" } else { "FAIL" },
                    c.value,
                    c.bound,
                    c.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
                );
            }
            if rep.pass {
                println!("verification passed");
            } else {
                println!("verification failed: {}", rep.failed.join(", "));
            }
            o
        }
        Command::Sweep => {
            let (rows, o) = cmd_sweep(&ctx)?;
            let ok = rows.iter().filter(|r| r.success).count();
            println!("{ok}/{} cells regulated", rows.len());
            o
        }
    };
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("fwdreg: cannot size worker pool: {e}");
        }
    }
    let code = match run(&cli) {
        Ok(o) => o.exit_code(),
        Err(e) => {
            eprintln!("fwdreg: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
