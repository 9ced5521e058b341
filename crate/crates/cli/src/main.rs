use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use enclave_core::commands::{execute, AuditCmd, Command, CommandError};
use enclave_core::platform::{Platform, PlatformConfig};

/// Operator interface to the enclave platform model.
#[derive(Debug, Parser)]
#[command(name = "enclave", version, about)]
struct Cli {
    /// Platform snapshot to load before and save after the command.
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for keys and synthetic datasets. `OSSC_SEED` takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

const SEED_ENV: &str = "OSSC_SEED";

fn seed(flag: Option<u64>) -> Result<Option<u64>, CommandError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CommandError::Parse(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Platform, CommandError> {
    if let Some(p) = path.filter(|p| p.exists()) {
        let text = std::fs::read_to_string(p).map_err(|e| CommandError::Io(format!("{}: {e}", p.display())))?;
        let mut platform =
            Platform::from_json(&text).map_err(|e| CommandError::Parse(format!("{}: {e}", p.display())))?;
        if let Some(s) = seed {
            platform.config.seed = s;
        }
        return Ok(platform);
    }
    let mut config = PlatformConfig::default();
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(Platform::new(config)?)
}

/// Commands that never touch platform state.
fn stateless(cmd: &Command) -> bool {
    matches!(
        cmd,
        Command::Bench(_) | Command::Scenario(_) | Command::Audit(AuditCmd::Verify { file: Some(_) })
    )
}

fn run(cli: &Cli) -> Result<enclave_core::commands::Outcome, CommandError> {
    let seed = seed(cli.seed)?;
    let mut platform = load(cli.state.as_deref(), seed)?;
    let result = execute(&mut platform, &cli.command, false);
    // Denied operations still append audit records, so save either way.
    if let Some(path) = cli.state.as_deref().filter(|_| !stateless(&cli.command)) {
        std::fs::write(path, platform.to_json()).map_err(|e| CommandError::Io(format!("{}: {e}", path.display())))?;
    }
    result
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                emit(&(serde_json::to_string_pretty(&out.json).expect("json") + "\n"));
            } else if !out.text.is_empty() {
                emit(&format!("{}\n", out.text.trim_end()));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                let v = serde_json::json!({"error": e.kind(), "message": e.to_string()});
                emit(&(serde_json::to_string_pretty(&v).expect("json") + "\n"));
            }
            match &e {
                // The report is the useful output; print it on stdout.
                CommandError::ScenarioFailed(report) if !cli.json => emit(report),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(1)
        }
    }
}
