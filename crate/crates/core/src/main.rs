use chorus::api::{self, ServiceConfig};
use chorus::prompts::PromptCatalog;
use chorus::replay::{run_replay_with, ReplayFixture};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "chorus", version, about = "Multi-persona decision support service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scripted session headlessly and write its metrics.
    Replay {
        #[arg(long)]
        fixture: PathBuf,
        /// Metrics JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the final session document here.
        #[arg(long)]
        session_out: Option<PathBuf>,
        #[arg(long)]
        prompts_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::from_path(&config)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(api::serve(config))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay {
            fixture,
            out,
            session_out,
            prompts_dir,
        } => {
            let fixture = ReplayFixture::from_path(&fixture)?;
            let catalog = match prompts_dir {
                Some(dir) => PromptCatalog::from_dir(&dir)?,
                None => PromptCatalog::builtin(),
            };
            let outcome = run_replay_with(&fixture, catalog)?;
            let mut metrics = serde_json::to_string_pretty(&outcome.metrics)?;
            metrics.push('\n');
            std::fs::write(&out, metrics)?;
            if let Some(path) = session_out {
                std::fs::write(path, outcome.session.serialize())?;
            }
            let mismatches = outcome.check(&fixture.expect);
            for m in &mismatches {
                eprintln!("expectation failed: {m}");
            }
            Ok(if mismatches.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}
