use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tempoprobe_cli::{replay, run, threads_from_env, Command, UsageError};

#[derive(Debug, Parser)]
#[command(name = "tempoprobe", version, about = "Temporal-bias probes for small GPT-2-style transformers")]
struct Cli {
    #[command(subcommand)]
    cmd: TopLevel,
}

#[derive(Debug, Subcommand)]
enum TopLevel {
    #[command(flatten)]
    Run(Command),
    /// Re-run a recorded manifest and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building worker pool")?;
    }
    match cli.cmd {
        TopLevel::Run(cmd) => {
            let manifest = run(&cmd)?;
            log::info!(
                "{} outputs in {} ({:.1}s)",
                manifest.outputs.len(),
                manifest.command.out_dir().display(),
                manifest.wall_clock_secs
            );
        }
        TopLevel::Replay(a) => {
            let mismatched = replay(&a.manifest, &a.out)?;
            if !mismatched.is_empty() {
                anyhow::bail!("replay differs in {}", mismatched.join(", "));
            }
            println!("replay identical");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}
