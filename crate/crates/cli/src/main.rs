use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

mod config;
mod output;
mod run;

use config::LoadedConfig;
use output::Artifacts;

/// Runs one experiment described by a TOML config file.
#[derive(Debug, Parser)]
#[command(name = "landau-dpp", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; beats `LANDAU_DPP_OUTPUT` and the config's `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `stats.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(args: Args) -> Result<bool> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let loaded = LoadedConfig::load(&args.config)?;
    let cfg = &loaded.config;
    let dir = args
        .output
        .or_else(|| std::env::var_os("LANDAU_DPP_OUTPUT").map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let seed = cfg.seed(args.seed);
    let mut out = Artifacts::create(&dir, &loaded.sha256, seed)?;
    let ok = run::run(cfg, seed, &mut out)?;
    log::info!("results in {}", out.dir().display());
    out.finish(&format!("{:?}", cfg.mode), &args.config)?;
    Ok(ok)
}
