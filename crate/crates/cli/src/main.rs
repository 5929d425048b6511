use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relmob_cli::{run, CliError, PipelineConfig, RunOptions, Stage};

/// Relational neighborhood-mobility pipeline.
///
/// Each stage subcommand runs the pipeline from ingest through that stage
/// and writes every artifact produced along the way, plus a manifest of
/// content hashes. Without --config the bundled synthetic city is used.
#[derive(Parser)]
#[command(name = "relmob", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and the synthetic city seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the wall-clock run log so reruns are byte-identical.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load and validate inputs.
    Ingest,
    /// Build co-visitation or move networks and their metrics.
    BuildGraphs,
    /// Scene profiles and amenity vectors.
    ProfileScenes,
    /// Allocate election results to neighborhoods.
    AllocVotes,
    /// Dyadic similarity features.
    Similarities,
    /// Standardize and fit the count models.
    Fit,
    /// Fit, then run the permutation test regardless of the config.
    Permute,
    /// Only generate the synthetic city's input files.
    Synth,
    /// Everything except the permutation test, including figures.
    Report,
    /// The whole pipeline as configured.
    RunAll,
}

fn options(cmd: Command, cli: &Cli) -> RunOptions {
    let (through, force) = match cmd {
        Command::Ingest => (Stage::Ingest, false),
        Command::BuildGraphs => (Stage::Graphs, false),
        Command::ProfileScenes => (Stage::Profiles, false),
        Command::AllocVotes => (Stage::Votes, false),
        Command::Similarities => (Stage::Standardize, false),
        Command::Fit => (Stage::Fit, false),
        Command::Permute => (Stage::Permute, true),
        Command::Synth => (Stage::Synth, false),
        Command::Report | Command::RunAll => (Stage::Manifest, false),
    };
    RunOptions { through, force_permutation: force, reproducible: cli.reproducible, seed: cli.seed }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::bundled_synthetic();
            c.output_dir = PathBuf::from("relmob-out");
            c
        }
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    match cli.command {
        Command::Synth if cfg.synth.is_none() => {
            return Err(CliError::Config("config has no `synth` section".into()))
        }
        Command::Report => cfg.permutation.enabled = false,
        _ => {}
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let outcome = run(&cfg, &options(cli.command, cli))?;
    let stages: Vec<&str> = outcome.stages.iter().map(|s| s.name()).collect();
    println!("stages: {}", stages.join(" -> "));
    if let Some(f) = &outcome.primary {
        println!("{} fit: {} dyads, {} iterations", f.family.label(), f.n_obs, f.iterations);
        for (i, p) in f.predictors.iter().enumerate() {
            println!("  {p:<14} {:>10.5} (se {:.5})", f.beta[i], f.se[i]);
        }
        if let Some(t) = f.theta {
            println!("  theta          {t:>10.4}");
        }
    }
    if let Some(s) = &outcome.permutation {
        println!("permutation: {} replications, {} failed", s.replications, s.failed);
    }
    println!("{} artifacts in {}", outcome.manifest.len() + 1, outcome.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(stage) = e.stage() {
                eprintln!("failed stage: {stage}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
