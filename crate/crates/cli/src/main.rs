use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlink_core::harness::{
    bundle_artifacts, config_artifact, discover, graph_artifacts, parse_config, prepare, run_pipeline,
    straggler_sweep, sweep_artifact, write_artifacts, ExperimentConfig,
};
use fedlink_core::Error;

/// Environment variable that overrides the configured output directory.
const OUTPUT_ENV: &str = "FEDLINK_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "fedlink", version, about = "D2D-assisted federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write every metric file.
    Run {
        config: PathBuf,
        /// Output directory; takes precedence over the environment and config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run graph discovery only.
    Graph {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final loss for each variant at several straggler counts.
    SweepStragglers {
        config: PathBuf,
        /// Comma-separated straggler counts; defaults to the config's sweep block.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, then print its hash.
    Validate { config: PathBuf },
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

fn tagged(stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    }
}

fn load(path: &Path) -> Result<(ExperimentConfig, String), Error> {
    let cfg = parse_config(path).map_err(tagged("config"))?;
    cfg.validate().map_err(tagged("config"))?;
    let hash = cfg.hash().map_err(tagged("config"))?;
    Ok((cfg, hash))
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Validate { config } => {
            let (cfg, hash) = load(&config)?;
            println!("ok config_hash={hash} seed={}", cfg.master_seed);
        }
        Command::Run { config, out } => {
            let (cfg, hash) = load(&config)?;
            let dir = output_dir(&cfg, out);
            let bundle = run_pipeline(&cfg).map_err(tagged("pipeline"))?;
            let (files, summary) = bundle_artifacts(&cfg, &bundle).map_err(tagged("emit"))?;
            write_artifacts(&dir, "run", &hash, bundle.seed, &bundle.stages, &files, summary).map_err(tagged("emit"))?;
            println!("wrote {} files to {}", files.len() + 1, dir.display());
        }
        Command::Graph { config, out } => {
            let (cfg, hash) = load(&config)?;
            let dir = output_dir(&cfg, out);
            let prep = prepare(&cfg).map_err(tagged("prepare"))?;
            let d = discover(&cfg, &prep).map_err(tagged("graph"))?;
            let mut files = graph_artifacts(&d.graph, &d.trace, &prep.p_fail, &hash, cfg.master_seed)
                .map_err(tagged("emit"))?;
            files.push(config_artifact(&cfg, &hash, cfg.master_seed).map_err(tagged("emit"))?);
            write_artifacts(
                &dir,
                "graph",
                &hash,
                cfg.master_seed,
                &["prepare", "graph"],
                &files,
                serde_json::Value::Null,
            )
            .map_err(tagged("emit"))?;
            for (receiver, transmitter) in d.graph.incoming.iter().enumerate() {
                if let Some(t) = transmitter {
                    println!("{t} -> {receiver}");
                }
            }
        }
        Command::SweepStragglers { config, counts, out } => {
            let (cfg, hash) = load(&config)?;
            let dir = output_dir(&cfg, out);
            let counts = counts.unwrap_or_else(|| cfg.sweep.counts.clone());
            let rows = straggler_sweep(&cfg, &counts).map_err(tagged("sweep"))?;
            let files = vec![
                sweep_artifact(&rows, &hash, cfg.master_seed).map_err(tagged("emit"))?,
                config_artifact(&cfg, &hash, cfg.master_seed).map_err(tagged("emit"))?,
            ];
            write_artifacts(
                &dir,
                "sweep-stragglers",
                &hash,
                cfg.master_seed,
                &["prepare", "exchange", "sweep"],
                &files,
                serde_json::Value::Null,
            )
            .map_err(tagged("emit"))?;
            for r in &rows {
                println!("{} {} stragglers={} loss={}", r.variant, r.scheme, r.straggler_count, r.final_loss);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage().unwrap_or("unknown");
            eprintln!("fedlink: [{stage}] {e}");
            ExitCode::from(2)
        }
    }
}
