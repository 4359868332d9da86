use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use intent_discovery::io::write_json;
use intent_discovery::pipeline::{self, RunConfig};
use intent_discovery::synthetic::{self, SyntheticConfig};
use intent_discovery::{Error, Result};

#[derive(Parser)]
#[command(name = "intent-discovery", version, about = "Discover novel intents and domains in utterance embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the detector and flag novel utterances.
    Detect(RunArgs),
    /// Train the metric network and cluster the flagged utterances.
    Discover(RunArgs),
    /// Group discovered intents into domains.
    Link(RunArgs),
    /// Run detect, discover and link, then write a manifest.
    Pipeline(RunArgs),
    /// Score stored artifacts against the labels in the corpus.
    Evaluate(RunArgs),
    /// Write a synthetic corpus with a matching config.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the per-stage seeds in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file of must-link / cannot-link pairs.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Score the run against truth labels (pipeline only).
    #[arg(long)]
    eval: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML generator config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write constraints.json with this many truth-consistent groups of 4.
    #[arg(long, value_name = "GROUPS")]
    constraints: Option<usize>,
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(c) = &args.constraints {
        cfg.paths.constraints = Some(c.clone());
    }
    if let Some(out) = &args.out {
        cfg.paths.out_dir = out.clone();
    }
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| Error::io(&cfg.paths.out_dir, e))?;
    Ok(cfg)
}

fn gen_synthetic(args: &GenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SyntheticConfig>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let corpus = synthetic::generate(&cfg)?;
    let paths = corpus.write(&args.out)?;
    if let Some(groups) = args.constraints {
        let cs = synthetic::truth_constraints(&corpus.novel_groups(), groups, 4, cfg.seed)?;
        write_json(&args.out.join("constraints.json"), &cs)?;
    }
    let relative = synthetic::SyntheticPaths {
        embeddings: file_name(&paths.embeddings),
        utterances: file_name(&paths.utterances),
    };
    let run = relative.run_config("out", cfg.seed);
    let cfg_path = args.out.join("config.toml");
    intent_discovery::io::write_atomic(&cfg_path, run.to_toml()?.as_bytes())?;
    println!(
        "wrote {} utterances to {}",
        corpus.utterances.len(),
        args.out.display()
    );
    Ok(())
}

fn file_name(p: &Path) -> PathBuf {
    p.file_name().map(PathBuf::from).unwrap_or_else(|| p.to_path_buf())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(a) => {
            let out = pipeline::cmd_detect(&run_config(&a)?)?;
            println!(
                "{} of {} unlabeled utterances flagged novel",
                out.detection.novel.len(),
                out.detection.novel.len() + out.detection.seen.len()
            );
        }
        Command::Discover(a) => {
            let out = pipeline::cmd_discover(&run_config(&a)?)?;
            match &out.report.note {
                Some(note) => println!("{note}"),
                None => println!(
                    "{} clusters at delta {:.4}",
                    out.artifact.clustering.k(),
                    out.artifact.delta
                ),
            }
        }
        Command::Link(a) => {
            let out = pipeline::cmd_link(&run_config(&a)?)?;
            println!(
                "{} novel domains over {} novel intents",
                out.taxonomy.novel_domain_count(),
                out.taxonomy.novel_intent_count()
            );
        }
        Command::Pipeline(a) => {
            let cfg = run_config(&a)?;
            let out = pipeline::cmd_pipeline(&cfg, a.eval)?;
            if a.eval {
                print!("{}", out.report.to_table());
            }
            println!("artifacts in {}", cfg.paths.out_dir.display());
        }
        Command::Evaluate(a) => {
            let report = pipeline::cmd_evaluate(&run_config(&a)?)?;
            print!("{}", report.to_table());
        }
        Command::GenSynthetic(a) => gen_synthetic(&a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
