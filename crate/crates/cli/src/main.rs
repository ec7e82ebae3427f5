use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tabkit::config::{ConfigErrors, RunConfig};
use tabkit::pipeline::{run_all, Run, Stage, UsageError};
use tabkit_core::synth::{write_csvs, write_distractors, SynthOptions, DISTRACTOR_ID};

#[derive(Parser, Debug)]
#[command(name = "tabkit", version, about = "Tabular embedding benchmark pipeline")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV/TSV file or directory; replaces the configured inputs.
    #[arg(long = "input", global = true)]
    inputs: Vec<PathBuf>,
    /// Extra table whose columns feed the noise-clause pool.
    #[arg(long = "noise-input", global = true)]
    noise_inputs: Vec<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse tables and serialize rows into the corpus.
    Ingest,
    /// Generate queries, qrels and classification targets.
    BuildBench,
    /// Mine hard negatives and assemble training triplets.
    Mine,
    /// Fine-tune the desk embedder on the mined triplets.
    Train,
    /// Score retrieval and classification for every model.
    Eval,
    /// Numeric sensitivity, noise, template and cluster analyses.
    Analyze,
    /// Write the results table.
    Report,
    /// Every stage in order.
    Run,
    /// Validate the configuration and print it with defaults filled in.
    CheckConfig,
    /// Write synthetic CSV tables plus `noise/distractors.csv` beneath them.
    GenFixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        tables: usize,
        #[arg(long, default_value_t = 500)]
        rows: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !cli.inputs.is_empty() {
        cfg.inputs = cli.inputs.clone();
    }
    if !cli.noise_inputs.is_empty() {
        cfg.analysis.noise_inputs = cli.noise_inputs.clone();
    }
    if let Some(o) = &cli.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.apply_env();
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if let Command::GenFixture { dir, tables, rows } = &cli.command {
        let opts = SynthOptions {
            tables: *tables,
            rows: *rows,
            seed: cli.seed.unwrap_or(42),
            ..SynthOptions::default()
        };
        for p in write_csvs(&opts, dir)? {
            println!("{}", p.display());
        }
        let noise = dir.join("noise").join(format!("{DISTRACTOR_ID}.csv"));
        write_distractors(&opts, &noise)?;
        println!("{}", noise.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    if let Command::CheckConfig = cli.command {
        cfg.validate()?;
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let run = Run::open(cfg)?;
    log::info!("run directory {}", run.dir.display());
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::BuildBench => Stage::BuildBench,
        Command::Mine => Stage::Mine,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Analyze => Stage::Analyze,
        Command::Report => Stage::Report,
        _ => {
            for line in run_all(&run)? {
                println!("{line}");
            }
            return Ok(());
        }
    };
    println!("{}", run.run_stage(stage)?);
    Ok(())
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.is::<UsageError>() || c.is::<ConfigErrors>())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
