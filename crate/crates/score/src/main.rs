use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pa_core::synth::SynthSpec;
use pa_score::commands::{self, Options};
use pa_score::config::DEFAULT_CONFIG;
use pa_score::error::EXIT_CONFIG;
use pa_score::{Error, PipelineConfig};

/// Zero-shot anomaly scoring with pseudo-anomaly-aware dual memory banks.
#[derive(Parser, Debug)]
#[command(name = "pa-score", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Upper bound on concurrent workers.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the bank seed (or the generator seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory of cached memory banks, reused when their inputs match.
    #[arg(long, global = true)]
    bank_cache: Option<PathBuf>,
    /// Print the default configuration with documentation and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a feature container.
    ExtractValidate {
        /// Container directory; defaults to the configured one.
        #[arg(long)]
        container: Option<PathBuf>,
    },
    /// Rank images by normality and write the reference selection.
    Select,
    /// Build every memory bank into the bank cache.
    BuildBanks,
    /// Score all images and write pixel maps and the score table.
    Score,
    /// Compute the metric report from an earlier `score` output.
    Evaluate,
    /// Generate a synthetic feature container.
    Synth {
        /// Generator spec (TOML, or JSON by extension).
        #[arg(long, required_unless_present = "benchmark")]
        spec: Option<PathBuf>,
        /// Use the built-in suppression benchmark spec.
        #[arg(long, conflicts_with = "spec")]
        benchmark: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select, build banks, score and evaluate in one go.
    Run,
}

fn execute(cli: Cli) -> Result<i32, Error> {
    let opts = Options {
        jobs: cli.jobs,
        seed: cli.seed,
        bank_cache: cli.bank_cache,
    };
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::ExtractValidate { container } => {
            let path = container.unwrap_or(config.container);
            println!("{}", commands::extract_validate(&path)?);
            Ok(0)
        }
        Command::Select => commands::select(&config, &opts),
        Command::BuildBanks => commands::build_banks(&config, &opts),
        Command::Score => commands::score(&config, &opts),
        Command::Evaluate => commands::evaluate(&config, &opts),
        Command::Run => commands::run(&config, &opts),
        Command::Synth {
            spec,
            benchmark,
            out,
        } => {
            let mut spec = match spec {
                Some(path) if !benchmark => commands::read_synth_spec(&path)?,
                _ => SynthSpec::suppression_benchmark(SynthSpec::BENCHMARK_SEED),
            };
            if let Some(seed) = opts.seed {
                spec.seed = seed;
            }
            commands::synth(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if cli.print_config {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
