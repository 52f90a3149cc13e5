//! Command-line front end. The binary only calls [`run`].

pub mod commands;
pub mod config;

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use commands::{CorrelateInputs, Design, Outcome, RunContext};

#[derive(Debug, Parser)]
#[command(name = "cropeval", version, about = "Cropland map intercomparison")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score every map against the reference points.
    Assess(Common),
    /// Vote counts, agreement summaries and pairwise agreement.
    Consensus(Common),
    /// Majority-vote ensemble rasters.
    Ensemble(Common),
    /// Correlate metrics with native resolution and temporal mismatch.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Long-format metrics CSV; the bundled table when neither this nor --config is given.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Product registry JSON.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Reference validity periods CSV (country,validity_start,validity_end).
        #[arg(long)]
        periods: Option<PathBuf>,
    },
    /// Masked vegetation-index time series.
    Timeseries {
        #[command(flatten)]
        common: Common,
        /// Named region from the country's regions file.
        #[arg(long)]
        region: Option<String>,
    },
    /// Draw reference sample locations.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        design: Option<DesignArg>,
        /// Points for uniform sampling.
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: the config's output_dir, else ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed (default: the config's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Products to leave out, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Only process this country.
    #[arg(long)]
    pub country: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DesignArg {
    Uniform,
    Stratified,
}

/// Exit code for a command error: 1 for anything the user can fix in the
/// configuration or inputs' schema, 3 otherwise.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Schema(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::InvalidInput(_)
        | Error::UnsupportedBandCount(_)
        | Error::NonIntegerBand(_)
        | Error::MissingGeotransform => 1,
        Error::Io { .. } => 1,
        _ => 3,
    }
}

fn context(common: &Common, command: &str) -> Result<RunContext, Error> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::schema(format!("{command} needs --config")))?;
    let cfg = config::load_config(path)?;
    let out_dir = match (&common.out, &cfg.config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.resolve(o),
        (None, None) => PathBuf::from("out"),
    };
    let seed = common.seed.unwrap_or(cfg.config.seed);
    Ok(RunContext {
        cfg,
        out_dir,
        seed,
        exclude: common.exclude.iter().cloned().collect(),
        country: common.country.clone(),
    })
}

fn dispatch(command: &Command) -> Result<Outcome, Error> {
    match command {
        Command::Assess(c) => commands::cmd_assess(&context(c, "assess")?),
        Command::Consensus(c) => commands::cmd_consensus(&context(c, "consensus")?),
        Command::Ensemble(c) => commands::cmd_ensemble(&context(c, "ensemble")?),
        Command::Timeseries { common, region } => {
            commands::cmd_timeseries(&context(common, "timeseries")?, region.as_deref())
        }
        Command::Sample { common, design, n } => {
            let design = design.map(|d| match d {
                DesignArg::Uniform => Design::Uniform,
                DesignArg::Stratified => Design::Stratified,
            });
            commands::cmd_sample(&context(common, "sample")?, design, *n)
        }
        Command::Correlate { common, metrics, registry, periods } => {
            let exclude: BTreeSet<String> = common.exclude.iter().cloned().collect();
            let inputs = match &common.config {
                // With a config, correlate the metrics an earlier `assess` wrote.
                Some(_) => {
                    let ctx = context(common, "correlate")?;
                    CorrelateInputs {
                        metrics: metrics.clone().or_else(|| Some(ctx.out_dir.join("metrics.csv"))),
                        registry: registry.clone().or_else(|| ctx.cfg.config.registry.as_ref().map(|p| ctx.cfg.resolve(p))),
                        periods: periods.clone(),
                        period_overrides: if periods.is_some() { Default::default() } else { commands::config_periods(&ctx) },
                        out_dir: ctx.out_dir.clone(),
                        exclude,
                        seed: ctx.seed,
                    }
                }
                None => CorrelateInputs {
                    metrics: metrics.clone(),
                    registry: registry.clone(),
                    periods: periods.clone(),
                    period_overrides: Default::default(),
                    out_dir: common.out.clone().unwrap_or_else(|| PathBuf::from("out")),
                    exclude,
                    seed: common.seed.unwrap_or(0),
                },
            };
            commands::cmd_correlate(&inputs).map(|(o, _, _)| o)
        }
    }
}

fn threads_of(command: &Command) -> Option<usize> {
    match command {
        Command::Assess(c) | Command::Consensus(c) | Command::Ensemble(c) => c.threads,
        Command::Correlate { common, .. }
        | Command::Timeseries { common, .. }
        | Command::Sample { common, .. } => common.threads,
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_of(&cli.command) {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 3;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(outcome) => {
            match outcome {
                Outcome::Success => {}
                Outcome::Partial => eprintln!("warning: some work items failed; see the failures CSV"),
                Outcome::Total => eprintln!("error: every work item failed; see the failures CSV"),
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    }
}

/// Parse `args` (program name first) and run.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            }
        }
    }
}
