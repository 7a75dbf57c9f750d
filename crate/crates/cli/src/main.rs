use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use windrom::pipeline::{self, PipelineError};
use windrom::PipelineConfig;

/// Stochastic reduced-order wind-field model.
#[derive(Parser)]
#[command(name = "windrom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model file from tower CSVs or an ensemble file.
    Decompose {
        /// Day CSV files, directories of them, or one ensemble file.
        #[arg(long, short, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// Also store the assembled source ensemble here.
        #[arg(long)]
        ensemble_output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Draw synthetic realizations from a model file.
    Synthesize {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, short = 'n', default_value_t = 28)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rebuild the training days from their projected values instead.
        #[arg(long)]
        projected: bool,
    },
    /// Compare a synthetic ensemble with its source and write CSV reports.
    Diagnose {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        /// Report directory.
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize a model file.
    Info { model: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key=value` config file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, e.g. `--set welch_segment=512`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    interval_s: Option<f64>,
    #[arg(long)]
    nz: Option<usize>,
    /// 0 mean product, 1 second moment, 2 covariance.
    #[arg(long)]
    inner_product: Option<u8>,
    #[arg(long)]
    bd_threshold: Option<f64>,
    #[arg(long)]
    bd_modes: Option<usize>,
    #[arg(long)]
    kle_threshold: Option<f64>,
    #[arg(long)]
    kle_terms: Option<usize>,
    /// Silverman rule: `approx` or `exact`.
    #[arg(long)]
    bandwidth: Option<String>,
    /// Store the temporal covariance matrix in the model file.
    #[arg(long)]
    store_covariance: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("expected KEY=VALUE, got `{pair}`")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        let flags = [
            ("interval_s", self.interval_s.map(|v| v.to_string())),
            ("nz", self.nz.map(|v| v.to_string())),
            ("inner_product", self.inner_product.map(|v| v.to_string())),
            ("bd_threshold", self.bd_threshold.map(|v| v.to_string())),
            ("bd_modes", self.bd_modes.map(|v| v.to_string())),
            ("kle_threshold", self.kle_threshold.map(|v| v.to_string())),
            ("kle_terms", self.kle_terms.map(|v| v.to_string())),
            ("bandwidth", self.bandwidth.clone()),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        cfg.store_temporal_covariance |= self.store_covariance;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Decompose {
            input,
            output,
            ensemble_output,
            config,
        } => {
            let cfg = PipelineConfig {
                input,
                output: Some(output),
                ensemble_output,
                ..config.build()?
            };
            println!("{}", pipeline::cmd_decompose(&cfg)?);
        }
        Command::Synthesize {
            model,
            output,
            count,
            seed,
            projected,
        } => {
            let bytes = pipeline::cmd_synthesize(&model, &output, count, seed, projected)?;
            println!("wrote {} ({bytes} bytes)", output.display());
        }
        Command::Diagnose {
            source,
            synth,
            output,
            config,
        } => {
            let cfg = config.build()?;
            let report = pipeline::cmd_diagnose(&source, &synth, &output, &cfg)?;
            println!("epsilon = {:.6}", report.epsilon);
            println!("reports in {}", output.display());
        }
        Command::Info { model } => println!("{}", pipeline::cmd_info(&model)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
