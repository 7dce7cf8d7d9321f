mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radarfall_core::models::{LatentMode, LossVariant};

/// Bad flags, missing settings or an unreadable config file.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "radarfall", version, about = "Radar point-cloud fall detection pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Radar tilt in degrees.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tilt_deg: Option<f64>,
    /// Radar mounting height in meters.
    #[arg(long, global = true)]
    pub height: Option<f64>,
    /// Keep only frames of this target.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub target_id: Option<i64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a labeled synthetic stream.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// adl, single, benchmark or custom.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Convert a stream into motion patterns (JSON Lines).
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Fit a model on normal activity.
    Train {
        /// Radar stream to train on.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Anomaly score and centroid drop of every window.
    Score {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_latent_mode)]
        latent_mode: Option<LatentMode>,
    },
    /// Apply the two-condition fall rule to a score file.
    Detect {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        threshold: ThresholdFlags,
    },
    /// Match detections against labels over a threshold sweep.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        drop_threshold: Option<f64>,
        #[arg(long)]
        half_window: Option<u64>,
    },
    /// Anomaly level and centroid height over time.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        /// Stream the scores came from, for the centroid trace.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        threshold: ThresholdFlags,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<LossVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Standardize point components with training statistics.
    #[arg(long)]
    pub standardize: bool,
}

/// Anomaly threshold as a value or as a percentile of reference scores.
#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdFlags {
    #[arg(long, allow_hyphen_values = true)]
    pub anomaly_threshold: Option<f64>,
    /// Score CSV whose percentile sets the anomaly threshold.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    pub percentile: Option<f64>,
    #[arg(long)]
    pub drop_threshold: Option<f64>,
}

fn parse_variant(s: &str) -> Result<LossVariant, String> {
    s.parse().map_err(|e: radarfall_core::Error| e.to_string())
}

fn parse_latent_mode(s: &str) -> Result<LatentMode, String> {
    match s {
        "sampled" => Ok(LatentMode::Sampled),
        "posterior_mean" | "mean" => Ok(LatentMode::PosteriorMean),
        _ => Err(format!("unknown latent mode '{s}' (sampled, posterior_mean)")),
    }
}

/// Exit status and tag for a failure.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<UsageError>().is_some() {
        return (1, "usage");
    }
    if let Some(e) = err.downcast_ref::<radarfall_core::Error>() {
        return match e {
            radarfall_core::Error::Numerical(_) => (3, e.kind()),
            _ => (2, e.kind()),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return (2, "io");
    }
    (2, "data")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { out, preset, scale } => commands::simulate(&cli.common, &out, preset, scale),
        Command::Preprocess { input, out, stride } => commands::preprocess(&cli.common, &input, &out, stride),
        Command::Train { input, out, model } => commands::train(&cli.common, &input, &out, &model),
        Command::Score { weights, input, out, latent_mode } => {
            commands::score(&cli.common, &weights, &input, &out, latent_mode)
        }
        Command::Detect { scores, out, threshold } => commands::detect(&cli.common, &scores, &out, &threshold),
        Command::Eval { scores, labels, out, drop_threshold, half_window } => {
            commands::eval(&cli.common, &scores, &labels, &out, drop_threshold, half_window)
        }
        Command::Plot { scores, input, out, threshold } => commands::plot(&cli.common, &scores, &input, &out, &threshold),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
            ExitCode::from(code)
        }
    }
}
