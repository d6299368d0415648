//! Command-line frontend: argument parsing, workspace handling and one
//! function per subcommand.

pub mod commands;
pub mod workspace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sigtrack::Weights;

/// Exit status for success.
pub const EXIT_OK: u8 = 0;
/// Some items (or all inputs) failed.
pub const EXIT_PARTIAL: u8 = 1;
/// Bad usage, missing artifact, version or config mismatch, locked workspace.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{}: {reason}", path.display())]
    Version { path: PathBuf, reason: String },
    #[error("workspace is locked by another writer ({}); remove it if stale", .0.display())]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::MissingArtifact(_) | Self::Version { .. } | Self::Locked(_) | Self::Usage(_) => {
                EXIT_USAGE
            }
            Self::Io { .. } | Self::Failed(_) => EXIT_PARTIAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sigtrack",
    version,
    about = "Static Android malware detection and family grouping"
)]
pub struct Cli {
    /// Workspace directory holding all artifacts.
    #[arg(long, global = true, default_value = "sigtrack-workspace")]
    pub workspace: PathBuf,
    /// Feature config (JSON); defaults to the workspace copy, then the built-in table.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// Likelihood-ratio threshold T_L.
    #[arg(long = "threshold-TL", default_value_t = 1.0)]
    pub threshold_tl: f64,
    /// Minimum number of sensitive APIs for the behavior gate.
    #[arg(long, default_value_t = 2)]
    pub sensitive_threshold: u8,
    /// Evaluate every stage instead of stopping at the first that fires.
    #[arg(long)]
    pub no_short_circuit: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    /// Similarity threshold T_S.
    #[arg(long = "threshold-TS", default_value_t = 0.7)]
    pub threshold_ts: f64,
    /// Weights w_api,w_cmd,w_perm summing to 1.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<Weights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Order {
    /// Arrival order of the verdict log.
    Input,
    /// Ascending sha256.
    Sha256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusMode {
    Separable,
    Table2,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse APKs or profile documents into the workspace.
    Extract {
        /// APK files, profile JSON files or directories of them.
        inputs: Vec<PathBuf>,
        /// Labels index (sha256<TAB>label) to merge.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train the likelihood model from labeled profiles.
    Train,
    /// Build the serial blacklist from labeled malware.
    Blacklist {
        /// Build time recorded in the file (seconds since the epoch);
        /// defaults to SOURCE_DATE_EPOCH, else omitted.
        #[arg(long)]
        built_at: Option<u64>,
    },
    /// Run the detector over every profile.
    Scan(DetectArgs),
    /// Group the samples flagged by the last scan.
    Classify {
        #[command(flatten)]
        classify: ClassifyArgs,
        #[arg(long, value_enum, default_value_t = Order::Input)]
        order: Order,
    },
    /// Cross-validate detection and classification on the labeled corpus.
    Eval {
        #[command(flatten)]
        detect: DetectArgs,
        #[command(flatten)]
        classify: ClassifyArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic corpus of profile documents plus labels.
    GenCorpus {
        /// Output directory.
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        families: usize,
        #[arg(long, default_value_t = 30)]
        per_family: usize,
        #[arg(long, default_value_t = 300)]
        benign: usize,
        #[arg(long, value_enum, default_value_t = CorpusMode::Separable)]
        mode: CorpusMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serial statistics over the labeled malware.
    Stats,
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let [api, cmd, perm] = parts[..] else {
        return Err("expected three comma-separated weights".into());
    };
    Weights::new(api, cmd, perm).map_err(|e| e.to_string())
}

/// Runs one command; the result is the process exit code.
pub fn run(cli: Cli) -> u8 {
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_flag() {
        let w = parse_weights("0.5,0.25,0.25").unwrap();
        assert_eq!((w.api, w.cmd, w.perm), (0.5, 0.25, 0.25));
        assert!(parse_weights("0.5,0.5").is_err());
        assert!(parse_weights("0.5,0.5,0.5").is_err());
        assert!(parse_weights("a,b,c").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "sigtrack",
            "--workspace",
            "w",
            "eval",
            "--threshold-TL",
            "2",
            "--threshold-TS",
            "0.8",
            "--folds",
            "3",
            "--seed",
            "7",
            "--no-short-circuit",
        ])
        .unwrap();
        match cli.command {
            Command::Eval {
                detect,
                classify,
                folds,
                seed,
            } => {
                assert_eq!(detect.threshold_tl, 2.0);
                assert!(detect.no_short_circuit);
                assert_eq!(classify.threshold_ts, 0.8);
                assert_eq!((folds, seed), (3, 7));
            }
            other => panic!("{other:?}"),
        }
    }
}
