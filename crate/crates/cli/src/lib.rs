//! The `ara` command line: synthetic data, preprocessing, splitting,
//! embedding validation, training, scoring, evaluation, review-pair sampling
//! and judgment scoring. Every artifact-producing command writes a run
//! manifest next to its output.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ara_core::data::Profile;
use ara_core::evaluation::PairScope;
use ara_core::model::Variant;

pub use commands::{
    cmd_embed_check, cmd_eval, cmd_judge, cmd_pairs, cmd_preprocess, cmd_score, cmd_split, cmd_synth, cmd_train,
    AnnotatorAccuracy, AnnotatorAgreement, EmbedCheckSummary, JudgeReport, PairsSummary, PreprocessSummary,
    ScoreSummary, SplitSummary, SynthSummary, TrainSummary,
};
pub use error::{CliError, CliResult};
pub use manifest::{sha256_file, sibling, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "ara", version, about = "Utterance quality impact scores from conversation ratings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted utterance impacts.
    Synth(SynthArgs),
    /// Normalize utterance text with a preprocessing profile.
    Preprocess(PreprocessArgs),
    /// Seeded train / dev / test split of a conversations file.
    Split(SplitArgs),
    /// Validate an embeddings file, optionally against a dataset.
    EmbedCheck(EmbedCheckArgs),
    /// Fit a model variant to rated conversations.
    Train(TrainArgs),
    /// Write per-utterance rating, weight and impact for every conversation.
    Score(ScoreArgs),
    /// Pearson and C-Index for score reports or freshly trained seeds.
    Eval(EvalArgs),
    /// Sample blind (issue, non-issue) review pairs from a score report.
    Pairs(PairsArgs),
    /// Join judgment files with a pair key and report accuracy.
    Judge(JudgeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Directory receiving conversations.jsonl, embeddings.ueb, truth.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_conversations: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub n_prototypes: Option<usize>,
    /// Planted impact per prototype, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub impacts: Option<Vec<f64>>,
    /// Standard deviation of the rating noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Profile,
    /// Symbol lexicon (`symbol<TAB>replacement`); defaults to the built-in one.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Drop conversations shorter than this after preprocessing.
    #[arg(long, default_value_t = 1)]
    pub min_utterances: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: usize,
    #[arg(long)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving train.jsonl, dev.jsonl, test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedCheckArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Conversations whose every utterance must have an embedding.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Training settings (`key = value`); absent keys use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Warm start (finetune) from a saved model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Model file; history and manifest are written alongside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// JSON Lines report, one conversation per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Pearson,
    CIndex,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Score reports to evaluate, one per seed (report mode).
    #[arg(long)]
    pub report: Vec<PathBuf>,
    /// Conversations covered by the reports (report mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Variant to train once per seed (training mode).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds, comma separated; results are reported per seed and averaged.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Metric::Pearson, Metric::CIndex])]
    pub metrics: Vec<Metric>,
    /// Which (issue, non-issue) pairs the C-Index compares.
    #[arg(long, value_parser = parse_scope, default_value = "global")]
    pub scope: PairScope,
    /// Metrics JSON file; printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PairsArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained utterance embeddings used for diversity clustering.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Percentile of impact scores below which utterances are issues.
    #[arg(long, default_value_t = 5.0)]
    pub pct: f64,
    /// Clusters per issue utterance.
    #[arg(long, default_value_t = 0.01)]
    pub k_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving presentation.jsonl and key.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JudgeArgs {
    /// Sealed key written by `pairs`.
    #[arg(long)]
    pub key: PathBuf,
    /// One judgments file per annotator.
    #[arg(long, required = true)]
    pub judgments: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ara_core::Error| e.to_string())
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: ara_core::Error| e.to_string())
}

fn parse_scope(s: &str) -> Result<PairScope, String> {
    s.parse().map_err(|e: ara_core::Error| e.to_string())
}

/// Runs one parsed command, printing its JSON summary to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    let summary = match cli.command {
        Command::Synth(a) => serde_json::to_value(cmd_synth(&a)?),
        Command::Preprocess(a) => serde_json::to_value(cmd_preprocess(&a)?),
        Command::Split(a) => serde_json::to_value(cmd_split(&a)?),
        Command::EmbedCheck(a) => serde_json::to_value(cmd_embed_check(&a)?),
        Command::Train(a) => serde_json::to_value(cmd_train(&a)?),
        Command::Score(a) => serde_json::to_value(cmd_score(&a)?),
        Command::Eval(a) => serde_json::to_value(cmd_eval(&a)?),
        Command::Pairs(a) => serde_json::to_value(cmd_pairs(&a)?),
        Command::Judge(a) => serde_json::to_value(cmd_judge(&a)?),
    }
    .map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?);
    Ok(())
}
