use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use xnlu_core::corpus::Split;
use xnlu_core::entropy::EntropyTask;
use xnlu_core::model::{ModelVariant, TaskKind};
use xnlu_core::trainer::OrderKind;

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "XNLU_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "xnlu", version, about = "Explainable joint intent detection and slot filling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Export class-specific attention for utterances.
    Explain(ExplainArgs),
    /// Attention entropy of positive versus negative classes.
    EntropyReport(EntropyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory. Relative paths that do not exist are tried under $XNLU_DATA_ROOT.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// joint-nlu, sentence-classification (sentiment) or token-classification (ner).
    #[arg(long)]
    pub task: Option<TaskKind>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// explainable or baseline.
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the main intent loss.
    #[arg(long)]
    pub intent_weight: Option<f64>,
    /// Weight of the per-intent binary losses.
    #[arg(long)]
    pub intent_binary_weight: Option<f64>,
    /// Weight of the per-slot binary losses.
    #[arg(long)]
    pub slot_binary_weight: Option<f64>,
    /// Weight of the main slot loss.
    #[arg(long)]
    pub slot_weight: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// sequential, shuffled or bucketed.
    #[arg(long)]
    pub order: Option<OrderKind>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Projection width of the per-slot-class attentions.
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Lowercase tokens before vocabulary lookup.
    #[arg(long)]
    pub lowercase: bool,
    /// Skip per-epoch validation.
    #[arg(long)]
    pub no_validate: bool,
    /// Also keep the best-validation checkpoint in `<out>/best`.
    #[arg(long)]
    pub keep_best: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory; defaults to the one the model was trained on.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Whitespace-tokenized utterance; repeat for several.
    #[arg(long, conflicts_with = "file")]
    pub input: Vec<String>,
    /// File with one utterance per line.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// json, svg or ansi.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Directory for one file per utterance; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Comma-separated top-k percentages.
    #[arg(long, value_delimiter = ',', default_value = "100,10,5")]
    pub topk: Vec<f64>,
    /// slot, intent, ner or sentiment; joint models default to both slot and intent.
    #[arg(long)]
    pub task: Option<EntropyTask>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
