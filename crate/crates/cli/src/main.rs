use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::Settings;

/// Unsupervised tree induction with a recursive transformer over a pruned
/// chart.
#[derive(Parser, Debug)]
#[command(name = "chartformer", version)]
struct Cli {
    /// `key = value` file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a word-piece vocabulary from a corpus.
    Vocab(VocabArgs),
    /// Sample sentences and gold trees from a toy grammar.
    Synth(SynthArgs),
    /// Train on a corpus with the cloze objective.
    Train(TrainArgs),
    /// Induce one tree per input line.
    Parse(ParseArgs),
    /// Pseudo-perplexity of a corpus.
    Pppl(PpplArgs),
    /// Unlabeled span F1 between tree files.
    EvalF1(EvalF1Args),
    /// Constituent recall by label against labeled gold trees.
    EvalRecall(EvalRecallArgs),
    /// Dependency compatibility of predicted trees.
    EvalDepcompat(EvalDepArgs),
    /// Convert labeled gold trees to unlabeled brackets.
    ExportTrees(ExportArgs),
    /// Composition calls made by pruned induction.
    CountCalls(CountArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Pruning window m.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub init_std: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Whole words kept, most frequent first.
    #[arg(long, default_value_t = 30000)]
    pub max_words: usize,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grammar rules, one `LHS -> SYM [SYM] PROB` per line; built-in grammar
    /// when absent.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub max_depth: usize,
    /// Sentences, one per line.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Gold trees, one per line.
    #[arg(long)]
    pub trees: Option<PathBuf>,
    /// Write gold trees with `_`-prefixed symbols dissolved instead of the
    /// binary derivations.
    #[arg(long)]
    pub flat: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Receives `epoch-NNN.ckpt`, `model.ckpt` and `train.log`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_total_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Process sentences on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Raw text, one sentence per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Keep every word's pieces together and print word leaves.
    #[arg(long)]
    pub word_constraint: bool,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct PpplArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Per-sentence TSV.
    #[arg(long)]
    pub per_sentence: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct EvalF1Args {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub per_sentence: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalRecallArgs {
    /// Predicted trees; `##` leaves continue the previous word.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Labeled bracketed trees.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub strip_punct: bool,
    #[arg(long)]
    pub lowercase: bool,
}

#[derive(Args, Debug)]
pub struct EvalDepArgs {
    /// Predicted binary trees over words or word pieces.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// CoNLL-style dependency trees.
    #[arg(long)]
    pub deps: Option<PathBuf>,
    #[arg(long)]
    pub per_sentence: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Labeled bracketed trees, one per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub strip_punct: bool,
    #[arg(long)]
    pub lowercase: bool,
    /// Expand words into word-piece constituents with this vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Trained model; a freshly initialized one otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub per_sentence: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let settings = match &cli.config {
        Some(p) => Settings::load(p),
        None => Ok(Settings::default()),
    };
    let result = settings.and_then(|s| match cli.command {
        Command::Vocab(a) => commands::vocab(&s, a),
        Command::Synth(a) => commands::synth(&s, a),
        Command::Train(a) => commands::train(&s, a),
        Command::Parse(a) => commands::parse(&s, a),
        Command::Pppl(a) => commands::pppl(&s, a),
        Command::EvalF1(a) => commands::eval_f1(&s, a),
        Command::EvalRecall(a) => commands::eval_recall(&s, a),
        Command::EvalDepcompat(a) => commands::eval_depcompat(&s, a),
        Command::ExportTrees(a) => commands::export_trees(&s, a),
        Command::CountCalls(a) => commands::count_calls(&s, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
