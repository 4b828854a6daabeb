mod config;
mod decode;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use s2s_core::autodiff::OptimizerKind;
use s2s_core::corpus::UnkPolicy;
use s2s_core::neural_lm::{Activation, CellKind};
use s2s_core::search::LengthNormKind;
use s2s_core::seq2seq::{AttentionKind, BridgeKind, EncoderKind};
use s2s_core::Error;

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(
    name = "s2s",
    version,
    about = "Train, evaluate and decode language and translation models"
)]
pub struct Cli {
    /// Optional key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count-based interpolated n-gram model.
    TrainNgram(TrainNgram),
    /// Log-linear model over sparse history features.
    TrainLoglinear(TrainLoglinear),
    /// Feed-forward neural language model.
    TrainFfnnlm(TrainFfnnlm),
    /// Recurrent neural language model.
    TrainRnnlm(TrainRnnlm),
    /// Encoder-decoder translation model.
    TrainEncdec(TrainEncdec),
    /// Likelihood and perplexity of a test corpus.
    EvalPpl(EvalPpl),
    /// Translate with a single encoder-decoder model.
    Translate(Translate),
    /// Draw ancestral samples from any model.
    Sample(SampleCmd),
    /// Corpus BLEU of hypotheses against references.
    Bleu(BleuCmd),
    /// Translate with an ensemble of encoder-decoder models.
    EnsembleTranslate(EnsembleTranslate),
}

#[derive(Args, Debug, Default)]
pub struct CorpusOpts {
    /// Training corpus, one tokenized sentence per line.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out corpus for per-epoch metrics; defaults to the training data.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputOpts,
}

#[derive(Args, Debug, Default)]
pub struct OutputOpts {
    /// Where to write the model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Metrics file; defaults to the model path plus ".metrics.tsv".
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// keep-all, replace-singletons or min-count:K.
    #[arg(long)]
    pub unk_policy: Option<UnkPolicy>,
    /// Size of the assumed full vocabulary used for unknown words.
    #[arg(long)]
    pub v_all: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct ScheduleOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without dev improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub no_decay: bool,
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Args, Debug, Default)]
pub struct NeuralOpts {
    #[command(flatten)]
    pub schedule: ScheduleOpts,
    /// sgd, momentum, adagrad or adam.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainNgram {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    #[arg(long)]
    pub order: Option<usize>,
    /// One weight for every order, or a comma-separated list (lowest order first).
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainLoglinear {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    #[command(flatten)]
    pub schedule: ScheduleOpts,
    /// Comma-separated feature templates: prev_word, prev2_words, suffix_K, bag_of_words.
    #[arg(long)]
    pub templates: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainFfnnlm {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    #[command(flatten)]
    pub neural: NeuralOpts,
    #[arg(long)]
    pub order: Option<usize>,
    /// tanh or relu.
    #[arg(long)]
    pub activation: Option<Activation>,
}

#[derive(Args, Debug)]
pub struct TrainRnnlm {
    #[command(flatten)]
    pub corpus: CorpusOpts,
    #[command(flatten)]
    pub neural: NeuralOpts,
    /// rnn, lstm, lstm_forget or gru.
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub residual: bool,
}

#[derive(Args, Debug)]
pub struct TrainEncdec {
    #[arg(long)]
    pub train_src: Option<PathBuf>,
    #[arg(long)]
    pub train_tgt: Option<PathBuf>,
    #[arg(long)]
    pub dev_src: Option<PathBuf>,
    #[arg(long)]
    pub dev_tgt: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputOpts,
    #[command(flatten)]
    pub neural: NeuralOpts,
    /// none, dot, bilinear or mlp.
    #[arg(long)]
    pub attention: Option<AttentionKind>,
    /// forward, reverse or bidir.
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    /// final, concat or tanh; defaults to tanh for bidir, final otherwise.
    #[arg(long)]
    pub bridge: Option<BridgeKind>,
    #[arg(long)]
    pub cell: Option<CellKind>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub attn_hidden: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalPpl {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target sentences to score.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Source sentences, required for translation models.
    #[arg(long)]
    pub test_src: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct DecodeOpts {
    /// greedy, beam or sample.
    #[arg(long)]
    pub search: Option<SearchKind>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// none, prior or perword.
    #[arg(long)]
    pub length_norm: Option<LengthNormKind>,
    /// Print up to N hypotheses per sentence as "index ||| tokens ||| score".
    #[arg(long)]
    pub nbest: Option<usize>,
    /// Replace unknown outputs with the most-attended source word.
    #[arg(long)]
    pub replace_unk: bool,
    /// Output length limit; defaults to twice the source length plus 10.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source sentences; defaults to standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchKind {
    Greedy,
    Beam,
    Sample,
}

impl std::str::FromStr for SearchKind {
    type Err = Error;

    fn from_str(s: &str) -> s2s_core::Result<Self> {
        match s {
            "greedy" => Ok(SearchKind::Greedy),
            "beam" => Ok(SearchKind::Beam),
            "sample" => Ok(SearchKind::Sample),
            other => Err(Error::Config(format!("unknown search {other:?}"))),
        }
    }
}

#[derive(Args, Debug)]
pub struct Translate {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeOpts,
}

#[derive(Args, Debug)]
pub struct EnsembleTranslate {
    /// Comma-separated model files.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeOpts,
}

#[derive(Args, Debug)]
pub struct SampleCmd {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Samples to draw (per source sentence for translation models).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source sentences for translation models.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BleuCmd {
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub max_n: Option<usize>,
}

fn run(cli: Cli) -> s2s_core::Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::TrainNgram(a) => train::ngram(a, &cfg),
        Command::TrainLoglinear(a) => train::loglinear(a, &cfg),
        Command::TrainFfnnlm(a) => train::ffnnlm(a, &cfg),
        Command::TrainRnnlm(a) => train::rnnlm(a, &cfg),
        Command::TrainEncdec(a) => train::encdec(a, &cfg),
        Command::EvalPpl(a) => decode::eval_ppl(a, &cfg),
        Command::Translate(a) => decode::translate(a, &cfg),
        Command::Sample(a) => decode::sample(a, &cfg),
        Command::Bleu(a) => decode::bleu(a, &cfg),
        Command::EnsembleTranslate(a) => decode::ensemble_translate(a, &cfg),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
