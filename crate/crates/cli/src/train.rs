//! Training subcommands. Each writes a model file and a metrics file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use s2s_core::autodiff::{OptimizerConfig, OptimizerKind};
use s2s_core::corpus::{
    build_vocab, read_lines, read_parallel, Sentence, UnkPolicy, Vocabulary, DEFAULT_V_ALL,
};
use s2s_core::eval::{evaluate_lm, EpochMetrics};
use s2s_core::loglinear::{parse_templates, LogLinearLm};
use s2s_core::model_file::{Model, ModelFile};
use s2s_core::neural_lm::{
    Activation, CellKind, FfnnLm, FfnnLmConfig, NeuralTrainConfig, RnnLm, RnnLmConfig,
};
use s2s_core::ngram::{NGramLm, DEFAULT_ALPHA};
use s2s_core::search::LengthPrior;
use s2s_core::seq2seq::{
    AttentionKind, BridgeKind, EncDecConfig, EncDecModel, EncoderKind, ATTN_HIDDEN_DEFAULT,
};
use s2s_core::train::{seeded_rng, Schedule, DEFAULT_SEED};
use s2s_core::{Error, Result};

use crate::config::ConfigFile;
use crate::{CorpusOpts, NeuralOpts, OutputOpts, ScheduleOpts};

pub(crate) fn require(flag: Option<PathBuf>, key: &str, cfg: &ConfigFile) -> Result<PathBuf> {
    cfg.pick_opt(flag, key)?
        .ok_or_else(|| Error::Config(format!("missing --{key}")))
}

struct Output {
    model: PathBuf,
    metrics: PathBuf,
    seed: u64,
    v_all: u64,
    policy: UnkPolicy,
}

impl Output {
    fn resolve(o: &OutputOpts, cfg: &ConfigFile, policy: UnkPolicy) -> Result<Self> {
        let model = require(o.model.clone(), "model", cfg)?;
        let metrics = cfg
            .pick_opt(o.metrics.clone(), "metrics")?
            .unwrap_or_else(|| {
                let mut p = model.clone().into_os_string();
                p.push(".metrics.tsv");
                p.into()
            });
        Ok(Output {
            model,
            metrics,
            seed: cfg.pick(o.seed, "seed", DEFAULT_SEED)?,
            v_all: cfg.pick(o.v_all, "v-all", DEFAULT_V_ALL)?,
            policy: cfg.pick(o.unk_policy, "unk-policy", policy)?,
        })
    }

    fn finish(&self, file: ModelFile, metrics: &[EpochMetrics]) -> Result<()> {
        write_metrics(&self.metrics, metrics)?;
        file.save(&self.model)
    }
}

fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut text = String::from("epoch\ttrain_loss\tdev_ll\tdev_ppl\n");
    for r in rows {
        let _ = writeln!(text, "{r}");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn vocab_for(lines: &[String], policy: UnkPolicy, v_all: u64) -> Result<Vocabulary> {
    let mut vocab = build_vocab(lines, policy)?;
    vocab.set_v_all(v_all)?;
    Ok(vocab)
}

fn encode_all(vocab: &Vocabulary, lines: &[String], eos: bool) -> Vec<Sentence> {
    lines.iter().map(|l| vocab.encode(l, eos)).collect()
}

/// Training and dev lines for a monolingual model; dev defaults to train.
fn load_corpus(c: &CorpusOpts, cfg: &ConfigFile) -> Result<(Vec<String>, Option<Vec<String>>)> {
    let train = read_lines(require(c.train.clone(), "train", cfg)?)?;
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dev = match cfg.pick_opt(c.dev.clone(), "dev")? {
        Some(p) => Some(read_lines(p)?),
        None => None,
    };
    Ok((train, dev))
}

fn schedule(s: &ScheduleOpts, cfg: &ConfigFile, default_lr: f64, seed: u64) -> Result<Schedule> {
    Ok(Schedule {
        learning_rate: cfg.pick(s.lr, "lr", default_lr)?,
        epochs: cfg.pick(s.epochs, "epochs", 10)?,
        shuffle: cfg.pick(s.no_shuffle.then_some(false), "shuffle", true)?,
        decay: cfg.pick(s.no_decay.then_some(false), "decay", true)?,
        early_stop: cfg.pick(s.no_early_stop.then_some(false), "early-stop", true)?,
        patience: cfg.pick(s.patience, "patience", 3)?,
        seed,
    })
}

fn default_lr(kind: OptimizerKind) -> f64 {
    match kind {
        OptimizerKind::Adam => 0.001,
        _ => 0.1,
    }
}

fn neural_config(n: &NeuralOpts, cfg: &ConfigFile, seed: u64) -> Result<NeuralTrainConfig> {
    let kind = cfg.pick(n.optimizer, "optimizer", OptimizerKind::Adam)?;
    let s = schedule(&n.schedule, cfg, default_lr(kind), seed)?;
    let mut optimizer = OptimizerConfig::with_kind(kind, s.learning_rate);
    if let Some(clip) = cfg.pick_opt(n.clip, "clip")? {
        optimizer.clip_norm = (clip > 0.0).then_some(clip);
    }
    Ok(NeuralTrainConfig {
        optimizer,
        epochs: s.epochs,
        batch_size: cfg.pick(n.batch_size, "batch-size", 16)?,
        shuffle: s.shuffle,
        decay: s.decay,
        early_stop: s.early_stop,
        patience: s.patience,
        seed,
        sort_by_length: true,
    })
}

fn schedule_notes(s: &Schedule) -> Vec<(String, String)> {
    vec![
        ("lr".into(), s.learning_rate.to_string()),
        ("epochs".into(), s.epochs.to_string()),
        ("shuffle".into(), s.shuffle.to_string()),
        ("decay".into(), s.decay.to_string()),
        ("early_stop".into(), s.early_stop.to_string()),
        ("patience".into(), s.patience.to_string()),
        ("seed".into(), s.seed.to_string()),
    ]
}

fn neural_notes(t: &NeuralTrainConfig, policy: UnkPolicy) -> Vec<(String, String)> {
    let mut notes = vec![
        ("optimizer".into(), t.optimizer.kind.to_string()),
        ("lr".into(), t.optimizer.learning_rate.to_string()),
        (
            "clip".into(),
            t.optimizer
                .clip_norm
                .map_or("none".into(), |c| c.to_string()),
        ),
        ("batch_size".into(), t.batch_size.to_string()),
        ("epochs".into(), t.epochs.to_string()),
        ("patience".into(), t.patience.to_string()),
        ("seed".into(), t.seed.to_string()),
    ];
    notes.push(("unk_policy".into(), format!("{policy:?}")));
    notes
}

/// Parse `--alpha`: one value for all orders, or one per order.
fn parse_alpha(raw: &str, order: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = raw
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad interpolation weight {v:?}")))
        })
        .collect::<Result<_>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; order]),
        n if n == order => Ok(values),
        n => Err(Error::Config(format!(
            "expected 1 or {order} interpolation weights, got {n}"
        ))),
    }
}

pub fn ngram(a: crate::TrainNgram, cfg: &ConfigFile) -> Result<()> {
    let (train, dev) = load_corpus(&a.corpus, cfg)?;
    let out = Output::resolve(&a.corpus.out, cfg, UnkPolicy::KeepAll)?;
    let policy = out.policy;
    let order = cfg.pick(a.order, "order", 3usize)?;
    let alpha = match cfg.pick_opt(a.alpha, "alpha")? {
        Some(raw) => parse_alpha(&raw, order)?,
        None => vec![DEFAULT_ALPHA; order],
    };
    let vocab = vocab_for(&train, policy, out.v_all)?;
    let data = encode_all(&vocab, &train, true);
    let lm = NGramLm::train(&data, vocab, order, alpha)?;

    let train_report = evaluate_lm(&lm, &data)?;
    let dev_report = match &dev {
        Some(lines) => evaluate_lm(&lm, &encode_all(lm.vocab(), lines, true))?,
        None => train_report.clone(),
    };
    let metrics = [EpochMetrics::new(1, -train_report.per_word_ll, &dev_report)];
    let mut file = ModelFile::new(Model::NGram(lm));
    file.training
        .push(("unk_policy".into(), format!("{policy:?}")));
    out.finish(file, &metrics)
}

pub fn loglinear(a: crate::TrainLoglinear, cfg: &ConfigFile) -> Result<()> {
    let (train, dev) = load_corpus(&a.corpus, cfg)?;
    let out = Output::resolve(&a.corpus.out, cfg, UnkPolicy::ReplaceSingletons)?;
    let policy = out.policy;
    let templates = parse_templates(&cfg.pick(
        a.templates,
        "templates",
        "prev_word,prev2_words".to_string(),
    )?)?;
    let s = schedule(&a.schedule, cfg, 0.1, out.seed)?;
    let vocab = vocab_for(&train, policy, out.v_all)?;
    let data = encode_all(&vocab, &train, true);
    let dev = dev
        .map(|d| encode_all(&vocab, &d, true))
        .unwrap_or_default();
    let mut lm = LogLinearLm::new(vocab, templates)?;
    let metrics = lm.train_sgd(&data, &dev, &s)?;
    let mut file = ModelFile::new(Model::LogLinear(lm));
    file.training = schedule_notes(&s);
    file.training
        .push(("unk_policy".into(), format!("{policy:?}")));
    out.finish(file, &metrics)
}

pub fn ffnnlm(a: crate::TrainFfnnlm, cfg: &ConfigFile) -> Result<()> {
    let (train, dev) = load_corpus(&a.corpus, cfg)?;
    let out = Output::resolve(&a.corpus.out, cfg, UnkPolicy::ReplaceSingletons)?;
    let policy = out.policy;
    let t = neural_config(&a.neural, cfg, out.seed)?;
    let defaults = FfnnLmConfig::default();
    let config = FfnnLmConfig {
        order: cfg.pick(a.order, "order", defaults.order)?,
        embed_dim: cfg.pick(a.neural.embed_dim, "embed-dim", defaults.embed_dim)?,
        hidden: cfg.pick(a.neural.hidden, "hidden", defaults.hidden)?,
        activation: cfg.pick(a.activation, "activation", Activation::Tanh)?,
    };
    let vocab = vocab_for(&train, policy, out.v_all)?;
    let data = encode_all(&vocab, &train, true);
    let dev = dev.map(|d| encode_all(&vocab, &d, true));
    let mut lm = FfnnLm::new(vocab, config, &mut seeded_rng(out.seed))?;
    let metrics = lm.train(&data, dev.as_deref(), &t)?;
    let mut file = ModelFile::new(Model::Ffnn(lm));
    file.training = neural_notes(&t, policy);
    out.finish(file, &metrics)
}

pub fn rnnlm(a: crate::TrainRnnlm, cfg: &ConfigFile) -> Result<()> {
    let (train, dev) = load_corpus(&a.corpus, cfg)?;
    let out = Output::resolve(&a.corpus.out, cfg, UnkPolicy::ReplaceSingletons)?;
    let policy = out.policy;
    let t = neural_config(&a.neural, cfg, out.seed)?;
    let defaults = RnnLmConfig::default();
    let config = RnnLmConfig {
        cell: cfg.pick(a.cell, "cell", defaults.cell)?,
        embed_dim: cfg.pick(a.neural.embed_dim, "embed-dim", defaults.embed_dim)?,
        hidden: cfg.pick(a.neural.hidden, "hidden", defaults.hidden)?,
        layers: cfg.pick(a.layers, "layers", defaults.layers)?,
        residual: cfg.pick(a.residual.then_some(true), "residual", false)?,
    };
    let vocab = vocab_for(&train, policy, out.v_all)?;
    let data = encode_all(&vocab, &train, true);
    let dev = dev.map(|d| encode_all(&vocab, &d, true));
    let mut lm = RnnLm::new(vocab, config, &mut seeded_rng(out.seed))?;
    let metrics = lm.train(&data, dev.as_deref(), &t)?;
    let mut file = ModelFile::new(Model::Rnn(lm));
    file.training = neural_notes(&t, policy);
    out.finish(file, &metrics)
}

pub fn encdec(a: crate::TrainEncdec, cfg: &ConfigFile) -> Result<()> {
    let (src_lines, tgt_lines) = read_parallel(
        require(a.train_src, "train-src", cfg)?,
        require(a.train_tgt, "train-tgt", cfg)?,
    )?;
    if src_lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dev_lines = match (
        cfg.pick_opt(a.dev_src, "dev-src")?,
        cfg.pick_opt(a.dev_tgt, "dev-tgt")?,
    ) {
        (Some(s), Some(t)) => Some(read_parallel(s, t)?),
        (None, None) => None,
        _ => return Err(Error::Config("--dev-src and --dev-tgt go together".into())),
    };
    let out = Output::resolve(&a.out, cfg, UnkPolicy::ReplaceSingletons)?;
    let policy = out.policy;
    let t = neural_config(&a.neural, cfg, out.seed)?;

    let defaults = EncDecConfig::default();
    let encoder = cfg.pick(a.encoder, "encoder", defaults.encoder)?;
    let default_bridge = match encoder {
        EncoderKind::Bidirectional => BridgeKind::Tanh,
        _ => BridgeKind::Final,
    };
    let config = EncDecConfig {
        encoder,
        bridge: cfg.pick(a.bridge, "bridge", default_bridge)?,
        attention: cfg.pick(a.attention, "attention", AttentionKind::Mlp)?,
        cell: cfg.pick(a.cell, "cell", CellKind::LstmForget)?,
        embed_dim: cfg.pick(a.neural.embed_dim, "embed-dim", defaults.embed_dim)?,
        hidden: cfg.pick(a.neural.hidden, "hidden", defaults.hidden)?,
        layers: cfg.pick(a.layers, "layers", defaults.layers)?,
        attn_hidden: cfg.pick(a.attn_hidden, "attn-hidden", ATTN_HIDDEN_DEFAULT)?,
    };

    let src_vocab = vocab_for(&src_lines, policy, out.v_all)?;
    let tgt_vocab = vocab_for(&tgt_lines, policy, out.v_all)?;
    let pairs = |src: &[String], tgt: &[String]| -> Vec<(Sentence, Sentence)> {
        src.iter()
            .zip(tgt)
            .map(|(f, e)| (src_vocab.encode(f, false), tgt_vocab.encode(e, true)))
            .collect()
    };
    let train = pairs(&src_lines, &tgt_lines);
    if let Some(i) = train.iter().position(|(f, _)| f.is_empty()) {
        return Err(Error::Data(format!(
            "training source line {} is empty",
            i + 1
        )));
    }
    let dev = dev_lines.map(|(s, t)| pairs(&s, &t));
    let prior = LengthPrior::fit(train.iter().map(|(f, e)| (f.len(), e.len() - 1)));

    let mut model = EncDecModel::new(src_vocab, tgt_vocab, config, &mut seeded_rng(out.seed))?;
    let metrics = model.train(&train, dev.as_deref(), &t)?;
    let mut file = ModelFile::new(Model::EncDec(model));
    file.length_prior = Some(prior);
    file.training = neural_notes(&t, policy);
    out.finish(file, &metrics)
}
