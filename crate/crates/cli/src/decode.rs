//! Evaluation, translation, sampling and BLEU subcommands.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use s2s_core::corpus::{parse_lines, read_lines, Sentence, TokenId, Vocabulary};
use s2s_core::eval::{bleu as corpus_bleu, evaluate_conditional, evaluate_lm, SentenceScorer};
use s2s_core::model_file::{Model, ModelFile};
use s2s_core::search::{
    beam_search, default_max_len, format_nbest, greedy, replace_unknowns, sample as draw,
    LengthNorm, LengthNormKind, LengthPrior, SearchResult, StepModel,
};
use s2s_core::seq2seq::{EncDecModel, Ensemble};
use s2s_core::train::{seeded_rng, Rng, DEFAULT_SEED};
use s2s_core::{Error, Result};

use crate::config::ConfigFile;
use crate::train::require;
use crate::{BleuCmd, DecodeOpts, EnsembleTranslate, EvalPpl, SampleCmd, SearchKind, Translate};

fn read_input(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => read_lines(p),
        None => {
            let mut bytes = Vec::new();
            std::io::stdin()
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io("<stdin>", e))?;
            parse_lines(&bytes)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn eval_ppl(a: EvalPpl, cfg: &ConfigFile) -> Result<()> {
    let file = ModelFile::load(require(a.model, "model", cfg)?)?;
    let test = read_lines(require(a.test, "test", cfg)?)?;
    let vocab = file.model.target_vocab();
    let targets: Vec<Sentence> = test.iter().map(|l| vocab.encode(l, true)).collect();
    let report = match file.model.source_vocab() {
        Some(src_vocab) => {
            let src_path = require(a.test_src, "test-src", cfg)?;
            let src = read_lines(&src_path)?;
            if src.len() != targets.len() {
                return Err(Error::Data(format!(
                    "{} has {} lines but the test targets have {}",
                    src_path.display(),
                    src.len(),
                    targets.len()
                )));
            }
            let pairs: Vec<(Sentence, Sentence)> = src
                .iter()
                .map(|l| src_vocab.encode(l, false))
                .zip(targets)
                .collect();
            evaluate_conditional(&file.model, &pairs)?
        }
        None => evaluate_lm(&file.model, &targets)?,
    };
    write_output(None, &report.to_string())
}

/// Decoding settings after config-file resolution.
struct Settings {
    search: SearchKind,
    beam: usize,
    length_norm: LengthNorm,
    nbest: Option<usize>,
    replace_unk: bool,
    max_len: Option<usize>,
    seed: u64,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
}

impl Settings {
    fn resolve(d: DecodeOpts, cfg: &ConfigFile, prior: Option<&LengthPrior>) -> Result<Self> {
        let search = cfg.pick(d.search, "search", SearchKind::Greedy)?;
        let nbest = cfg.pick_opt(d.nbest, "nbest")?;
        let beam = cfg.pick(d.beam_size, "beam-size", 5usize)?;
        if beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if let Some(n) = nbest {
            if search != SearchKind::Beam {
                return Err(Error::Config("--nbest needs --search beam".into()));
            }
            if n == 0 || n > beam {
                return Err(Error::Config(format!(
                    "--nbest must be between 1 and the beam size ({beam})"
                )));
            }
        }
        let length_norm = match cfg.pick(d.length_norm, "length-norm", LengthNormKind::None)? {
            LengthNormKind::None => LengthNorm::None,
            LengthNormKind::PerWord => LengthNorm::PerWord,
            LengthNormKind::Prior => LengthNorm::MultinomialPrior(
                prior
                    .cloned()
                    .ok_or_else(|| Error::Config("this model file has no length prior".into()))?,
            ),
        };
        Ok(Settings {
            search,
            beam,
            length_norm,
            nbest,
            replace_unk: cfg.pick(d.replace_unk.then_some(true), "replace-unk", false)?,
            max_len: cfg.pick_opt(d.max_len, "max-len")?,
            seed: cfg.pick(d.seed, "seed", DEFAULT_SEED)?,
            input: cfg.pick_opt(d.input, "input")?,
            output: cfg.pick_opt(d.output, "output")?,
        })
    }
}

struct Decoder<'a, M> {
    model: &'a M,
    src_vocab: &'a Vocabulary,
    tgt_vocab: &'a Vocabulary,
    settings: &'a Settings,
}

impl<M: StepModel + Sync> Decoder<'_, M> {
    fn search(&self, src: &[TokenId], rng: &mut Rng) -> Result<Vec<SearchResult>> {
        let s = self.settings;
        let max_len = s
            .max_len
            .unwrap_or_else(|| default_max_len(Some(src.len())));
        match s.search {
            SearchKind::Greedy => Ok(vec![greedy(self.model, Some(src), max_len)?]),
            SearchKind::Sample => Ok(vec![draw(self.model, Some(src), rng, max_len)?]),
            SearchKind::Beam => beam_search(self.model, Some(src), s.beam, max_len, &s.length_norm),
        }
    }

    fn render(&self, result: &SearchResult, words: &[&str]) -> Result<String> {
        if self.settings.replace_unk {
            Ok(replace_unknowns(result, words, self.tgt_vocab)?.join(" "))
        } else {
            Ok(self.tgt_vocab.decode_line(&result.tokens))
        }
    }

    fn line(&self, index: usize, line: &str, rng: &mut Rng) -> Result<String> {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            return Ok("\n".into());
        }
        let src = self.src_vocab.encode(line, false);
        let results = self.search(&src, rng)?;
        match self.settings.nbest {
            Some(n) => format_nbest(index, &results[..n.min(results.len())], |r| {
                self.render(r, &words)
            }),
            None => Ok(self.render(&results[0], &words)? + "\n"),
        }
    }

    /// Deterministic searches run in parallel; sampling draws from one
    /// generator in input order.
    fn run(&self, lines: &[String]) -> Result<String> {
        let outputs: Vec<String> = if self.settings.search == SearchKind::Sample {
            let mut rng = seeded_rng(self.settings.seed);
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| self.line(i, l, &mut rng))
                .collect::<Result<_>>()?
        } else {
            lines
                .par_iter()
                .enumerate()
                .map(|(i, l)| self.line(i, l, &mut seeded_rng(self.settings.seed)))
                .collect::<Result<_>>()?
        };
        Ok(outputs.concat())
    }
}

fn load_encdec(path: &Path) -> Result<(EncDecModel, Option<LengthPrior>)> {
    let file = ModelFile::load(path)?;
    match file.model {
        Model::EncDec(m) => Ok((m, file.length_prior)),
        other => Err(Error::Config(format!(
            "{}: a {} model cannot translate",
            path.display(),
            other.kind()
        ))),
    }
}

pub fn translate(a: Translate, cfg: &ConfigFile) -> Result<()> {
    let (model, prior) = load_encdec(&require(a.model, "model", cfg)?)?;
    let settings = Settings::resolve(a.decode, cfg, prior.as_ref())?;
    let lines = read_input(settings.input.as_deref())?;
    let decoder = Decoder {
        model: &model,
        src_vocab: model.src_vocab(),
        tgt_vocab: model.tgt_vocab(),
        settings: &settings,
    };
    let text = decoder.run(&lines)?;
    write_output(settings.output.as_deref(), &text)
}

pub fn ensemble_translate(a: EnsembleTranslate, cfg: &ConfigFile) -> Result<()> {
    let paths = if a.models.is_empty() {
        cfg.pick_opt::<String>(None, "models")?
            .map(|s| s.split(',').map(PathBuf::from).collect())
            .unwrap_or_default()
    } else {
        a.models
    };
    if paths.is_empty() {
        return Err(Error::Config("missing --models".into()));
    }
    let loaded: Vec<(EncDecModel, Option<LengthPrior>)> = paths
        .iter()
        .map(|p| load_encdec(p))
        .collect::<Result<_>>()?;
    let first = &loaded[0].0;
    if loaded
        .iter()
        .any(|(m, _)| m.src_vocab() != first.src_vocab())
    {
        return Err(Error::Config(
            "ensemble members have different source vocabularies".into(),
        ));
    }
    let prior = loaded.iter().find_map(|(_, p)| p.as_ref());
    let settings = Settings::resolve(a.decode, cfg, prior)?;
    let ensemble = Ensemble::new(loaded.iter().map(|(m, _)| m).collect())?;
    let lines = read_input(settings.input.as_deref())?;
    let decoder = Decoder {
        model: &ensemble,
        src_vocab: first.src_vocab(),
        tgt_vocab: first.tgt_vocab(),
        settings: &settings,
    };
    let text = decoder.run(&lines)?;
    write_output(settings.output.as_deref(), &text)
}

fn sample_with<M: StepModel>(
    model: &M,
    vocab: &Vocabulary,
    sources: Option<&[Sentence]>,
    count: usize,
    max_len: Option<usize>,
    rng: &mut Rng,
) -> Result<String> {
    let mut out = String::new();
    let mut one = |src: Option<&[TokenId]>| -> Result<()> {
        let limit = max_len.unwrap_or_else(|| default_max_len(src.map(<[TokenId]>::len)));
        let r = draw(model, src, rng, limit)?;
        out.push_str(&vocab.decode_line(&r.tokens));
        out.push('\n');
        Ok(())
    };
    match sources {
        Some(sources) => {
            for s in sources {
                for _ in 0..count {
                    one(Some(s))?;
                }
            }
        }
        None => {
            for _ in 0..count {
                one(None)?;
            }
        }
    }
    Ok(out)
}

pub fn sample(a: SampleCmd, cfg: &ConfigFile) -> Result<()> {
    let file = ModelFile::load(require(a.model, "model", cfg)?)?;
    let count = cfg.pick(a.count, "count", 1usize)?;
    let max_len = cfg.pick_opt(a.max_len, "max-len")?;
    let mut rng = seeded_rng(cfg.pick(a.seed, "seed", DEFAULT_SEED)?);
    let output: Option<PathBuf> = cfg.pick_opt(a.output, "output")?;
    let text = match &file.model {
        Model::NGram(m) => sample_with(m, m.vocab(), None, count, max_len, &mut rng)?,
        Model::LogLinear(m) => sample_with(m, m.vocab(), None, count, max_len, &mut rng)?,
        Model::Ffnn(m) => sample_with(m, m.vocab(), None, count, max_len, &mut rng)?,
        Model::Rnn(m) => sample_with(m, m.vocab(), None, count, max_len, &mut rng)?,
        Model::EncDec(m) => {
            let input: Option<PathBuf> = cfg.pick_opt(a.input, "input")?;
            let lines = read_input(input.as_deref())?;
            let sources: Vec<Sentence> = lines
                .iter()
                .filter(|l| !l.trim().is_empty())
                .map(|l| m.src_vocab().encode(l, false))
                .collect();
            sample_with(m, m.tgt_vocab(), Some(&sources), count, max_len, &mut rng)?
        }
    };
    write_output(output.as_deref(), &text)
}

pub fn bleu(a: BleuCmd, cfg: &ConfigFile) -> Result<()> {
    let hyp = read_lines(require(a.hyp, "hyp", cfg)?)?;
    let reference = read_lines(require(a.reference, "ref", cfg)?)?;
    let report = corpus_bleu(&hyp, &reference, cfg.pick(a.max_n, "max-n", 4usize)?)?;
    write_output(None, &report.to_string())
}
