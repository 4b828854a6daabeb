//! Portable binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "S2SW" | u32 version | str kind
//! u32 vocab count   { u32 n, n × str token, u64 v_all }
//! u32 hparam count  { str key, str value }
//! u32 tensor count  { str name, u32 rank, rank × u64 dim, f64 data... }
//! u32 n-gram count  { u32 len, len × u64 id, u64 count }
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::corpus::{Sentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{SentenceScorer, TokenScore};
use crate::loglinear::{parse_templates, templates_descriptor, LogLinearLm, LogLinearParams};
use crate::neural_lm::{Activation, CellKind, FfnnLm, FfnnLmConfig, RnnLm, RnnLmConfig};
use crate::ngram::{NGramCountTable, NGramLm};
use crate::search::LengthPrior;
use crate::seq2seq::{AttentionKind, BridgeKind, EncDecConfig, EncDecModel, EncoderKind};
use crate::tensor::Tensor;
use crate::train::seeded_rng;

pub const MAGIC: &[u8; 4] = b"S2SW";
pub const FORMAT_VERSION: u32 = 1;

const LENGTH_PRIOR_TENSOR: &str = "length_prior";
const TRAIN_PREFIX: &str = "train.";

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    NGram(NGramLm),
    LogLinear(LogLinearLm),
    Ffnn(FfnnLm),
    Rnn(RnnLm),
    EncDec(EncDecModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::NGram(_) => "ngram",
            Model::LogLinear(_) => "loglinear",
            Model::Ffnn(_) => "ffnnlm",
            Model::Rnn(_) => "rnnlm",
            Model::EncDec(_) => "encdec",
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, Model::EncDec(_))
    }

    /// Source vocabulary of a conditional model.
    pub fn source_vocab(&self) -> Option<&Vocabulary> {
        match self {
            Model::EncDec(m) => Some(m.src_vocab()),
            _ => None,
        }
    }

    fn scorer(&self) -> &dyn SentenceScorer {
        match self {
            Model::NGram(m) => m,
            Model::LogLinear(m) => m,
            Model::Ffnn(m) => m,
            Model::Rnn(m) => m,
            Model::EncDec(m) => m,
        }
    }
}

impl SentenceScorer for Model {
    fn target_vocab(&self) -> &Vocabulary {
        self.scorer().target_vocab()
    }

    fn score_target(
        &self,
        source: Option<&Sentence>,
        target: &Sentence,
    ) -> Result<Vec<TokenScore>> {
        self.scorer().score_target(source, target)
    }
}

/// A model plus the optional extras stored alongside it.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub model: Model,
    pub length_prior: Option<LengthPrior>,
    /// Training settings recorded for reference (optimizer, seed, ...).
    pub training: Vec<(String, String)>,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        ModelFile {
            model,
            length_prior: None,
            training: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut parts = Parts::default();
        match &self.model {
            Model::NGram(m) => {
                parts.vocabs.push(m.vocab().clone());
                parts.hparam("order", m.order());
                parts
                    .tensors
                    .push(("alpha".into(), Tensor::vector(m.alpha())));
                parts.ngrams = m
                    .table()
                    .sorted_entries()
                    .into_iter()
                    .map(|(k, c)| (k.to_vec(), c))
                    .collect();
            }
            Model::LogLinear(m) => {
                parts.vocabs.push(m.vocab().clone());
                parts.hparam("templates", templates_descriptor(m.features().templates()));
                parts.tensors.push(("W".into(), m.params.w.clone()));
                parts.tensors.push(("b".into(), m.params.b.clone()));
            }
            Model::Ffnn(m) => {
                parts.vocabs.push(m.vocab().clone());
                let c = m.config();
                parts.hparam("order", c.order);
                parts.hparam("embed_dim", c.embed_dim);
                parts.hparam("hidden", c.hidden);
                parts.hparam("activation", c.activation);
                parts.add_params(&m.params);
            }
            Model::Rnn(m) => {
                parts.vocabs.push(m.vocab().clone());
                let c = m.config();
                parts.hparam("cell", c.cell);
                parts.hparam("embed_dim", c.embed_dim);
                parts.hparam("hidden", c.hidden);
                parts.hparam("layers", c.layers);
                parts.hparam("residual", c.residual);
                parts.add_params(&m.params);
            }
            Model::EncDec(m) => {
                parts.vocabs.push(m.src_vocab().clone());
                parts.vocabs.push(m.tgt_vocab().clone());
                let c = m.config();
                parts.hparam("encoder", c.encoder);
                parts.hparam("bridge", c.bridge);
                parts.hparam("attention", c.attention);
                parts.hparam("cell", c.cell);
                parts.hparam("embed_dim", c.embed_dim);
                parts.hparam("hidden", c.hidden);
                parts.hparam("layers", c.layers);
                parts.hparam("attn_hidden", c.attn_hidden);
                parts.add_params(&m.params);
            }
        }
        for (k, v) in &self.training {
            parts.hparam(&format!("{TRAIN_PREFIX}{k}"), v);
        }
        if let Some(prior) = &self.length_prior {
            let entries = prior.entries();
            let mut t = Tensor::zeros(entries.len(), 3);
            for (r, ((e, f), c)) in entries.into_iter().enumerate() {
                t.set(r, 0, e as f64);
                t.set(r, 1, f as f64);
                t.set(r, 2, c as f64);
            }
            parts.tensors.push((LENGTH_PRIOR_TENSOR.into(), t));
        }
        parts.encode(self.model.kind())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (kind, mut parts) = Parts::decode(bytes)?;
        let length_prior = parts.take_tensor(LENGTH_PRIOR_TENSOR).map(|t| {
            let entries: Vec<((usize, usize), u64)> = (0..t.rows())
                .map(|r| {
                    (
                        (t.get(r, 0) as usize, t.get(r, 1) as usize),
                        t.get(r, 2) as u64,
                    )
                })
                .collect();
            LengthPrior::from_entries(&entries)
        });
        let training = parts
            .hparams
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(TRAIN_PREFIX)
                    .map(|k| (k.to_string(), v.clone()))
            })
            .collect();
        let mut rng = seeded_rng(0);
        let model = match kind.as_str() {
            "ngram" => {
                let vocab = parts.vocab(0)?;
                let order: usize = parts.get("order")?;
                let alpha = parts.tensor("alpha")?.data().to_vec();
                let counts: HashMap<Vec<TokenId>, u64> = parts.ngrams.drain(..).collect();
                Model::NGram(NGramLm::new(
                    NGramCountTable::from_counts(order, counts)?,
                    alpha,
                    vocab,
                )?)
            }
            "loglinear" => {
                let vocab = parts.vocab(0)?;
                let templates = parse_templates(&parts.get::<String>("templates")?)?;
                let params = LogLinearParams {
                    w: parts.tensor("W")?.clone(),
                    b: parts.tensor("b")?.clone(),
                };
                Model::LogLinear(LogLinearLm::with_params(vocab, templates, params)?)
            }
            "ffnnlm" => {
                let cfg = FfnnLmConfig {
                    order: parts.get("order")?,
                    embed_dim: parts.get("embed_dim")?,
                    hidden: parts.get("hidden")?,
                    activation: parts.get::<Activation>("activation")?,
                };
                let mut m = FfnnLm::new(parts.vocab(0)?, cfg, &mut rng)?;
                m.load_params(parts.named())?;
                Model::Ffnn(m)
            }
            "rnnlm" => {
                let cfg = RnnLmConfig {
                    cell: parts.get::<CellKind>("cell")?,
                    embed_dim: parts.get("embed_dim")?,
                    hidden: parts.get("hidden")?,
                    layers: parts.get("layers")?,
                    residual: parts.get("residual")?,
                };
                let mut m = RnnLm::new(parts.vocab(0)?, cfg, &mut rng)?;
                m.load_params(parts.named())?;
                Model::Rnn(m)
            }
            "encdec" => {
                let cfg = EncDecConfig {
                    encoder: parts.get::<EncoderKind>("encoder")?,
                    bridge: parts.get::<BridgeKind>("bridge")?,
                    attention: parts.get::<AttentionKind>("attention")?,
                    cell: parts.get::<CellKind>("cell")?,
                    embed_dim: parts.get("embed_dim")?,
                    hidden: parts.get("hidden")?,
                    layers: parts.get("layers")?,
                    attn_hidden: parts.get("attn_hidden")?,
                };
                let mut m = EncDecModel::new(parts.vocab(0)?, parts.vocab(1)?, cfg, &mut rng)?;
                m.load_params(parts.named())?;
                Model::EncDec(m)
            }
            other => return Err(Error::Format(format!("unknown model kind {other:?}"))),
        };
        Ok(ModelFile {
            model,
            length_prior,
            training,
        })
    }
}

/// Decoded sections, before they are turned into a model.
#[derive(Default)]
struct Parts {
    vocabs: Vec<Vocabulary>,
    hparams: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor)>,
    ngrams: Vec<(Vec<TokenId>, u64)>,
}

impl Parts {
    fn hparam(&mut self, key: &str, value: impl ToString) {
        self.hparams.insert(key.to_string(), value.to_string());
    }

    fn add_params(&mut self, params: &crate::autodiff::ParamSet) {
        for (name, t) in params.iter() {
            self.tensors.push((name.to_string(), t.clone()));
        }
    }

    fn vocab(&self, i: usize) -> Result<Vocabulary> {
        self.vocabs
            .get(i)
            .cloned()
            .ok_or_else(|| Error::Format(format!("missing vocabulary block {i}")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .hparams
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing hyperparameter {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bad value {raw:?} for hyperparameter {key:?}")))
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    fn take_tensor(&mut self, name: &str) -> Option<Tensor> {
        let i = self.tensors.iter().position(|(n, _)| n == name)?;
        Some(self.tensors.remove(i).1)
    }

    fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    fn encode(&self, kind: &str) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(kind);
        w.len(self.vocabs.len());
        for v in &self.vocabs {
            w.len(v.len());
            for t in v.tokens() {
                w.str(t);
            }
            w.u64(v.v_all());
        }
        w.len(self.hparams.len());
        for (k, v) in &self.hparams {
            w.str(k);
            w.str(v);
        }
        w.len(self.tensors.len());
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(2);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            for &x in t.data() {
                w.bytes(&x.to_le_bytes());
            }
        }
        w.len(self.ngrams.len());
        for (key, c) in &self.ngrams {
            w.len(key.len());
            for &id in key {
                w.u64(id as u64);
            }
            w.u64(*c);
        }
        w.0
    }

    fn decode(bytes: &[u8]) -> Result<(String, Parts)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let kind = r.str()?;
        let mut parts = Parts::default();
        for _ in 0..r.u32()? {
            let n = r.u32()? as usize;
            let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
            let v_all = r.u64()?;
            parts
                .vocabs
                .push(Vocabulary::from_full_list(tokens, v_all)?);
        }
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            parts.hparams.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u32()?;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [n] => (n, 1),
                [m, n] => (m, n),
                _ => {
                    return Err(Error::Format(format!(
                        "tensor {name}: unsupported rank {rank}"
                    )))
                }
            };
            let count = rows
                .checked_mul(cols)
                .filter(|&c| c <= r.remaining() / 8)
                .ok_or_else(|| Error::Format(format!("tensor {name}: size exceeds file")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            parts
                .tensors
                .push((name, Tensor::from_vec(rows, cols, data)?));
        }
        for _ in 0..r.u32()? {
            let n = r.u32()? as usize;
            let key = (0..n)
                .map(|_| r.u64().map(|x| x as usize))
                .collect::<Result<Vec<_>>>()?;
            parts.ngrams.push((key, r.u64()?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok((kind, parts))
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }

    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section larger than u32::MAX entries"));
    }

    fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }
}
