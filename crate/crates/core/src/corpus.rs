//! Tokenized text ingestion, vocabularies and padded minibatches.

use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

pub const BOS_TOKEN: &str = "⟨s⟩";
pub const EOS_TOKEN: &str = "⟨/s⟩";
pub const UNK_TOKEN: &str = "⟨unk⟩";

pub const DEFAULT_V_ALL: u64 = 10_000_000;

/// Which training tokens receive their own id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnkPolicy {
    KeepAll,
    ReplaceSingletons,
    MinCount(usize),
}

impl UnkPolicy {
    fn min_count(self) -> usize {
        match self {
            UnkPolicy::KeepAll => 1,
            UnkPolicy::ReplaceSingletons => 2,
            UnkPolicy::MinCount(k) => k.max(1),
        }
    }
}

impl FromStr for UnkPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_all" | "keep-all" => Ok(UnkPolicy::KeepAll),
            "replace_singletons" | "replace-singletons" => Ok(UnkPolicy::ReplaceSingletons),
            other => {
                let k = other
                    .strip_prefix("min_count:")
                    .or_else(|| other.strip_prefix("min-count:"))
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown vocabulary policy {other:?}")))?;
                Ok(UnkPolicy::MinCount(k))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    v_all: u64,
}

impl Vocabulary {
    /// Vocabulary holding only the reserved symbols.
    pub fn reserved_only() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            v_all: DEFAULT_V_ALL,
        };
        for t in [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN] {
            v.push(t);
        }
        v
    }

    /// Vocabulary from an explicit token list, which must not contain the
    /// reserved symbols (they are prepended).
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut v = Self::reserved_only();
        for t in tokens {
            let t = t.as_ref();
            if v.index.contains_key(t) {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    /// Rebuild from a complete token list (reserved symbols first), as stored
    /// in a model file.
    pub fn from_full_list(tokens: Vec<String>, v_all: u64) -> Result<Self> {
        if tokens.len() < 3
            || tokens[BOS] != BOS_TOKEN
            || tokens[EOS] != EOS_TOKEN
            || tokens[UNK] != UNK_TOKEN
        {
            return Err(Error::Format(
                "vocabulary does not start with the reserved symbols".into(),
            ));
        }
        let mut v = Vocabulary {
            tokens: Vec::with_capacity(tokens.len()),
            index: HashMap::new(),
            v_all: DEFAULT_V_ALL,
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
            v.push(&t);
        }
        v.set_v_all(v_all)?;
        Ok(v)
    }

    fn push(&mut self, token: &str) {
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn v_all(&self) -> u64 {
        self.v_all
    }

    pub fn set_v_all(&mut self, v_all: u64) -> Result<()> {
        if v_all <= self.tokens.len() as u64 {
            return Err(Error::Config(format!(
                "v_all ({v_all}) must exceed the vocabulary size ({})",
                self.tokens.len()
            )));
        }
        self.v_all = v_all;
        Ok(())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Map a token line to ids; out-of-vocabulary tokens become UNK.
    pub fn encode(&self, line: &str, append_eos: bool) -> Sentence {
        let mut ids: Vec<TokenId> = line.split_whitespace().map(|t| self.id_or_unk(t)).collect();
        if append_eos {
            ids.push(EOS);
        }
        Sentence(ids)
    }

    /// Surface tokens of `ids`, dropping a final EOS.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        let body = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        body.iter().map(|&i| self.token(i)).collect()
    }

    pub fn decode_line(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }
}

/// Build a vocabulary from token lines. Ids are assigned in first-occurrence
/// order to the tokens that satisfy `policy`.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], policy: UnkPolicy) -> Result<Vocabulary> {
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in lines {
        for tok in line.as_ref().split_whitespace() {
            let c = counts.entry(tok).or_insert(0);
            if *c == 0 {
                order.push(tok);
            }
            *c += 1;
        }
    }
    let min = policy.min_count();
    let mut vocab = Vocabulary::reserved_only();
    for tok in order {
        if counts[tok] >= min && !vocab.contains(tok) {
            vocab.push(tok);
        }
    }
    Ok(vocab)
}

/// Split raw bytes into lines, rejecting invalid UTF-8 with a 1-based line number.
pub fn parse_lines(bytes: &[u8]) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    if bytes.is_empty() {
        return Ok(lines);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 { line: i + 1 })?;
        lines.push(line.to_string());
    }
    Ok(lines)
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&bytes).map_err(|e| match e {
        Error::InvalidUtf8 { line } => {
            Error::Data(format!("{}: line {line}: invalid UTF-8", path.display()))
        }
        other => other,
    })
}

/// Read a line-aligned parallel corpus.
pub fn read_parallel(
    source: impl AsRef<Path>,
    target: impl AsRef<Path>,
) -> Result<(Vec<String>, Vec<String>)> {
    let src = read_lines(&source)?;
    let tgt = read_lines(&target)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "parallel corpus line counts differ: {} has {}, {} has {}",
            source.as_ref().display(),
            src.len(),
            target.as_ref().display(),
            tgt.len()
        )));
    }
    Ok((src, tgt))
}

/// A sequence of token ids; training and evaluation targets end in EOS.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Sentence(pub Vec<TokenId>);

impl Sentence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Sentence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    /// True when EOS appears exactly once, in final position, and BOS never appears.
    pub fn is_valid_target(&self) -> bool {
        self.0.last() == Some(&EOS)
            && self.0.iter().filter(|&&t| t == EOS).count() == 1
            && !self.0.contains(&BOS)
    }

    /// Ids without a trailing EOS.
    pub fn body(&self) -> &[TokenId] {
        match self.0.last() {
            Some(&EOS) => &self.0[..self.0.len() - 1],
            _ => &self.0,
        }
    }
}

impl Deref for Sentence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for Sentence {
    fn from(ids: Vec<TokenId>) -> Self {
        Sentence(ids)
    }
}

/// Time-major padded batch. Row `t` of `tokens` holds the `t`-th token of
/// every sentence in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub tokens: Vec<Vec<TokenId>>,
    pub mask: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
    /// Position of each column's sentence in the input list.
    pub indices: Vec<usize>,
}

impl MiniBatch {
    pub fn max_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn mask_sum(&self) -> f64 {
        self.mask.iter().flatten().sum()
    }
}

/// Group sentences into padded batches. Padding uses EOS and is masked out.
pub fn make_batches(
    sentences: &[Sentence],
    batch_size: usize,
    sort_by_length: bool,
) -> Result<Vec<MiniBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    if sort_by_length {
        order.sort_by_key(|&i| sentences[i].len());
    }
    let batches = order
        .chunks(batch_size)
        .map(|chunk| {
            let lengths: Vec<usize> = chunk.iter().map(|&i| sentences[i].len()).collect();
            let max_len = lengths.iter().copied().max().unwrap_or(0);
            let mut tokens = vec![vec![EOS; chunk.len()]; max_len];
            let mut mask = vec![vec![0.0; chunk.len()]; max_len];
            for (j, &i) in chunk.iter().enumerate() {
                for (t, &tok) in sentences[i].iter().enumerate() {
                    tokens[t][j] = tok;
                    mask[t][j] = 1.0;
                }
            }
            MiniBatch {
                tokens,
                mask,
                lengths,
                indices: chunk.to_vec(),
            }
        })
        .collect();
    Ok(batches)
}
