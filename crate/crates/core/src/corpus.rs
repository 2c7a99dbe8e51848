//! Deterministic synthetic speech corpus with known token-to-frame alignment.
//!
//! Every content token owns a random 40-coefficient log-fbank prototype.
//! A sentence is a run of tokens; each token emits a span of frames equal to
//! its prototype plus Gaussian jitter, with a linear cross-fade from the
//! previous prototype over the first frames of the span. Deltas come from
//! the regular front end. Out-of-vocabulary words share one extra "unknown"
//! prototype and carry `UNK` as their target.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::frontend::{self, FRAME_DIM, NUM_MEL};
use crate::rng::{self, Gaussian};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
pub const FIRST_CONTENT: usize = 3;
pub const NUM_SPECIALS: usize = 3;

pub const CORPUS_MAGIC: &[u8; 8] = b"SSEMCORP";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("target of {len} tokens (with EOS) exceeds max_target_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("corpus file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

/// Word list with `PAD=0`, `UNK=1`, `EOS=2` and content ids from 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(content: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string(), "<eos>".to_string()];
        tokens.extend(content);
        Self { tokens }
    }

    /// `w000`, `w001`, … for `content_size` words.
    pub fn synthetic(content_size: usize) -> Self {
        Self::new((0..content_size).map(|i| format!("w{i:03}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_size(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, word: &str) -> usize {
        self.tokens[NUM_SPECIALS..]
            .iter()
            .position(|t| t == word)
            .map_or(UNK, |p| p + NUM_SPECIALS)
    }

    pub fn decode(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.decode(i)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusConfig {
    /// Content words (specials excluded).
    pub vocab_size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    /// Standard deviation of per-frame Gaussian jitter.
    pub jitter: f64,
    /// Frames at the start of a span that blend in from the previous token.
    pub crossfade: usize,
    /// Probability that a position is an out-of-vocabulary word.
    pub unk_rate: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            min_tokens: 3,
            max_tokens: 8,
            min_frames_per_token: 16,
            max_frames_per_token: 24,
            jitter: 0.15,
            crossfade: 3,
            unk_rate: 0.02,
            n_train: 1000,
            n_dev: 100,
            n_test: 100,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: &str| Err(CorpusError::Config(m.into()));
        if self.vocab_size < 1 {
            return fail("vocab size must be at least 1");
        }
        if self.min_tokens < 1 || self.min_tokens > self.max_tokens {
            return fail("empty sentence-length range");
        }
        if self.min_frames_per_token < 1 || self.min_frames_per_token > self.max_frames_per_token {
            return fail("empty frames-per-token range");
        }
        if !(0.0..=1.0).contains(&self.unk_rate) {
            return fail("unk_rate must lie in [0, 1]");
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return fail("jitter must be finite and non-negative");
        }
        if self.vocab_size < 2 && self.max_tokens > 1 {
            return fail("adjacent tokens must differ, so multi-token sentences need 2+ words");
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_dev + self.n_test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Dev),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Frame range `[start, start + len)` owned by one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sentence {
    pub id: usize,
    pub split: Split,
    /// Target ids: content words, or `UNK` for out-of-vocabulary positions.
    pub tokens: Vec<usize>,
    pub spans: Vec<Span>,
    /// `n_frames × 40 × 3`, channel fastest.
    pub spectrum: Vec<f64>,
}

impl Sentence {
    pub fn n_frames(&self) -> usize {
        self.spectrum.len() / FRAME_DIM
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Sentence> {
        self.sentences.iter().filter(|s| s.split == split).collect()
    }
}

/// Prototype index used for out-of-vocabulary words.
fn unknown_prototype(config: &CorpusConfig) -> usize {
    config.vocab_size
}

fn prototypes(config: &CorpusConfig, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    let mut g = Gaussian::new();
    (0..=config.vocab_size)
        .map(|_| (0..NUM_MEL).map(|_| g.sample(&mut r)).collect())
        .collect()
}

fn split_of(config: &CorpusConfig, index: usize) -> Split {
    if index < config.n_train {
        Split::Train
    } else if index < config.n_train + config.n_dev {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Generates sentence `index` from its own random stream.
pub fn gen_sentence(config: &CorpusConfig, seed: u64, protos: &[Vec<f64>], index: usize) -> Sentence {
    let mut r = rng::stream(seed, index as u64 + 1);
    let mut g = Gaussian::new();
    let n_tokens = r.gen_range(config.min_tokens..=config.max_tokens);
    let unknown = unknown_prototype(config);

    // spoken[i] is the prototype index, tokens[i] the target id
    let mut spoken: Vec<usize> = Vec::with_capacity(n_tokens);
    let mut tokens = Vec::with_capacity(n_tokens);
    let mut last_word: Option<usize> = None;
    for _ in 0..n_tokens {
        let oov = r.gen_bool(config.unk_rate) && spoken.last() != Some(&unknown);
        if oov {
            spoken.push(unknown);
            tokens.push(UNK);
            continue;
        }
        let word = match last_word {
            Some(prev) if config.vocab_size > 1 => {
                let w = r.gen_range(0..config.vocab_size - 1);
                if w >= prev {
                    w + 1
                } else {
                    w
                }
            }
            _ => r.gen_range(0..config.vocab_size),
        };
        last_word = Some(word);
        spoken.push(word);
        tokens.push(word + FIRST_CONTENT);
    }

    let mut spans = Vec::with_capacity(n_tokens);
    let mut start = 0;
    for _ in 0..n_tokens {
        let len = r.gen_range(config.min_frames_per_token..=config.max_frames_per_token);
        spans.push(Span { start, len });
        start += len;
    }

    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(start);
    for (i, span) in spans.iter().enumerate() {
        let cur = &protos[spoken[i]];
        let prev = (i > 0).then(|| &protos[spoken[i - 1]]);
        for j in 0..span.len {
            let alpha = match prev {
                Some(_) if j < config.crossfade => (j + 1) as f64 / (config.crossfade + 1) as f64,
                _ => 1.0,
            };
            let frame = (0..NUM_MEL)
                .map(|k| {
                    let base = match prev {
                        Some(p) if alpha < 1.0 => alpha * cur[k] + (1.0 - alpha) * p[k],
                        _ => cur[k],
                    };
                    base + config.jitter * g.sample(&mut r)
                })
                .collect();
            coeffs.push(frame);
        }
    }

    Sentence {
        id: index,
        split: split_of(config, index),
        tokens,
        spans,
        spectrum: frontend::stack_channels(&coeffs),
    }
}

pub fn gen_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let protos = prototypes(config, seed);
    let sentences = (0..config.total())
        .map(|i| gen_sentence(config, seed, &protos, i))
        .collect();
    Ok(Corpus {
        config: *config,
        seed,
        vocab: Vocabulary::synthetic(config.vocab_size),
        sentences,
    })
}

/// Batched spectra `(B, N, 40, 3)` with true frame counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumBatch {
    pub data: Tensor,
    pub lengths: Vec<usize>,
}

impl SpectrumBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_frames(&self) -> usize {
        self.data.shape()[1]
    }

    /// Pads raw `frames × 40 × 3` spectra with zero frames.
    pub fn from_spectra(spectra: &[&[f64]]) -> Self {
        let lengths: Vec<usize> = spectra.iter().map(|s| s.len() / FRAME_DIM).collect();
        let n = lengths.iter().copied().max().unwrap_or(0);
        let mut data = vec![0.0; spectra.len() * n * FRAME_DIM];
        for (b, s) in spectra.iter().enumerate() {
            data[b * n * FRAME_DIM..b * n * FRAME_DIM + s.len()].copy_from_slice(s);
        }
        let data = Tensor::new(vec![spectra.len(), n, NUM_MEL, 3], data).expect("padded size");
        Self { data, lengths }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub spectrum: SpectrumBatch,
    /// `B × max_target_len`: content tokens, one EOS, PAD fill.
    pub targets: Vec<Vec<usize>>,
    /// 1 on content and EOS positions, 0 on PAD.
    pub mask: Vec<Vec<f64>>,
}

pub fn batch_pad(sentences: &[&Sentence], max_target_len: usize) -> Result<PaddedBatch, CorpusError> {
    if sentences.is_empty() {
        return Err(CorpusError::EmptyBatch);
    }
    let mut targets = Vec::with_capacity(sentences.len());
    let mut mask = Vec::with_capacity(sentences.len());
    for s in sentences {
        let len = s.tokens.len() + 1;
        if len > max_target_len {
            return Err(CorpusError::TargetTooLong {
                len,
                max: max_target_len,
            });
        }
        let mut t = s.tokens.clone();
        t.push(EOS);
        t.resize(max_target_len, PAD);
        let mut m = vec![1.0; len];
        m.resize(max_target_len, 0.0);
        targets.push(t);
        mask.push(m);
    }
    let spectra: Vec<&[f64]> = sentences.iter().map(|s| s.spectrum.as_slice()).collect();
    Ok(PaddedBatch {
        spectrum: SpectrumBatch::from_spectra(&spectra),
        targets,
        mask,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Binary layout (little-endian): magic, version u32, seed u64, config
/// (9 × u32, then jitter and unk rate as f64), vocabulary (count u32, then
/// length-prefixed UTF-8 words), sentence count u32, then per sentence:
/// id u32, split u8, token count u32, tokens u32…, spans (start u32,
/// len u32)…, frame count u32, `frames × 120` f64 payload.
pub fn encode_corpus(c: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    put_u64(&mut out, c.seed);
    let k = &c.config;
    for v in [
        k.vocab_size,
        k.min_tokens,
        k.max_tokens,
        k.min_frames_per_token,
        k.max_frames_per_token,
        k.crossfade,
        k.n_train,
        k.n_dev,
    ] {
        put_u32(&mut out, v);
    }
    put_u32(&mut out, k.n_test);
    put_f64(&mut out, k.jitter);
    put_f64(&mut out, k.unk_rate);
    put_u32(&mut out, c.vocab.len());
    for w in c.vocab.tokens() {
        put_u32(&mut out, w.len());
        out.extend_from_slice(w.as_bytes());
    }
    put_u32(&mut out, c.sentences.len());
    for s in &c.sentences {
        put_u32(&mut out, s.id);
        out.push(s.split.code());
        put_u32(&mut out, s.tokens.len());
        for &t in &s.tokens {
            put_u32(&mut out, t);
        }
        for sp in &s.spans {
            put_u32(&mut out, sp.start);
            put_u32(&mut out, sp.len);
        }
        put_u32(&mut out, s.n_frames());
        for &v in &s.spectrum {
            put_f64(&mut out, v);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CorpusError> {
        if self.buf.len() - self.pos < n {
            return Err(CorpusError::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CorpusError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CorpusError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, CorpusError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CorpusError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CORPUS_MAGIC {
        return Err(CorpusError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != CORPUS_VERSION {
        return Err(CorpusError::Format(format!("unsupported version {version}")));
    }
    let seed = c.u64()?;
    let config = CorpusConfig {
        vocab_size: c.u32()?,
        min_tokens: c.u32()?,
        max_tokens: c.u32()?,
        min_frames_per_token: c.u32()?,
        max_frames_per_token: c.u32()?,
        crossfade: c.u32()?,
        n_train: c.u32()?,
        n_dev: c.u32()?,
        n_test: c.u32()?,
        jitter: c.f64()?,
        unk_rate: c.f64()?,
    };
    let n_vocab = c.u32()?;
    let mut words = Vec::with_capacity(n_vocab);
    for _ in 0..n_vocab {
        let len = c.u32()?;
        let w = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| CorpusError::Format("invalid UTF-8".into()))?;
        words.push(w);
    }
    if words.len() < NUM_SPECIALS {
        return Err(CorpusError::Format("vocabulary lacks special tokens".into()));
    }
    let vocab = Vocabulary::new(words.split_off(NUM_SPECIALS));
    let n_sent = c.u32()?;
    let mut sentences = Vec::with_capacity(n_sent.min(1 << 20));
    for _ in 0..n_sent {
        let id = c.u32()?;
        let split = Split::from_code(c.u8()?).ok_or_else(|| CorpusError::Format("bad split tag".into()))?;
        let n_tok = c.u32()?;
        let mut tokens = Vec::with_capacity(n_tok.min(1 << 16));
        for _ in 0..n_tok {
            tokens.push(c.u32()?);
        }
        let mut spans = Vec::with_capacity(n_tok.min(1 << 16));
        for _ in 0..n_tok {
            spans.push(Span {
                start: c.u32()?,
                len: c.u32()?,
            });
        }
        let n_frames = c.u32()?;
        let raw = c.take(n_frames * FRAME_DIM * 8)?;
        let spectrum = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        sentences.push(Sentence {
            id,
            split,
            tokens,
            spans,
            spectrum,
        });
    }
    if c.pos != bytes.len() {
        return Err(CorpusError::Format("trailing bytes".into()));
    }
    Ok(Corpus {
        config,
        seed,
        vocab,
        sentences,
    })
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_corpus(corpus))?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    decode_corpus(&std::fs::read(path)?)
}
