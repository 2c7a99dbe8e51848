//! The testing loop: greedy decode, prune, transmit, receive, score.

use num_complex::Complex64;

use crate::autodiff::Tape;
use crate::channel::{equalize, transmit, ChannelKind, ChannelRealization};
use crate::corpus::{Corpus, Sentence, SpectrumBatch, Split};
use crate::metrics::{similarity, wer};
use crate::model::{
    channel_decode, channel_encode, decode_sequence, encode, semantic_decode, AlignedLatents, DecodeMode, Model,
};
use crate::prune::{self, prune_transcript, PruneReport};
use crate::rng::derive_seed;

use super::train::TrainOptions;
use super::PipelineError;

const DEV_LABEL: u64 = 0x6465_76;
const GREEDY_CHUNK: usize = 32;

/// Modules of the testing loop, in the order a sentence visits them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Spectrum,
    SemanticEncoder,
    ChannelEncoder,
    Channel,
    ChannelDecoder,
    SemanticDecoder,
    Metrics,
}

pub trait Tracer {
    fn visit(&mut self, stage: Stage);
}

/// Discards every event.
pub struct NoTrace;

impl Tracer for NoTrace {
    fn visit(&mut self, _: Stage) {}
}

impl Tracer for Vec<Stage> {
    fn visit(&mut self, stage: Stage) {
        self.push(stage);
    }
}

/// Content tokens a transcript is scored against.
pub fn reference(s: &Sentence) -> Vec<usize> {
    prune_transcript(&s.tokens)
}

/// Sentence WER; an empty reference scores 0 for an empty hypothesis and 1
/// otherwise.
pub fn sentence_wer(reference: &[usize], hyp: &[usize]) -> f64 {
    match wer(reference, hyp) {
        Ok(b) => b.wer(),
        Err(_) => f64::from(u8::from(!hyp.is_empty())),
    }
}

/// Greedy decodes of `sentences`, batched; identical to one-at-a-time.
pub fn greedy_batch(model: &Model, sentences: &[&Sentence], max_len: usize) -> Result<Vec<AlignedLatents>, PipelineError> {
    let spectra: Vec<&[f64]> = sentences.iter().map(|s| s.spectrum.as_slice()).collect();
    greedy_spectra(model, &spectra, max_len)
}

/// Greedy decodes of raw `n_frames × 120` spectra.
pub fn greedy_spectra(model: &Model, spectra: &[&[f64]], max_len: usize) -> Result<Vec<AlignedLatents>, PipelineError> {
    let mut out = Vec::with_capacity(spectra.len());
    for chunk in spectra.chunks(GREEDY_CHUNK) {
        let batch = SpectrumBatch::from_spectra(chunk);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, |_| false)?;
        let enc = encode(&mut tape, &bound, &model.config, &batch)?;
        let trace = decode_sequence(&mut tape, &bound, &model.config, &enc, DecodeMode::Greedy { max_len })?;
        out.extend(trace.aligned(&tape, &enc));
    }
    Ok(out)
}

/// Greedy decode of one sentence.
pub fn greedy_one(model: &Model, sentence: &Sentence, max_len: usize) -> Result<AlignedLatents, PipelineError> {
    Ok(greedy_batch(model, &[sentence], max_len)?.remove(0))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean dev WER of the transmitter's own pruned greedy transcript.
pub fn dev_wer_bypass(model: &Model, dev: &[&Sentence], max_len: usize) -> Result<f64, PipelineError> {
    let decoded = greedy_batch(model, dev, max_len)?;
    Ok(mean(
        dev.iter()
            .zip(&decoded)
            .map(|(s, a)| sentence_wer(&reference(s), &prune_transcript(&a.tokens()))),
    ))
}

/// What the receiver recovers for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Reception {
    pub report: PruneReport,
    /// Complex symbols sent, `k·c`.
    pub symbols: usize,
    pub hyp: Vec<usize>,
}

/// Prune → channel encode → channel → equalize → channel decode →
/// semantic decode → prune. Nothing is sent when no step survives.
pub fn transmit_aligned(
    model: &Model,
    aligned: &AlignedLatents,
    real: &ChannelRealization,
    equalize_rx: bool,
    tracer: &mut dyn Tracer,
) -> Result<Reception, PipelineError> {
    let (latents, report) = prune::prune(aligned)?;
    if latents.c() == 0 {
        return Ok(Reception {
            report,
            symbols: 0,
            hyp: Vec::new(),
        });
    }
    tracer.visit(Stage::ChannelEncoder);
    let x = channel_encode(&model.params, &model.config, &latents)?;
    tracer.visit(Stage::Channel);
    let mut y = transmit(&x, real)?;
    if equalize_rx {
        y = equalize(&y, real.h)?;
    }
    tracer.visit(Stage::ChannelDecoder);
    let zhat = channel_decode(&model.params, &model.config, &y)?;
    tracer.visit(Stage::SemanticDecoder);
    let tokens = semantic_decode(&model.params, &model.config, &zhat)?;
    Ok(Reception {
        report,
        symbols: x.len(),
        hyp: prune_transcript(&tokens),
    })
}

/// Mean dev WER through the channel at `opts.dev_snr`, reusing greedy decodes.
pub fn dev_wer_channel(
    model: &Model,
    dev: &[&Sentence],
    decoded: &[AlignedLatents],
    opts: &TrainOptions,
) -> Result<f64, PipelineError> {
    let base = derive_seed(opts.seed, DEV_LABEL);
    let mut wers = Vec::with_capacity(dev.len());
    for (s, a) in dev.iter().zip(decoded) {
        let real = ChannelRealization::new(opts.channel, opts.dev_snr, derive_seed(base, s.id as u64))?;
        let rx = transmit_aligned(model, a, &real, opts.equalize, &mut NoTrace)?;
        wers.push(sentence_wer(&reference(s), &rx.hyp));
    }
    Ok(mean(wers.into_iter()))
}

/// Fixed-rate comparison: every spectrum frame costs `rate_per_frame` symbols.
pub fn baseline_symbol_count(n_frames: usize, rate_per_frame: usize) -> usize {
    n_frames * rate_per_frame
}

/// Rate at which a frame-level system spends as many symbols per frame as
/// the proposed one spends per encoder step: `ceil(k / D)`, at least 1.
pub fn matched_rate(model: &Model) -> usize {
    model
        .config
        .symbols_per_step
        .div_ceil(model.config.downsample())
        .max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub snr_grid: Vec<f64>,
    pub channel: ChannelKind,
    pub equalize: bool,
    pub seed: u64,
    pub max_decode_len: usize,
    pub rate_per_frame: usize,
    /// Independent channel realizations per sentence and SNR point.
    pub trials: usize,
    /// σ² = 0 on every transmission.
    pub noiseless: bool,
    pub split: Split,
}

/// One (sentence, SNR) result.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub snr_db: f64,
    pub channel: ChannelKind,
    pub sentence_id: usize,
    pub trial: usize,
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    pub similarity: f64,
    pub symbols: usize,
    pub baseline_symbols: usize,
    pub prune: PruneReport,
    pub seed: u64,
    pub h: Complex64,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
}

/// The testing loop: for each SNR, for each sentence, run the whole chain.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    opts: &EvalOptions,
    tracer: &mut dyn Tracer,
) -> Result<Vec<EvalRow>, PipelineError> {
    if model.config.vocab_size != corpus.vocab.len() {
        return Err(PipelineError::VocabMismatch {
            model: model.config.vocab_size,
            corpus: corpus.vocab.len(),
        });
    }
    if opts.snr_grid.is_empty() {
        return Err(PipelineError::Config("empty SNR grid".into()));
    }
    let sentences = corpus.split(opts.split);
    if sentences.is_empty() {
        return Err(PipelineError::EmptySplit(opts.split.name()));
    }
    if opts.trials == 0 {
        return Err(PipelineError::Config("at least one trial per point".into()));
    }
    let mut rows = Vec::with_capacity(sentences.len() * opts.snr_grid.len() * opts.trials);
    let mut decoded: Vec<Option<AlignedLatents>> = vec![None; sentences.len()];
    for (gi, &snr) in opts.snr_grid.iter().enumerate() {
        let point = derive_seed(opts.seed, gi as u64);
        for (si, s) in sentences.iter().enumerate() {
            for trial in 0..opts.trials {
                let seed = derive_seed(derive_seed(point, s.id as u64), trial as u64);
                let mut real = ChannelRealization::new(opts.channel, snr, seed)?;
                if opts.noiseless {
                    real.sigma2 = 0.0;
                }
                tracer.visit(Stage::Spectrum);
                tracer.visit(Stage::SemanticEncoder);
                if decoded[si].is_none() {
                    decoded[si] = Some(greedy_one(model, s, opts.max_decode_len)?);
                }
                let aligned = decoded[si].as_ref().expect("decoded above");
                let rx = transmit_aligned(model, aligned, &real, opts.equalize, tracer)?;
                tracer.visit(Stage::Metrics);
                let refr = reference(s);
                let (sub, del, ins) = match wer(&refr, &rx.hyp) {
                    Ok(b) => (b.substitutions, b.deletions, b.insertions),
                    Err(_) => (0, 0, rx.hyp.len()),
                };
                rows.push(EvalRow {
                    snr_db: snr,
                    channel: opts.channel,
                    sentence_id: s.id,
                    trial,
                    wer: sentence_wer(&refr, &rx.hyp),
                    substitutions: sub,
                    deletions: del,
                    insertions: ins,
                    reference_len: refr.len(),
                    similarity: similarity(&refr, &rx.hyp),
                    symbols: rx.symbols,
                    baseline_symbols: baseline_symbol_count(s.n_frames(), opts.rate_per_frame),
                    prune: rx.report,
                    seed,
                    h: real.h,
                    reference: refr,
                    hypothesis: rx.hyp,
                });
            }
        }
    }
    Ok(rows)
}

/// Per-SNR means, in grid order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub mean_wer: f64,
    pub mean_similarity: f64,
    pub mean_symbols: f64,
    pub mean_baseline_symbols: f64,
}

pub fn summarize(rows: &[EvalRow]) -> Vec<SummaryRow> {
    let mut grid: Vec<f64> = Vec::new();
    for r in rows {
        if !grid.iter().any(|&g| g.to_bits() == r.snr_db.to_bits()) {
            grid.push(r.snr_db);
        }
    }
    grid.into_iter()
        .map(|snr| {
            let at: Vec<&EvalRow> = rows.iter().filter(|r| r.snr_db.to_bits() == snr.to_bits()).collect();
            SummaryRow {
                snr_db: snr,
                mean_wer: mean(at.iter().map(|r| r.wer)),
                mean_similarity: mean(at.iter().map(|r| r.similarity)),
                mean_symbols: mean(at.iter().map(|r| r.symbols as f64)),
                mean_baseline_symbols: mean(at.iter().map(|r| r.baseline_symbols as f64)),
            }
        })
        .collect()
}

/// Channel-free transcripts: the receiver's decoder applied straight to the
/// pruned transmitter latents.
pub fn decode_without_channel(model: &Model, sentence: &Sentence, max_len: usize) -> Result<Vec<usize>, PipelineError> {
    let aligned = greedy_one(model, sentence, max_len)?;
    let (latents, _) = prune::prune(&aligned)?;
    if latents.c() == 0 {
        return Ok(Vec::new());
    }
    let x = channel_encode(&model.params, &model.config, &latents)?;
    let zhat = channel_decode(&model.params, &model.config, &x)?;
    Ok(prune_transcript(&semantic_decode(&model.params, &model.config, &zhat)?))
}
