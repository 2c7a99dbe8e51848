//! Two-stage training and the end-to-end comparison path.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Adadelta, Bound, ParamStore, Tape, Tensor, Var};
use crate::channel::{ChannelKind, ChannelRealization};
use crate::corpus::{batch_pad, Corpus, Sentence, Split, EOS, PAD};
use crate::model::{
    channel_decoder_forward, channel_encoder_forward, decode_sequence, encode, param_group, semantic_decoder_forward,
    DecodeMode, Model, ParamGroup,
};
use crate::prune;
use crate::rng::{derive_seed, stream};

use super::eval::{dev_wer_bypass, dev_wer_channel, greedy_batch};
use super::PipelineError;

const SHUFFLE_LABEL: u64 = 0x7368_7566;
const SNR_LABEL: u64 = 0x736e_72;
const FADE_LABEL: u64 = 0x6661_6465;

/// Knobs shared by every training path.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Greedy decoding cap for dev evaluation.
    pub max_decode_len: usize,
    pub rho: f64,
    pub eps: f64,
    pub seed: u64,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub channel: ChannelKind,
    pub equalize: bool,
    /// SNR of the channel dev evaluation in stage 2 and joint training.
    pub dev_snr: f64,
    /// Stop once dev WER is at or below this value.
    pub stop_at_wer: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            max_decode_len: 16,
            rho: 0.95,
            eps: 1e-6,
            seed: 1,
            snr_lo: 0.0,
            snr_hi: 18.0,
            channel: ChannelKind::Awgn,
            equalize: true,
            dev_snr: 12.0,
            stop_at_wer: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub dev_wer: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best dev WER).
    pub best_epoch: usize,
    pub best_dev_wer: f64,
    /// First epoch whose dev WER met `stop_at_wer`.
    pub reached_at: Option<usize>,
    /// Stage 2 only: the SNR drawn for each batch, in order.
    pub snr_draws: Vec<f64>,
}

impl TrainOutcome {
    fn new() -> Self {
        Self {
            log: Vec::new(),
            best_epoch: 0,
            best_dev_wer: f64::INFINITY,
            reached_at: None,
            snr_draws: Vec::new(),
        }
    }

    /// Records an epoch; returns true when training should stop early.
    fn record(&mut self, entry: EpochLog, params: &ParamStore, best: &mut Option<ParamStore>, stop: Option<f64>) -> bool {
        self.log.push(entry);
        if entry.dev_wer < self.best_dev_wer || best.is_none() {
            self.best_dev_wer = entry.dev_wer;
            self.best_epoch = entry.epoch;
            *best = Some(params.clone());
        }
        match stop {
            Some(t) if entry.dev_wer <= t => {
                self.reached_at.get_or_insert(entry.epoch);
                true
            }
            _ => false,
        }
    }
}

/// Draws `n` SNRs uniformly from `[lo, hi]` dB.
pub fn snr_draws(seed: u64, epoch: usize, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = stream(derive_seed(seed, SNR_LABEL), epoch as u64);
    (0..n)
        .map(|_| if hi > lo { r.gen_range(lo..=hi) } else { lo })
        .collect()
}

/// Shuffled batches of indices into `items`, grouped so that items of
/// similar length share a batch.
fn batches(lengths: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut r = stream(derive_seed(seed, SHUFFLE_LABEL), epoch as u64);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut r);
    let pool = batch_size * 8;
    let mut out = Vec::new();
    for chunk in order.chunks_mut(pool) {
        chunk.sort_by_key(|&i| lengths[i]);
        out.extend(chunk.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out.shuffle(&mut r);
    out
}

fn check_loss(loss: f64, epoch: usize) -> Result<(), PipelineError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(PipelineError::Diverged { epoch })
    }
}

/// Applies one Adadelta update from the gradients of `loss`.
fn update(tape: &mut Tape, bound: &Bound, loss: Var, params: &mut ParamStore, opt: &mut Adadelta) -> Result<f64, PipelineError> {
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let updates: Vec<(String, Tensor)> = bound
        .trainable()
        .map(|(name, v)| (name.to_string(), grads.get_or_zero(v)))
        .collect();
    opt.step(params, &updates)?;
    Ok(value)
}

/// Row-major `(q·B)` flattening used by [`stack_steps`]: row `s·B + b`.
fn stack_steps(tape: &mut Tape, steps: &[Var]) -> Result<Var, PipelineError> {
    Ok(tape.concat(steps, 0)?)
}

fn flat_targets(targets: &[Vec<usize>], mask: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let q = targets.first().map_or(0, Vec::len);
    let mut t = Vec::with_capacity(q * targets.len());
    let mut w = Vec::with_capacity(q * targets.len());
    for s in 0..q {
        for b in 0..targets.len() {
            t.push(targets[b][s]);
            w.push(mask[b][s]);
        }
    }
    (t, w)
}

fn max_target(sentences: &[&Sentence]) -> usize {
    sentences.iter().map(|s| s.tokens.len() + 1).max().unwrap_or(1)
}

/// Stage 1: teacher-forced cross-entropy with the channel bypassed.
/// Only the semantic encoder group (which includes the output projection)
/// is updated. The parameters of the best dev epoch are kept.
pub fn train_stage1(
    model: &mut Model,
    corpus: &Corpus,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore),
) -> Result<TrainOutcome, PipelineError> {
    let train = corpus.split(Split::Train);
    let dev = corpus.split(Split::Dev);
    if train.is_empty() {
        return Err(PipelineError::EmptySplit("train"));
    }
    let lengths: Vec<usize> = train.iter().map(|s| s.n_frames()).collect();
    let mut opt = Adadelta::new(opts.rho, opts.eps);
    let mut outcome = TrainOutcome::new();
    let mut best = None;
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let plan = batches(&lengths, opts.batch_size, opts.seed, epoch);
        for idx in &plan {
            let items: Vec<&Sentence> = idx.iter().map(|&i| train[i]).collect();
            let batch = batch_pad(&items, max_target(&items))?;
            let mut tape = Tape::new();
            let bound = model
                .params
                .bind(&mut tape, |n| param_group(n) == ParamGroup::SemanticEncoder)?;
            let enc = encode(&mut tape, &bound, &model.config, &batch.spectrum)?;
            let trace = decode_sequence(
                &mut tape,
                &bound,
                &model.config,
                &enc,
                DecodeMode::TeacherForced(&batch.targets),
            )?;
            let logits: Vec<Var> = trace.steps.iter().map(|s| s.logits).collect();
            let logits = stack_steps(&mut tape, &logits)?;
            let (t, w) = flat_targets(&batch.targets, &batch.mask);
            let loss = tape.cross_entropy(logits, &t, &w)?;
            let value = update(&mut tape, &bound, loss, &mut model.params, &mut opt)?;
            check_loss(value, epoch)?;
            total += value;
        }
        let dev_wer = dev_wer_bypass(model, &dev, opts.max_decode_len)?;
        let entry = EpochLog {
            epoch,
            loss: total / plan.len() as f64,
            dev_wer,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &model.params);
        if outcome.record(entry, &model.params, &mut best, opts.stop_at_wer) {
            break;
        }
    }
    if let Some(p) = best {
        model.params = p;
    }
    Ok(outcome)
}

/// Frozen-encoder latents of one training sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct TxExample {
    /// `(c, d)` pruned decoder states.
    pub states: Tensor,
    /// Ground-truth token at each kept step.
    pub targets: Vec<usize>,
}

/// Teacher-forced decode with frozen parameters, then pruning.
pub fn tx_examples(model: &Model, sentences: &[&Sentence], batch_size: usize) -> Result<Vec<TxExample>, PipelineError> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(batch_size.max(1)) {
        let batch = batch_pad(chunk, max_target(chunk))?;
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, |_| false)?;
        let enc = encode(&mut tape, &bound, &model.config, &batch.spectrum)?;
        let trace = decode_sequence(
            &mut tape,
            &bound,
            &model.config,
            &enc,
            DecodeMode::TeacherForced(&batch.targets),
        )?;
        for (b, mut aligned) in trace.aligned(&tape, &enc).into_iter().enumerate() {
            let q = chunk[b].tokens.len() + 1;
            aligned.states.truncate(q);
            aligned.logits.truncate(q);
            let (latents, _) = prune::prune(&aligned)?;
            let targets = latents.kept_steps.iter().map(|&s| batch.targets[b][s]).collect();
            out.push(TxExample {
                states: latents.values,
                targets,
            });
        }
    }
    Ok(out)
}

/// Adds channel effects to normalized reals `(M, 2k)` with one realization
/// per segment. With equalization the receiver sees `x + w/h`.
fn through_channel(
    tape: &mut Tape,
    x: Var,
    segments: &[usize],
    reals: &[ChannelRealization],
    equalize: bool,
) -> Result<Var, PipelineError> {
    let width = tape.value(x).shape()[1];
    let mut noise = Vec::with_capacity(tape.value(x).len());
    let mut parts = Vec::new();
    let mut start = 0;
    let fading = reals.iter().any(|r| r.h != Complex64::new(1.0, 0.0));
    for (&n, real) in segments.iter().zip(reals) {
        let w = real.noise(n * width / 2);
        let inv = if equalize { real.h.inv() } else { Complex64::new(1.0, 0.0) };
        noise.extend(w.iter().flat_map(|z| {
            let z = z * inv;
            [z.re, z.im]
        }));
        if fading && !equalize {
            let seg = tape.slice(x, 0, start, n)?;
            parts.push(tape.complex_scale(seg, real.h)?);
        }
        start += n;
    }
    let y = if parts.is_empty() { x } else { tape.concat(&parts, 0)? };
    let noise = tape.constant(Tensor::new(tape.value(x).shape().to_vec(), noise)?)?;
    Ok(tape.add(y, noise)?)
}

fn realizations(opts: &TrainOptions, snr: f64, label: u64, n: usize) -> Result<Vec<ChannelRealization>, PipelineError> {
    let base = derive_seed(opts.seed, label);
    (0..n)
        .map(|i| Ok(ChannelRealization::new(opts.channel, snr, derive_seed(base, i as u64))?))
        .collect()
}

/// Stage 2: the semantic encoder group is frozen; the channel codec and the
/// receiver's semantic decoder learn under a random per-batch SNR.
///
/// The receiver's semantic decoder starts from the output projection.
pub fn train_stage2(
    model: &mut Model,
    corpus: &Corpus,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore),
) -> Result<TrainOutcome, PipelineError> {
    let train = corpus.split(Split::Train);
    let dev = corpus.split(Split::Dev);
    if train.is_empty() {
        return Err(PipelineError::EmptySplit("train"));
    }
    init_receiver(&mut model.params)?;
    let examples: Vec<TxExample> = tx_examples(model, &train, opts.batch_size.max(32))?
        .into_iter()
        .filter(|e| !e.targets.is_empty())
        .collect();
    if examples.is_empty() {
        return Err(PipelineError::EmptySplit("train (nothing survives pruning)"));
    }
    let dev_tx = greedy_batch(model, &dev, opts.max_decode_len)?;
    let lengths: Vec<usize> = examples.iter().map(|e| e.targets.len()).collect();
    let d = model.config.state_dim;
    let mut opt = Adadelta::new(opts.rho, opts.eps);
    let mut outcome = TrainOutcome::new();
    let mut best = None;
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let plan = batches(&lengths, opts.batch_size, opts.seed, epoch);
        let snrs = snr_draws(opts.seed, epoch, plan.len(), opts.snr_lo, opts.snr_hi);
        let mut total = 0.0;
        for (bi, (idx, &snr)) in plan.iter().zip(&snrs).enumerate() {
            let segments: Vec<usize> = idx.iter().map(|&i| examples[i].targets.len()).collect();
            let rows: usize = segments.iter().sum();
            let mut data = Vec::with_capacity(rows * d);
            let mut targets = Vec::with_capacity(rows);
            for &i in idx {
                data.extend_from_slice(examples[i].states.data());
                targets.extend_from_slice(&examples[i].targets);
            }
            let label = derive_seed(FADE_LABEL, (epoch as u64) << 32 | bi as u64);
            let reals = realizations(opts, snr, label, idx.len())?;

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, |n| param_group(n) != ParamGroup::SemanticEncoder)?;
            let z = tape.constant(Tensor::new(vec![rows, d], data)?)?;
            let x = channel_encoder_forward(&mut tape, &bound, z, &segments)?;
            let y = through_channel(&mut tape, x, &segments, &reals, opts.equalize)?;
            let zhat = channel_decoder_forward(&mut tape, &bound, y)?;
            let logits = semantic_decoder_forward(&mut tape, &bound, zhat)?;
            let loss = tape.cross_entropy(logits, &targets, &vec![1.0; rows])?;
            let value = update(&mut tape, &bound, loss, &mut model.params, &mut opt)?;
            check_loss(value, epoch)?;
            total += value;
        }
        outcome.snr_draws.extend(snrs);
        let dev_wer = dev_wer_channel(model, &dev, &dev_tx, opts)?;
        let entry = EpochLog {
            epoch,
            loss: total / plan.len() as f64,
            dev_wer,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &model.params);
        if outcome.record(entry, &model.params, &mut best, opts.stop_at_wer) {
            break;
        }
    }
    if let Some(p) = best {
        model.params = p;
    }
    Ok(outcome)
}

/// Copies the output projection into the receiver's semantic decoder.
pub fn init_receiver(params: &mut ParamStore) -> Result<(), PipelineError> {
    for (src, dst) in [("out.w", "sem_dec.w"), ("out.b", "sem_dec.b")] {
        let t = params.require(src)?.clone();
        let slot = params.get_mut(dst).ok_or_else(|| PipelineError::Config(format!("missing `{dst}`")))?;
        if slot.shape() != t.shape() {
            return Err(PipelineError::Config(format!("`{dst}` and `{src}` differ in shape")));
        }
        *slot = t;
    }
    Ok(())
}

/// End-to-end training of the whole network from the receiver's loss.
///
/// Every teacher-forced step with a non-PAD target is transmitted. The
/// encoder, alignment and decoder learn only through the channel; the
/// output projection, needed for greedy feedback and pruning, is fitted on
/// a gradient-detached copy of the decoder states.
pub fn train_joint(
    model: &mut Model,
    corpus: &Corpus,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &ParamStore),
) -> Result<TrainOutcome, PipelineError> {
    let train = corpus.split(Split::Train);
    let dev = corpus.split(Split::Dev);
    if train.is_empty() {
        return Err(PipelineError::EmptySplit("train"));
    }
    let lengths: Vec<usize> = train.iter().map(|s| s.n_frames()).collect();
    let mut opt = Adadelta::new(opts.rho, opts.eps);
    let mut outcome = TrainOutcome::new();
    let mut best = None;
    let d = model.config.state_dim;
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let plan = batches(&lengths, opts.batch_size, opts.seed, epoch);
        let snrs = snr_draws(opts.seed, epoch, plan.len(), opts.snr_lo, opts.snr_hi);
        let mut total = 0.0;
        for (bi, (idx, &snr)) in plan.iter().zip(&snrs).enumerate() {
            let items: Vec<&Sentence> = idx.iter().map(|&i| train[i]).collect();
            let batch = batch_pad(&items, max_target(&items))?;
            let bsz = items.len();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, |_| true)?;
            let enc = encode(&mut tape, &bound, &model.config, &batch.spectrum)?;
            let trace = decode_sequence(
                &mut tape,
                &bound,
                &model.config,
                &enc,
                DecodeMode::TeacherForced(&batch.targets),
            )?;
            let states: Vec<Var> = trace.steps.iter().map(|s| s.h).collect();
            let states = stack_steps(&mut tape, &states)?;
            let (t, w) = flat_targets(&batch.targets, &batch.mask);

            let detached = tape.constant(tape.value(states).clone())?;
            let probe = tape.matmul(detached, bound.var("out.w")?)?;
            let probe = tape.add_bias(probe, bound.var("out.b")?)?;
            let loss_tx = tape.cross_entropy(probe, &t, &w)?;

            // rows of each sentence in step order: s·B + b for s < len + 1
            let mut rows = Vec::new();
            let mut segments = Vec::with_capacity(bsz);
            let mut targets = Vec::new();
            for (b, s) in items.iter().enumerate() {
                let n = s.tokens.len() + 1;
                for step in 0..n {
                    rows.push(step * bsz + b);
                    targets.push(batch.targets[b][step]);
                }
                segments.push(n);
            }
            debug_assert!(targets.iter().all(|&t| t != PAD) && targets.contains(&EOS));
            let z = tape.gather_rows(states, &rows)?;
            let label = derive_seed(FADE_LABEL ^ 0x6a6f_696e, (epoch as u64) << 32 | bi as u64);
            let reals = realizations(opts, snr, label, bsz)?;
            let x = channel_encoder_forward(&mut tape, &bound, z, &segments)?;
            let y = through_channel(&mut tape, x, &segments, &reals, opts.equalize)?;
            let zhat = channel_decoder_forward(&mut tape, &bound, y)?;
            debug_assert_eq!(tape.value(zhat).shape()[1], d);
            let logits = semantic_decoder_forward(&mut tape, &bound, zhat)?;
            let loss_rx = tape.cross_entropy(logits, &targets, &vec![1.0; targets.len()])?;
            let loss = tape.add(loss_tx, loss_rx)?;
            let value = update(&mut tape, &bound, loss, &mut model.params, &mut opt)?;
            check_loss(value, epoch)?;
            total += value;
        }
        outcome.snr_draws.extend(snrs);
        let dev_tx = greedy_batch(model, &dev, opts.max_decode_len)?;
        let dev_wer = dev_wer_channel(model, &dev, &dev_tx, opts)?;
        let entry = EpochLog {
            epoch,
            loss: total / plan.len() as f64,
            dev_wer,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &model.params);
        if outcome.record(entry, &model.params, &mut best, opts.stop_at_wer) {
            break;
        }
    }
    if let Some(p) = best {
        model.params = p;
    }
    Ok(outcome)
}
