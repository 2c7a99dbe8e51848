//! Location-aware soft alignment and the autoregressive decoder LSTM.

use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::corpus::EOS;

use super::{EncoderFeatures, ModelConfig, ModelError};

/// Recurrent inputs for one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    /// Previous decoder state, `(B, d)` each.
    pub h: Var,
    pub c: Var,
    /// Previous attention distribution, `(B, T_enc)`.
    pub attn: Var,
    /// Previously emitted (or ground-truth) token per item.
    pub tokens: &'a [usize],
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub attn: Var,
    pub context: Var,
    pub h: Var,
    pub c: Var,
    pub logits: Var,
}

/// Per-call constants of the attention: keys and the validity mask.
struct Memory<'a> {
    enc: &'a EncoderFeatures,
    keys: Var,
    mask: Vec<bool>,
    t: usize,
    bsz: usize,
}

fn memory<'a>(tape: &mut Tape, bound: &Bound, enc: &'a EncoderFeatures) -> Result<Memory<'a>, ModelError> {
    let s = tape.value(enc.values).shape().to_vec();
    let (bsz, t, f) = (s[0], s[1], s[2]);
    let flat = tape.reshape(enc.values, &[bsz * t, f])?;
    let k = tape.matmul(flat, bound.var("att.key.w")?)?;
    let k = tape.add_bias(k, bound.var("att.key.b")?)?;
    let a = tape.value(k).shape()[1];
    let keys = tape.reshape(k, &[bsz, t, a])?;
    Ok(Memory {
        enc,
        keys,
        mask: enc.mask(t),
        t,
        bsz,
    })
}

fn step(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    mem: &Memory<'_>,
    prev: StepInput<'_>,
) -> Result<StepOutput, ModelError> {
    let (bsz, t) = (mem.bsz, mem.t);
    let prior = tape.value(prev.attn);
    if prior.shape() != [bsz, t] {
        return Err(ModelError::Config(format!(
            "attention prior shape {:?}, expected [{bsz}, {t}]",
            prior.shape()
        )));
    }
    for (row, r) in prior.data().chunks(t).enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::BadPrior { row, sum });
        }
    }
    let a = cfg.attention_dim;

    let query = tape.matmul(prev.h, bound.var("att.query.w")?)?;
    let prior3 = tape.reshape(prev.attn, &[bsz, t, 1])?;
    let loc = tape.conv1d(prior3, bound.var("att.loc_conv.w")?)?;
    let loc = tape.reshape(loc, &[bsz * t, cfg.loc_filters])?;
    let loc = tape.matmul(loc, bound.var("att.loc.w")?)?;
    let loc = tape.reshape(loc, &[bsz, t, a])?;
    let sum = tape.add(mem.keys, loc)?;
    let sum = tape.broadcast_add(sum, query)?;
    let act = tape.tanh(sum)?;
    let act = tape.reshape(act, &[bsz * t, a])?;
    let energy = tape.matmul(act, bound.var("att.energy.w")?)?;
    let energy = tape.reshape(energy, &[bsz, t])?;
    let attn = tape.softmax(energy, Some(&mem.mask))?;
    let context = tape.weighted_sum(attn, mem.enc.values)?;

    let emb = tape.embedding(bound.var("dec.embed")?, prev.tokens)?;
    let inp = tape.concat(&[context, emb], 1)?;
    let x = tape.matmul(inp, bound.var("dec.lstm.w_ih")?)?;
    let r = tape.matmul(prev.h, bound.var("dec.lstm.w_hh")?)?;
    let gates = tape.add(x, r)?;
    let gates = tape.add_bias(gates, bound.var("dec.lstm.b")?)?;
    let hc = tape.lstm_cell(gates, prev.c)?;
    let d = cfg.state_dim;
    let h = tape.slice(hc, 1, 0, d)?;
    let c = tape.slice(hc, 1, d, d)?;
    let logits = tape.matmul(h, bound.var("out.w")?)?;
    let logits = tape.add_bias(logits, bound.var("out.b")?)?;
    Ok(StepOutput {
        attn,
        context,
        h,
        c,
        logits,
    })
}

/// One attention + LSTM step. `prev.attn` must hold a distribution per row.
pub fn attend_step(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    enc: &EncoderFeatures,
    prev: StepInput<'_>,
) -> Result<StepOutput, ModelError> {
    let mem = memory(tape, bound, enc)?;
    step(tape, bound, cfg, &mem, prev)
}

/// Uniform distribution over each item's valid encoder steps.
pub fn uniform_prior(lengths: &[usize], t: usize) -> Tensor {
    let mut data = vec![0.0; lengths.len() * t];
    for (b, &len) in lengths.iter().enumerate() {
        let len = len.min(t);
        for s in 0..len {
            data[b * t + s] = 1.0 / len as f64;
        }
    }
    Tensor::new(vec![lengths.len(), t], data).expect("prior shape")
}

#[derive(Clone, Copy, Debug)]
pub enum DecodeMode<'a> {
    /// Feed the ground-truth previous token; one step per target column.
    TeacherForced(&'a [Vec<usize>]),
    /// Feed back the argmax token; stop after EOS or `max_len` steps.
    Greedy { max_len: usize },
}

/// Tape handles for every decoder step plus the emitted length per item.
#[derive(Clone, Debug)]
pub struct DecodeTrace {
    pub steps: Vec<StepOutput>,
    /// Steps that belong to each item (`q`).
    pub lengths: Vec<usize>,
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn decode_sequence(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    enc: &EncoderFeatures,
    mode: DecodeMode<'_>,
) -> Result<DecodeTrace, ModelError> {
    let mem = memory(tape, bound, enc)?;
    let (bsz, t) = (mem.bsz, mem.t);
    let max_steps = match mode {
        DecodeMode::TeacherForced(targets) => {
            if targets.len() != bsz {
                return Err(ModelError::Targets);
            }
            let q = targets.first().map_or(0, Vec::len);
            if targets.iter().any(|r| r.len() != q) {
                return Err(ModelError::Targets);
            }
            q
        }
        DecodeMode::Greedy { max_len } => {
            if max_len < 1 {
                return Err(ModelError::MaxLen);
            }
            max_len
        }
    };
    let d = cfg.state_dim;
    let mut h = tape.constant(Tensor::zeros(&[bsz, d]))?;
    let mut c = tape.constant(Tensor::zeros(&[bsz, d]))?;
    let mut attn = tape.constant(uniform_prior(&enc.lengths, t))?;
    let mut tokens = vec![EOS; bsz];
    let mut steps = Vec::with_capacity(max_steps);
    let mut lengths = vec![0usize; bsz];
    let mut done = vec![false; bsz];
    for s in 0..max_steps {
        let out = step(
            tape,
            bound,
            cfg,
            &mem,
            StepInput {
                h,
                c,
                attn,
                tokens: &tokens,
            },
        )?;
        steps.push(out);
        h = out.h;
        c = out.c;
        attn = out.attn;
        match mode {
            DecodeMode::TeacherForced(targets) => {
                for (b, tok) in tokens.iter_mut().enumerate() {
                    *tok = targets[b][s];
                }
                lengths.iter_mut().for_each(|l| *l = s + 1);
            }
            DecodeMode::Greedy { .. } => {
                let v = cfg.vocab_size;
                let logits = tape.value(out.logits).data();
                for b in 0..bsz {
                    let tok = argmax(&logits[b * v..(b + 1) * v]);
                    tokens[b] = tok;
                    if !done[b] {
                        lengths[b] = s + 1;
                        done[b] = tok == EOS;
                    }
                }
                if done.iter().all(|&x| x) {
                    break;
                }
            }
        }
    }
    Ok(DecodeTrace { steps, lengths })
}

/// Decoder outputs for one item, copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedLatents {
    /// `q × T_enc` attention rows over the item's valid encoder steps.
    pub attention: Vec<Vec<f64>>,
    /// `q × 2·hidden` context vectors.
    pub contexts: Vec<Vec<f64>>,
    /// `q × d` decoder states.
    pub states: Vec<Vec<f64>>,
    /// `q × vocab` logits of the output projection.
    pub logits: Vec<Vec<f64>>,
}

impl AlignedLatents {
    pub fn q(&self) -> usize {
        self.states.len()
    }

    /// Per-step argmax token, ties broken toward the lowest id.
    pub fn tokens(&self) -> Vec<usize> {
        self.logits.iter().map(|l| argmax(l)).collect()
    }

    pub fn empty() -> Self {
        Self {
            attention: Vec::new(),
            contexts: Vec::new(),
            states: Vec::new(),
            logits: Vec::new(),
        }
    }
}

impl DecodeTrace {
    /// Splits the batched trace into per-item [`AlignedLatents`].
    pub fn aligned(&self, tape: &Tape, enc: &EncoderFeatures) -> Vec<AlignedLatents> {
        let bsz = self.lengths.len();
        let row = |v: Var, b: usize| -> Vec<f64> {
            let t = tape.value(v);
            let w = t.last_dim();
            t.data()[b * w..(b + 1) * w].to_vec()
        };
        (0..bsz)
            .map(|b| {
                let steps = &self.steps[..self.lengths[b]];
                AlignedLatents {
                    attention: steps
                        .iter()
                        .map(|s| {
                            let mut r = row(s.attn, b);
                            r.truncate(enc.lengths[b]);
                            r
                        })
                        .collect(),
                    contexts: steps.iter().map(|s| row(s.context, b)).collect(),
                    states: steps.iter().map(|s| row(s.h, b)).collect(),
                    logits: steps.iter().map(|s| row(s.logits, b)).collect(),
                }
            })
            .collect()
    }
}
