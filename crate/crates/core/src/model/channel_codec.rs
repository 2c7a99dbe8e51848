//! Channel encoder/decoder and the receiver-side semantic decoder.
//!
//! Wire layout: step `j` of a sentence occupies complex symbols
//! `j·k .. (j+1)·k`; within a step, FC output `2i` is the real part and
//! `2i + 1` the imaginary part of symbol `i`.

use crate::autodiff::{Bound, ParamStore, Tape, Tensor, Var};
use crate::channel::ChannelSignal;

use super::decoder::argmax;
use super::{ModelConfig, ModelError};

/// Surviving decoder states after pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSemantics {
    /// `(c, d)`.
    pub values: Tensor,
    /// Original decoder step of each row, strictly increasing.
    pub kept_steps: Vec<usize>,
}

impl LatentSemantics {
    pub fn new(values: Tensor, kept_steps: Vec<usize>) -> Result<Self, ModelError> {
        if values.rank() != 2 || values.shape()[0] != kept_steps.len() {
            return Err(ModelError::Config(format!(
                "latents of shape {:?} with {} kept steps",
                values.shape(),
                kept_steps.len()
            )));
        }
        if kept_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Config("kept steps must be strictly increasing".into()));
        }
        Ok(Self { values, kept_steps })
    }

    pub fn c(&self) -> usize {
        self.kept_steps.len()
    }

    pub fn width(&self) -> usize {
        self.values.shape().get(1).copied().unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.width();
        &self.values.data()[i * d..(i + 1) * d]
    }
}

fn fc(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, bound.var(&format!("{prefix}.w"))?)?;
    Ok(tape.add_bias(y, bound.var(&format!("{prefix}.b"))?)?)
}

/// `(M, d)` latents of several sentences stacked row-wise → `(M, 2k)`
/// interleaved reals, power-normalized separately over each segment.
pub fn channel_encoder_forward(
    tape: &mut Tape,
    bound: &Bound,
    latents: Var,
    segments: &[usize],
) -> Result<Var, ModelError> {
    let rows = tape.value(latents).shape()[0];
    if segments.iter().sum::<usize>() != rows || segments.contains(&0) {
        return Err(ModelError::Config(format!("segments {segments:?} do not cover {rows} rows")));
    }
    let h = fc(tape, bound, "chan_enc.fc1", latents)?;
    let h = tape.relu(h)?;
    let raw = fc(tape, bound, "chan_enc.fc2", h)?;
    if segments.len() == 1 {
        return Ok(tape.normalize_power(raw)?);
    }
    let mut parts = Vec::with_capacity(segments.len());
    let mut start = 0;
    for &n in segments {
        let s = tape.slice(raw, 0, start, n)?;
        parts.push(tape.normalize_power(s)?);
        start += n;
    }
    Ok(tape.concat(&parts, 0)?)
}

/// `(M, 2k)` received reals → `(M, d)` latent estimates.
pub fn channel_decoder_forward(tape: &mut Tape, bound: &Bound, received: Var) -> Result<Var, ModelError> {
    let h = fc(tape, bound, "chan_dec.fc1", received)?;
    let h = tape.relu(h)?;
    fc(tape, bound, "chan_dec.fc2", h)
}

/// `(M, d)` → `(M, vocab)` logits.
pub fn semantic_decoder_forward(tape: &mut Tape, bound: &Bound, latents: Var) -> Result<Var, ModelError> {
    fc(tape, bound, "sem_dec", latents)
}

fn frozen(params: &ParamStore, tape: &mut Tape) -> Result<Bound, ModelError> {
    Ok(params.bind(tape, |_| false)?)
}

/// Transmitter side: `c·k` unit-power complex symbols.
pub fn channel_encode(
    params: &ParamStore,
    cfg: &ModelConfig,
    latents: &LatentSemantics,
) -> Result<ChannelSignal, ModelError> {
    if latents.c() == 0 {
        return Err(ModelError::EmptyLatents);
    }
    if latents.width() != cfg.state_dim {
        return Err(ModelError::LatentWidth {
            got: latents.width(),
            expected: cfg.state_dim,
        });
    }
    let mut tape = Tape::new();
    let bound = frozen(params, &mut tape)?;
    let z = tape.constant(latents.values.clone())?;
    let x = channel_encoder_forward(&mut tape, &bound, z, &[latents.c()])?;
    symbols_from_reals(tape.value(x).data(), cfg.symbols_per_step)
}

/// Groups interleaved reals into a signal with `k` symbols per step.
pub fn symbols_from_reals(reals: &[f64], k: usize) -> Result<ChannelSignal, ModelError> {
    if k == 0 || reals.len() % (2 * k) != 0 {
        return Err(ModelError::SymbolCount {
            symbols: reals.len() / 2,
            k,
        });
    }
    Ok(ChannelSignal::from_interleaved(reals, k)?)
}

/// Receiver side: `ĉ = symbols / k` latent estimates.
pub fn channel_decode(
    params: &ParamStore,
    cfg: &ModelConfig,
    received: &ChannelSignal,
) -> Result<LatentSemantics, ModelError> {
    let k = cfg.symbols_per_step;
    if received.len() % k != 0 {
        return Err(ModelError::SymbolCount {
            symbols: received.len(),
            k,
        });
    }
    let c = received.len() / k;
    let d = cfg.state_dim;
    if c == 0 {
        return LatentSemantics::new(Tensor::zeros(&[0, d]), Vec::new());
    }
    let mut tape = Tape::new();
    let bound = frozen(params, &mut tape)?;
    let y = tape.constant(Tensor::new(vec![c, 2 * k], received.to_interleaved())?)?;
    let z = channel_decoder_forward(&mut tape, &bound, y)?;
    LatentSemantics::new(tape.value(z).clone(), (0..c).collect())
}

/// Per-step argmax over the receiver's vocabulary (lowest id on ties).
pub fn semantic_decode(params: &ParamStore, cfg: &ModelConfig, latents: &LatentSemantics) -> Result<Vec<usize>, ModelError> {
    if latents.c() == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = frozen(params, &mut tape)?;
    let z = tape.constant(latents.values.clone())?;
    let logits = semantic_decoder_forward(&mut tape, &bound, z)?;
    let v = cfg.vocab_size;
    Ok(tape.value(logits).data().chunks(v).map(argmax).collect())
}
