use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::corpus::SpectrumBatch;
use crate::frontend::NUM_MEL;

use super::{ModelConfig, ModelError};

/// Output of the conv + BLSTM stack.
#[derive(Clone, Debug)]
pub struct EncoderFeatures {
    /// `(B, T_enc, 2·hidden)`.
    pub values: Var,
    /// Valid encoder steps per item, `ceil(frames / D)`.
    pub lengths: Vec<usize>,
}

impl EncoderFeatures {
    pub fn max_len(&self, tape: &Tape) -> usize {
        tape.value(self.values).shape()[1]
    }

    /// Row-major `B × T` validity mask.
    pub fn mask(&self, t: usize) -> Vec<bool> {
        self.lengths
            .iter()
            .flat_map(|&len| (0..t).map(move |s| s < len))
            .collect()
    }
}

/// Zeroes time steps at or beyond each item's length in a `(B, T, …)` tensor.
fn mask_time(tape: &mut Tape, x: Var, lengths: &[usize]) -> Result<Var, ModelError> {
    let shape = tape.value(x).shape().to_vec();
    let t = shape[1];
    if lengths.iter().all(|&l| l >= t) {
        return Ok(x);
    }
    let inner: usize = shape[2..].iter().product();
    let mut m = vec![0.0; shape.iter().product()];
    for (b, &len) in lengths.iter().enumerate() {
        let start = b * t * inner;
        m[start..start + len.min(t) * inner].iter_mut().for_each(|v| *v = 1.0);
    }
    let mask = tape.constant(Tensor::new(shape, m)?)?;
    Ok(tape.mul(x, mask)?)
}

/// One bidirectional LSTM layer over `(B, T, F)`. The backward direction
/// starts from a zero state at each item's last valid step, so padding never
/// leaks into valid outputs.
fn blstm(
    tape: &mut Tape,
    bound: &Bound,
    layer: usize,
    hidden: usize,
    x: Var,
    lengths: &[usize],
) -> Result<Var, ModelError> {
    let shape = tape.value(x).shape().to_vec();
    let (bsz, t, f) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(x, &[bsz * t, f])?;
    let mut outs = Vec::with_capacity(2);
    for dir in ["fw", "bw"] {
        let w_ih = bound.var(&format!("enc.rnn{layer}.{dir}.w_ih"))?;
        let w_hh = bound.var(&format!("enc.rnn{layer}.{dir}.w_hh"))?;
        let b = bound.var(&format!("enc.rnn{layer}.{dir}.b"))?;
        let proj = tape.matmul(flat, w_ih)?;
        let proj = tape.add_bias(proj, b)?;
        let proj = tape.reshape(proj, &[bsz, t, 4 * hidden])?;
        let mut h = tape.constant(Tensor::zeros(&[bsz, hidden]))?;
        let mut c = tape.constant(Tensor::zeros(&[bsz, hidden]))?;
        let mut steps = vec![h; t];
        let order: Box<dyn Iterator<Item = usize>> = if dir == "fw" {
            Box::new(0..t)
        } else {
            Box::new((0..t).rev())
        };
        for s in order {
            let xs = tape.slice(proj, 1, s, 1)?;
            let xs = tape.reshape(xs, &[bsz, 4 * hidden])?;
            let rec = tape.matmul(h, w_hh)?;
            let gates = tape.add(xs, rec)?;
            let mut hc = tape.lstm_cell(gates, c)?;
            if dir == "bw" && lengths.iter().any(|&l| l <= s) {
                let m: Vec<f64> = lengths
                    .iter()
                    .flat_map(|&l| std::iter::repeat(if s < l { 1.0 } else { 0.0 }).take(2 * hidden))
                    .collect();
                let m = tape.constant(Tensor::new(vec![bsz, 2 * hidden], m)?)?;
                hc = tape.mul(hc, m)?;
            }
            h = tape.slice(hc, 1, 0, hidden)?;
            c = tape.slice(hc, 1, hidden, hidden)?;
            steps[s] = tape.reshape(h, &[bsz, 1, hidden])?;
        }
        outs.push(tape.concat(&steps, 1)?);
    }
    Ok(tape.concat(&outs, 2)?)
}

/// Runs the conv blocks and the strided BLSTM stack.
///
/// Conv activations beyond each item's frame count are zeroed before
/// pooling, and every BLSTM layer keeps steps `0, s, 2s, …` of its output.
pub fn encode(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    spectrum: &SpectrumBatch,
) -> Result<EncoderFeatures, ModelError> {
    let shape = spectrum.data.shape();
    if shape.len() != 4 || shape[2] != NUM_MEL || shape[3] != 3 {
        return Err(ModelError::Config(format!("spectrum shape {shape:?}, expected (B, N, 40, 3)")));
    }
    let d = cfg.downsample();
    if let Some(&short) = spectrum.lengths.iter().find(|&&l| l < d) {
        return Err(ModelError::TooShort {
            frames: short,
            downsample: d,
        });
    }
    let bsz = shape[0];
    let mut lengths = spectrum.lengths.clone();
    let mut x = tape.constant(spectrum.data.clone())?;
    for b in 0..cfg.conv_channels.len() {
        for j in 0..cfg.convs_per_block {
            let w = bound.var(&format!("enc.conv{b}.{j}.w"))?;
            let bias = bound.var(&format!("enc.conv{b}.{j}.b"))?;
            x = tape.conv2d(x, w)?;
            x = tape.add_bias(x, bias)?;
            x = tape.relu(x)?;
            x = mask_time(tape, x, &lengths)?;
        }
        x = tape.max_pool2(x)?;
        lengths.iter_mut().for_each(|l| *l = l.div_ceil(2));
    }
    let s = tape.value(x).shape().to_vec();
    x = tape.reshape(x, &[bsz, s[1], s[2] * s[3]])?;
    for (layer, &stride) in cfg.rnn_schedule.iter().enumerate() {
        x = blstm(tape, bound, layer, cfg.rnn_hidden, x, &lengths)?;
        if stride > 1 {
            x = tape.subsample(x, stride)?;
            lengths.iter_mut().for_each(|l| *l = l.div_ceil(stride));
        }
    }
    Ok(EncoderFeatures { values: x, lengths })
}
