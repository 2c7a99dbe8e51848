use std::collections::BTreeMap;

use crate::frontend::NUM_MEL;

use super::ModelError;

/// Layer sizes of the transceiver.
///
/// The defaults are a desk-scale version of the full model: one VGG-style
/// block (two 3×3 convolutions, then 2×2 pooling), two bidirectional LSTM
/// layers with time strides `[2, 1]`, for a total time downsampling of 4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output channels of each conv block; every block halves time and
    /// frequency.
    pub conv_channels: Vec<usize>,
    pub convs_per_block: usize,
    /// Hidden units per direction in each BLSTM layer.
    pub rnn_hidden: usize,
    /// Time stride applied after each BLSTM layer.
    pub rnn_schedule: Vec<usize>,
    pub attention_dim: usize,
    pub loc_kernel: usize,
    pub loc_filters: usize,
    /// Decoder LSTM state size `d`; also the latent width.
    pub state_dim: usize,
    pub embed_dim: usize,
    /// Including the three special tokens.
    pub vocab_size: usize,
    /// Complex channel symbols emitted per latent step (`k`).
    pub symbols_per_step: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![8],
            convs_per_block: 2,
            rnn_hidden: 32,
            rnn_schedule: vec![2, 1],
            attention_dim: 32,
            loc_kernel: 11,
            loc_filters: 4,
            state_dim: 64,
            embed_dim: 32,
            vocab_size: 67,
            symbols_per_step: 16,
        }
    }
}

impl ModelConfig {
    /// The full-size layer widths (vocabulary of 15000 words plus specials).
    pub fn full_scale() -> Self {
        Self {
            conv_channels: vec![64, 128],
            convs_per_block: 2,
            rnn_hidden: 256,
            rnn_schedule: vec![2, 2, 2, 1, 1],
            attention_dim: 300,
            loc_kernel: 201,
            loc_filters: 10,
            state_dim: 512,
            embed_dim: 512,
            vocab_size: 15003,
            symbols_per_step: 128,
        }
    }

    pub fn conv_factor(&self) -> usize {
        1 << self.conv_channels.len()
    }

    /// Total time downsampling `D` from spectrum frames to encoder steps.
    pub fn downsample(&self) -> usize {
        self.conv_factor() * self.rnn_schedule.iter().product::<usize>()
    }

    /// Width of the per-step feature vector entering the first BLSTM.
    pub fn conv_feature_dim(&self) -> usize {
        let mut freq = NUM_MEL;
        for _ in &self.conv_channels {
            freq = freq.div_ceil(2);
        }
        freq * self.conv_channels.last().copied().unwrap_or(3)
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.rnn_hidden
    }

    /// Encoder steps for `frames` input frames: `ceil(frames / D)`.
    pub fn encoder_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.downsample())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        let dims = [
            ("convs_per_block", self.convs_per_block),
            ("rnn_hidden", self.rnn_hidden),
            ("attention_dim", self.attention_dim),
            ("loc_filters", self.loc_filters),
            ("state_dim", self.state_dim),
            ("embed_dim", self.embed_dim),
            ("symbols_per_step", self.symbols_per_step),
        ];
        for (name, v) in dims {
            if v < 1 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.conv_channels.iter().any(|&c| c < 1) {
            return fail("conv channels must be at least 1".into());
        }
        if self.rnn_schedule.is_empty() || self.rnn_schedule.iter().any(|&s| s < 1) {
            return fail("rnn schedule needs at least one layer, strides ≥ 1".into());
        }
        if self.loc_kernel % 2 == 0 {
            return fail("loc_kernel must be odd".into());
        }
        if self.vocab_size < 4 {
            return fail("vocab_size must be at least 4 (three specials + content)".into());
        }
        Ok(())
    }

    /// `key=value` lines, sorted by key.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("model.conv_channels", list(&self.conv_channels));
        m.insert("model.convs_per_block", self.convs_per_block.to_string());
        m.insert("model.rnn_hidden", self.rnn_hidden.to_string());
        m.insert("model.rnn_schedule", list(&self.rnn_schedule));
        m.insert("model.attention_dim", self.attention_dim.to_string());
        m.insert("model.loc_kernel", self.loc_kernel.to_string());
        m.insert("model.loc_filters", self.loc_filters.to_string());
        m.insert("model.state_dim", self.state_dim.to_string());
        m.insert("model.embed_dim", self.embed_dim.to_string());
        m.insert("model.vocab_size", self.vocab_size.to_string());
        m.insert("model.symbols_per_step", self.symbols_per_step.to_string());
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies one `model.*` key; returns `Ok(false)` for keys it does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| ModelError::Config(format!("{key}: expected an integer, got `{v}`")))
        };
        let list = |v: &str| -> Result<Vec<usize>, ModelError> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(num).collect()
        };
        match key {
            "model.conv_channels" => self.conv_channels = list(value)?,
            "model.convs_per_block" => self.convs_per_block = num(value)?,
            "model.rnn_hidden" => self.rnn_hidden = num(value)?,
            "model.rnn_schedule" => self.rnn_schedule = list(value)?,
            "model.attention_dim" => self.attention_dim = num(value)?,
            "model.loc_kernel" => self.loc_kernel = num(value)?,
            "model.loc_filters" => self.loc_filters = num(value)?,
            "model.state_dim" => self.state_dim = num(value)?,
            "model.embed_dim" => self.embed_dim = num(value)?,
            "model.vocab_size" => self.vocab_size = num(value)?,
            "model.symbols_per_step" => self.symbols_per_step = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("malformed line `{line}`")))?;
            cfg.apply(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Closed-form parameter count, layer by layer.
    pub fn param_count(&self) -> usize {
        let fc = |i: usize, o: usize| i * o + o;
        let mut n = 0;
        let mut cin = 3;
        for &c in &self.conv_channels {
            for _ in 0..self.convs_per_block {
                n += 9 * cin * c + c;
                cin = c;
            }
        }
        let h = self.rnn_hidden;
        let mut input = self.conv_feature_dim();
        for _ in &self.rnn_schedule {
            n += 2 * (input * 4 * h + h * 4 * h + 4 * h);
            input = 2 * h;
        }
        let (a, d, e, v, k) = (
            self.attention_dim,
            self.state_dim,
            self.embed_dim,
            self.vocab_size,
            self.symbols_per_step,
        );
        // key FC (bias), query FC (no bias), location conv + FC (no bias),
        // energy FC (no bias)
        n += fc(2 * h, a) + d * a + self.loc_kernel * self.loc_filters + self.loc_filters * a + a;
        n += v * e;
        n += (2 * h + e) * 4 * d + d * 4 * d + 4 * d;
        n += fc(d, v);
        n += fc(d, d) + fc(d, 2 * k);
        n += fc(2 * k, d) + fc(d, d);
        n += fc(d, v);
        n
    }
}
