//! The learned transceiver: semantic encoder (conv + BLSTM stack and the
//! location-aware soft alignment decoder), output projection, channel
//! encoder/decoder, and receiver-side semantic decoder.

mod channel_codec;
mod config;
mod decoder;
mod encoder;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, ParamStore, Tensor};
use crate::channel::ChannelError;
use crate::rng;

pub use channel_codec::{
    channel_decode, channel_encode, channel_decoder_forward, channel_encoder_forward, semantic_decode,
    semantic_decoder_forward, symbols_from_reals, LatentSemantics,
};
pub use config::ModelConfig;
pub use decoder::{
    attend_step, decode_sequence, uniform_prior, AlignedLatents, DecodeMode, DecodeTrace, StepInput, StepOutput,
};
pub use encoder::{encode, EncoderFeatures};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("sentence of {frames} frames is shorter than the total downsampling {downsample}")]
    TooShort { frames: usize, downsample: usize },
    #[error("attention prior row {row} sums to {sum}, not 1")]
    BadPrior { row: usize, sum: f64 },
    #[error("nothing to transmit: no latent steps survived pruning")]
    EmptyLatents,
    #[error("max_len must be at least 1")]
    MaxLen,
    #[error("teacher forcing needs one target row per batch item")]
    Targets,
    #[error("{symbols} symbols do not split into steps of {k}")]
    SymbolCount { symbols: usize, k: usize },
    #[error("latent width {got}, expected {expected}")]
    LatentWidth { got: usize, expected: usize },
    #[error("checkpoint vocabulary {checkpoint} does not match {expected}")]
    VocabMismatch { checkpoint: usize, expected: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Conv/BLSTM stack, soft alignment, embedding, output projection.
    SemanticEncoder,
    ChannelEncoder,
    ChannelDecoder,
    /// Receiver FC from latents to tokens.
    SemanticDecoder,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("chan_enc.") {
        ParamGroup::ChannelEncoder
    } else if name.starts_with("chan_dec.") {
        ParamGroup::ChannelDecoder
    } else if name.starts_with("sem_dec.") {
        ParamGroup::SemanticDecoder
    } else {
        ParamGroup::SemanticEncoder
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded uniform initialization in `±1/sqrt(fan_in)`; LSTM forget-gate
    /// biases start at 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut r = rng::stream(seed, 0x6d6f_6465_6c);
        let mut p = ParamStore::new();
        let c = &config;

        let mut cin = 3;
        for (b, &ch) in c.conv_channels.iter().enumerate() {
            for j in 0..c.convs_per_block {
                p.insert_uniform(&format!("enc.conv{b}.{j}.w"), &[3, 3, cin, ch], 9 * cin, &mut r);
                p.insert_uniform(&format!("enc.conv{b}.{j}.b"), &[ch], 9 * cin, &mut r);
                cin = ch;
            }
        }
        let h = c.rnn_hidden;
        let mut input = c.conv_feature_dim();
        for l in 0..c.rnn_schedule.len() {
            for dir in ["fw", "bw"] {
                let pre = format!("enc.rnn{l}.{dir}");
                p.insert_uniform(&format!("{pre}.w_ih"), &[input, 4 * h], input, &mut r);
                p.insert_uniform(&format!("{pre}.w_hh"), &[h, 4 * h], h, &mut r);
                p.insert(format!("{pre}.b"), lstm_bias(h));
            }
            input = 2 * h;
        }
        let (a, d, e, v, k) = (c.attention_dim, c.state_dim, c.embed_dim, c.vocab_size, c.symbols_per_step);
        p.insert_uniform("att.key.w", &[2 * h, a], 2 * h, &mut r);
        p.insert_uniform("att.key.b", &[a], 2 * h, &mut r);
        p.insert_uniform("att.query.w", &[d, a], d, &mut r);
        p.insert_uniform("att.loc_conv.w", &[c.loc_kernel, 1, c.loc_filters], c.loc_kernel, &mut r);
        p.insert_uniform("att.loc.w", &[c.loc_filters, a], c.loc_filters, &mut r);
        p.insert_uniform("att.energy.w", &[a, 1], a, &mut r);
        p.insert_uniform("dec.embed", &[v, e], e, &mut r);
        p.insert_uniform("dec.lstm.w_ih", &[2 * h + e, 4 * d], 2 * h + e, &mut r);
        p.insert_uniform("dec.lstm.w_hh", &[d, 4 * d], d, &mut r);
        p.insert("dec.lstm.b", lstm_bias(d));
        p.insert_uniform("out.w", &[d, v], d, &mut r);
        p.insert_uniform("out.b", &[v], d, &mut r);
        p.insert_uniform("chan_enc.fc1.w", &[d, d], d, &mut r);
        p.insert_uniform("chan_enc.fc1.b", &[d], d, &mut r);
        p.insert_uniform("chan_enc.fc2.w", &[d, 2 * k], d, &mut r);
        p.insert_uniform("chan_enc.fc2.b", &[2 * k], d, &mut r);
        p.insert_uniform("chan_dec.fc1.w", &[2 * k, d], 2 * k, &mut r);
        p.insert_uniform("chan_dec.fc1.b", &[d], 2 * k, &mut r);
        p.insert_uniform("chan_dec.fc2.w", &[d, d], d, &mut r);
        p.insert_uniform("chan_dec.fc2.b", &[d], d, &mut r);
        p.insert_uniform("sem_dec.w", &[d, v], d, &mut r);
        p.insert_uniform("sem_dec.b", &[v], d, &mut r);
        Ok(Self { config, params: p })
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        count_params(&self.params)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            metadata: self.config.to_kv(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, ModelError> {
        let config = ModelConfig::from_kv(&ckpt.metadata)?;
        let fresh = Model::init(config.clone(), 0)?;
        for (name, t) in fresh.params.iter() {
            let got = ckpt
                .params
                .get(name)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(ModelError::Config(format!(
                    "`{name}` has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            params: ckpt.params,
        })
    }
}

/// Sum of element counts over every parameter.
pub fn count_params(params: &ParamStore) -> usize {
    params.element_count()
}

/// Four-gate bias with the forget block set to 1.
fn lstm_bias(h: usize) -> Tensor {
    let mut b = vec![0.0; 4 * h];
    b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
    Tensor::from_vec(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_param_count_matches_closed_form() {
        let m = Model::init(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.count_params(), m.config.param_count());
    }

    #[test]
    fn tiny_fc_and_empty_counts() {
        let mut p = ParamStore::new();
        assert_eq!(count_params(&p), 0);
        p.insert("fc.w", Tensor::zeros(&[3, 2]));
        p.insert("fc.b", Tensor::zeros(&[2]));
        assert_eq!(count_params(&p), 8);
    }

    #[test]
    fn default_downsampling() {
        let c = ModelConfig::default();
        assert_eq!(c.downsample(), 4);
        assert_eq!(ModelConfig::full_scale().downsample(), 32);
        assert_eq!(c.encoder_len(64), 16);
        assert_eq!(c.encoder_len(65), 17);
    }

    #[test]
    fn config_kv_round_trip() {
        let c = ModelConfig {
            rnn_schedule: vec![2, 2, 1],
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(ModelConfig::from_kv("model.vocab_size=3\n").is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_config() {
        let c = ModelConfig {
            state_dim: 8,
            ..ModelConfig::default()
        };
        let m = Model::init(c, 3).unwrap();
        let back = Model::from_checkpoint(m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn groups() {
        assert_eq!(param_group("enc.rnn0.fw.b"), ParamGroup::SemanticEncoder);
        assert_eq!(param_group("out.w"), ParamGroup::SemanticEncoder);
        assert_eq!(param_group("chan_enc.fc1.w"), ParamGroup::ChannelEncoder);
        assert_eq!(param_group("chan_dec.fc2.b"), ParamGroup::ChannelDecoder);
        assert_eq!(param_group("sem_dec.w"), ParamGroup::SemanticDecoder);
    }
}
