//! Semantic speech-to-text transmission.
//!
//! Speech spectra are encoded into text-aligned latent vectors by an
//! attention model, semantically empty steps are pruned, and the surviving
//! latents cross a simulated AWGN or Rayleigh channel before the receiver
//! recovers the transcript.

pub mod autodiff;
pub mod channel;
pub mod corpus;
pub mod frontend;
pub mod metrics;
pub mod model;
pub mod prune;
pub mod rng;
pub mod wav;
pub mod pipeline;
