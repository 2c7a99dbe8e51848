//! Flat-fading channel `y = h·x + w` over complex symbol sequences.
//!
//! SNR is defined per complex symbol against unit transmit power, so
//! `σ² = 10^(−snr_db/10)` and each noise component has variance `σ²/2`.
//! AWGN fixes `h = 1`; Rayleigh draws one `h ~ CN(0, 1)` per transmission.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::rng::{self, Gaussian};

const NOISE_STREAM: u64 = 1;
const FADING_STREAM: u64 = 2;
/// `|h|` below this cannot be equalized.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("snr_db must be finite, got {0}")]
    Snr(f64),
    #[error("{len} symbols do not split into steps of {k}")]
    Length { len: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("channel gain |h| = {0:e} is too small to equalize")]
    DeepFade(f64),
    #[error("unknown channel kind `{0}` (expected awgn or rayleigh)")]
    Kind(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(ChannelError::Kind(other.to_string())),
        }
    }
}

/// Complex symbols grouped into steps of `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSignal {
    pub symbols: Vec<Complex64>,
    pub k: usize,
}

impl ChannelSignal {
    pub fn new(symbols: Vec<Complex64>, k: usize) -> Result<Self, ChannelError> {
        if k == 0 {
            return Err(ChannelError::ZeroK);
        }
        if symbols.len() % k != 0 {
            return Err(ChannelError::Length { len: symbols.len(), k });
        }
        Ok(Self { symbols, k })
    }

    /// Builds a signal from interleaved `(re, im)` pairs.
    pub fn from_interleaved(reals: &[f64], k: usize) -> Result<Self, ChannelError> {
        if reals.len() % 2 != 0 {
            return Err(ChannelError::Length { len: reals.len(), k: 2 * k });
        }
        let symbols = reals.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Self::new(symbols, k)
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.symbols.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.symbols.len() / self.k
    }

    /// Mean `|x|²`; zero for an empty signal.
    pub fn mean_power(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// One channel use: fading coefficient, noise level and noise seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub h: Complex64,
    pub sigma2: f64,
    pub seed: u64,
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

impl ChannelRealization {
    /// Draws `h` (Rayleigh) from `seed`; the noise of [`transmit`] uses the
    /// same seed on a separate stream. Deep fades are re-drawn.
    pub fn new(kind: ChannelKind, snr_db: f64, seed: u64) -> Result<Self, ChannelError> {
        if !snr_db.is_finite() {
            return Err(ChannelError::Snr(snr_db));
        }
        let h = match kind {
            ChannelKind::Awgn => Complex64::new(1.0, 0.0),
            ChannelKind::Rayleigh => {
                let mut s = seed;
                loop {
                    let h = draw_rayleigh(s);
                    if h.norm() >= MIN_GAIN {
                        break h;
                    }
                    s = rng::derive_seed(s, FADING_STREAM);
                }
            }
        };
        Ok(Self {
            kind,
            snr_db,
            h,
            sigma2: noise_variance(snr_db),
            seed,
        })
    }

    /// Test mode: `σ² = 0`.
    pub fn noiseless(kind: ChannelKind, h: Complex64) -> Self {
        Self {
            kind,
            snr_db: f64::INFINITY,
            h,
            sigma2: 0.0,
            seed: 0,
        }
    }

    /// The noise vector `w` that [`transmit`] adds for `len` symbols.
    pub fn noise(&self, len: usize) -> Vec<Complex64> {
        if self.sigma2 == 0.0 {
            return vec![Complex64::new(0.0, 0.0); len];
        }
        let std = (self.sigma2 / 2.0).sqrt();
        let mut r = rng::stream(self.seed, NOISE_STREAM);
        let mut g = Gaussian::new();
        (0..len)
            .map(|_| {
                let re = g.sample(&mut r) * std;
                let im = g.sample(&mut r) * std;
                Complex64::new(re, im)
            })
            .collect()
    }
}

/// `y_i = h·x_i + w_i`; identical realizations give identical outputs.
pub fn transmit(x: &ChannelSignal, real: &ChannelRealization) -> Result<ChannelSignal, ChannelError> {
    if real.sigma2 != 0.0 && !real.snr_db.is_finite() {
        return Err(ChannelError::Snr(real.snr_db));
    }
    let w = real.noise(x.len());
    let symbols = x.symbols.iter().zip(&w).map(|(xi, wi)| real.h * xi + wi).collect();
    Ok(ChannelSignal { symbols, k: x.k })
}

/// Draws `h ~ CN(0, 1)`, so `|h|` is Rayleigh with `E|h|² = 1`.
pub fn draw_rayleigh(seed: u64) -> Complex64 {
    let mut r = rng::stream(seed, FADING_STREAM);
    let mut g = Gaussian::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = g.sample(&mut r) * s;
    let im = g.sample(&mut r) * s;
    Complex64::new(re, im)
}

/// Zero-forcing with perfect channel knowledge: `ŷ_i = y_i / h`.
pub fn equalize(y: &ChannelSignal, h: Complex64) -> Result<ChannelSignal, ChannelError> {
    if h.norm() < MIN_GAIN {
        return Err(ChannelError::DeepFade(h.norm()));
    }
    if h == Complex64::new(1.0, 0.0) {
        return Ok(y.clone());
    }
    let inv = h.inv();
    Ok(ChannelSignal {
        symbols: y.symbols.iter().map(|v| v * inv).collect(),
        k: y.k,
    })
}
