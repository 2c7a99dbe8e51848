//! Speech front end: 16 kHz PCM → 40 log mel filter-bank coefficients per
//! 10 ms frame, with first- and second-order regression deltas.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms at 16 kHz.
pub const WINDOW_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP_LEN: usize = 160;
pub const FFT_LEN: usize = 512;
pub const NUM_MEL: usize = 40;
/// Spectrum channels per coefficient: log-fbank, Δ, ΔΔ.
pub const NUM_CHANNELS: usize = 3;
/// Values per spectrum frame (40 coefficients × 3 channels).
pub const FRAME_DIM: usize = NUM_MEL * NUM_CHANNELS;
pub const LOG_FLOOR: f64 = 1e-10;
pub const DELTA_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("sample rate must be {SAMPLE_RATE} Hz, got {0}")]
    SampleRate(u32),
    #[error("need at least {WINDOW_LEN} samples, got {0}")]
    TooShort(usize),
    #[error("frame has {0} samples, expected {WINDOW_LEN}")]
    FrameLength(usize),
}

/// Mono 16-bit PCM at 16 kHz.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AudioClip {
    samples: Vec<i16>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self, FrontendError> {
        if sample_rate != SAMPLE_RATE {
            return Err(FrontendError::SampleRate(sample_rate));
        }
        if samples.len() < WINDOW_LEN {
            return Err(FrontendError::TooShort(samples.len()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

/// `floor((len − 400) / 160) + 1`, or 0 when shorter than one window.
pub fn frame_count(len: usize) -> usize {
    if len < WINDOW_LEN {
        0
    } else {
        (len - WINDOW_LEN) / HOP_LEN + 1
    }
}

/// Symmetric Hamming window `0.54 − 0.46·cos(2πn/(N−1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    let denom = (len.max(2) - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Splits a clip into Hamming-windowed frames of 400 samples, hop 160.
/// Samples are scaled to `[-1, 1)`.
pub fn frame_signal(clip: &AudioClip) -> Vec<Vec<f64>> {
    let win = hamming(WINDOW_LEN);
    let s = clip.samples();
    (0..frame_count(s.len()))
        .map(|f| {
            let start = f * HOP_LEN;
            s[start..start + WINDOW_LEN]
                .iter()
                .zip(&win)
                .map(|(&x, w)| x as f64 / 32768.0 * w)
                .collect()
        })
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the 40 mel filters plus the two band edges,
/// equally spaced on the mel scale over 0–8000 Hz.
pub fn mel_points() -> Vec<f64> {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..NUM_MEL + 2)
        .map(|i| mel_to_hz(top * i as f64 / (NUM_MEL + 1) as f64))
        .collect()
}

/// Triangular filter weights, `NUM_MEL × (FFT_LEN/2 + 1)`, evaluated at the
/// exact bin frequencies.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let pts = mel_points();
    let bins = FFT_LEN / 2 + 1;
    let bin_hz = SAMPLE_RATE as f64 / FFT_LEN as f64;
    (0..NUM_MEL)
        .map(|k| {
            let (lo, mid, hi) = (pts[k], pts[k + 1], pts[k + 2]);
            (0..bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log mel filter-bank extractor with a cached FFT plan.
pub struct Fbank {
    fft: Arc<dyn Fft<f64>>,
    filters: Vec<Vec<f64>>,
}

impl Default for Fbank {
    fn default() -> Self {
        Self::new()
    }
}

impl Fbank {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_LEN);
        Self {
            fft,
            filters: mel_filterbank(),
        }
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// `|FFT|²` of a zero-padded frame, bins `0..=256`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>, FrontendError> {
        if frame.len() != WINDOW_LEN {
            return Err(FrontendError::FrameLength(frame.len()));
        }
        let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(FFT_LEN, Complex64::new(0.0, 0.0));
        self.fft.process(&mut buf);
        Ok(buf[..FFT_LEN / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
    }

    /// 40 log filter energies, floored at `LOG_FLOOR` before the log.
    pub fn log_mel(&self, frame: &[f64]) -> Result<Vec<f64>, FrontendError> {
        let power = self.power_spectrum(frame)?;
        Ok(self.apply_filters(&power))
    }

    pub fn apply_filters(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }

    pub fn fbank(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FrontendError> {
        frames.iter().map(|f| self.log_mel(f)).collect()
    }
}

/// Regression delta with window 2 and replicated edge frames:
/// `Δ_t = Σ_{w=1..2} w·(c_{t+w} − c_{t−w}) / (2·Σ w²)`.
pub fn delta(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = seq.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = seq[0].len();
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|w| (w * w) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            (0..dim)
                .map(|d| {
                    (1..=DELTA_WINDOW)
                        .map(|w| {
                            let ahead = seq[(t + w).min(n - 1)][d];
                            let behind = seq[t.saturating_sub(w)][d];
                            w as f64 * (ahead - behind)
                        })
                        .sum::<f64>()
                        / norm
                })
                .collect()
        })
        .collect()
}

/// `(Δ, ΔΔ)` of a coefficient sequence.
pub fn deltas(seq: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d1 = delta(seq);
    let d2 = delta(&d1);
    (d1, d2)
}

/// Interleaves coefficients with their deltas into `n × 40 × 3` row-major
/// data (channel fastest).
pub fn stack_channels(coeffs: &[Vec<f64>]) -> Vec<f64> {
    let (d1, d2) = deltas(coeffs);
    let mut out = Vec::with_capacity(coeffs.len() * FRAME_DIM);
    for t in 0..coeffs.len() {
        for k in 0..coeffs[t].len() {
            out.push(coeffs[t][k]);
            out.push(d1[t][k]);
            out.push(d2[t][k]);
        }
    }
    out
}

/// Full front end for one clip: `frames × 40 × 3` values.
pub fn spectrum(clip: &AudioClip) -> Vec<f64> {
    let fb = Fbank::new();
    let frames = frame_signal(clip);
    let coeffs = fb.fbank(&frames).expect("frames are window-sized");
    stack_channels(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_counts() {
        let mk = |n| AudioClip::new(vec![0; n], SAMPLE_RATE).unwrap();
        assert_eq!(frame_signal(&mk(16_000)).len(), 98);
        assert_eq!(frame_signal(&mk(400)).len(), 1);
        assert_eq!(frame_signal(&mk(560)).len(), 2);
        assert!(matches!(AudioClip::new(vec![0; 399], SAMPLE_RATE), Err(FrontendError::TooShort(399))));
        assert!(matches!(AudioClip::new(vec![0; 400], 8000), Err(FrontendError::SampleRate(8000))));
    }

    #[test]
    fn hamming_is_symmetric_with_expected_ends() {
        let w = hamming(WINDOW_LEN);
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[399] - 0.08).abs() < 1e-12);
        for n in 0..200 {
            assert!((w[n] - w[399 - n]).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_hits_log_floor() {
        let fb = Fbank::new();
        let c = fb.log_mel(&vec![0.0; WINDOW_LEN]).unwrap();
        assert!(c.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let fb = Fbank::new();
        let mut frame = vec![0.0; WINDOW_LEN];
        frame[0] = 1.0;
        let p = fb.power_spectrum(&frame).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn filters_have_positive_mass_and_overlap() {
        let f = mel_filterbank();
        assert_eq!(f.len(), NUM_MEL);
        for k in 0..NUM_MEL {
            assert!(f[k].iter().sum::<f64>() > 0.0, "filter {k} empty");
            if k + 1 < NUM_MEL {
                let overlap = f[k].iter().zip(&f[k + 1]).any(|(a, b)| *a > 0.0 && *b > 0.0);
                assert!(overlap, "filters {k} and {} do not overlap", k + 1);
            }
        }
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let seq = vec![vec![3.0, -1.0]; 6];
        let (d1, d2) = deltas(&seq);
        assert!(d1.iter().flatten().chain(d2.iter().flatten()).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_has_unit_interior_delta() {
        let seq: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64]).collect();
        let d1 = delta(&seq);
        for t in 2..6 {
            assert!((d1[t][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_deltas_vanish() {
        let (d1, d2) = deltas(&[vec![4.0, 5.0]]);
        assert_eq!(d1, vec![vec![0.0, 0.0]]);
        assert_eq!(d2, vec![vec![0.0, 0.0]]);
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 400usize..40_000) {
            let clip = AudioClip::new(vec![1; len], SAMPLE_RATE).unwrap();
            prop_assert_eq!(frame_signal(&clip).len(), (len - 400) / 160 + 1);
        }

        #[test]
        fn deltas_are_linear(
            x in proptest::collection::vec(-5.0f64..5.0, 1..20),
            y_seed in -5.0f64..5.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let xs: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
            let ys: Vec<Vec<f64>> = x.iter().enumerate().map(|(i, v)| vec![(v * y_seed + i as f64).sin()]).collect();
            let mix: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(p, q)| vec![a * p[0] + b * q[0]]).collect();
            let (dx, ddx) = deltas(&xs);
            let (dy, ddy) = deltas(&ys);
            let (dm, ddm) = deltas(&mix);
            for t in 0..xs.len() {
                prop_assert!((dm[t][0] - (a * dx[t][0] + b * dy[t][0])).abs() < 1e-9);
                prop_assert!((ddm[t][0] - (a * ddx[t][0] + b * ddy[t][0])).abs() < 1e-9);
            }
        }
    }
}
