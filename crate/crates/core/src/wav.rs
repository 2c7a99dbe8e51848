//! Minimal RIFF/WAVE codec for mono 16-bit PCM at 16 kHz.

use std::path::Path;

use thiserror::Error;

use crate::frontend::{AudioClip, FrontendError, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("unsupported audio format {0} (need PCM = 1)")]
    Format(u16),
    #[error("unsupported channel count {0} (need mono)")]
    Channels(u16),
    #[error("unsupported sample rate {0} Hz (need {SAMPLE_RATE})")]
    SampleRate(u32),
    #[error("unsupported bit depth {0} (need 16)")]
    BitDepth(u16),
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("truncated file")]
    Truncated,
    #[error(transparent)]
    Clip(#[from] FrontendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn u16_at(b: &[u8], at: usize) -> Result<u16, WavError> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or(WavError::Truncated)
}

fn u32_at(b: &[u8], at: usize) -> Result<u32, WavError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or(WavError::Truncated)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        let end = body.checked_add(size).ok_or(WavError::Truncated)?;
        if id == b"fmt " {
            let format = u16_at(bytes, body)?;
            let channels = u16_at(bytes, body + 2)?;
            let rate = u32_at(bytes, body + 4)?;
            let bits = u16_at(bytes, body + 14)?;
            if format != 1 {
                return Err(WavError::Format(format));
            }
            if channels != 1 {
                return Err(WavError::Channels(channels));
            }
            if rate != SAMPLE_RATE {
                return Err(WavError::SampleRate(rate));
            }
            if bits != 16 {
                return Err(WavError::BitDepth(bits));
            }
            fmt_seen = true;
        } else if id == b"data" {
            if !fmt_seen {
                return Err(WavError::MissingChunk("fmt "));
            }
            let data = bytes.get(body..end).ok_or(WavError::Truncated)?;
            let samples = data
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect();
            return Ok(AudioClip::new(samples, SAMPLE_RATE)?);
        }
        pos = end + (size & 1);
    }
    Err(WavError::MissingChunk(if fmt_seen { "data" } else { "fmt " }))
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.samples().len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in clip.samples() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn load_wav(path: &Path) -> Result<AudioClip, WavError> {
    decode_wav(&std::fs::read(path)?)
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), WavError> {
    std::fs::write(path, encode_wav(clip))?;
    Ok(())
}
