//! Redundancy removal: drop the first EOS step and everything after it,
//! then drop UNK and PAD steps.

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::corpus::{EOS, PAD, UNK};
use crate::model::{AlignedLatents, LatentSemantics, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("savings statistics need at least one report")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    /// Raw decoder steps `q`.
    pub raw_len: usize,
    /// Surviving steps `c`.
    pub kept_len: usize,
    /// Steps at or after the first EOS.
    pub cut_by_eos: usize,
    /// UNK/PAD steps before the first EOS.
    pub cut_by_specials: usize,
}

impl PruneReport {
    /// `(q − c) / q`; zero when `q = 0`.
    pub fn saved_fraction(&self) -> f64 {
        if self.raw_len == 0 {
            0.0
        } else {
            (self.raw_len - self.kept_len) as f64 / self.raw_len as f64
        }
    }
}

/// Indices of the steps that survive, plus the accounting.
pub fn plan(tokens: &[usize]) -> (Vec<usize>, PruneReport) {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    let kept: Vec<usize> = (0..end).filter(|&i| tokens[i] != UNK && tokens[i] != PAD).collect();
    let report = PruneReport {
        raw_len: tokens.len(),
        kept_len: kept.len(),
        cut_by_eos: tokens.len() - end,
        cut_by_specials: end - kept.len(),
    };
    (kept, report)
}

pub fn prune_transcript(tokens: &[usize]) -> Vec<usize> {
    let (kept, _) = plan(tokens);
    kept.into_iter().map(|i| tokens[i]).collect()
}

/// Keeps the decoder states of content steps, in order.
pub fn prune(aligned: &AlignedLatents) -> Result<(LatentSemantics, PruneReport), ModelError> {
    let (kept, report) = plan(&aligned.tokens());
    let d = aligned.states.first().map_or(0, Vec::len);
    let data = kept.iter().flat_map(|&i| aligned.states[i].iter().copied()).collect();
    let values = Tensor::new(vec![kept.len(), d], data)?;
    Ok((LatentSemantics::new(values, kept)?, report))
}

/// Corpus means of the per-sentence step shares.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SavingsStats {
    pub sentences: usize,
    /// Mean of `cut_by_eos / q`.
    pub eos_share: f64,
    /// Mean of `cut_by_specials / q`.
    pub special_share: f64,
    /// Mean of `(q − c) / q`.
    pub combined: f64,
    pub mean_raw_len: f64,
    pub mean_kept_len: f64,
}

pub fn savings_stats(reports: &[PruneReport]) -> Result<SavingsStats, PruneError> {
    if reports.is_empty() {
        return Err(PruneError::Empty);
    }
    let n = reports.len() as f64;
    let share = |num: usize, q: usize| if q == 0 { 0.0 } else { num as f64 / q as f64 };
    let mean = |f: &dyn Fn(&PruneReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(SavingsStats {
        sentences: reports.len(),
        eos_share: mean(&|r| share(r.cut_by_eos, r.raw_len)),
        special_share: mean(&|r| share(r.cut_by_specials, r.raw_len)),
        combined: mean(&|r| r.saved_fraction()),
        mean_raw_len: mean(&|r| r.raw_len as f64),
        mean_kept_len: mean(&|r| r.kept_len as f64),
    })
}
