//! CSV reports: UTF-8, comma separated, `.` decimals, LF line ends.
//! Floats use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::prune::{savings_stats, PruneReport};

use super::eval::{summarize, EvalRow};
use super::PipelineError;

pub const EVAL_HEADER: &str = "snr_db,channel,sentence_id,trial,wer,substitutions,deletions,insertions,reference_len,\
similarity_hashed_bow,symbols,baseline_symbols,raw_len,kept_len,cut_by_eos,cut_by_specials,saved_fraction,seed,h_re,h_im";
pub const SUMMARY_HEADER: &str = "snr_db,mean_wer,mean_similarity,mean_symbols,mean_baseline_symbols";
pub const PRUNE_HEADER: &str =
    "sentences,mean_raw_len,mean_kept_len,eos_share,special_share,combined_share,mean_symbols,mean_baseline_symbols";

fn write(path: &Path, body: &str) -> Result<(), PipelineError> {
    fs::write(path, body).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_rows(rows: &[EvalRow]) -> Result<(), PipelineError> {
    if rows.is_empty() {
        Err(PipelineError::Config("no evaluation rows to report".into()))
    } else {
        Ok(())
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), PipelineError> {
    ensure_rows(rows)?;
    let mut s = String::new();
    s.push_str(EVAL_HEADER);
    s.push('\n');
    for r in rows {
        let p = &r.prune;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.channel,
            r.sentence_id,
            r.trial,
            r.wer,
            r.substitutions,
            r.deletions,
            r.insertions,
            r.reference_len,
            r.similarity,
            r.symbols,
            r.baseline_symbols,
            p.raw_len,
            p.kept_len,
            p.cut_by_eos,
            p.cut_by_specials,
            p.saved_fraction(),
            r.seed,
            r.h.re,
            r.h.im
        );
    }
    write(path, &s)
}

pub fn write_summary_csv(path: &Path, rows: &[EvalRow]) -> Result<(), PipelineError> {
    ensure_rows(rows)?;
    let mut s = String::new();
    s.push_str(SUMMARY_HEADER);
    s.push('\n');
    for r in summarize(rows) {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.snr_db, r.mean_wer, r.mean_similarity, r.mean_symbols, r.mean_baseline_symbols
        );
    }
    write(path, &s)
}

/// Savings over the first trial at the first SNR point (pruning happens
/// before the channel, so every point prunes identically).
pub fn write_prune_csv(path: &Path, rows: &[EvalRow]) -> Result<(), PipelineError> {
    ensure_rows(rows)?;
    let first = rows[0].snr_db.to_bits();
    let at: Vec<&EvalRow> = rows
        .iter()
        .filter(|r| r.snr_db.to_bits() == first && r.trial == 0)
        .collect();
    let reports: Vec<PruneReport> = at.iter().map(|r| r.prune).collect();
    let st = savings_stats(&reports).map_err(|e| PipelineError::Config(e.to_string()))?;
    let n = at.len() as f64;
    let sym = at.iter().map(|r| r.symbols as f64).sum::<f64>() / n;
    let base = at.iter().map(|r| r.baseline_symbols as f64).sum::<f64>() / n;
    let s = format!(
        "{PRUNE_HEADER}\n{},{},{},{},{},{},{},{}\n",
        st.sentences, st.mean_raw_len, st.mean_kept_len, st.eos_share, st.special_share, st.combined, sym, base
    );
    write(path, &s)
}

/// Writes `eval.csv`, `summary.csv` and `prune.csv` into `dir`.
pub fn write_reports(dir: &Path, rows: &[EvalRow]) -> Result<(), PipelineError> {
    ensure_rows(rows)?;
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_eval_csv(&dir.join("eval.csv"), rows)?;
    write_summary_csv(&dir.join("summary.csv"), rows)?;
    write_prune_csv(&dir.join("prune.csv"), rows)
}
