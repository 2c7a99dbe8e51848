//! Orchestration: two-stage training, the testing loop, reports and the
//! run configuration.

mod config;
mod eval;
mod report;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::channel::ChannelError;
use crate::corpus::CorpusError;
use crate::model::ModelError;

pub use config::{parse_snr_list, RunConfig};
pub use eval::{
    baseline_symbol_count, decode_without_channel, dev_wer_bypass, dev_wer_channel, evaluate, greedy_batch, greedy_one,
    greedy_spectra,
    matched_rate, reference, sentence_wer, summarize, transmit_aligned, EvalOptions, EvalRow, NoTrace, Reception, Stage,
    SummaryRow, Tracer,
};
pub use report::{write_eval_csv, write_prune_csv, write_reports, write_summary_csv, EVAL_HEADER, PRUNE_HEADER, SUMMARY_HEADER};
pub use train::{
    init_receiver, snr_draws, train_joint, train_stage1, train_stage2, tx_examples, EpochLog, TrainOptions, TrainOutcome,
    TxExample,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("checkpoint vocabulary {model} does not match corpus vocabulary {corpus}")]
    VocabMismatch { model: usize, corpus: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True for failures caused by non-finite or degenerate numerics.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            PipelineError::Diverged { .. }
                | PipelineError::Autodiff(AutodiffError::NonFinite(_) | AutodiffError::Degenerate(_))
                | PipelineError::Model(ModelError::Autodiff(
                    AutodiffError::NonFinite(_) | AutodiffError::Degenerate(_)
                ))
        )
    }
}
