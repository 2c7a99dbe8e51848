use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speechsem::autodiff::{read_checkpoint, write_checkpoint, AutodiffError};
use speechsem::channel::ChannelKind;
use speechsem::corpus::{gen_corpus, load_corpus, save_corpus, Corpus, CorpusError};
use speechsem::model::{param_group, Model, ModelError, ParamGroup};
use speechsem::pipeline::{
    evaluate, greedy_batch, matched_rate, train_joint, train_stage1, train_stage2, write_reports, EpochLog, NoTrace,
    PipelineError, RunConfig, TrainOutcome,
};
use speechsem::prune::{plan, savings_stats};

/// Semantic speech-to-text transmission over simulated channels.
#[derive(Parser, Debug)]
#[command(name = "speechsem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for this command (corpus, training or evaluation).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Corpus file (overrides corpus.path).
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ChannelArgs {
    /// awgn or rayleigh.
    #[arg(long, value_name = "KIND")]
    channel: Option<ChannelKind>,
    /// Comma-separated SNR values in dB.
    #[arg(long, value_name = "LIST")]
    snr: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    Gen(Common),
    /// Stage 1: train the semantic codec with the channel bypassed.
    Train1 {
        #[command(flatten)]
        common: Common,
        /// Train the whole network end to end instead.
        #[arg(long)]
        joint: bool,
    },
    /// Stage 2: freeze the semantic codec, train the channel codec.
    Train2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelArgs,
        /// Stage-1 checkpoint (default: OUT/stage1.ckpt).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint at the given SNRs (default: the dev SNR).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelArgs,
        /// Default: OUT/stage2.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate over the SNR grid, one report directory per channel kind.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Redundancy-removal statistics of greedy decodes.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Count model parameters per group.
    Params {
        #[command(flatten)]
        common: Common,
        /// Count a checkpoint instead of the configured model.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_numeric() { EXIT_NUMERIC } else { EXIT_DATA };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}
via_pipeline!(ModelError, AutodiffError, CorpusError);

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(c) = &common.corpus {
        cfg.corpus_path = Some(c.clone());
    }
    Ok(cfg)
}

fn apply_channel(cfg: &mut RunConfig, args: &ChannelArgs) -> Result<(), Failure> {
    if let Some(k) = args.channel {
        cfg.channel = k;
    }
    if let Some(list) = &args.snr {
        cfg.snr_grid = speechsem::pipeline::parse_snr_list(list)?;
    }
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_failure(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("config.txt");
    fs::write(&path, cfg.to_kv()).map_err(|e| io_failure(&path, e))
}

fn corpus_for(cfg: &RunConfig) -> Result<Corpus, Failure> {
    let corpus = load_corpus(&cfg.corpus_file())?;
    Ok(corpus)
}

fn model_for(path: &Path) -> Result<Model, Failure> {
    Ok(Model::from_checkpoint(read_checkpoint(path)?)?)
}

fn save_model(model: &Model, path: &Path) -> Result<(), Failure> {
    write_checkpoint(path, &model.to_checkpoint())?;
    Ok(())
}

fn log_epoch(stage: &str) -> impl FnMut(&EpochLog, &speechsem::autodiff::ParamStore) + '_ {
    move |e, _| {
        eprintln!(
            "{stage} epoch {:>3}  loss {:.4}  dev WER {:.4}  ({:.1}s)",
            e.epoch, e.loss, e.dev_wer, e.seconds
        );
    }
}

/// Epoch log without timings, so reruns produce identical files.
fn write_log(path: &Path, outcome: &TrainOutcome) -> Result<(), Failure> {
    let mut s = String::from("epoch,loss,dev_wer\n");
    for e in &outcome.log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.dev_wer));
    }
    fs::write(path, s).map_err(|e| io_failure(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(common) => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.corpus_seed = s;
            }
            prepare_out(&cfg)?;
            let corpus = gen_corpus(&cfg.corpus, cfg.corpus_seed)?;
            save_corpus(&corpus, &cfg.corpus_file())?;
            println!(
                "wrote {} sentences to {}",
                corpus.sentences.len(),
                cfg.corpus_file().display()
            );
        }
        Command::Train1 { common, joint } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train_seed = s;
            }
            prepare_out(&cfg)?;
            let corpus = corpus_for(&cfg)?;
            let mut model = Model::init(cfg.model.clone(), cfg.model_seed)?;
            let (name, outcome) = if joint {
                let opts = cfg.train_options(cfg.joint_epochs);
                ("joint", train_joint(&mut model, &corpus, &opts, log_epoch("joint"))?)
            } else {
                let opts = cfg.train_options(cfg.stage1_epochs);
                ("stage1", train_stage1(&mut model, &corpus, &opts, log_epoch("stage1"))?)
            };
            save_model(&model, &cfg.out_dir.join(format!("{name}.ckpt")))?;
            write_log(&cfg.out_dir.join(format!("{name}_log.csv")), &outcome)?;
            println!("best dev WER {:.4} at epoch {}", outcome.best_dev_wer, outcome.best_epoch);
        }
        Command::Train2 {
            common,
            channel,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train_seed = s;
            }
            apply_channel(&mut cfg, &channel)?;
            prepare_out(&cfg)?;
            let corpus = corpus_for(&cfg)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("stage1.ckpt"));
            let mut model = model_for(&ckpt)?;
            let opts = cfg.train_options(cfg.stage2_epochs);
            let outcome = train_stage2(&mut model, &corpus, &opts, log_epoch("stage2"))?;
            save_model(&model, &cfg.out_dir.join("stage2.ckpt"))?;
            write_log(&cfg.out_dir.join("stage2_log.csv"), &outcome)?;
            println!("best dev WER {:.4} at epoch {}", outcome.best_dev_wer, outcome.best_epoch);
        }
        Command::Eval {
            common,
            channel,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.eval_seed = s;
            }
            if channel.snr.is_none() {
                cfg.snr_grid = vec![cfg.dev_snr];
            }
            apply_channel(&mut cfg, &channel)?;
            prepare_out(&cfg)?;
            let corpus = corpus_for(&cfg)?;
            let model = model_for(&checkpoint.unwrap_or_else(|| cfg.out_dir.join("stage2.ckpt")))?;
            let rows = evaluate(&model, &corpus, &cfg.eval_options(), &mut NoTrace)?;
            write_reports(&cfg.out_dir, &rows)?;
            print_summary(&rows);
        }
        Command::Sweep {
            common,
            channel,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.eval_seed = s;
            }
            apply_channel(&mut cfg, &channel)?;
            prepare_out(&cfg)?;
            let corpus = corpus_for(&cfg)?;
            let model = model_for(&checkpoint.unwrap_or_else(|| cfg.out_dir.join("stage2.ckpt")))?;
            let kinds = match channel.channel {
                Some(k) => vec![k],
                None => vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
            };
            for kind in kinds {
                let mut opts = cfg.eval_options();
                opts.channel = kind;
                let rows = evaluate(&model, &corpus, &opts, &mut NoTrace)?;
                write_reports(&cfg.out_dir.join(kind.to_string()), &rows)?;
                println!("{kind}:");
                print_summary(&rows);
            }
        }
        Command::Stats { common, checkpoint } => {
            let cfg = load_config(&common)?;
            prepare_out(&cfg)?;
            let corpus = corpus_for(&cfg)?;
            let model = model_for(&checkpoint.unwrap_or_else(|| cfg.out_dir.join("stage2.ckpt")))?;
            stats(&cfg, &corpus, &model)?;
        }
        Command::Params { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let model = match checkpoint {
                Some(p) => model_for(&p)?,
                None => Model::init(cfg.model.clone(), cfg.model_seed)?,
            };
            let mut groups = [0usize; 4];
            for (name, t) in model.params.iter() {
                let g = match param_group(name) {
                    ParamGroup::SemanticEncoder => 0,
                    ParamGroup::ChannelEncoder => 1,
                    ParamGroup::ChannelDecoder => 2,
                    ParamGroup::SemanticDecoder => 3,
                };
                groups[g] += t.len();
            }
            println!("semantic_encoder,{}", groups[0]);
            println!("channel_encoder,{}", groups[1]);
            println!("channel_decoder,{}", groups[2]);
            println!("semantic_decoder,{}", groups[3]);
            println!("total,{}", model.count_params());
        }
    }
    Ok(())
}

fn print_summary(rows: &[speechsem::pipeline::EvalRow]) {
    println!("snr_db  mean_wer  mean_similarity  mean_symbols  mean_baseline_symbols");
    for s in speechsem::pipeline::summarize(rows) {
        println!(
            "{:>6}  {:>8.4}  {:>15.4}  {:>12.1}  {:>21.1}",
            s.snr_db, s.mean_wer, s.mean_similarity, s.mean_symbols, s.mean_baseline_symbols
        );
    }
}

/// Writes per-sentence prune rows and the aggregate shares.
fn stats(cfg: &RunConfig, corpus: &Corpus, model: &Model) -> Result<(), Failure> {
    let sentences = corpus.split(cfg.eval_split);
    if sentences.is_empty() {
        return Err(PipelineError::EmptySplit(cfg.eval_split.name()).into());
    }
    let decoded = greedy_batch(model, &sentences, cfg.max_decode_len)?;
    let k = model.config.symbols_per_step;
    let rate = if cfg.rate_per_frame == 0 {
        matched_rate(model)
    } else {
        cfg.rate_per_frame
    };
    let mut rows = String::from("sentence_id,raw_len,kept_len,cut_by_eos,cut_by_specials,saved_fraction,symbols,baseline_symbols\n");
    let mut reports = Vec::with_capacity(sentences.len());
    let (mut sym, mut base) = (0usize, 0usize);
    for (s, a) in sentences.iter().zip(&decoded) {
        let (_, r) = plan(&a.tokens());
        let b = speechsem::pipeline::baseline_symbol_count(s.n_frames(), rate);
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.id,
            r.raw_len,
            r.kept_len,
            r.cut_by_eos,
            r.cut_by_specials,
            r.saved_fraction(),
            k * r.kept_len,
            b
        ));
        sym += k * r.kept_len;
        base += b;
        reports.push(r);
    }
    let path = cfg.out_dir.join("prune_steps.csv");
    fs::write(&path, rows).map_err(|e| io_failure(&path, e))?;
    let st = savings_stats(&reports).map_err(|e| Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    })?;
    let n = sentences.len() as f64;
    let body = format!(
        "{}\n{},{},{},{},{},{},{},{}\n",
        speechsem::pipeline::PRUNE_HEADER,
        st.sentences,
        st.mean_raw_len,
        st.mean_kept_len,
        st.eos_share,
        st.special_share,
        st.combined,
        sym as f64 / n,
        base as f64 / n
    );
    let path = cfg.out_dir.join("prune.csv");
    fs::write(&path, body).map_err(|e| io_failure(&path, e))?;
    println!(
        "{} sentences: eos share {:.3}, special share {:.3}, combined {:.3}; symbols {:.1} vs baseline {:.1}",
        st.sentences,
        st.eos_share,
        st.special_share,
        st.combined,
        sym as f64 / n,
        base as f64 / n
    );
    Ok(())
}
