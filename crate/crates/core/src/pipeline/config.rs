use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::channel::ChannelKind;
use crate::corpus::{CorpusConfig, Split};
use crate::model::ModelConfig;

use super::eval::EvalOptions;
use super::train::TrainOptions;
use super::PipelineError;

/// Everything a run needs, read from flat `key = value` text.
///
/// Lines starting with `#` are comments. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `None` means `<out_dir>/corpus.bin`.
    pub corpus_path: Option<PathBuf>,
    pub corpus_seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train_seed: u64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub joint_epochs: usize,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub rho: f64,
    pub eps: f64,
    pub max_decode_len: usize,
    pub dev_snr: f64,
    pub stop_at_wer: Option<f64>,
    pub channel: ChannelKind,
    pub equalize: bool,
    pub eval_seed: u64,
    pub snr_grid: Vec<f64>,
    /// Channel realizations per sentence and SNR point.
    pub eval_trials: usize,
    /// 0 selects the matched rate `ceil(k / D)`.
    pub rate_per_frame: usize,
    pub eval_split: Split,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_path: None,
            corpus_seed: 42,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            model_seed: 7,
            train_seed: 1,
            batch_size: 8,
            stage1_epochs: 20,
            stage2_epochs: 10,
            joint_epochs: 20,
            snr_lo: 0.0,
            snr_hi: 18.0,
            rho: 0.95,
            eps: 1e-6,
            max_decode_len: 16,
            dev_snr: 12.0,
            stop_at_wer: None,
            channel: ChannelKind::Awgn,
            equalize: true,
            eval_seed: 2024,
            snr_grid: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0],
            eval_trials: 1,
            rate_per_frame: 0,
            eval_split: Split::Test,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> PipelineError {
    PipelineError::Config(format!("{key}: expected {what}, got `{value}`"))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `0,3,6` into SNR values.
pub fn parse_snr_list(value: &str) -> Result<Vec<f64>, PipelineError> {
    let out: Vec<f64> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = parse("snr", s, "a number")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("snr", s, "a finite number"))
            }
        })
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(PipelineError::Config("SNR list is empty".into()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one key; the value is already trimmed.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        if key.starts_with("model.") {
            return match self.model.apply(key, value)? {
                true => Ok(()),
                false => Err(PipelineError::Config(format!("unknown key `{key}`"))),
            };
        }
        let int = |what| parse::<usize>(key, value, what);
        let real = || parse::<f64>(key, value, "a number");
        match key {
            "corpus.path" => self.corpus_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "corpus.seed" => self.corpus_seed = parse(key, value, "an unsigned integer")?,
            "corpus.vocab_size" => self.corpus.vocab_size = int("an integer")?,
            "corpus.min_tokens" => self.corpus.min_tokens = int("an integer")?,
            "corpus.max_tokens" => self.corpus.max_tokens = int("an integer")?,
            "corpus.min_frames_per_token" => self.corpus.min_frames_per_token = int("an integer")?,
            "corpus.max_frames_per_token" => self.corpus.max_frames_per_token = int("an integer")?,
            "corpus.jitter" => self.corpus.jitter = real()?,
            "corpus.crossfade" => self.corpus.crossfade = int("an integer")?,
            "corpus.unk_rate" => self.corpus.unk_rate = real()?,
            "corpus.n_train" => self.corpus.n_train = int("an integer")?,
            "corpus.n_dev" => self.corpus.n_dev = int("an integer")?,
            "corpus.n_test" => self.corpus.n_test = int("an integer")?,
            "init.seed" => self.model_seed = parse(key, value, "an unsigned integer")?,
            "train.seed" => self.train_seed = parse(key, value, "an unsigned integer")?,
            "train.batch_size" => self.batch_size = int("an integer")?,
            "train.stage1_epochs" => self.stage1_epochs = int("an integer")?,
            "train.stage2_epochs" => self.stage2_epochs = int("an integer")?,
            "train.joint_epochs" => self.joint_epochs = int("an integer")?,
            "train.snr_lo" => self.snr_lo = real()?,
            "train.snr_hi" => self.snr_hi = real()?,
            "train.rho" => self.rho = real()?,
            "train.eps" => self.eps = real()?,
            "train.max_decode_len" => self.max_decode_len = int("an integer")?,
            "train.dev_snr" => self.dev_snr = real()?,
            "train.stop_at_wer" => {
                self.stop_at_wer = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v, "a number or `none`")?),
                }
            }
            "channel.kind" => self.channel = value.parse()?,
            "channel.equalize" => self.equalize = parse(key, value, "true or false")?,
            "eval.seed" => self.eval_seed = parse(key, value, "an unsigned integer")?,
            "eval.snr_grid" => self.snr_grid = parse_snr_list(value)?,
            "eval.rate_per_frame" => self.rate_per_frame = int("an integer")?,
            "eval.trials" => self.eval_trials = int("an integer")?,
            "eval.split" => {
                self.eval_split = match value {
                    "train" => Split::Train,
                    "dev" => Split::Dev,
                    "test" => Split::Test,
                    v => return Err(bad(key, v, "train, dev or test")),
                }
            }
            "out.dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.corpus.validate()?;
        self.model.validate()?;
        if self.model.vocab_size != self.corpus.vocab_size + crate::corpus::NUM_SPECIALS {
            return Err(PipelineError::Config(format!(
                "model.vocab_size {} must equal corpus.vocab_size + 3 = {}",
                self.model.vocab_size,
                self.corpus.vocab_size + crate::corpus::NUM_SPECIALS
            )));
        }
        if !(self.snr_lo.is_finite() && self.snr_hi.is_finite()) || self.snr_lo > self.snr_hi {
            return Err(PipelineError::Config("train.snr_lo must not exceed train.snr_hi".into()));
        }
        if self.snr_grid.is_empty() {
            return Err(PipelineError::Config("eval.snr_grid is empty".into()));
        }
        if self.eval_trials == 0 {
            return Err(PipelineError::Config("eval.trials must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_decode_len == 0 {
            return Err(PipelineError::Config("batch size and max decode length must be at least 1".into()));
        }
        if !(0.0 < self.rho && self.rho < 1.0) || !(self.eps > 0.0) {
            return Err(PipelineError::Config("train.rho must lie in (0, 1) and train.eps be positive".into()));
        }
        Ok(())
    }

    /// Resolved configuration as sorted `key=value` lines.
    pub fn to_kv(&self) -> String {
        let c = &self.corpus;
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert(
            "corpus.path",
            self.corpus_path.as_ref().map_or_else(String::new, |p| p.display().to_string()),
        );
        m.insert("corpus.seed", self.corpus_seed.to_string());
        m.insert("corpus.vocab_size", c.vocab_size.to_string());
        m.insert("corpus.min_tokens", c.min_tokens.to_string());
        m.insert("corpus.max_tokens", c.max_tokens.to_string());
        m.insert("corpus.min_frames_per_token", c.min_frames_per_token.to_string());
        m.insert("corpus.max_frames_per_token", c.max_frames_per_token.to_string());
        m.insert("corpus.jitter", c.jitter.to_string());
        m.insert("corpus.crossfade", c.crossfade.to_string());
        m.insert("corpus.unk_rate", c.unk_rate.to_string());
        m.insert("corpus.n_train", c.n_train.to_string());
        m.insert("corpus.n_dev", c.n_dev.to_string());
        m.insert("corpus.n_test", c.n_test.to_string());
        m.insert("init.seed", self.model_seed.to_string());
        m.insert("train.seed", self.train_seed.to_string());
        m.insert("train.batch_size", self.batch_size.to_string());
        m.insert("train.stage1_epochs", self.stage1_epochs.to_string());
        m.insert("train.stage2_epochs", self.stage2_epochs.to_string());
        m.insert("train.joint_epochs", self.joint_epochs.to_string());
        m.insert("train.snr_lo", self.snr_lo.to_string());
        m.insert("train.snr_hi", self.snr_hi.to_string());
        m.insert("train.rho", self.rho.to_string());
        m.insert("train.eps", self.eps.to_string());
        m.insert("train.max_decode_len", self.max_decode_len.to_string());
        m.insert("train.dev_snr", self.dev_snr.to_string());
        m.insert(
            "train.stop_at_wer",
            self.stop_at_wer.map_or_else(|| "none".to_string(), |w| w.to_string()),
        );
        m.insert("channel.kind", self.channel.to_string());
        m.insert("channel.equalize", self.equalize.to_string());
        m.insert("eval.seed", self.eval_seed.to_string());
        m.insert("eval.snr_grid", list(&self.snr_grid));
        m.insert("eval.rate_per_frame", self.rate_per_frame.to_string());
        m.insert("eval.trials", self.eval_trials.to_string());
        m.insert("eval.split", self.eval_split.name().to_string());
        m.insert("out.dir", self.out_dir.display().to_string());
        let mut out: String = m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.push_str(&self.model.to_kv());
        out
    }

    pub fn corpus_file(&self) -> PathBuf {
        self.corpus_path.clone().unwrap_or_else(|| self.out_dir.join("corpus.bin"))
    }

    pub fn train_options(&self, epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: self.batch_size,
            max_decode_len: self.max_decode_len,
            rho: self.rho,
            eps: self.eps,
            seed: self.train_seed,
            snr_lo: self.snr_lo,
            snr_hi: self.snr_hi,
            channel: self.channel,
            equalize: self.equalize,
            dev_snr: self.dev_snr,
            stop_at_wer: self.stop_at_wer,
        }
    }

    /// `rate_per_frame = 0` resolves to `ceil(k / D)`.
    pub fn eval_options(&self) -> EvalOptions {
        let rate = if self.rate_per_frame == 0 {
            self.model.symbols_per_step.div_ceil(self.model.downsample()).max(1)
        } else {
            self.rate_per_frame
        };
        EvalOptions {
            snr_grid: self.snr_grid.clone(),
            channel: self.channel,
            equalize: self.equalize,
            seed: self.eval_seed,
            max_decode_len: self.max_decode_len,
            rate_per_frame: rate,
            trials: self.eval_trials,
            noiseless: false,
            split: self.eval_split,
        }
    }
}
