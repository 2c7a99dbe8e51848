use std::fs;

use speechsem::autodiff::{ParamStore, Tape};
use speechsem::channel::ChannelKind;
use speechsem::corpus::{batch_pad, gen_corpus, Corpus, CorpusConfig, Split};
use speechsem::model::{decode_sequence, encode, param_group, DecodeMode, Model, ModelConfig, ParamGroup};
use speechsem::pipeline::{
    baseline_symbol_count, decode_without_channel, evaluate, snr_draws, summarize, train_joint, train_stage1,
    train_stage2, write_reports, EvalOptions, NoTrace, PipelineError, RunConfig, Stage, TrainOptions, EVAL_HEADER,
    PRUNE_HEADER, SUMMARY_HEADER,
};

fn corpus() -> Corpus {
    let cfg = CorpusConfig {
        n_train: 10,
        n_dev: 3,
        n_test: 3,
        ..CorpusConfig::default()
    };
    gen_corpus(&cfg, 42).unwrap()
}

fn one_epoch() -> TrainOptions {
    TrainOptions {
        epochs: 1,
        max_decode_len: 6,
        ..TrainOptions::default()
    }
}

fn group_bits(p: &ParamStore, group: ParamGroup) -> Vec<Vec<u64>> {
    p.iter()
        .filter(|(n, _)| param_group(n) == group)
        .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn eval_opts(grid: Vec<f64>) -> EvalOptions {
    EvalOptions {
        snr_grid: grid,
        channel: ChannelKind::Awgn,
        equalize: true,
        seed: 5,
        max_decode_len: 6,
        rate_per_frame: 4,
        trials: 1,
        noiseless: false,
        split: Split::Test,
    }
}

/// Output projection pinned to `token`, so every decode has content steps.
fn chatty(token: usize) -> Model {
    let mut m = Model::init(ModelConfig::default(), 4).unwrap();
    m.params.get_mut("out.w").unwrap().data_mut().fill(0.0);
    let b = m.params.get_mut("out.b").unwrap().data_mut();
    b.fill(0.0);
    b[token] = 5.0;
    m
}

#[test]
fn uniform_logits_cost_log_vocab() {
    let c = corpus();
    let mut m = Model::init(ModelConfig::default(), 7).unwrap();
    m.params.get_mut("out.w").unwrap().data_mut().fill(0.0);
    m.params.get_mut("out.b").unwrap().data_mut().fill(0.0);
    let items = c.split(Split::Train);
    let batch = batch_pad(&items[..4], 10).unwrap();
    let mut tape = Tape::new();
    let bound = m.params.bind(&mut tape, |_| false).unwrap();
    let enc = encode(&mut tape, &bound, &m.config, &batch.spectrum).unwrap();
    let trace = decode_sequence(&mut tape, &bound, &m.config, &enc, DecodeMode::TeacherForced(&batch.targets)).unwrap();
    let logits: Vec<_> = trace.steps.iter().map(|s| s.logits).collect();
    let logits = tape.concat(&logits, 0).unwrap();
    let (mut t, mut w) = (Vec::new(), Vec::new());
    for s in 0..10 {
        for b in 0..4 {
            t.push(batch.targets[b][s]);
            w.push(batch.mask[b][s]);
        }
    }
    let loss = tape.cross_entropy(logits, &t, &w).unwrap();
    assert!((tape.value(loss).data()[0] - 67f64.ln()).abs() < 1e-12);
}

#[test]
fn stage1_touches_only_the_semantic_encoder() {
    let c = corpus();
    let mut m = Model::init(ModelConfig::default(), 7).unwrap();
    let before = m.params.clone();
    let out = train_stage1(&mut m, &c, &one_epoch(), |_, _| {}).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.log[0].loss.is_finite());
    assert!(out.log[0].dev_wer >= 0.0 && out.log[0].dev_wer.is_finite());
    assert_ne!(
        group_bits(&m.params, ParamGroup::SemanticEncoder),
        group_bits(&before, ParamGroup::SemanticEncoder)
    );
    for g in [ParamGroup::ChannelEncoder, ParamGroup::ChannelDecoder, ParamGroup::SemanticDecoder] {
        assert_eq!(group_bits(&m.params, g), group_bits(&before, g));
    }
}

#[test]
fn stage2_keeps_the_encoder_frozen() {
    let c = corpus();
    let mut m = chatty(9);
    let before = group_bits(&m.params, ParamGroup::SemanticEncoder);
    let opts = TrainOptions {
        epochs: 2,
        ..one_epoch()
    };
    let out = train_stage2(&mut m, &c, &opts, |_, _| {}).unwrap();
    assert_eq!(group_bits(&m.params, ParamGroup::SemanticEncoder), before);
    assert_eq!(out.log.len(), 2);
    assert!(!out.snr_draws.is_empty());
    assert!(out.snr_draws.iter().all(|s| (0.0..=18.0).contains(s)));
}

#[test]
fn snr_draws_are_uniform() {
    let mut d = snr_draws(3, 1, 1000, 0.0, 18.0);
    d.sort_by(f64::total_cmp);
    let n = d.len() as f64;
    let ks = d
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let cdf = v / 18.0;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS {ks}");
    assert_ne!(snr_draws(3, 1, 10, 0.0, 18.0), snr_draws(3, 2, 10, 0.0, 18.0));
}

#[test]
fn joint_epoch_runs() {
    let c = corpus();
    let mut m = Model::init(ModelConfig::default(), 7).unwrap();
    let before = m.params.clone();
    let out = train_joint(&mut m, &c, &one_epoch(), |_, _| {}).unwrap();
    assert!(out.log[0].loss.is_finite());
    for g in [ParamGroup::SemanticEncoder, ParamGroup::ChannelEncoder, ParamGroup::SemanticDecoder] {
        assert_ne!(group_bits(&m.params, g), group_bits(&before, g));
    }
}

#[test]
fn empty_training_split_is_rejected() {
    let mut c = corpus();
    c.sentences.retain(|s| s.split != Split::Train);
    let mut m = Model::init(ModelConfig::default(), 7).unwrap();
    assert!(matches!(
        train_stage1(&mut m, &c, &one_epoch(), |_, _| {}),
        Err(PipelineError::EmptySplit("train"))
    ));
}

#[test]
fn noiseless_evaluation_equals_channel_free_decode() {
    let c = corpus();
    let m = chatty(11);
    let opts = EvalOptions {
        noiseless: true,
        ..eval_opts(vec![0.0])
    };
    let rows = evaluate(&m, &c, &opts, &mut NoTrace).unwrap();
    for (row, s) in rows.iter().zip(c.split(Split::Test)) {
        assert_eq!(row.hypothesis, decode_without_channel(&m, s, 6).unwrap());
    }
}

#[test]
fn modules_run_in_order() {
    let c = corpus();
    let m = chatty(11);
    let mut trace: Vec<Stage> = Vec::new();
    let rows = evaluate(&m, &c, &eval_opts(vec![3.0, 9.0]), &mut trace).unwrap();
    assert!(rows.iter().all(|r| r.symbols > 0));
    let per = [
        Stage::Spectrum,
        Stage::SemanticEncoder,
        Stage::ChannelEncoder,
        Stage::Channel,
        Stage::ChannelDecoder,
        Stage::SemanticDecoder,
        Stage::Metrics,
    ];
    assert_eq!(trace.len(), per.len() * rows.len());
    for chunk in trace.chunks(per.len()) {
        assert_eq!(chunk, per);
    }
}

#[test]
fn evaluation_is_reproducible_and_reports_are_exact() {
    let c = corpus();
    let m = chatty(11);
    let opts = eval_opts(vec![0.0, 12.0]);
    let a = evaluate(&m, &c, &opts, &mut NoTrace).unwrap();
    let b = evaluate(&m, &c, &opts, &mut NoTrace).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);

    let dir = tempfile::tempdir().unwrap();
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    write_reports(&da, &a).unwrap();
    write_reports(&db, &b).unwrap();
    for f in ["eval.csv", "summary.csv", "prune.csv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let eval = fs::read_to_string(da.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().next().unwrap(), EVAL_HEADER);
    assert_eq!(eval.lines().count(), 7);
    let summary = fs::read_to_string(da.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
    let prune = fs::read_to_string(da.join("prune.csv")).unwrap();
    assert_eq!(prune.lines().next().unwrap(), PRUNE_HEADER);

    let s = summarize(&a);
    assert_eq!(s.len(), 2);
    let at0: Vec<_> = a.iter().filter(|r| r.snr_db == 0.0).collect();
    let mean = at0.iter().map(|r| r.wer).sum::<f64>() / at0.len() as f64;
    assert!((s[0].mean_wer - mean).abs() < 1e-15);
    let sim = at0.iter().map(|r| r.similarity).sum::<f64>() / at0.len() as f64;
    assert!((s[0].mean_similarity - sim).abs() < 1e-15);

    let other = evaluate(&m, &c, &EvalOptions { seed: 6, ..opts }, &mut NoTrace).unwrap();
    assert_ne!(other[0].seed, a[0].seed);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(write_reports(&blocker.join("sub"), &a).is_err());
    assert!(write_reports(&da, &[]).is_err());
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let c = corpus();
    let m = Model::init(
        ModelConfig {
            vocab_size: 20,
            ..ModelConfig::default()
        },
        1,
    )
    .unwrap();
    assert!(matches!(
        evaluate(&m, &c, &eval_opts(vec![0.0]), &mut NoTrace),
        Err(PipelineError::VocabMismatch { model: 20, corpus: 67 })
    ));
}

#[test]
fn symbol_counts() {
    assert_eq!(baseline_symbol_count(100, 20), 2000);
    let m = chatty(11);
    let c = corpus();
    let rows = evaluate(&m, &c, &eval_opts(vec![6.0]), &mut NoTrace).unwrap();
    for r in &rows {
        assert_eq!(r.symbols, r.prune.kept_len * 16);
        let s = &c.sentences[r.sentence_id];
        assert_eq!(r.baseline_symbols, s.n_frames() * 4);
    }
}

#[test]
fn config_round_trip_and_validation() {
    let mut cfg = RunConfig::default();
    cfg.set("train.batch_size", "4").unwrap();
    cfg.set("eval.snr_grid", "0, 6,12").unwrap();
    cfg.set("channel.kind", "rayleigh").unwrap();
    cfg.set("model.state_dim", "32").unwrap();
    let back = RunConfig::parse(&cfg.to_kv()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.snr_grid, vec![0.0, 6.0, 12.0]);
    assert!(cfg.set("train.nonsense", "1").is_err());
    assert!(cfg.set("train.batch_size", "four").is_err());
    assert!(RunConfig::parse("corpus.vocab_size=10\n").is_err());
    let opts = RunConfig::default().eval_options();
    assert_eq!(opts.rate_per_frame, 4);
}

#[test]
fn trials_repeat_each_point_with_fresh_channels() {
    let c = corpus();
    let m = chatty(11);
    let one = evaluate(&m, &c, &eval_opts(vec![3.0]), &mut NoTrace).unwrap();
    let opts = EvalOptions {
        trials: 3,
        ..eval_opts(vec![3.0])
    };
    let three = evaluate(&m, &c, &opts, &mut NoTrace).unwrap();
    assert_eq!(three.len(), 3 * one.len());
    for (r, chunk) in one.iter().zip(three.chunks(3)) {
        assert!(chunk.iter().all(|t| t.sentence_id == r.sentence_id && t.prune == r.prune));
        assert_eq!(chunk.iter().map(|t| t.trial).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(chunk[0].seed != chunk[1].seed && chunk[1].seed != chunk[2].seed);
    }
    let dir = tempfile::tempdir().unwrap();
    write_reports(&dir.path().join("a"), &one).unwrap();
    write_reports(&dir.path().join("b"), &three).unwrap();
    let prune = |d: &str| fs::read(dir.path().join(d).join("prune.csv")).unwrap();
    assert_eq!(prune("a"), prune("b"));
    assert!(evaluate(&m, &c, &EvalOptions { trials: 0, ..opts }, &mut NoTrace).is_err());
}
