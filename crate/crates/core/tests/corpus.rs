use speechsem::corpus::{
    batch_pad, decode_corpus, encode_corpus, gen_corpus, load_corpus, save_corpus, CorpusConfig, Split, EOS, PAD,
    UNK, FIRST_CONTENT,
};
use speechsem::frontend::{FRAME_DIM, NUM_MEL};

fn small(n_train: usize, unk_rate: f64) -> CorpusConfig {
    CorpusConfig {
        n_train,
        n_dev: 5,
        n_test: 5,
        unk_rate,
        ..CorpusConfig::default()
    }
}

#[test]
fn token_marginal_is_uniform() {
    let cfg = small(5000, 0.0);
    let c = gen_corpus(&cfg, 3).unwrap();
    let mut counts = vec![0usize; cfg.vocab_size];
    for s in &c.sentences {
        for &t in &s.tokens {
            counts[t - FIRST_CONTENT] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expect = n as f64 / cfg.vocab_size as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
    // 63 degrees of freedom; 0.999 quantile is about 103.4
    assert!(chi2 < 103.4, "chi2 {chi2}");
}

#[test]
fn spans_partition_the_frames() {
    let c = gen_corpus(&small(40, 0.1), 8).unwrap();
    for s in &c.sentences {
        assert_eq!(s.spans.len(), s.tokens.len());
        let mut next = 0;
        for sp in &s.spans {
            assert_eq!(sp.start, next);
            assert!((c.config.min_frames_per_token..=c.config.max_frames_per_token).contains(&sp.len));
            next += sp.len;
        }
        assert_eq!(next, s.n_frames());
        assert_eq!(s.spectrum.len(), s.n_frames() * FRAME_DIM);
    }
}

#[test]
fn adjacent_tokens_differ_and_unk_is_never_doubled() {
    let c = gen_corpus(&small(300, 0.3), 5).unwrap();
    for s in &c.sentences {
        assert!(s.tokens.iter().all(|&t| t == UNK || t >= FIRST_CONTENT));
        for w in s.tokens.windows(2) {
            assert!(w[0] != w[1], "{:?}", s.tokens);
        }
    }
}

#[test]
fn no_unk_when_rate_is_zero() {
    let c = gen_corpus(&small(200, 0.0), 9).unwrap();
    assert!(c.sentences.iter().all(|s| !s.tokens.contains(&UNK)));
}

#[test]
fn splits_have_configured_sizes() {
    let c = gen_corpus(&small(30, 0.02), 1).unwrap();
    assert_eq!(c.split(Split::Train).len(), 30);
    assert_eq!(c.split(Split::Dev).len(), 5);
    assert_eq!(c.split(Split::Test).len(), 5);
    let ids: Vec<usize> = c.sentences.iter().map(|s| s.id).collect();
    assert_eq!(ids, (0..40).collect::<Vec<_>>());
}

#[test]
fn save_load_and_regenerate() {
    let c = gen_corpus(&small(12, 0.05), 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_corpus(&c, &path).unwrap();
    let back = load_corpus(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(gen_corpus(&back.config, back.seed).unwrap(), c);
    assert_eq!(decode_corpus(&encode_corpus(&c)).unwrap(), c);
}

#[test]
fn different_seeds_differ() {
    let a = gen_corpus(&small(5, 0.0), 1).unwrap();
    let b = gen_corpus(&small(5, 0.0), 2).unwrap();
    assert_ne!(a.sentences[0].spectrum, b.sentences[0].spectrum);
}

#[test]
fn frames_sit_near_their_token_prototype() {
    let cfg = CorpusConfig {
        jitter: 0.0,
        crossfade: 0,
        ..small(3, 0.0)
    };
    let c = gen_corpus(&cfg, 4).unwrap();
    for s in &c.sentences {
        for sp in &s.spans {
            let first = &s.spectrum[sp.start * FRAME_DIM..sp.start * FRAME_DIM + FRAME_DIM];
            for f in sp.start..sp.start + sp.len {
                let frame = &s.spectrum[f * FRAME_DIM..(f + 1) * FRAME_DIM];
                for k in 0..NUM_MEL {
                    // static channel only; deltas vary at span edges
                    assert_eq!(frame[k * 3], first[k * 3]);
                }
            }
        }
    }
}

#[test]
fn padded_batch_layout() {
    let c = gen_corpus(&small(4, 0.0), 6).unwrap();
    let items: Vec<_> = c.split(Split::Train);
    let max = items.iter().map(|s| s.tokens.len() + 1).max().unwrap();
    let b = batch_pad(&items, max).unwrap();
    for (i, s) in items.iter().enumerate() {
        let n = s.tokens.len();
        assert_eq!(&b.targets[i][..n], &s.tokens[..]);
        assert_eq!(b.targets[i][n], EOS);
        assert!(b.targets[i][n + 1..].iter().all(|&t| t == PAD));
        assert!(b.mask[i][..=n].iter().all(|&m| m == 1.0));
        assert!(b.mask[i][n + 1..].iter().all(|&m| m == 0.0));
    }
    assert!(batch_pad(&items, 1).is_err());
    assert!(batch_pad(&[], 4).is_err());
}
