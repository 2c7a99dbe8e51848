use proptest::prelude::*;
use speechsem::corpus::{EOS, PAD, UNK};
use speechsem::metrics::{bucket, edit_distance, similarity, wer, MetricsError, SentenceEmbedding};
use speechsem::model::AlignedLatents;
use speechsem::prune::{plan, prune, prune_transcript, savings_stats, PruneError, PruneReport};

fn token() -> impl Strategy<Value = usize> {
    prop_oneof![Just(PAD), Just(UNK), Just(EOS), 3usize..12]
}

fn one_hot_logits(tokens: &[usize]) -> AlignedLatents {
    let mut a = AlignedLatents::empty();
    for (i, &t) in tokens.iter().enumerate() {
        let mut l = vec![0.0; 12];
        l[t] = 1.0;
        a.logits.push(l);
        a.states.push(vec![i as f64, -(i as f64)]);
        a.attention.push(vec![1.0]);
        a.contexts.push(vec![0.0]);
    }
    a
}

#[test]
fn wer_examples() {
    let b = wer(&[1, 2, 3], &[1, 9, 3, 4]).unwrap();
    assert_eq!((b.substitutions, b.insertions, b.deletions), (1, 1, 0));
    assert!((b.wer() - 2.0 / 3.0).abs() < 1e-15);
    let b = wer(&[1, 2, 3], &[]).unwrap();
    assert_eq!((b.deletions, b.wer()), (3, 1.0));
    let b = wer(&[4, 5], &[4, 5]).unwrap();
    assert_eq!(b.edits(), 0);
    assert_eq!(wer::<usize>(&[], &[1]), Err(MetricsError::EmptyReference));
}

#[test]
fn similarity_examples() {
    let (a, b, c) = (3usize, 4, 5);
    assert!(bucket(a) != bucket(b) && bucket(b) != bucket(c) && bucket(a) != bucket(c));
    assert!((similarity(&[a, b], &[a, c]) - 0.5).abs() < 1e-12);
    assert!((similarity(&[a, b], &[a, b]) - 1.0).abs() < 1e-12);
    assert_eq!(similarity(&[a], &[b]), 0.0);
    assert_eq!(similarity(&[], &[]), 1.0);
    assert_eq!(similarity(&[a], &[]), 0.0);
    assert!(SentenceEmbedding::new(&[]).is_zero());
}

#[test]
fn pruning_examples() {
    assert!(prune_transcript(&[EOS]).is_empty());
    assert_eq!(prune_transcript(&[7, UNK, 8, EOS, 9]), vec![7, 8]);
    let (_, r) = plan(&[PAD; 5]);
    assert_eq!((r.kept_len, r.saved_fraction()), (0, 1.0));
    let (kept, r) = plan(&[]);
    assert!(kept.is_empty());
    assert_eq!(r, PruneReport::default());
}

#[test]
fn savings_examples() {
    let one = PruneReport {
        raw_len: 34,
        kept_len: 5,
        cut_by_eos: 27,
        cut_by_specials: 2,
    };
    let s = savings_stats(&[one]).unwrap();
    assert!((s.eos_share - 0.794).abs() < 1e-3);
    assert!((s.special_share - 0.059).abs() < 1e-3);
    assert!((s.combined - 0.853).abs() < 1e-3);

    let none = PruneReport {
        raw_len: 4,
        kept_len: 4,
        ..PruneReport::default()
    };
    let z = savings_stats(&[none, none]).unwrap();
    assert_eq!((z.eos_share, z.special_share, z.combined), (0.0, 0.0, 0.0));

    let other = PruneReport {
        raw_len: 34,
        kept_len: 30,
        cut_by_eos: 4,
        cut_by_specials: 0,
    };
    let m = savings_stats(&[one, other]).unwrap();
    assert!((m.eos_share - (27.0 / 34.0 + 4.0 / 34.0) / 2.0).abs() < 1e-12);
    assert_eq!(savings_stats(&[]), Err(PruneError::Empty));
}

#[test]
fn latents_follow_the_kept_steps() {
    let a = one_hot_logits(&[UNK, 5, 6, UNK, 7, EOS, 8]);
    let (l, r) = prune(&a).unwrap();
    assert_eq!(l.kept_steps, vec![1, 2, 4]);
    assert_eq!((r.raw_len, r.kept_len, r.cut_by_eos, r.cut_by_specials), (7, 3, 2, 2));
    assert_eq!(l.row(2), &[4.0, -4.0]);
}

proptest! {
    #[test]
    fn every_step_is_counted_once(tokens in proptest::collection::vec(token(), 0..40)) {
        let (kept, r) = plan(&tokens);
        prop_assert_eq!(r.kept_len + r.cut_by_eos + r.cut_by_specials, r.raw_len);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|&i| i < tokens.len()));
    }

    #[test]
    fn transcript_pruning_is_idempotent(tokens in proptest::collection::vec(token(), 0..40)) {
        let once = prune_transcript(&tokens);
        prop_assert_eq!(prune_transcript(&once), once.clone());
        prop_assert!(once.iter().all(|&t| t != EOS && t != UNK && t != PAD));
    }

    #[test]
    fn latent_and_transcript_rules_agree(tokens in proptest::collection::vec(token(), 0..30)) {
        let (l, _) = prune(&one_hot_logits(&tokens)).unwrap();
        let via_steps: Vec<usize> = l.kept_steps.iter().map(|&i| tokens[i]).collect();
        prop_assert_eq!(via_steps, prune_transcript(&tokens));
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in proptest::collection::vec(0u8..4, 0..8),
        b in proptest::collection::vec(0u8..4, 0..8),
        c in proptest::collection::vec(0u8..4, 0..8),
    ) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert_eq!(edit_distance(&a, &a), 0);
        if !a.is_empty() {
            let w = wer(&a, &b).unwrap();
            prop_assert_eq!(w.edits(), edit_distance(&a, &b));
            prop_assert_eq!(w.reference_len, a.len());
        }
    }

    #[test]
    fn wer_is_zero_against_own_pruned_transcript(tokens in proptest::collection::vec(token(), 1..30)) {
        let clean = prune_transcript(&tokens);
        if !clean.is_empty() {
            prop_assert_eq!(wer(&clean, &prune_transcript(&tokens)).unwrap().wer(), 0.0);
        }
    }

    #[test]
    fn similarity_is_bounded_and_order_free(
        a in proptest::collection::vec(3usize..200, 0..10),
        b in proptest::collection::vec(3usize..200, 0..10),
    ) {
        let s = similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - similarity(&b, &a)).abs() < 1e-12);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert!((similarity(&rev, &b) - s).abs() < 1e-12);
    }
}
