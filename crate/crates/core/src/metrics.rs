//! Word error rate and a hashed bag-of-words sentence similarity.

use thiserror::Error;

use crate::rng::derive_seed;

/// Embedding width of [`SentenceEmbedding`].
pub const EMBED_DIM: usize = 256;
const HASH_SEED: u64 = 0x5345_4e54;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("WER is undefined for an empty reference")]
    EmptyReference,
}

/// Minimal edit decomposition of `hyp` against `ref`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length `N`.
    pub reference_len: usize,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; may exceed 1.
    pub fn wer(&self) -> f64 {
        self.edits() as f64 / self.reference_len as f64
    }
}

/// Unit-cost Levenshtein table, `(r + 1) × (h + 1)` row-major.
fn edit_table<T: PartialEq>(r: &[T], h: &[T]) -> Vec<usize> {
    let w = h.len() + 1;
    let mut d = vec![0; (r.len() + 1) * w];
    for j in 0..w {
        d[j] = j;
    }
    for i in 1..=r.len() {
        d[i * w] = i;
        for j in 1..w {
            let sub = d[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    d
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    edit_table(a, b)[(a.len() + 1) * (b.len() + 1) - 1]
}

/// Backtraces one minimal script, taking the diagonal whenever it is optimal.
pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<WerBreakdown, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let d = edit_table(reference, hyp);
    let w = hyp.len() + 1;
    let (mut i, mut j) = (reference.len(), hyp.len());
    let mut out = WerBreakdown {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_len: reference.len(),
    };
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                out.substitutions += usize::from(!same);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    Ok(out)
}

/// Bucket of a token in the hashed embedding.
pub fn bucket(token: usize) -> usize {
    (derive_seed(HASH_SEED, token as u64) % EMBED_DIM as u64) as usize
}

/// Count-weighted hashed bag of words, ℓ₂-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
}

impl SentenceEmbedding {
    pub fn new(tokens: &[usize]) -> Self {
        let mut v = vec![0.0; EMBED_DIM];
        for &t in tokens {
            v[bucket(t)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Self { vector: v }
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

/// Cosine of the embeddings clamped to `[0, 1]`; both empty → 1, one empty → 0.
pub fn similarity(reference: &[usize], hyp: &[usize]) -> f64 {
    match (reference.is_empty(), hyp.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let a = SentenceEmbedding::new(reference);
    let b = SentenceEmbedding::new(hyp);
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    dot.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let b = wer(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(b.edits(), 0);
        assert_eq!(b.wer(), 0.0);
    }

    #[test]
    fn substitution_and_insertion() {
        let b = wer(&['a', 'b', 'c'], &['a', 'x', 'c', 'd']).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (1, 0, 1));
        assert!((b.wer() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_deletions() {
        let b = wer::<u8>(&[1, 2, 3], &[]).unwrap();
        assert_eq!(b.deletions, 3);
        assert_eq!(b.wer(), 1.0);
        assert_eq!(wer::<u8>(&[], &[1]), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn similarity_edges() {
        assert_eq!(similarity(&[], &[]), 1.0);
        assert_eq!(similarity(&[3], &[]), 0.0);
        assert!((similarity(&[3, 4, 5], &[3, 4, 5]) - 1.0).abs() < 1e-12);
    }
}
