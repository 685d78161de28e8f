use std::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Seeded 64-bit FNV-1a: the seed is folded into the offset basis, so seed 0
/// is the standard hash.
pub fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FnvHasher::with_key(FNV_OFFSET_BASIS ^ seed);
    h.write(bytes);
    h.finish()
}

/// Hashed bag-of-tokens vector: each token votes for bucket
/// `fnv1a(token) mod dim`, the votes are averaged, then L2-normalized.
/// Entries are rounded to `f32` precision so cached copies are bit-exact.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "mock embedding dim must be at least 1".into(),
        ));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::NoTokens);
    }
    let mut v = vec![0.0f64; dim];
    let w = 1.0 / tokens.len() as f64;
    for t in &tokens {
        v[(fnv1a(t.as_bytes(), seed) % dim as u64) as usize] += w;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(v.into_iter().map(|x| (x / norm) as f32 as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bucket(tok: &str, dim: usize) -> usize {
        (fnv1a(tok.as_bytes(), 0) % dim as u64) as usize
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a(b"", 0), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a", 0), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar", 0), 0x85944171f73967e8);
        assert_ne!(fnv1a(b"a", 1), fnv1a(b"a", 0));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(
            tokenize("Deep-Learning, 2nd ed."),
            vec!["deep", "learning", "2nd", "ed"]
        );
        assert!(tokenize(" ,;- ").is_empty());
    }

    #[test]
    fn single_token_is_one_hot() {
        let v = mock_embed("Bayes", 32, 0).unwrap();
        let b = bucket("bayes", 32);
        for (k, x) in v.iter().enumerate() {
            assert_eq!(*x, if k == b { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn two_tokens_average_then_normalize() {
        let v = mock_embed("deep learning", 64, 0).unwrap();
        let (a, b) = (bucket("deep", 64), bucket("learning", 64));
        let mut expected = vec![0.0f64; 64];
        expected[a] += 0.5;
        expected[b] += 0.5;
        let n = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (got, want) in v.iter().zip(&expected) {
            assert_eq!(*got, (want / n) as f32 as f64);
        }
    }

    #[test]
    fn weighted_tokens() {
        let dim = 256;
        let (a, b) = (bucket("a", dim), bucket("b", dim));
        assert_ne!(a, b);
        let v = mock_embed("a a b", dim, 0).unwrap();
        let n = ((2.0f64 / 3.0).powi(2) + (1.0f64 / 3.0).powi(2)).sqrt();
        assert_eq!(v[a], ((2.0 / 3.0) / n) as f32 as f64);
        assert_eq!(v[b], ((1.0 / 3.0) / n) as f32 as f64);
    }

    #[test]
    fn order_invariant_and_unit_norm() {
        let a = mock_embed("graph neural networks for ranking", 128, 5).unwrap();
        let b = mock_embed("ranking for networks neural graph", 128, 5).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(mock_embed("...", 8, 0), Err(Error::NoTokens)));
        assert!(mock_embed("x", 0, 0).is_err());
    }
}
