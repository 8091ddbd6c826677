//! Byte-level corpus ingestion and batching.
//!
//! The token stream is the file's bytes (ids 0..=255) with a single EOS
//! token (id 256) terminating it, chunked into non-overlapping context
//! windows. A run visits the windows in a seed-determined permutation,
//! each at most once ("non-repeating" single-epoch order); asking for more
//! tokens than the corpus holds is an upfront error.

use crate::linalg::Rng;
use crate::model::TokenBatch;

use super::HarnessError;

pub const EOS_TOKEN: u32 = 256;

#[derive(Debug, Clone)]
pub struct Corpus {
    tokens: Vec<u32>,
}

/// Reads a corpus file as raw bytes.
pub fn ingest_corpus(path: &std::path::Path) -> Result<Corpus, HarnessError> {
    let bytes =
        std::fs::read(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Err(HarnessError::EmptyInput(format!(
            "corpus {} is empty",
            path.display()
        )));
    }
    Ok(Corpus::from_bytes(&bytes))
}

impl Corpus {
    pub fn from_bytes(bytes: &[u8]) -> Corpus {
        let mut tokens: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        tokens.push(EOS_TOKEN);
        Corpus { tokens }
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_windows(&self, context: usize) -> usize {
        self.tokens.len() / context
    }

    /// Seed-determined single-epoch window order.
    pub fn window_order(&self, context: usize, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_windows(context)).collect();
        let mut rng = Rng::new(seed).derive(0x77696e64);
        rng.shuffle(&mut order);
        order
    }

    /// Verifies the corpus can cover `horizon_tokens` of training.
    pub fn check_horizon(&self, context: usize, horizon_tokens: u64) -> Result<(), HarnessError> {
        let available = (self.n_windows(context) * context) as u64;
        if horizon_tokens > available {
            return Err(HarnessError::CorpusExhausted {
                required: horizon_tokens,
                available,
            });
        }
        Ok(())
    }

    /// Windows `order[cursor .. cursor + batch]` as one token batch.
    pub fn take_batch(
        &self,
        order: &[usize],
        cursor: usize,
        batch: usize,
        context: usize,
    ) -> Result<TokenBatch, HarnessError> {
        if cursor + batch > order.len() {
            return Err(HarnessError::CorpusExhausted {
                required: ((cursor + batch) * context) as u64,
                available: (order.len() * context) as u64,
            });
        }
        let mut tokens = Vec::with_capacity(batch * context);
        for &w in &order[cursor..cursor + batch] {
            tokens.extend_from_slice(&self.tokens[w * context..(w + 1) * context]);
        }
        TokenBatch::new(tokens, batch, context)
            .map_err(|e| HarnessError::Io(format!("batch assembly: {e}")))
    }
}

/// Deterministic synthetic corpus with learnable byte-level structure: an
/// order-1 Markov chain over a small alphabet whose transition table is
/// itself drawn from the seed. Gives desk models something better than
/// noise to fit, so learning-rate effects show up in the loss.
pub fn synthetic_corpus(n_bytes: usize, seed: u64) -> Vec<u8> {
    let alphabet: Vec<u8> = (b'a'..=b'z').chain(*b" .,\n").collect();
    let k = alphabet.len();
    let mut rng = Rng::new(seed).derive(0x636f7270);

    // Sparse peaked transitions: each state strongly prefers 3 successors.
    let mut table = vec![0usize; k * 4];
    for row in table.chunks_exact_mut(4) {
        for slot in row.iter_mut() {
            *slot = rng.below(k as u64) as usize;
        }
    }
    let mut out = Vec::with_capacity(n_bytes);
    let mut state = rng.below(k as u64) as usize;
    for _ in 0..n_bytes {
        out.push(alphabet[state]);
        let r = rng.uniform();
        state = if r < 0.45 {
            table[state * 4]
        } else if r < 0.75 {
            table[state * 4 + 1]
        } else if r < 0.9 {
            table[state * 4 + 2]
        } else {
            rng.below(k as u64) as usize
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_kib_file_gives_eight_full_windows() {
        let corpus = Corpus::from_bytes(&vec![7u8; 1024]);
        // 1024 bytes + EOS = 1025 tokens; floor(1025 / 128) = 8.
        assert_eq!(corpus.n_windows(128), 8);
    }

    #[test]
    fn window_order_is_seed_deterministic() {
        let corpus = Corpus::from_bytes(&synthetic_corpus(4096, 1));
        let a = corpus.window_order(128, 30);
        let b = corpus.window_order(128, 30);
        let c = corpus.window_order(128, 31);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // permutation property
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..corpus.n_windows(128)).collect::<Vec<_>>());
    }

    #[test]
    fn horizon_exhaustion_is_an_upfront_error() {
        let corpus = Corpus::from_bytes(&vec![0u8; 1024]);
        assert!(corpus.check_horizon(128, 1024).is_ok());
        let err = corpus.check_horizon(128, 2048).unwrap_err();
        match err {
            HarnessError::CorpusExhausted {
                required,
                available,
            } => {
                assert_eq!(required, 2048);
                assert_eq!(available, 1024);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn batches_are_in_window_order_and_exhaust() {
        let bytes: Vec<u8> = (0..=255).cycle().take(512).collect();
        let corpus = Corpus::from_bytes(&bytes);
        let order = corpus.window_order(64, 5);
        let b0 = corpus.take_batch(&order, 0, 2, 64).unwrap();
        assert_eq!(b0.batch, 2);
        assert_eq!(b0.tokens[0], bytes[order[0] * 64] as u32);
        assert!(corpus.take_batch(&order, 7, 2, 64).is_err());
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_printable() {
        let a = synthetic_corpus(1000, 30);
        let b = synthetic_corpus(1000, 30);
        assert_eq!(a, b);
        assert!(a.iter().all(|&c| c.is_ascii()));
    }
}
