use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FrozenLmProvider;
use crate::autograd::{hex, Mat};

/// Deterministic stand-in for a pretrained model: whitespace tokens hashed
/// into a fixed vocabulary and a seeded Gaussian embedding table.
pub struct StubProvider {
    table: Mat,
    context_limit: usize,
    seed: u64,
    truncations: AtomicUsize,
}

pub const STUB_VOCAB: usize = 4096;
pub const STUB_WIDTH: usize = 64;
pub const STUB_CONTEXT: usize = 1024;
const STUB_SEED: u64 = 0x5eed_1a7e;

impl Default for StubProvider {
    fn default() -> Self {
        Self::new(STUB_VOCAB, STUB_WIDTH, STUB_SEED, STUB_CONTEXT)
    }
}

impl StubProvider {
    pub fn new(vocab: usize, width: usize, seed: u64, context_limit: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let table = Array2::from_shape_fn((vocab, width), |_| dist.sample(&mut rng));
        Self {
            table,
            context_limit,
            seed,
            truncations: AtomicUsize::new(0),
        }
    }

    /// FNV-1a of the token bytes, reduced to the vocabulary.
    pub fn token_id(&self, token: &str) -> u32 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.table.nrows() as u64) as u32
    }
}

impl FrozenLmProvider for StubProvider {
    fn describe(&self) -> String {
        format!(
            "stub(vocab={}, width={}, seed={})",
            self.table.nrows(),
            self.table.ncols(),
            self.seed
        )
    }

    fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    fn embed_width(&self) -> usize {
        self.table.ncols()
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }

    fn word_embeddings(&self) -> &Mat {
        &self.table
    }

    fn encode_text(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.token_id(t)).collect()
    }

    fn hidden_states(&self, ids: &[u32]) -> Mat {
        Array2::from_shape_fn((ids.len(), self.table.ncols()), |(r, c)| {
            self.table[[ids[r] as usize, c]]
        })
    }

    fn record_truncation(&self) {
        self.truncations.fetch_add(1, Ordering::Relaxed);
    }

    fn truncation_warnings(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for x in self.table.iter() {
            h.update(x.to_le_bytes());
        }
        hex(&h.finalize())
    }
}
