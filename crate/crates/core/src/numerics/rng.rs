use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Seeded random stream with labeled children.
///
/// A child's seed depends only on the parent seed and the label, never on how
/// many values the parent has already drawn, so noise injection, weight init
/// and batch order can each be reproduced in isolation.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: &str) -> RngStream {
        RngStream::new(derive_seed(self.seed, label.as_bytes()))
    }

    pub fn child_index(&self, index: u64) -> RngStream {
        let mut tag = *b"#idx\0\0\0\0\0\0\0\0";
        tag[4..].copy_from_slice(&index.to_le_bytes());
        RngStream::new(derive_seed(self.seed, &tag))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample::<f64, _>(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

fn derive_seed(parent: u64, label: &[u8]) -> u64 {
    let digest = Sha256::new()
        .chain_update(parent.to_le_bytes())
        .chain_update(label)
        .finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
