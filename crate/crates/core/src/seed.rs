//! Labeled random substreams derived from one master seed.
//!
//! Every consumer of randomness asks for its own stream by `(label, index)`,
//! so adding a new consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const EVENT_TIMES: &str = "event-times";
pub const EVENT_KINDS: &str = "event-kinds";
pub const PERMUTATIONS: &str = "permutation-draws";
pub const DEPARTURES: &str = "departure-positions";
pub const DIFFUSION_NOISE: &str = "diffusion-noise";
pub const REPLICATION: &str = "replication";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// 32 bytes of key material for `(label, index)`.
    pub fn material(&self, label: &str, index: u64) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn rng(&self, label: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.material(label, index))
    }

    /// A fresh tree, e.g. one per replication.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        let m = self.material(label, index);
        let mut word = [0u8; 8];
        word.copy_from_slice(&m[..8]);
        SeedTree::new(u64::from_le_bytes(word))
    }

    /// Seed of replication `rep`.
    pub fn replication(&self, rep: u64) -> u64 {
        self.child(REPLICATION, rep).master
    }
}
