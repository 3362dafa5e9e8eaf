//! Exact save/restore of a ChaCha8 generator position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub const WORDS: usize = 7;

    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    /// Seed as four little-endian words, then stream, then the position as
    /// low and high words.
    pub fn to_words(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(self.stream);
        out.push(self.word_pos as u64);
        out.push((self.word_pos >> 64) as u64);
        out
    }

    pub fn from_words(words: &[u64]) -> Result<Self> {
        if words.len() != Self::WORDS {
            return Err(TrainError::Manifest(format!(
                "generator state has {} words, expected {}",
                words.len(),
                Self::WORDS
            )));
        }
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Ok(RngState {
            seed,
            stream: words[4],
            word_pos: words[5] as u128 | (words[6] as u128) << 64,
        })
    }
}
