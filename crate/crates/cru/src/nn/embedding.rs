//! Embedding bag with a projection head: feature indices are looked up,
//! mean-pooled and projected to the output space. Row 0 is the learned
//! representation for "no features".

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{ForwardCache, Mlp, Mode, NnError};
use super::tensor::Tensor2;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEncoder {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// vocab_size x embed_dim.
    pub embedding: Tensor2,
    pub projection: Mlp,
}

pub struct EncoderCache {
    indices: Vec<usize>,
    proj: ForwardCache,
}

impl EmbeddingEncoder {
    pub fn init(vocab_size: usize, embed_dim: usize, projection: Mlp, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xE0BED));
        let bound = (6.0 / (vocab_size + embed_dim) as f64).sqrt();
        let values = (0..vocab_size * embed_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        EmbeddingEncoder {
            vocab_size,
            embed_dim,
            embedding: Tensor2::from_vec(vocab_size, embed_dim, values).expect("embedding shape"),
            projection,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.projection.out_dim()
    }

    /// Mean-pool the rows of the given indices and project. Empty index
    /// lists fall back to the reserved unknown row 0.
    pub fn forward(&self, indices: &[usize]) -> Result<(Vec<f64>, EncoderCache), NnError> {
        let indices: Vec<usize> = if indices.is_empty() { vec![0] } else { indices.to_vec() };
        let mut bag = vec![0.0; self.embed_dim];
        for &i in &indices {
            debug_assert!(i < self.vocab_size);
            for (b, &e) in bag.iter_mut().zip(self.embedding.row(i)) {
                *b += e;
            }
        }
        let inv = 1.0 / indices.len() as f64;
        for b in &mut bag {
            *b *= inv;
        }
        let batch = Tensor2::from_vec(1, self.embed_dim, bag).expect("bag shape");
        let (out, proj) = self.projection.forward(&batch, Mode::Eval)?;
        Ok((out.row(0).to_vec(), EncoderCache { indices, proj }))
    }

    pub fn param_count(&self) -> usize {
        self.vocab_size * self.embed_dim + self.projection.param_count()
    }

    /// Layout: embedding matrix first, then projection parameters.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.embedding.values());
        out.extend(self.projection.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let split = self.vocab_size * self.embed_dim;
        self.embedding.values_mut().copy_from_slice(&flat[..split]);
        self.projection.set_params_flat(&flat[split..]);
    }

    /// Backpropagate `d_out` and add the parameter gradients into `grad_buf`
    /// (same layout as [`EmbeddingEncoder::params_flat`]).
    pub fn accumulate_grads(
        &self,
        cache: &EncoderCache,
        d_out: &[f64],
        grad_buf: &mut [f64],
    ) -> Result<(), NnError> {
        let upstream = Tensor2::from_vec(1, d_out.len(), d_out.to_vec())
            .map_err(|e| NnError::Shape(e.to_string()))?;
        let (proj_grads, d_bag) = self.projection.backward(&cache.proj, &upstream)?;
        let split = self.vocab_size * self.embed_dim;
        let inv = 1.0 / cache.indices.len() as f64;
        for &i in &cache.indices {
            let base = i * self.embed_dim;
            for (j, &g) in d_bag.row(0).iter().enumerate() {
                grad_buf[base + j] += g * inv;
            }
        }
        for (slot, g) in grad_buf[split..].iter_mut().zip(proj_grads.flat()) {
            *slot += g;
        }
        Ok(())
    }
}
