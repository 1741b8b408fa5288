//! Frozen query encoder.
//!
//! Maps a token sequence to a unit-norm query vector: mean-pool a seeded
//! random embedding table, project, apply `tanh`, L2-normalise. Parameters are
//! generated once from the seed and never touched again.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::numerics::{fingerprint, norm, Matrix, SeededRng};
use crate::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenEncoder {
    vocab_size: usize,
    query_dim: usize,
    seed: u64,
    embedding: Matrix,
    projection: Matrix,
}

impl FrozenEncoder {
    pub fn new(vocab_size: usize, query_dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(SlmError::config("encoder.vocab", "must be positive"));
        }
        if query_dim == 0 {
            return Err(SlmError::config("encoder.c", "must be positive"));
        }
        let root = SeededRng::new(seed, "encoder");
        let mut rng = root.substream("embedding");
        let embedding = Matrix::from_fn(vocab_size, query_dim, |_, _| rng.normal());
        let mut rng = root.substream("projection");
        let scale = 1.0 / (query_dim as f64).sqrt();
        let projection = Matrix::from_fn(query_dim, query_dim, |_, _| scale * rng.normal());
        Ok(Self {
            vocab_size,
            query_dim,
            seed,
            embedding,
            projection,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encode(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(SlmError::Input("cannot encode an empty token sequence".into()));
        }
        let mut pooled = vec![0.0; self.query_dim];
        for &t in tokens {
            let t = t as usize;
            if t >= self.vocab_size {
                return Err(SlmError::Index {
                    what: "token",
                    index: t,
                    len: self.vocab_size,
                });
            }
            for (p, e) in pooled.iter_mut().zip(self.embedding.row(t)) {
                *p += e;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        let mut q: Vec<f64> = self
            .projection
            .matvec(&pooled)?
            .into_iter()
            .map(f64::tanh)
            .collect();
        let n = norm(&q);
        if n < crate::numerics::DEGENERATE_NORM {
            return Err(SlmError::Evaluation("query vector collapsed to zero".into()));
        }
        q.iter_mut().for_each(|x| *x /= n);
        Ok(q)
    }

    /// Fingerprint of all parameters.
    pub fn digest(&self) -> String {
        fingerprint([self.embedding.data(), self.projection.data()])
    }
}
