//! Frozen single-block attention classifier.
//!
//! `tokens → embedding → single-head attention → mean pool → W_out → head`.
//! Every base parameter is drawn from the seed and frozen; the attention
//! output projection and the head accept low-rank increments through
//! [`CombinedDelta`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedder::FrozenEncoder;
use crate::error::{Result, SlmError};
use crate::jare::{combine, AdaptedLinear, CombinedDelta, IncrementGrad, LayerId, LayerShape};
use crate::keystore::KeyValueStore;
use crate::numerics::{argmax, fingerprint, matmul, softmax, softmax_cross_entropy, Matrix, SeededRng};
use crate::{TaskId, TokenId, ValueId};

/// Gradients keyed by the increment they belong to.
pub type GradMap = BTreeMap<(ValueId, LayerId), IncrementGrad>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroNetConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub n_classes: usize,
    pub adaptable_layers: Vec<LayerId>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicroNet {
    config: MicroNetConfig,
    embedding: Matrix,
    w_query: Matrix,
    w_key: Matrix,
    w_value: Matrix,
    w_out: Matrix,
    head: Matrix,
}

/// Frozen part of the forward pass for one input.
#[derive(Clone, Debug)]
pub struct AttentionFeatures {
    /// Row-stochastic `L × L` attention matrix.
    pub weights: Matrix,
    /// Mean over positions of the attention output, before `W_out`.
    pub pooled: Vec<f64>,
}

impl MicroNet {
    pub fn new(mut config: MicroNetConfig) -> Result<Self> {
        if config.vocab_size == 0 || config.model_dim == 0 || config.n_classes == 0 {
            return Err(SlmError::config("model", "vocab, d_m and class count must be positive"));
        }
        config.adaptable_layers.sort();
        config.adaptable_layers.dedup();
        let root = SeededRng::new(config.seed, "micronet");
        let d = config.model_dim;
        let s = 1.0 / (d as f64).sqrt();
        let gauss = |label: &str, rows: usize, cols: usize, scale: f64| {
            let mut rng = root.substream(label);
            Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
        };
        Ok(Self {
            embedding: gauss("embedding", config.vocab_size, d, 1.0),
            w_query: gauss("w_query", d, d, s),
            w_key: gauss("w_key", d, d, s),
            w_value: gauss("w_value", d, d, s),
            w_out: gauss("w_out", d, d, s),
            head: gauss("head", config.n_classes, d, s),
            config,
        })
    }

    pub fn config(&self) -> &MicroNetConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Shapes of the adaptable layers' frozen weights.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.config
            .adaptable_layers
            .iter()
            .map(|&layer| {
                let w = self.base_weight(layer);
                LayerShape {
                    layer,
                    out_dim: w.rows(),
                    in_dim: w.cols(),
                }
            })
            .collect()
    }

    pub fn base_weight(&self, layer: LayerId) -> &Matrix {
        match layer {
            LayerId::AttnOut => &self.w_out,
            LayerId::Head => &self.head,
        }
    }

    pub fn digest(&self) -> String {
        fingerprint([
            self.embedding.data(),
            self.w_query.data(),
            self.w_key.data(),
            self.w_value.data(),
            self.w_out.data(),
            self.head.data(),
        ])
    }

    pub fn attention_features(&self, tokens: &[TokenId]) -> Result<AttentionFeatures> {
        if tokens.is_empty() {
            return Err(SlmError::Input("empty token sequence".into()));
        }
        let d = self.config.model_dim;
        let mut x = Matrix::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= self.config.vocab_size {
                return Err(SlmError::Index {
                    what: "token",
                    index: t,
                    len: self.config.vocab_size,
                });
            }
            x.row_mut(i).copy_from_slice(self.embedding.row(t));
        }
        let q = matmul(&x, &self.w_query)?;
        let k = matmul(&x, &self.w_key)?;
        let v = matmul(&x, &self.w_value)?;
        let mut scores = matmul(&q, &k.transpose())?;
        scores.scale(1.0 / (d as f64).sqrt());
        let l = tokens.len();
        let mut weights = Matrix::zeros(l, l);
        for i in 0..l {
            weights.row_mut(i).copy_from_slice(&softmax(scores.row(i)));
        }
        let out = matmul(&weights, &v)?;
        let mut pooled = vec![0.0; d];
        for i in 0..l {
            for (p, o) in pooled.iter_mut().zip(out.row(i)) {
                *p += o;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= l as f64);
        Ok(AttentionFeatures { weights, pooled })
    }

    fn check_delta(&self, delta: &CombinedDelta<'_>) -> Result<()> {
        for layer in delta.layers() {
            if !self.config.adaptable_layers.contains(&layer) {
                return Err(SlmError::Input(format!("layer {layer} is not adaptable")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[TokenId], delta: &CombinedDelta<'_>) -> Result<Vec<f64>> {
        self.check_delta(delta)?;
        let feats = self.attention_features(tokens)?;
        let hidden = AdaptedLinear::new(&self.w_out, delta.terms(LayerId::AttnOut)).forward(&feats.pooled)?;
        AdaptedLinear::new(&self.head, delta.terms(LayerId::Head)).forward(&hidden)
    }

    /// Loss and increment gradients for one example.
    pub fn example_loss_and_grads(
        &self,
        tokens: &[TokenId],
        label: usize,
        delta: &CombinedDelta<'_>,
    ) -> Result<(f64, GradMap)> {
        self.check_delta(delta)?;
        let feats = self.attention_features(tokens)?;
        let mut out_layer = AdaptedLinear::new(&self.w_out, delta.terms(LayerId::AttnOut));
        let hidden = out_layer.forward(&feats.pooled)?;
        let mut head_layer = AdaptedLinear::new(&self.head, delta.terms(LayerId::Head));
        let logits = head_layer.forward(&hidden)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, label)?;

        let mut grads = GradMap::new();
        let head_back = head_layer.backward(&grad_logits)?;
        for (term, g) in delta.terms(LayerId::Head).iter().zip(head_back.term_grads) {
            accumulate(&mut grads, (term.source, LayerId::Head), g)?;
        }
        let out_back = out_layer.backward(&head_back.grad_input)?;
        for (term, g) in delta.terms(LayerId::AttnOut).iter().zip(out_back.term_grads) {
            accumulate(&mut grads, (term.source, LayerId::AttnOut), g)?;
        }
        // Nothing upstream of W_out is adaptable, so the input gradient stops here.
        Ok((loss, grads))
    }

    /// Mean cross-entropy over `batch` and the averaged increment gradients.
    pub fn loss_and_grads(&self, batch: &[(&[TokenId], usize)], delta: &CombinedDelta<'_>) -> Result<(f64, GradMap)> {
        if batch.is_empty() {
            return Err(SlmError::Input("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut grads = GradMap::new();
        for (tokens, label) in batch {
            let (loss, g) = self.example_loss_and_grads(tokens, *label, delta)?;
            total += loss;
            for (key, grad) in g {
                accumulate(&mut grads, key, grad)?;
            }
        }
        for g in grads.values_mut() {
            g.b.scale(scale);
            g.a.scale(scale);
        }
        Ok((total * scale, grads))
    }
}

pub(crate) fn accumulate(map: &mut GradMap, key: (ValueId, LayerId), grad: IncrementGrad) -> Result<()> {
    match map.get_mut(&key) {
        Some(existing) => existing.add_scaled(1.0, &grad),
        None => {
            map.insert(key, grad);
            Ok(())
        }
    }
}

/// Encode, retrieve, combine, classify. Ties go to the lowest class id.
pub fn predict(
    tokens: &[TokenId],
    net: &MicroNet,
    encoder: &FrozenEncoder,
    store: &KeyValueStore,
    top_k: usize,
    task_filter: Option<TaskId>,
) -> Result<usize> {
    let q = encoder.encode(tokens)?;
    let hits = store.retrieve(&q, top_k, task_filter)?;
    let retrieved = hits
        .iter()
        .map(|h| Ok((h.value_id, store.value(h.value_id)?, h.similarity)))
        .collect::<Result<Vec<_>>>()?;
    let delta = combine(&retrieved)?;
    Ok(argmax(&net.forward(tokens, &delta)?))
}
