//! Low-rank weight increments and their similarity-weighted combination.
//!
//! A retrieved set of increments `{ΔW_i = B_i A_i}` with query-key similarities
//! `s_i` is combined into `ΔW = Σ c_i B_i A_i` where the coefficients `c_i` are
//! the clamped, normalised similarities. The dense `ΔW` is never built on the
//! hot path: a layer evaluates `W₀x + Σ c_i B_i (A_i x)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::numerics::{matmul, Matrix, SeededRng};
use crate::ValueId;

/// Standard deviation of the Gaussian used for a fresh `A`.
pub const A_INIT_STD: f64 = 0.02;

/// Sum of clamped similarities below which coefficients fall back to uniform.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Dense layers that can carry an increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerId {
    /// Attention output projection.
    AttnOut,
    /// Classifier head.
    Head,
}

impl LayerId {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerId::AttnOut => "attn_out",
            LayerId::Head => "head",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LayerId {
    type Err = SlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn_out" => Ok(LayerId::AttnOut),
            "head" => Ok(LayerId::Head),
            other => Err(SlmError::Input(format!("unknown layer `{other}`"))),
        }
    }
}

/// Shape of a frozen weight `W₀ ∈ R^{out×in}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub layer: LayerId,
    pub out_dim: usize,
    pub in_dim: usize,
}

/// `ΔW = B A` with `B ∈ R^{d×r}` and `A ∈ R^{r×k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankIncrement {
    pub layer: LayerId,
    pub b: Matrix,
    pub a: Matrix,
}

impl LowRankIncrement {
    pub fn new(layer: LayerId, b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() || b.cols() == 0 {
            return Err(SlmError::Shape {
                op: "low_rank_increment",
                left: b.shape(),
                right: a.shape(),
            });
        }
        Ok(Self { layer, b, a })
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    /// Dense `B A`.
    pub fn materialize(&self) -> Matrix {
        matmul(&self.b, &self.a).expect("rank dimensions agree by construction")
    }

    pub fn is_finite(&self) -> bool {
        self.b.is_finite() && self.a.is_finite()
    }
}

/// Fresh increment: `B = 0`, `A ~ N(0, 0.02²)`, so `ΔW = 0` exactly.
pub fn init_increment(
    layer: LayerId,
    out_dim: usize,
    in_dim: usize,
    rank: usize,
    rng: &mut SeededRng,
) -> Result<LowRankIncrement> {
    if rank == 0 || rank > out_dim.min(in_dim) {
        return Err(SlmError::config(
            "retrieval.rank",
            format!("rank {rank} must be in [1, {}] for layer {layer}", out_dim.min(in_dim)),
        ));
    }
    let b = Matrix::zeros(out_dim, rank);
    let a = Matrix::from_fn(rank, in_dim, |_, _| A_INIT_STD * rng.normal());
    LowRankIncrement::new(layer, b, a)
}

/// One increment per adaptable layer, ordered by layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementSet {
    layers: Vec<LowRankIncrement>,
}

impl IncrementSet {
    pub fn new(mut layers: Vec<LowRankIncrement>) -> Result<Self> {
        layers.sort_by_key(|inc| inc.layer);
        if layers.windows(2).any(|w| w[0].layer == w[1].layer) {
            return Err(SlmError::Integrity("duplicate layer in increment set".into()));
        }
        Ok(Self { layers })
    }

    /// Zero-effect increments for every shape, each from its own substream.
    pub fn init(shapes: &[LayerShape], rank: usize, rng: &SeededRng) -> Result<Self> {
        let layers = shapes
            .iter()
            .map(|s| {
                init_increment(
                    s.layer,
                    s.out_dim,
                    s.in_dim,
                    rank,
                    &mut rng.substream(s.layer.as_str()),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn get(&self, layer: LayerId) -> Option<&LowRankIncrement> {
        self.layers.iter().find(|inc| inc.layer == layer)
    }

    pub fn get_mut(&mut self, layer: LayerId) -> Option<&mut LowRankIncrement> {
        self.layers.iter_mut().find(|inc| inc.layer == layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LowRankIncrement> {
        self.layers.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut LowRankIncrement> {
        self.layers.iter_mut()
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        self.layers.iter().map(|inc| inc.layer).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LowRankIncrement::is_finite)
    }

    /// Fingerprint-ready view of every parameter.
    pub fn parameter_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|inc| [inc.b.data(), inc.a.data()])
    }
}

/// Convex combination weights derived from similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub values: Vec<f64>,
    /// Set when every similarity was non-positive and uniform weights were used.
    pub fallback: bool,
}

/// `c_i = max(s_i, 0) / Σ max(s_j, 0)`, uniform if that sum is below
/// [`WEIGHT_FLOOR`].
pub fn weights_from_sims(sims: &[f64]) -> Result<Coefficients> {
    if sims.is_empty() {
        return Err(SlmError::Input("no similarities to weight".into()));
    }
    let clamped: Vec<f64> = sims.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total < WEIGHT_FLOOR {
        let u = 1.0 / sims.len() as f64;
        return Ok(Coefficients {
            values: vec![u; sims.len()],
            fallback: true,
        });
    }
    Ok(Coefficients {
        values: clamped.into_iter().map(|w| w / total).collect(),
        fallback: false,
    })
}

/// One weighted increment inside a [`CombinedDelta`].
#[derive(Clone, Copy, Debug)]
pub struct DeltaTerm<'a> {
    pub source: ValueId,
    pub increment: &'a LowRankIncrement,
    pub coeff: f64,
}

/// Per-layer weighted references to retrieved increments.
#[derive(Clone, Debug, Default)]
pub struct CombinedDelta<'a> {
    layers: BTreeMap<LayerId, Vec<DeltaTerm<'a>>>,
    fallback: bool,
}

impl<'a> CombinedDelta<'a> {
    /// No increments: every layer acts as its frozen base.
    pub fn empty() -> Self {
        Self::default()
    }

    /// A single increment set at coefficient 1.
    pub fn single(source: ValueId, set: &'a IncrementSet) -> Self {
        let mut layers = BTreeMap::new();
        for inc in set.iter() {
            layers.insert(
                inc.layer,
                vec![DeltaTerm {
                    source,
                    increment: inc,
                    coeff: 1.0,
                }],
            );
        }
        Self {
            layers,
            fallback: false,
        }
    }

    pub fn terms(&self, layer: LayerId) -> &[DeltaTerm<'a>] {
        self.layers.get(&layer).map_or(&[], Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.layers.keys().copied()
    }

    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// Dense `Σ c_i B_i A_i` for one layer, or `None` if the layer has no terms.
    pub fn materialize(&self, layer: LayerId) -> Option<Matrix> {
        let terms = self.layers.get(&layer)?;
        let first = terms.first()?;
        let mut out = Matrix::zeros(first.increment.out_dim(), first.increment.in_dim());
        for t in terms {
            out.add_scaled(t.coeff, &t.increment.materialize())
                .expect("terms of a layer share a shape");
        }
        Some(out)
    }
}

/// Builds the similarity-weighted combination of retrieved increment sets.
///
/// All sets must cover the same layers with the same shapes. Coefficients are
/// normalised over the whole retrieved list.
pub fn combine<'a>(retrieved: &[(ValueId, &'a IncrementSet, f64)]) -> Result<CombinedDelta<'a>> {
    let sims: Vec<f64> = retrieved.iter().map(|r| r.2).collect();
    let coeffs = weights_from_sims(&sims)?;
    let reference = retrieved[0].1;
    let mut layers: BTreeMap<LayerId, Vec<DeltaTerm<'a>>> = BTreeMap::new();
    for ((id, set, _), &coeff) in retrieved.iter().zip(&coeffs.values) {
        if set.layer_ids() != reference.layer_ids() {
            return Err(SlmError::Integrity(format!(
                "increment {id} covers layers {:?}, expected {:?}",
                set.layer_ids(),
                reference.layer_ids()
            )));
        }
        for inc in set.iter() {
            let expected = reference.get(inc.layer).expect("layer ids checked above");
            if inc.b.shape() != expected.b.shape() || inc.a.shape() != expected.a.shape() {
                return Err(SlmError::Integrity(format!(
                    "increment {id} layer {} has shapes {:?}/{:?}, expected {:?}/{:?}",
                    inc.layer,
                    inc.b.shape(),
                    inc.a.shape(),
                    expected.b.shape(),
                    expected.a.shape()
                )));
            }
            layers.entry(inc.layer).or_default().push(DeltaTerm {
                source: *id,
                increment: inc,
                coeff,
            });
        }
    }
    Ok(CombinedDelta {
        layers,
        fallback: coeffs.fallback,
    })
}

/// `W₀x + Σ c_i B_i (A_i x)`.
pub fn apply_forward(x: &[f64], base: &Matrix, terms: &[DeltaTerm<'_>]) -> Result<Vec<f64>> {
    let mut layer = AdaptedLinear::new(base, terms);
    layer.forward(x)
}

/// Gradients for one increment.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementGrad {
    pub b: Matrix,
    pub a: Matrix,
}

impl IncrementGrad {
    pub fn zeros_like(inc: &LowRankIncrement) -> Self {
        Self {
            b: Matrix::zeros(inc.b.rows(), inc.b.cols()),
            a: Matrix::zeros(inc.a.rows(), inc.a.cols()),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &IncrementGrad) -> Result<()> {
        self.b.add_scaled(alpha, &other.b)?;
        self.a.add_scaled(alpha, &other.a)
    }
}

/// Result of [`AdaptedLinear::backward`].
#[derive(Clone, Debug)]
pub struct LayerBackward {
    /// One entry per term, in term order.
    pub term_grads: Vec<IncrementGrad>,
    /// `∂L/∂x = (W₀ + Σ c_i B_i A_i)ᵀ g`.
    pub grad_input: Vec<f64>,
}

struct ForwardCache {
    input: Vec<f64>,
    /// `A_i x` per term.
    projected: Vec<Vec<f64>>,
}

/// A frozen dense layer evaluated with a set of weighted low-rank terms.
///
/// Coefficients are constants: gradients flow into `B_i`, `A_i` and the input.
pub struct AdaptedLinear<'b, 'a> {
    base: &'b Matrix,
    terms: &'b [DeltaTerm<'a>],
    cache: Option<ForwardCache>,
}

impl<'b, 'a> AdaptedLinear<'b, 'a> {
    pub fn new(base: &'b Matrix, terms: &'b [DeltaTerm<'a>]) -> Self {
        Self {
            base,
            terms,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.base.matvec(x)?;
        let mut projected = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            let inc = t.increment;
            if inc.b.rows() != self.base.rows() || inc.a.cols() != self.base.cols() {
                return Err(SlmError::Shape {
                    op: "apply_forward",
                    left: self.base.shape(),
                    right: (inc.b.rows(), inc.a.cols()),
                });
            }
            let u = inc.a.matvec(x)?;
            let bu = inc.b.matvec(&u)?;
            for (yi, v) in y.iter_mut().zip(&bu) {
                *yi += t.coeff * v;
            }
            projected.push(u);
        }
        self.cache = Some(ForwardCache {
            input: x.to_vec(),
            projected,
        });
        Ok(y)
    }

    /// Routes `∂L/∂y` to every term's `B`, `A` and to the layer input.
    pub fn backward(&self, grad_out: &[f64]) -> Result<LayerBackward> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| SlmError::State("backward called before forward".into()))?;
        if grad_out.len() != self.base.rows() {
            return Err(SlmError::Shape {
                op: "backward_to_increments",
                left: self.base.shape(),
                right: (grad_out.len(), 1),
            });
        }
        let mut grad_input = self.base.matvec_t(grad_out)?;
        let mut term_grads = Vec::with_capacity(self.terms.len());
        for (t, u) in self.terms.iter().zip(&cache.projected) {
            let inc = t.increment;
            let mut g = IncrementGrad::zeros_like(inc);
            // ∂L/∂B = c g uᵀ
            g.b.add_outer(t.coeff, grad_out, u)?;
            // ∂L/∂A = c (Bᵀ g) xᵀ
            let bt_g = inc.b.matvec_t(grad_out)?;
            g.a.add_outer(t.coeff, &bt_g, &cache.input)?;
            // ∂L/∂x += c Aᵀ Bᵀ g
            let at = inc.a.matvec_t(&bt_g)?;
            for (gi, v) in grad_input.iter_mut().zip(&at) {
                *gi += t.coeff * v;
            }
            term_grads.push(g);
        }
        Ok(LayerBackward {
            term_grads,
            grad_input,
        })
    }
}

/// Free-function form of [`AdaptedLinear::backward`] for callers that keep
/// the layer around.
pub fn backward_to_increments(
    grad_out: &[f64],
    layer: &AdaptedLinear<'_, '_>,
) -> Result<LayerBackward> {
    layer.backward(grad_out)
}
