use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::jare::{IncrementGrad, LayerId, LowRankIncrement};
use crate::numerics::Matrix;
use crate::ValueId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `θ ← θ − η g`
    #[default]
    Sgd,
    /// `θ ← θ − η g − η λ θ`
    SgdDecoupledDecay,
    /// Adam moments with decoupled decay.
    Adamw,
}

#[derive(Clone, Debug)]
struct Moments {
    step: i32,
    m: [Matrix; 2],
    v: [Matrix; 2],
}

/// Per-increment optimizer; Adam state is keyed by `(value, layer)`.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    moments: BTreeMap<(ValueId, LayerId), Moments>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, key: (ValueId, LayerId), inc: &mut LowRankIncrement, grad: &IncrementGrad) -> Result<()> {
        let (lr, wd) = (self.lr, self.weight_decay);
        match self.kind {
            OptimizerKind::Sgd => {
                inc.b.add_scaled(-lr, &grad.b)?;
                inc.a.add_scaled(-lr, &grad.a)?;
            }
            OptimizerKind::SgdDecoupledDecay => {
                inc.b.scale(1.0 - lr * wd);
                inc.a.scale(1.0 - lr * wd);
                inc.b.add_scaled(-lr, &grad.b)?;
                inc.a.add_scaled(-lr, &grad.a)?;
            }
            OptimizerKind::Adamw => {
                let st = self.moments.entry(key).or_insert_with(|| Moments {
                    step: 0,
                    m: [Matrix::zeros(inc.b.rows(), inc.b.cols()), Matrix::zeros(inc.a.rows(), inc.a.cols())],
                    v: [Matrix::zeros(inc.b.rows(), inc.b.cols()), Matrix::zeros(inc.a.rows(), inc.a.cols())],
                });
                st.step += 1;
                let c1 = 1.0 - BETA1.powi(st.step);
                let c2 = 1.0 - BETA2.powi(st.step);
                for (i, (p, g)) in [(&mut inc.b, &grad.b), (&mut inc.a, &grad.a)].into_iter().enumerate() {
                    let m = st.m[i].data_mut();
                    let v = st.v[i].data_mut();
                    for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        *p -= lr * (update + wd * *p);
                    }
                }
            }
        }
        Ok(())
    }
}
