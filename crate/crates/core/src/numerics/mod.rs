//! Dense linear algebra, seeded randomness, and verification helpers.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::finite_diff_check;
pub use matrix::{matmul, Matrix};
pub use rng::SeededRng;

use crate::error::{Result, SlmError};

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const DEGENERATE_NORM: f64 = 1e-12;

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity with a flag for zero-norm inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// `(u·v)/(‖u‖‖v‖)`, clamped to `[-1, 1]`.
///
/// When either norm is below [`DEGENERATE_NORM`] the value is `0` and
/// `degenerate` is set.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(SlmError::Shape {
            op: "cosine_similarity",
            left: (u.len(), 1),
            right: (v.len(), 1),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Gradient of `cos(q, k)` with respect to `k`:
/// `q/(‖q‖‖k‖) − cos(q,k)·k/‖k‖²`.
///
/// Returns a zero vector when either input is degenerate.
pub fn cosine_grad_wrt_key(q: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if q.len() != k.len() {
        return Err(SlmError::Shape {
            op: "cosine_grad_wrt_key",
            left: (q.len(), 1),
            right: (k.len(), 1),
        });
    }
    let nq = norm(q);
    let nk = norm(k);
    if nq < DEGENERATE_NORM || nk < DEGENERATE_NORM {
        return Ok(vec![0.0; k.len()]);
    }
    let cos = dot(q, k) / (nq * nk);
    let a = 1.0 / (nq * nk);
    let b = cos / (nk * nk);
    Ok(q.iter().zip(k).map(|(qi, ki)| a * qi - b * ki).collect())
}

/// Unit-norm rows, pairwise orthogonal within each block of
/// `min(n_vectors, dim)` consecutive rows.
///
/// Each block is a Gaussian matrix orthonormalised row by row with two passes
/// of modified Gram-Schmidt.
pub fn orthogonal_init(n_vectors: usize, dim: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if n_vectors == 0 || dim == 0 {
        return Err(SlmError::Input(format!(
            "orthogonal_init needs n_vectors >= 1 and dim >= 1, got {n_vectors} x {dim}"
        )));
    }
    let block = n_vectors.min(dim);
    let mut out = Matrix::zeros(n_vectors, dim);
    let mut start = 0;
    while start < n_vectors {
        let len = block.min(n_vectors - start);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(len);
        while rows.len() < len {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            for _pass in 0..2 {
                for r in &rows {
                    let proj = dot(&v, r);
                    for (vi, ri) in v.iter_mut().zip(r) {
                        *vi -= proj * ri;
                    }
                }
            }
            let n = norm(&v);
            // A draw (almost surely never) falling inside the span is redrawn.
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(start + i).copy_from_slice(r);
        }
        start += len;
    }
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `(−log softmax(logits)[label], softmax(logits) − onehot(label))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(SlmError::Index {
            what: "label",
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// SHA-256 over the bit patterns of every value, rendered as lowercase hex.
///
/// Used to check that frozen parameters stay bit-identical.
pub fn fingerprint<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        for v in part {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap().value, 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c.value - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(!c.degenerate);
    }

    #[test]
    fn cosine_degenerate_flag() {
        let c = cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.degenerate);
    }

    #[test]
    fn cosine_length_mismatch() {
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(SlmError::Shape { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_pair() {
        let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_saturated_is_stable() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 0.0, 0.0], 3),
            Err(SlmError::Index { index: 3, len: 3, .. })
        ));
    }

    #[test]
    fn orthogonal_wide() {
        let mut rng = SeededRng::new(1, "orth");
        let m = orthogonal_init(4, 8, &mut rng).unwrap();
        let gram = matmul(&m, &m.transpose()).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(4)).unwrap() < 1e-10);
    }

    #[test]
    fn orthogonal_single_vector() {
        let mut rng = SeededRng::new(1, "orth");
        let m = orthogonal_init(1, 5, &mut rng).unwrap();
        assert!((norm(m.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_tall_has_blocks() {
        let mut rng = SeededRng::new(3, "orth");
        let m = orthogonal_init(8, 4, &mut rng).unwrap();
        for b in 0..2 {
            let rows: Vec<Vec<f64>> = (0..4).map(|i| m.row(b * 4 + i).to_vec()).collect();
            let blk = Matrix::from_rows(&rows).unwrap();
            let gram = matmul(&blk, &blk.transpose()).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(4)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_rejects_empty() {
        let mut rng = SeededRng::new(3, "orth");
        assert!(orthogonal_init(0, 4, &mut rng).is_err());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in small_matrix(3, 4), b in small_matrix(4, 2), c in small_matrix(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.data().iter().map(|v| v.abs()).fold(1.0, f64::max);
            prop_assert!(left.max_abs_diff(&right).unwrap() / scale < 1e-9);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-1.0f64..1.0, 6),
            v in prop::collection::vec(-1.0f64..1.0, 6),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let uv = cosine_similarity(&u, &v).unwrap().value;
            let vu = cosine_similarity(&v, &u).unwrap().value;
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let su = cosine_similarity(&scaled, &v).unwrap().value;
            prop_assert!((uv - vu).abs() < 1e-12);
            prop_assert!((uv - su).abs() < 1e-12);
        }

        #[test]
        fn orthogonal_rows_unit_and_deterministic(n in 1usize..10, dim in 1usize..10, seed in any::<u64>()) {
            let m1 = orthogonal_init(n, dim, &mut SeededRng::new(seed, "p")).unwrap();
            let m2 = orthogonal_init(n, dim, &mut SeededRng::new(seed, "p")).unwrap();
            prop_assert_eq!(&m1, &m2);
            for i in 0..n {
                prop_assert!((norm(m1.row(i)) - 1.0).abs() <= 1e-10);
            }
            let block = n.min(dim);
            for i in 0..n {
                for j in 0..n {
                    if i != j && i / block == j / block {
                        prop_assert!(dot(m1.row(i), m1.row(j)).abs() <= 1e-10);
                    }
                }
            }
        }

        #[test]
        fn cross_entropy_grad_sums_to_zero(logits in prop::collection::vec(-50.0f64..50.0, 2..10), pick in any::<prop::sample::Index>()) {
            let label = pick.index(logits.len());
            let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
            prop_assert!(loss >= -1e-12);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
