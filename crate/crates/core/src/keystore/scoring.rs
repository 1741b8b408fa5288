use std::cmp::Ordering;

use crate::error::{Result, SlmError};
use crate::numerics::{cosine_similarity, SeededRng};

/// A candidate score; `Masked` orders below every value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Value(f64),
    Masked,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Masked => None,
        }
    }

    pub fn is_masked(self) -> bool {
        matches!(self, Score::Masked)
    }
}

/// Splits a query into `groups` contiguous equal slices.
pub fn partition_query(q: &[f64], groups: usize) -> Result<Vec<&[f64]>> {
    if groups == 0 || !q.len().is_multiple_of(groups) {
        return Err(SlmError::config(
            "retrieval.groups",
            format!("{groups} groups do not divide query dimension {}", q.len()),
        ));
    }
    Ok(q.chunks_exact(q.len() / groups).collect())
}

/// Validated `(groups, query_dim)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupPartition {
    groups: usize,
    query_dim: usize,
}

impl GroupPartition {
    pub fn new(groups: usize, query_dim: usize) -> Result<Self> {
        if groups == 0 || query_dim == 0 || !query_dim.is_multiple_of(groups) {
            return Err(SlmError::config(
                "retrieval.groups",
                format!("{groups} groups must divide query dimension {query_dim}"),
            ));
        }
        Ok(Self { groups, query_dim })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn key_dim(&self) -> usize {
        self.query_dim / self.groups
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn split<'q>(&self, q: &'q [f64]) -> Result<Vec<&'q [f64]>> {
        if q.len() != self.query_dim {
            return Err(SlmError::Shape {
                op: "partition_query",
                left: (self.query_dim, 1),
                right: (q.len(), 1),
            });
        }
        partition_query(q, self.groups)
    }
}

/// Cosine scores with Bernoulli(`mask_prob`) masking.
///
/// Draws one mask decision per candidate when `mask_prob > 0`. If fewer than
/// `top_k` scores survive, the highest-cosine masked candidates (ties to the
/// lower index) are unmasked until `top_k` remain.
pub fn masked_scores(
    query: &[f64],
    candidates: &[&[f64]],
    mask_prob: f64,
    top_k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Score>> {
    if candidates.is_empty() {
        return Err(SlmError::Retrieval("no candidate keys".into()));
    }
    let cosines = candidates
        .iter()
        .map(|k| cosine_similarity(query, k).map(|c| c.value))
        .collect::<Result<Vec<f64>>>()?;
    let mut masked: Vec<bool> = if mask_prob > 0.0 {
        cosines.iter().map(|_| rng.bernoulli(mask_prob)).collect()
    } else {
        vec![false; cosines.len()]
    };
    let live = masked.iter().filter(|m| !**m).count();
    if live < top_k {
        let mut hidden: Vec<usize> = (0..cosines.len()).filter(|&i| masked[i]).collect();
        hidden.sort_by(|&a, &b| cosines[b].total_cmp(&cosines[a]).then(a.cmp(&b)));
        for &i in hidden.iter().take(top_k - live) {
            masked[i] = false;
        }
    }
    Ok(cosines
        .into_iter()
        .zip(masked)
        .map(|(c, m)| if m { Score::Masked } else { Score::Value(c) })
        .collect())
}

/// The `k` largest unmasked scores, descending; ties go to the lower index.
pub fn topk(scores: &[Score], k: usize) -> Result<Vec<(usize, f64)>> {
    let mut live: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.value().map(|v| (i, v)))
        .collect();
    if live.len() < k {
        return Err(SlmError::Retrieval(format!(
            "need {k} unmasked scores, have {}",
            live.len()
        )));
    }
    // Adding 0.0 maps -0.0 to +0.0 so the two compare as a tie.
    live.sort_by(|a, b| match (b.1 + 0.0).total_cmp(&(a.1 + 0.0)) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    live.truncate(k);
    Ok(live)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        let q: Vec<f64> = (1..=8).map(f64::from).collect();
        let parts = partition_query(&q, 2).unwrap();
        assert_eq!(parts[0], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(parts[1], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(partition_query(&q, 1).unwrap(), vec![q.as_slice()]);
        let six = [0.0; 6];
        let parts = partition_query(&six, 3).unwrap();
        assert_eq!(parts.len(), 3);
        assert!(parts.iter().all(|p| p.len() == 2));
    }

    #[test]
    fn partition_rejects_indivisible() {
        assert!(matches!(
            GroupPartition::new(3, 64),
            Err(SlmError::Config { ref field, .. }) if field == "retrieval.groups"
        ));
    }

    fn unit_keys() -> Vec<Vec<f64>> {
        vec![
            vec![1.0, 0.0],
            vec![0.8, 0.6],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
        ]
    }

    #[test]
    fn zero_mask_is_plain_cosine() {
        let keys = unit_keys();
        let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let mut rng = SeededRng::new(0, "m");
        let s = masked_scores(&[1.0, 0.0], &refs, 0.0, 2, &mut rng).unwrap();
        assert_eq!(
            s,
            vec![Score::Value(1.0), Score::Value(0.8), Score::Value(0.0), Score::Value(-1.0)]
        );
    }

    #[test]
    fn full_mask_guard_restores_top_k() {
        let keys = unit_keys();
        let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let mut rng = SeededRng::new(0, "m");
        let s = masked_scores(&[1.0, 0.0], &refs, 1.0, 2, &mut rng).unwrap();
        assert_eq!(s[0], Score::Value(1.0));
        assert_eq!(s[1], Score::Value(0.8));
        assert!(s[2].is_masked() && s[3].is_masked());
    }

    #[test]
    fn mask_pattern_is_reproducible() {
        let mut g = SeededRng::new(3, "keys");
        let keys: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| g.normal()).collect()).collect();
        let refs: Vec<&[f64]> = keys.iter().map(Vec::as_slice).collect();
        let q = [0.3, -0.2, 0.9, 0.1];
        let a = masked_scores(&q, &refs, 0.2, 2, &mut SeededRng::new(11, "mask")).unwrap();
        let b = masked_scores(&q, &refs, 0.2, 2, &mut SeededRng::new(11, "mask")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_candidates_error() {
        let mut rng = SeededRng::new(0, "m");
        assert!(matches!(
            masked_scores(&[1.0], &[], 0.0, 1, &mut rng),
            Err(SlmError::Retrieval(_))
        ));
    }

    #[test]
    fn topk_examples() {
        let s = [Score::Value(0.9), Score::Value(0.1), Score::Value(0.5)];
        let idx: Vec<usize> = topk(&s, 2).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![0, 2]);
        let tie = [Score::Value(0.5), Score::Value(0.5)];
        assert_eq!(topk(&tie, 1).unwrap()[0].0, 0);
        let zeros = [Score::Value(-0.0), Score::Value(0.0)];
        assert_eq!(topk(&zeros, 1).unwrap()[0].0, 0);
        let starved = [Score::Masked, Score::Value(0.2)];
        assert!(matches!(topk(&starved, 2), Err(SlmError::Retrieval(_))));
    }

    proptest! {
        #[test]
        fn topk_agrees_with_exhaustive_sort(
            raw in prop::collection::vec((-1.0f64..1.0, prop::bool::weighted(0.1)), 8..40),
            k in 1usize..6,
        ) {
            let scores: Vec<Score> = raw
                .iter()
                .map(|&(v, m)| if m { Score::Masked } else { Score::Value((v * 8.0).round() / 8.0) })
                .collect();
            let live = scores.iter().filter(|s| !s.is_masked()).count();
            prop_assume!(live >= k);
            let got = topk(&scores, k).unwrap();
            // oracle: for each rank, pick the best remaining by scanning
            let mut taken = vec![false; scores.len()];
            for (rank, (idx, val)) in got.iter().enumerate() {
                let mut best: Option<usize> = None;
                for (i, s) in scores.iter().enumerate() {
                    if taken[i] { continue; }
                    if let Score::Value(v) = s {
                        if best.map_or(true, |b| *v > scores[b].value().unwrap()) {
                            best = Some(i);
                        }
                    }
                }
                let b = best.unwrap();
                taken[b] = true;
                prop_assert_eq!(*idx, b, "rank {}", rank);
                prop_assert_eq!(*val, scores[b].value().unwrap());
            }
        }
    }
}
