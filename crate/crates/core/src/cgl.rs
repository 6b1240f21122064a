//! Collaboration-graph learning: each client infers task similarity from
//! classifier weights and updates its own row of the mixing matrix by
//! projected gradient descent on a sparsity-regularized graph loss.

use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::numkernels::{cosine, norm2, project_to_simplex};

/// Weights at or below this value are treated as pruned edges.
pub const PRUNE_THRESHOLD: f64 = 1e-6;

/// Negated cosine similarity of client `owner` to every client.
/// Self is fixed at `-1`; entries for non-neighbors are zero and masked.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub owner: usize,
    pub s: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn infer_similarity(
    owner: usize,
    num_clients: usize,
    phi_self: &[f64],
    neighbors: &[(usize, &[f64])],
) -> Result<SimilarityVector> {
    if owner >= num_clients {
        return Err(MaplError::InvalidArgument(format!(
            "client {owner} outside 0..{num_clients}"
        )));
    }
    let mut s = vec![0.0; num_clients];
    let mut valid = vec![false; num_clients];
    s[owner] = -1.0;
    valid[owner] = true;
    for &(j, phi_j) in neighbors {
        if j == owner || j >= num_clients {
            return Err(MaplError::InvalidArgument(format!(
                "invalid neighbor {j} for client {owner}"
            )));
        }
        let c = cosine(phi_self, phi_j).map_err(|_| {
            MaplError::DegenerateVector(format!(
                "zero-norm classifier between clients {owner} and {j}"
            ))
        })?;
        s[j] = -c;
        valid[j] = true;
    }
    Ok(SimilarityVector { owner, s, valid })
}

/// `γ_i = n_i / Σ_j n_j`.
pub fn confidence_vector(sample_counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(MaplError::InvalidArgument(
            "confidence vector needs at least one sample".into(),
        ));
    }
    Ok(sample_counts
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphNorm {
    L2,
    L1,
}

/// Coefficients of the regularized graph loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphParams {
    pub mu1: f64,
    pub mu2: f64,
    pub beta: f64,
    pub eps: f64,
    pub norm: GraphNorm,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            mu1: 0.5,
            mu2: 0.1,
            beta: 0.5,
            eps: 1e-8,
            norm: GraphNorm::L2,
        }
    }
}

fn degree(w: &[f64], s: &SimilarityVector) -> f64 {
    w.iter()
        .zip(&s.valid)
        .enumerate()
        .filter(|&(j, (_, &ok))| ok && j != s.owner)
        .map(|(_, (v, _))| v)
        .sum()
}

fn check_lengths(w: &[f64], s: &SimilarityVector, gamma: &[f64]) -> Result<()> {
    for (what, len) in [("similarity", s.s.len()), ("gamma", gamma.len())] {
        if len != w.len() {
            return Err(MaplError::DimensionMismatch {
                context: if what == "gamma" { "graph loss gamma" } else { "graph loss similarity" },
                expected: w.len(),
                got: len,
            });
        }
    }
    Ok(())
}

/// `μ₁ Σ_j γ_j w_j s_j + μ₂ (β‖w‖ − log(deg + ε))`, sums over valid entries.
pub fn graph_loss(w: &[f64], s: &SimilarityVector, gamma: &[f64], p: &GraphParams) -> Result<f64> {
    check_lengths(w, s, gamma)?;
    let fit: f64 = (0..w.len())
        .filter(|&j| s.valid[j])
        .map(|j| gamma[j] * w[j] * s.s[j])
        .sum();
    let norm = match p.norm {
        GraphNorm::L2 => norm2(w),
        GraphNorm::L1 => w.iter().map(|v| v.abs()).sum(),
    };
    let reg = p.beta * norm - (degree(w, s) + p.eps).ln();
    Ok(p.mu1 * fit + p.mu2 * reg)
}

pub fn graph_loss_grad(
    w: &[f64],
    s: &SimilarityVector,
    gamma: &[f64],
    p: &GraphParams,
) -> Result<Vec<f64>> {
    check_lengths(w, s, gamma)?;
    let nrm = norm2(w);
    let inv_deg = 1.0 / (degree(w, s) + p.eps);
    Ok((0..w.len())
        .map(|j| {
            if !s.valid[j] {
                return 0.0;
            }
            let d_norm = match p.norm {
                GraphNorm::L2 if nrm > 0.0 => w[j] / nrm,
                GraphNorm::L2 => 0.0,
                GraphNorm::L1 => w[j].signum(),
            };
            let d_log = if j == s.owner { 0.0 } else { inv_deg };
            p.mu1 * gamma[j] * s.s[j] + p.mu2 * (p.beta * d_norm - d_log)
        })
        .collect())
}

/// `steps` rounds of gradient step plus simplex projection.
pub fn cgl_update(
    w: &[f64],
    s: &SimilarityVector,
    gamma: &[f64],
    p: &GraphParams,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut w = w.to_vec();
    for _ in 0..steps {
        let g = graph_loss_grad(&w, s, gamma, p)?;
        let stepped: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - lr * gi).collect();
        w = project_to_simplex(&stepped);
    }
    Ok(w)
}

/// Indices `j ≠ owner` with `w_j` above the prune threshold.
pub fn neighbors_of(owner: usize, w: &[f64]) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|&(j, &v)| j != owner && v > PRUNE_THRESHOLD)
        .map(|(j, _)| j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernels::is_on_simplex;

    fn sim(owner: usize, s: Vec<f64>) -> SimilarityVector {
        let n = s.len();
        SimilarityVector {
            owner,
            s,
            valid: vec![true; n],
        }
    }

    #[test]
    fn similarity_examples() {
        let a = [1.0, 2.0, -1.0];
        let orth = [2.0, -1.0, 0.0];
        let neg = [-1.0, -2.0, 1.0];
        let v = infer_similarity(0, 5, &a, &[(1, &a), (2, &orth), (3, &neg)]).unwrap();
        assert_eq!(v.s[0], -1.0);
        assert!((v.s[1] + 1.0).abs() < 1e-15);
        assert!(v.s[2].abs() < 1e-15);
        assert!((v.s[3] - 1.0).abs() < 1e-15);
        assert!(!v.valid[4] && v.s[4] == 0.0);
    }

    #[test]
    fn similarity_rejects_zero_classifier() {
        let zero = [0.0; 3];
        assert!(matches!(
            infer_similarity(0, 2, &[1.0, 0.0, 0.0], &[(1, &zero)]),
            Err(MaplError::DegenerateVector(_))
        ));
    }

    #[test]
    fn confidence_sums_to_one() {
        let g = confidence_vector(&[100, 300, 200]).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-15);
        assert!(confidence_vector(&[0, 0]).is_err());
    }

    #[test]
    fn loss_examples() {
        let p = GraphParams {
            mu1: 1.0,
            mu2: 0.0,
            ..GraphParams::default()
        };
        let l = graph_loss(&[0.25; 4], &sim(0, vec![-1.0; 4]), &[0.25; 4], &p).unwrap();
        assert!((l + 0.25).abs() < 1e-15);

        let p = GraphParams {
            mu1: 0.0,
            mu2: 1.0,
            beta: 0.0,
            ..GraphParams::default()
        };
        let w = [0.4, 0.35, 0.25];
        let l = graph_loss(&w, &sim(0, vec![-1.0, 0.0, 0.0]), &[1.0 / 3.0; 3], &p).unwrap();
        assert!((l + (0.6 + p.eps).ln()).abs() < 1e-15);

        let p = GraphParams::default();
        let l = graph_loss(&[1.0, 0.0], &sim(0, vec![0.0, 0.0]), &[0.5, 0.5], &GraphParams { mu1: 0.0, mu2: 1.0, ..p })
            .unwrap();
        assert!((l - (p.beta - p.eps.ln())).abs() < 1e-9);
        assert!(l > 18.0);
    }

    #[test]
    fn zero_step_size_keeps_weights() {
        let w = [0.2, 0.3, 0.5];
        let out = cgl_update(&w, &sim(1, vec![0.1, -1.0, 0.3]), &[1.0 / 3.0; 3], &GraphParams::default(), 0.0, 5).unwrap();
        for (a, b) in out.iter().zip(&w) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn update_stays_on_simplex() {
        let mut w = vec![0.1; 10];
        let s = sim(3, (0..10).map(|j| if j == 3 { -1.0 } else { (j as f64 / 5.0) - 1.0 }).collect());
        for _ in 0..200 {
            w = cgl_update(&w, &s, &[0.1; 10], &GraphParams::default(), 0.1, 1).unwrap();
            assert!(is_on_simplex(&w, 1e-9));
        }
    }

    #[test]
    fn most_similar_neighbor_gains_before_projection() {
        let p = GraphParams {
            mu2: 0.0,
            ..GraphParams::default()
        };
        let s = sim(0, vec![-1.0, -0.9, 0.2, 0.5]);
        let g = graph_loss_grad(&[0.25; 4], &s, &[0.25; 4], &p).unwrap();
        let best = (1..4).min_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap();
        assert_eq!(best, 1);
        assert!(g[1] < 0.0);
    }

    #[test]
    fn masked_entries_have_no_gradient() {
        let mut s = sim(0, vec![-1.0, -0.5, 0.3]);
        s.valid[2] = false;
        let g = graph_loss_grad(&[0.5, 0.5, 0.0], &s, &[1.0 / 3.0; 3], &GraphParams::default()).unwrap();
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn neighbors_respect_threshold() {
        assert_eq!(neighbors_of(0, &[0.5, 1e-7, 0.3, 0.2]), vec![2, 3]);
        assert!(neighbors_of(0, &[1.0]).is_empty());
    }
}
