//! Evaluation: per-client accuracy, cross-client aggregates, recovery of the
//! ground-truth clusters from the learned mixing matrix.

use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::model::ClientModel;
use crate::numkernels::{dot, norm2, Mat};
use crate::scenarios::Sample;

/// Fraction of test samples whose argmax logit equals the label.
pub fn accuracy(model: &ClientModel, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(MaplError::InvalidArgument("empty test set".into()));
    }
    let mut hits = 0usize;
    for (x, y) in test {
        if argmax(&model.logits(x)?) == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean over rows of the mass placed on same-cluster entries (self included).
pub fn graph_recovery(w: &Mat, clusters: &[usize]) -> f64 {
    let m = w.rows();
    if m == 0 {
        return 0.0;
    }
    (0..m)
        .map(|i| {
            w.row(i)
                .iter()
                .zip(clusters)
                .filter(|&(_, &c)| c == clusters[i])
                .map(|(v, _)| v)
                .sum::<f64>()
        })
        .sum::<f64>()
        / m as f64
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Projects the rows of `points` onto their first two principal directions
/// (power iteration with deflation on the covariance).
pub fn principal_2d(points: &Mat) -> Mat {
    let (n, d) = points.shape();
    let mut out = Mat::zeros(n, 2);
    if n == 0 || d == 0 {
        return out;
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| points[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Mat::zeros(d, d);
    for i in 0..n {
        let c: Vec<f64> = points.row(i).iter().zip(&mean).map(|(a, b)| a - b).collect();
        cov.add_outer(1.0 / n as f64, &c, &c);
    }
    let trace: f64 = (0..d).map(|j| cov[(j, j)]).sum();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for comp in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d).map(|j| if j == comp { 1.0 } else { 0.5 / d as f64 }).collect();
        for _ in 0..500 {
            let mut next = cov.matvec(&v, None);
            for u in &dirs {
                let a = dot(u, &next);
                crate::numkernels::axpy(-a, u, &mut next);
            }
            let nn = norm2(&next);
            if nn <= 1e-12 * trace {
                // no variance left in the deflated space
                v = vec![0.0; d];
                break;
            }
            next.iter_mut().for_each(|x| *x /= nn);
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        dirs.push(v);
    }
    for i in 0..n {
        let c: Vec<f64> = points.row(i).iter().zip(&mean).map(|(a, b)| a - b).collect();
        for (k, u) in dirs.iter().enumerate() {
            out[(i, k)] = dot(u, &c);
        }
    }
    out
}

/// One `(round, client)` row of the metrics stream. Loss columns are absent
/// for the initial-state row; accuracy is absent outside evaluation rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub client: usize,
    pub loss_total: Option<f64>,
    pub loss_cont: Option<f64>,
    pub loss_ce: Option<f64>,
    pub loss_proto: Option<f64>,
    pub loss_uni: Option<f64>,
    pub acc: Option<f64>,
    pub degree: f64,
    pub contacts: usize,
}

pub const METRICS_HEADER: &str =
    "round,client,loss_total,loss_cont,loss_ce,loss_proto,loss_uni,acc,degree,contacts";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.client,
            opt(self.loss_total),
            opt(self.loss_cont),
            opt(self.loss_ce),
            opt(self.loss_proto),
            opt(self.loss_uni),
            opt(self.acc),
            self.degree,
            self.contacts
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommTotals {
    /// Ordered sender→receiver pairs, counted once per round.
    pub contacts: u64,
    pub prototype_messages: u64,
    pub classifier_messages: u64,
    /// Scalars carried by all messages.
    pub scalars: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub rows: Vec<MetricRow>,
    pub final_accuracy: Vec<f64>,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    pub final_weights: Mat,
    pub graph_recovery: f64,
    pub comm: CommTotals,
    pub contacts_per_round: Vec<u64>,
    /// Snapshots of the mixing matrix taken at evaluation rounds.
    pub weight_snapshots: Vec<(usize, Mat)>,
    pub clusters: Vec<usize>,
    pub seed: u64,
}
