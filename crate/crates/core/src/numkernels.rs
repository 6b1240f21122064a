//! Dense vector/matrix primitives, stable reductions and the Euclidean
//! projection onto the probability simplex.
//!
//! Vectors are plain `&[f64]` slices; [`Mat`] is a row-major dense matrix.

use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(MaplError::DimensionMismatch {
                context: "Mat::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MaplError::DimensionMismatch {
                    context: "Mat::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `out = self · x + bias` (bias optional).
    pub fn matvec(&self, x: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.row_iter()
            .enumerate()
            .map(|(i, r)| dot(r, x) + bias.map_or(0.0, |b| b[i]))
            .collect()
    }

    /// `out = selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.row_iter().zip(y) {
            axpy(yi, r, &mut out);
        }
        out
    }

    /// `self += alpha · u vᵀ`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            axpy(alpha * ui, v, &mut self.data[i * cols..(i + 1) * cols]);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MaplError::DimensionMismatch {
            context: "cosine",
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MaplError::DegenerateVector(
            "cosine of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm2(v);
    if n == 0.0 || !n.is_finite() {
        return Err(MaplError::DegenerateVector(
            "cannot normalize a zero-norm vector".into(),
        ));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| x - lse).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    log_softmax(v).into_iter().map(f64::exp).collect()
}

/// Euclidean projection onto the unit probability simplex using Condat's
/// linear-time pivot search.
pub fn project_to_simplex(y: &[f64]) -> Vec<f64> {
    assert!(!y.is_empty(), "project_to_simplex on empty vector");
    const RADIUS: f64 = 1.0;

    let mut active: Vec<f64> = Vec::with_capacity(y.len());
    let mut waiting: Vec<f64> = Vec::new();
    active.push(y[0]);
    let mut rho = y[0] - RADIUS;

    for &yn in &y[1..] {
        if yn > rho {
            rho += (yn - rho) / (active.len() as f64 + 1.0);
            if rho > yn - RADIUS {
                active.push(yn);
            } else {
                waiting.append(&mut active);
                active.push(yn);
                rho = yn - RADIUS;
            }
        }
    }

    for yw in waiting {
        if yw > rho {
            active.push(yw);
            rho += (yw - rho) / active.len() as f64;
        }
    }

    loop {
        let before = active.len();
        let mut i = 0;
        while i < active.len() {
            let yi = active[i];
            if yi <= rho {
                active.swap_remove(i);
                rho += (rho - yi) / active.len() as f64;
            } else {
                i += 1;
            }
        }
        if active.len() == before {
            break;
        }
    }

    y.iter().map(|&v| (v - rho).max(0.0)).collect()
}

/// Sort-based simplex projection, O(n log n). Independent of
/// [`project_to_simplex`] and used to cross-check it.
pub fn project_to_simplex_sorted(y: &[f64]) -> Vec<f64> {
    assert!(!y.is_empty(), "project_to_simplex_sorted on empty vector");
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// True when `w` is nonnegative and sums to one within `tol`.
pub fn is_on_simplex(w: &[f64], tol: f64) -> bool {
    w.iter().all(|&v| v >= 0.0 && v.is_finite()) && (w.iter().sum::<f64>() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MaplError::DegenerateVector(_))
        ));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert!(close(&l2_normalize(&[3.0, 4.0]).unwrap(), &[0.6, 0.8], 1e-15));
        assert!(close(
            &l2_normalize(&[0.0, 0.0, 5.0]).unwrap(),
            &[0.0, 0.0, 1.0],
            0.0
        ));
        let h = 1.0 / 2f64.sqrt();
        assert!(close(&l2_normalize(&[1.0, 1.0]).unwrap(), &[h, h], 1e-15));
        assert!(l2_normalize(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn log_softmax_examples() {
        let l2 = 2f64.ln();
        assert!(close(&log_softmax(&[0.0, 0.0]), &[-l2, -l2], 1e-15));
        let big = log_softmax(&[1000.0, 0.0]);
        assert!(big[0].abs() < 1e-12 && (big[1] + 1000.0).abs() < 1e-9);
        // direct evaluation: log(e^k / (e + e^2 + e^3))
        let denom = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        let expect = [1.0 - denom, 2.0 - denom, 3.0 - denom];
        assert!(close(&log_softmax(&[1.0, 2.0, 3.0]), &expect, 1e-14));
        assert!(close(&expect, &[-2.4076, -1.4076, -0.4076], 1e-4));
    }

    #[test]
    fn simplex_examples() {
        let q = [0.25; 4];
        assert!(close(&project_to_simplex(&q), &q, 1e-15));
        let t = 1.0 / 3.0;
        assert!(close(&project_to_simplex(&[0.5; 3]), &[t, t, t], 1e-15));
        assert!(close(
            &project_to_simplex(&[1.0, 1.0, -1.0]),
            &[0.5, 0.5, 0.0],
            1e-15
        ));
        assert!(close(&project_to_simplex(&[2.0, 0.0]), &[1.0, 0.0], 1e-15));
        assert!(close(&project_to_simplex(&[-3.0]), &[1.0], 1e-15));
    }

    #[test]
    fn sorted_oracle_examples() {
        assert!(close(
            &project_to_simplex_sorted(&[1.0, 1.0, -1.0]),
            &[0.5, 0.5, 0.0],
            1e-15
        ));
        assert!(close(&project_to_simplex_sorted(&[2.0, 0.0]), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn mat_products() {
        let m = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, -1.0], Some(&[0.5, 0.5, 0.5])), vec![-0.5, -0.5, -0.5]);
        assert_eq!(m.matvec_t(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
        let mut z = Mat::zeros(2, 2);
        z.add_outer(2.0, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(z.as_slice(), &[6.0, 8.0, 12.0, 16.0]);
        assert!(Mat::from_vec(2, 2, vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn projection_matches_sort_oracle(v in prop::collection::vec(-10.0f64..10.0, 2..50)) {
            let a = project_to_simplex(&v);
            let b = project_to_simplex_sorted(&v);
            prop_assert!(is_on_simplex(&a, 1e-9));
            prop_assert!(close(&a, &b, 1e-9));
        }

        #[test]
        fn projection_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            let a = project_to_simplex(&v);
            let b = project_to_simplex(&a);
            prop_assert!(close(&a, &b, 1e-12));
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm2(&a) > 1e-3 && norm2(&b) > 1e-3);
            let c = cosine(&a, &b).unwrap();
            prop_assert!((c - cosine(&b, &a).unwrap()).abs() <= 1e-12);
            let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            prop_assert!((c - cosine(&scaled, &b).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-1e4f64..1e4, 1..30)) {
            let s: f64 = log_softmax(&v).iter().map(|x| x.exp()).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
