//! Loss terms evaluated on a two-view batch, with exact gradients.
//!
//! Every similarity is a cosine, so projections enter as unit rows and the
//! prototypes are normalized internally. Gradients are returned with respect
//! to the unit projections, the raw logits, and the raw (unnormalized)
//! prototypes.

use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::numkernels::{dot, log_sum_exp, norm2, softmax, Mat};

/// Projections, latents and logits for the `2B` views of a minibatch.
/// Rows `0..B` hold the first view, rows `B..2B` the second.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    /// Unit-norm projection rows `p̂_q`.
    pub projections: Mat,
    pub latents: Mat,
    pub logits: Mat,
    pub labels: Vec<usize>,
}

impl ViewBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Which terms participate in the local objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub use_cont: bool,
    pub use_uni: bool,
    pub use_proto: bool,
    pub use_ce: bool,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            use_cont: true,
            use_uni: true,
            use_proto: true,
            use_ce: true,
            tau: 100.0,
        }
    }
}

impl LossConfig {
    pub fn none(tau: f64) -> Self {
        Self {
            use_cont: false,
            use_uni: false,
            use_proto: false,
            use_ce: false,
            tau,
        }
    }

    pub fn all(tau: f64) -> Self {
        Self {
            use_cont: true,
            use_uni: true,
            use_proto: true,
            use_ce: true,
            tau,
        }
    }
}

/// Values of the individual terms; disabled terms are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cont: f64,
    pub ce: f64,
    pub proto: f64,
    pub uni: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.cont + self.ce + self.proto + self.uni
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_cont", self.cont),
            ("l_ce", self.ce),
            ("l_proto", self.proto),
            ("l_uni", self.uni),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    pub fn add_assign(&mut self, o: &LossTerms) {
        self.cont += o.cont;
        self.ce += o.ce;
        self.proto += o.proto;
        self.uni += o.uni;
    }

    pub fn scale(&self, s: f64) -> LossTerms {
        LossTerms {
            cont: self.cont * s,
            ce: self.ce * s,
            proto: self.proto * s,
            uni: self.uni * s,
        }
    }
}

/// Loss value plus gradients w.r.t. unit projections, logits and raw prototypes.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub terms: LossTerms,
    pub d_projections: Mat,
    pub d_logits: Mat,
    pub d_xi: Mat,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(MaplError::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

fn normalized_prototypes(xi: &Mat) -> Result<(Mat, Vec<f64>)> {
    let mut unit = xi.clone();
    let mut norms = Vec::with_capacity(xi.rows());
    for k in 0..xi.rows() {
        let n = norm2(xi.row(k));
        if n == 0.0 || !n.is_finite() {
            return Err(MaplError::DegenerateVector(format!(
                "prototype {k} has zero norm"
            )));
        }
        unit.row_mut(k).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// Gradient of `f(ξ̂)` w.r.t. raw `ξ` given the gradient w.r.t. the unit rows.
fn chain_normalization(unit: &Mat, norms: &[f64], d_unit: &Mat) -> Mat {
    let mut out = Mat::zeros(unit.rows(), unit.cols());
    for k in 0..unit.rows() {
        let u = unit.row(k);
        let g = d_unit.row(k);
        let proj = dot(u, g);
        for ((o, &gi), &ui) in out.row_mut(k).iter_mut().zip(g).zip(u) {
            *o = (gi - ui * proj) / norms[k];
        }
    }
    out
}

/// Coefficients `∂l_cont/∂S_qm` for `S = P̂P̂ᵀ/τ`, plus the loss value.
fn cont_coefficients(vb: &ViewBatch, tau: f64) -> Result<(f64, Mat)> {
    let n = vb.len();
    if n < 2 {
        return Err(MaplError::InvalidArgument(format!(
            "supervised contrastive loss needs at least 2 views, got {n}"
        )));
    }
    let p = &vb.projections;
    let mut coef = Mat::zeros(n, n);
    let mut loss = 0.0;
    let mut logits = vec![0.0; n - 1];
    let mut others = Vec::with_capacity(n - 1);
    for q in 0..n {
        others.clear();
        others.extend((0..n).filter(|&m| m != q));
        for (slot, &m) in logits.iter_mut().zip(&others) {
            *slot = dot(p.row(q), p.row(m)) / tau;
        }
        let lse = log_sum_exp(&logits);
        let positives = others.iter().filter(|&&m| vb.labels[m] == vb.labels[q]).count();
        if positives == 0 {
            return Err(MaplError::InvalidArgument(format!(
                "view {q} has no positive partner"
            )));
        }
        let inv = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for (&s, &m) in logits.iter().zip(&others) {
            let w = (s - lse).exp();
            let is_pos = vb.labels[m] == vb.labels[q];
            if is_pos {
                pos_sum += s - lse;
            }
            coef[(q, m)] = w - if is_pos { inv } else { 0.0 };
        }
        loss -= inv * pos_sum;
    }
    Ok((loss, coef))
}

/// Sample-to-sample supervised contrastive loss, summed over all views.
pub fn l_cont(vb: &ViewBatch, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    cont_coefficients(vb, tau).map(|(l, _)| l)
}

/// Cross-entropy on the class logits, averaged over the `2B` views.
pub fn l_ce(vb: &ViewBatch) -> f64 {
    let n = vb.len().max(1) as f64;
    vb.labels
        .iter()
        .enumerate()
        .map(|(q, &y)| log_sum_exp(vb.logits.row(q)) - vb.logits[(q, y)])
        .sum::<f64>()
        / n
}

/// Sample-to-prototype contrastive loss, averaged over the views.
pub fn l_proto(vb: &ViewBatch, xi: &Mat, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let (unit, _) = normalized_prototypes(xi)?;
    Ok(proto_parts(vb, &unit, tau).0)
}

fn proto_parts(vb: &ViewBatch, unit_xi: &Mat, tau: f64) -> (f64, Mat) {
    let n = vb.len();
    let k = unit_xi.rows();
    let mut coef = Mat::zeros(n, k);
    let mut loss = 0.0;
    let mut s = vec![0.0; k];
    for q in 0..n {
        for (c, slot) in s.iter_mut().enumerate() {
            *slot = dot(vb.projections.row(q), unit_xi.row(c)) / tau;
        }
        let y = vb.labels[q];
        loss += log_sum_exp(&s) - s[y];
        let sm = softmax(&s);
        for c in 0..k {
            coef[(q, c)] = (sm[c] - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, coef)
}

/// Uniformity loss: mean over classes of the summed cosine to every other
/// prototype (ordered pairs).
pub fn l_uni(xi: &Mat) -> Result<f64> {
    let (unit, _) = normalized_prototypes(xi)?;
    let k = unit.rows();
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                total += dot(unit.row(a), unit.row(b));
            }
        }
    }
    Ok(total / k as f64)
}

/// Sum of the enabled terms.
pub fn total_loss(vb: &ViewBatch, xi: &Mat, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_terms(vb, xi, cfg)?.total())
}

pub fn loss_terms(vb: &ViewBatch, xi: &Mat, cfg: &LossConfig) -> Result<LossTerms> {
    check_tau(cfg.tau)?;
    Ok(LossTerms {
        cont: if cfg.use_cont { l_cont(vb, cfg.tau)? } else { 0.0 },
        ce: if cfg.use_ce { l_ce(vb) } else { 0.0 },
        proto: if cfg.use_proto { l_proto(vb, xi, cfg.tau)? } else { 0.0 },
        uni: if cfg.use_uni { l_uni(xi)? } else { 0.0 },
    })
}

/// Evaluates the enabled terms together with their exact gradients.
pub fn loss_and_grad(vb: &ViewBatch, xi: &Mat, cfg: &LossConfig) -> Result<LossGrad> {
    check_tau(cfg.tau)?;
    let n = vb.len();
    let (k, dp) = xi.shape();
    if vb.projections.cols() != dp {
        return Err(MaplError::DimensionMismatch {
            context: "loss_and_grad projections",
            expected: dp,
            got: vb.projections.cols(),
        });
    }
    let mut terms = LossTerms::default();
    let mut d_proj = Mat::zeros(n, dp);
    let mut d_logits = Mat::zeros(n, vb.logits.cols());
    let mut d_unit_xi = Mat::zeros(k, dp);

    let need_xi = cfg.use_proto || cfg.use_uni;
    let (unit_xi, xi_norms) = if need_xi {
        normalized_prototypes(xi)?
    } else {
        (Mat::zeros(k, dp), vec![1.0; k])
    };

    if cfg.use_cont {
        let (loss, coef) = cont_coefficients(vb, cfg.tau)?;
        terms.cont = loss;
        // ∂S_qm/∂p̂_q = p̂_m/τ and ∂S_qm/∂p̂_m = p̂_q/τ
        for q in 0..n {
            for m in 0..n {
                let c = (coef[(q, m)] + coef[(m, q)]) / cfg.tau;
                if c != 0.0 {
                    let pm = vb.projections.row(m).to_vec();
                    crate::numkernels::axpy(c, &pm, d_proj.row_mut(q));
                }
            }
        }
    }

    if cfg.use_ce {
        terms.ce = l_ce(vb);
        for q in 0..n {
            let sm = softmax(vb.logits.row(q));
            let row = d_logits.row_mut(q);
            for (c, v) in row.iter_mut().enumerate() {
                *v = (sm[c] - if c == vb.labels[q] { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }

    if cfg.use_proto {
        let (loss, coef) = proto_parts(vb, &unit_xi, cfg.tau);
        terms.proto = loss;
        for q in 0..n {
            for c in 0..k {
                let a = coef[(q, c)] / cfg.tau;
                if a != 0.0 {
                    crate::numkernels::axpy(a, unit_xi.row(c), d_proj.row_mut(q));
                    crate::numkernels::axpy(a, vb.projections.row(q), d_unit_xi.row_mut(c));
                }
            }
        }
    }

    if cfg.use_uni {
        let mut total = 0.0;
        let sum: Vec<f64> = (0..dp)
            .map(|j| (0..k).map(|c| unit_xi[(c, j)]).sum())
            .collect();
        let scale = 2.0 / k as f64;
        for c in 0..k {
            let u = unit_xi.row(c);
            // Σ_{r≠c} ξ̂_r = (Σ_r ξ̂_r) − ξ̂_c
            let others: Vec<f64> = sum.iter().zip(u).map(|(s, x)| s - x).collect();
            total += dot(u, &others);
            crate::numkernels::axpy(scale, &others, d_unit_xi.row_mut(c));
        }
        terms.uni = total / k as f64;
    }

    let d_xi = if need_xi {
        chain_normalization(&unit_xi, &xi_norms, &d_unit_xi)
    } else {
        Mat::zeros(k, dp)
    };

    Ok(LossGrad {
        terms,
        d_projections: d_proj,
        d_logits,
        d_xi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernels::l2_normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(proj: &[&[f64]], labels: &[usize], k: usize) -> ViewBatch {
        let rows: Vec<Vec<f64>> = proj.iter().map(|p| l2_normalize(p).unwrap()).collect();
        let n = labels.len();
        ViewBatch {
            projections: Mat::from_rows(&rows).unwrap(),
            latents: Mat::zeros(n, 1),
            logits: Mat::zeros(n, k),
            labels: labels.to_vec(),
        }
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    // Literal transcription of the contrastive formula, double loop.
    fn brute_cont(p: &Mat, labels: &[usize], tau: f64) -> f64 {
        let n = labels.len();
        let mut total = 0.0;
        for q in 0..n {
            let denom: f64 = (0..n)
                .filter(|&m| m != q)
                .map(|m| (cos(p.row(q), p.row(m)) / tau).exp())
                .sum();
            let pos: Vec<usize> = (0..n).filter(|&r| r != q && labels[r] == labels[q]).collect();
            let mut inner = 0.0;
            for &r in &pos {
                inner += ((cos(p.row(q), p.row(r)) / tau).exp() / denom).ln();
            }
            total -= inner / pos.len() as f64;
        }
        total
    }

    fn brute_proto(p: &Mat, labels: &[usize], xi: &Mat, tau: f64) -> f64 {
        let n = labels.len();
        let mut total = 0.0;
        for q in 0..n {
            let num = (cos(p.row(q), xi.row(labels[q])) / tau).exp();
            let den: f64 = (0..xi.rows())
                .map(|k| (cos(p.row(q), xi.row(k)) / tau).exp())
                .sum();
            total += (num / den).ln();
        }
        -total / n as f64
    }

    fn brute_uni(xi: &Mat) -> f64 {
        let k = xi.rows();
        let mut t = 0.0;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    t += cos(xi.row(a), xi.row(b));
                }
            }
        }
        t / k as f64
    }

    fn brute_ce(logits: &Mat, labels: &[usize]) -> f64 {
        let mut t = 0.0;
        for (q, &y) in labels.iter().enumerate() {
            let den: f64 = logits.row(q).iter().map(|v| v.exp()).sum();
            t -= (logits[(q, y)].exp() / den).ln();
        }
        t / labels.len() as f64
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, k: usize, dp: usize) -> (ViewBatch, Mat) {
        let mut labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        labels.extend_from_within(..);
        let rows: Vec<Vec<f64>> = (0..2 * b)
            .map(|_| {
                let v: Vec<f64> = (0..dp).map(|_| rng.gen_range(-1.0..1.0)).collect();
                l2_normalize(&v).unwrap()
            })
            .collect();
        let logits: Vec<Vec<f64>> = (0..2 * b)
            .map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let xi: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dp).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (
            ViewBatch {
                projections: Mat::from_rows(&rows).unwrap(),
                latents: Mat::zeros(2 * b, 1),
                logits: Mat::from_rows(&logits).unwrap(),
                labels,
            },
            Mat::from_rows(&xi).unwrap(),
        )
    }

    #[test]
    fn cont_single_pair_is_zero() {
        let vb = batch(&[&[1.0, 2.0], &[-3.0, 0.5]], &[0, 0], 2);
        assert_eq!(l_cont(&vb, 1.0).unwrap(), 0.0);
        assert_eq!(l_cont(&vb, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn cont_rejects_tiny_batch() {
        let vb = batch(&[&[1.0, 0.0]], &[0], 2);
        assert!(l_cont(&vb, 1.0).is_err());
    }

    #[test]
    fn cont_orthogonal_classes_matches_double_loop() {
        let vb = batch(
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]],
            &[0, 1, 0, 1],
            2,
        );
        let got = l_cont(&vb, 1.0).unwrap();
        let want = brute_cont(&vb.projections, &vb.labels, 1.0);
        assert!((got - want).abs() < 1e-12);
        // each view: positive cos 1 vs. two orthogonal negatives
        let per = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((got - 4.0 * per).abs() < 1e-12);
    }

    #[test]
    fn cont_invariant_to_projection_scale() {
        let a = batch(&[&[1.0, 2.0], &[0.5, -1.0], &[2.0, 2.0], &[0.1, -1.0]], &[0, 1, 0, 1], 2);
        let b = batch(&[&[10.0, 20.0], &[0.5, -1.0], &[2.0, 2.0], &[0.3, -3.0]], &[0, 1, 0, 1], 2);
        assert!((l_cont(&a, 1.0).unwrap() - l_cont(&b, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ce_examples() {
        let mut vb = batch(&[&[1.0], &[1.0], &[1.0], &[1.0]], &[0, 1, 0, 1], 2);
        assert!((l_ce(&vb) - 2f64.ln()).abs() < 1e-15);
        vb.logits = Mat::from_rows(&[[50.0, -50.0], [-50.0, 50.0], [50.0, -50.0], [-50.0, 50.0]]).unwrap();
        assert!(l_ce(&vb) < 1e-40);
    }

    #[test]
    fn proto_aligned_orthogonal_value() {
        let vb = batch(&[&[1.0, 0.0], &[1.0, 0.0]], &[0, 0], 2);
        let xi = Mat::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let got = l_proto(&vb, &xi, 1.0).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn proto_identical_prototypes_is_log_k() {
        let vb = batch(&[&[0.3, 0.7, -0.2], &[-1.0, 0.1, 0.4]], &[2, 2], 3);
        let xi = Mat::from_rows(&[[1.0, 1.0, 0.0]; 3]).unwrap();
        let got = l_proto(&vb, &xi, 0.7).unwrap();
        assert!((got - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn proto_rejects_zero_prototype() {
        let vb = batch(&[&[1.0, 0.0], &[1.0, 0.0]], &[0, 0], 2);
        let xi = Mat::from_rows(&[[0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(l_proto(&vb, &xi, 1.0), Err(MaplError::DegenerateVector(_))));
        assert!(l_uni(&xi).is_err());
    }

    #[test]
    fn uni_examples() {
        let same = Mat::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!((l_uni(&same).unwrap() - 1.0).abs() < 1e-15);
        let orth = Mat::identity(3);
        assert_eq!(l_uni(&orth).unwrap(), 0.0);
        let s3 = 3f64.sqrt() / 2.0;
        let tri = Mat::from_rows(&[[1.0, 0.0], [-0.5, s3], [-0.5, -s3]]).unwrap();
        assert!((l_uni(&tri).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (vb, xi) = random_batch(&mut rng, 3, 3, 4);
        assert_eq!(total_loss(&vb, &xi, &LossConfig::none(1.0)).unwrap(), 0.0);
        let full = total_loss(&vb, &xi, &LossConfig::all(1.0)).unwrap();
        let parts = l_cont(&vb, 1.0).unwrap() + l_ce(&vb) + l_proto(&vb, &xi, 1.0).unwrap() + l_uni(&xi).unwrap();
        assert!((full - parts).abs() < 1e-12);
        // l_ce + l_proto only
        let row1 = LossConfig {
            use_cont: false,
            use_uni: false,
            use_proto: true,
            use_ce: true,
            tau: 1.0,
        };
        let v = total_loss(&vb, &xi, &row1).unwrap();
        assert!((v - l_ce(&vb) - l_proto(&vb, &xi, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn terms_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b = rng.gen_range(1..5);
            let k = rng.gen_range(2..5);
            let (vb, xi) = random_batch(&mut rng, b, k, 3);
            let tau = rng.gen_range(0.2..2.0);
            let p = &vb.projections;
            assert!((l_cont(&vb, tau).unwrap() - brute_cont(p, &vb.labels, tau)).abs() < 1e-10);
            assert!((l_proto(&vb, &xi, tau).unwrap() - brute_proto(p, &vb.labels, &xi, tau)).abs() < 1e-10);
            assert!((l_uni(&xi).unwrap() - brute_uni(&xi)).abs() < 1e-10);
            assert!((l_ce(&vb) - brute_ce(&vb.logits, &vb.labels)).abs() < 1e-10);
        }
    }

    #[test]
    fn loss_and_grad_reports_same_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (vb, xi) = random_batch(&mut rng, 4, 3, 4);
        let cfg = LossConfig::all(0.5);
        let g = loss_and_grad(&vb, &xi, &cfg).unwrap();
        let t = loss_terms(&vb, &xi, &cfg).unwrap();
        assert!((g.terms.total() - t.total()).abs() < 1e-12);
    }

    // Central differences on the unit projections (treated as free
    // variables, renormalization is the model's concern), logits and ξ.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (vb, xi) = random_batch(&mut rng, 3, 3, 4);
        let cfg = LossConfig::all(0.7);
        let g = loss_and_grad(&vb, &xi, &cfg).unwrap();
        let h = 1e-6;
        let f = |vb: &ViewBatch, xi: &Mat| {
            // evaluate without renormalizing projections
            let mut t = 0.0;
            if cfg.use_cont {
                t += cont_coefficients(vb, cfg.tau).unwrap().0;
            }
            t += l_ce(vb);
            let (unit, _) = normalized_prototypes(xi).unwrap();
            t += proto_parts(vb, &unit, cfg.tau).0;
            t += l_uni(xi).unwrap();
            t
        };
        for i in 0..vb.projections.as_slice().len() {
            let mut a = vb.clone();
            let mut b = vb.clone();
            a.projections.as_mut_slice()[i] += h;
            b.projections.as_mut_slice()[i] -= h;
            let fd = (f(&a, &xi) - f(&b, &xi)) / (2.0 * h);
            assert!((fd - g.d_projections.as_slice()[i]).abs() < 1e-6, "proj {i}");
        }
        for i in 0..vb.logits.as_slice().len() {
            let mut a = vb.clone();
            let mut b = vb.clone();
            a.logits.as_mut_slice()[i] += h;
            b.logits.as_mut_slice()[i] -= h;
            let fd = (f(&a, &xi) - f(&b, &xi)) / (2.0 * h);
            assert!((fd - g.d_logits.as_slice()[i]).abs() < 1e-6, "logit {i}");
        }
        for i in 0..xi.as_slice().len() {
            let mut a = xi.clone();
            let mut b = xi.clone();
            a.as_mut_slice()[i] += h;
            b.as_mut_slice()[i] -= h;
            let fd = (f(&vb, &a) - f(&vb, &b)) / (2.0 * h);
            assert!((fd - g.d_xi.as_slice()[i]).abs() < 1e-6, "xi {i}");
        }
    }
}
