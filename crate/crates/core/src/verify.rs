//! Fast self-check suite: gradient exactness, simplex projection, loss
//! values and contact arithmetic, each against an independent oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};
use crate::losses::{l_ce, l_cont, l_proto, l_uni, LossConfig, ViewBatch};
use crate::model::{init_prototypes, ArchSpec, ClientModel};
use crate::network::run_experiment;
use crate::numkernels::{l2_normalize, project_to_simplex, project_to_simplex_sorted, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all() -> Vec<Check> {
    vec![
        gradients(),
        projection(project_to_simplex),
        losses(),
        contacts(),
    ]
}

fn loss_at(m: &ClientModel, views: &[Vec<f64>], labels: &[usize], xi: &Mat, cfg: &LossConfig) -> f64 {
    m.backward(views, labels, xi, cfg).map(|(t, _)| t.total()).unwrap_or(f64::NAN)
}

/// Worst ratio of gradient error to tolerance over one instance.
fn gradient_ratio(m: &ClientModel, views: &[Vec<f64>], labels: &[usize], xi: &Mat, cfg: &LossConfig) -> f64 {
    const H: f64 = 1e-5;
    let analytic: Vec<f64> = match m.backward(views, labels, xi, cfg) {
        Ok((_, g)) => g.slices().concat(),
        Err(_) => return f64::INFINITY,
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for g in 0..m.param_slices().len() {
        for i in 0..m.param_slices()[g].len() {
            let mut plus = m.clone();
            plus.param_slices_mut()[g][i] += H;
            let mut minus = m.clone();
            minus.param_slices_mut()[g][i] -= H;
            numeric.push((loss_at(&plus, views, labels, xi, cfg) - loss_at(&minus, views, labels, xi, cfg)) / (2.0 * H));
        }
    }
    for i in 0..xi.as_slice().len() {
        let mut plus = xi.clone();
        plus.as_mut_slice()[i] += H;
        let mut minus = xi.clone();
        minus.as_mut_slice()[i] -= H;
        numeric.push((loss_at(m, views, labels, &plus, cfg) - loss_at(m, views, labels, &minus, cfg)) / (2.0 * H));
    }
    if numeric.len() != analytic.len() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            let r = if scale < 1e-3 { (a - n).abs() / 1e-6 } else { (a - n).abs() / scale / 1e-4 };
            if r.is_nan() { f64::INFINITY } else { r }
        })
        .fold(0.0, f64::max)
}

fn gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut worst = 0.0f64;
    let mut n = 0;
    for mask in 0..16u32 {
        for &(k, b) in &[(2usize, 2usize), (3, 4)] {
            let cfg = LossConfig {
                use_cont: mask & 1 != 0,
                use_ce: mask & 2 != 0,
                use_proto: mask & 4 != 0,
                use_uni: mask & 8 != 0,
                tau: 0.5,
            };
            let arch = ArchSpec {
                hidden_sizes: vec![5],
                input_dim: 3,
                latent_dim: 4,
                proj_dim: 4,
                num_classes: k,
            };
            let Ok(m) = ClientModel::new(arch, &mut rng) else {
                return check("gradients", false, "model construction failed".into());
            };
            let xi = init_prototypes(k, 4, &mut rng);
            let mut labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            labels.extend_from_within(..);
            let views: Vec<Vec<f64>> = (0..2 * b)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            worst = worst.max(gradient_ratio(&m, &views, &labels, &xi, &cfg));
            n += 1;
        }
    }
    check(
        "gradients",
        worst <= 1.0,
        format!("{n} instances, worst error/tolerance {worst:.3}"),
    )
}

/// Compares `project` with the sort-based oracle on random vectors.
pub fn projection(project: fn(&[f64]) -> Vec<f64>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7369_6d70);
    let mut worst = 0.0f64;
    let mut feasible = true;
    for _ in 0..1000 {
        let d = rng.gen_range(2..=50);
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let fast = project(&y);
        let oracle = project_to_simplex_sorted(&y);
        if fast.len() != d {
            return check("simplex projection", false, format!("length {} for input {d}", fast.len()));
        }
        for (a, b) in fast.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
        let sum: f64 = fast.iter().sum();
        feasible &= fast.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= 1e-9;
    }
    check(
        "simplex projection",
        worst <= 1e-9 && feasible,
        format!("1000 vectors, max deviation {worst:.2e}, feasible {feasible}"),
    )
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    d / (na.sqrt() * nb.sqrt())
}

fn brute_cont(p: &Mat, labels: &[usize], tau: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for q in 0..n {
        let mut denom = 0.0;
        for m in 0..n {
            if m != q {
                denom += (cos(p.row(q), p.row(m)) / tau).exp();
            }
        }
        let mut inner = 0.0;
        let mut count = 0;
        for r in 0..n {
            if r != q && labels[r] == labels[q] {
                inner += ((cos(p.row(q), p.row(r)) / tau).exp() / denom).ln();
                count += 1;
            }
        }
        if count > 0 {
            total -= inner / count as f64;
        }
    }
    total
}

fn brute_proto(p: &Mat, labels: &[usize], xi: &Mat, tau: f64) -> f64 {
    let mut total = 0.0;
    for q in 0..labels.len() {
        let mut den = 0.0;
        for k in 0..xi.rows() {
            den += (cos(p.row(q), xi.row(k)) / tau).exp();
        }
        total += ((cos(p.row(q), xi.row(labels[q])) / tau).exp() / den).ln();
    }
    -total / labels.len() as f64
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
        let mut den = 0.0;
        for c in 0..logits.cols() {
            den += logits[(q, c)].exp();
        }
        t -= (logits[(q, y)].exp() / den).ln();
    }
    t / labels.len() as f64
}

fn unit_rows(rows: &[Vec<f64>]) -> Mat {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| l2_normalize(r).expect("nonzero row")).collect();
    Mat::from_rows(&rows).expect("equal rows")
}

fn losses() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c6f_7373);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(2..=4);
        let b = rng.gen_range(1..=4);
        let dp = rng.gen_range(2..=5);
        let tau = rng.gen_range(0.2..2.0);
        let mut labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        labels.extend_from_within(..);
        let raw: Vec<Vec<f64>> = (0..2 * b)
            .map(|_| (0..dp).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let logits: Vec<Vec<f64>> = (0..2 * b)
            .map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let xi = Mat::from_rows(
            &(0..k)
                .map(|_| (0..dp).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
                .collect::<Vec<_>>(),
        )
        .expect("equal rows");
        let vb = ViewBatch {
            projections: unit_rows(&raw),
            latents: Mat::zeros(2 * b, 1),
            logits: Mat::from_rows(&logits).expect("equal rows"),
            labels: labels.clone(),
        };
        let diffs = [
            l_cont(&vb, tau).map(|v| v - brute_cont(&vb.projections, &labels, tau)),
            l_proto(&vb, &xi, tau).map(|v| v - brute_proto(&vb.projections, &labels, &xi, tau)),
            l_uni(&xi).map(|v| v - brute_uni(&xi)),
            Ok(l_ce(&vb) - brute_ce(&vb.logits, &labels)),
        ];
        for d in diffs {
            worst = worst.max(d.map(f64::abs).unwrap_or(f64::INFINITY));
        }
    }

    // aligned/orthogonal prototype pair, identical prototypes, single pair
    let vb = ViewBatch {
        projections: unit_rows(&[vec![1.0, 0.0]]),
        latents: Mat::zeros(1, 1),
        logits: Mat::zeros(1, 2),
        labels: vec![0],
    };
    let xi = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).expect("2x2");
    let proto = l_proto(&vb, &xi, 1.0).unwrap_or(f64::NAN);
    let want = (1.0 + (-1.0f64).exp()).ln();
    let uni = l_uni(&Mat::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).expect("2x2")).unwrap_or(f64::NAN);
    let single = ViewBatch {
        projections: unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        latents: Mat::zeros(2, 1),
        logits: Mat::zeros(2, 2),
        labels: vec![0, 0],
    };
    let cont = l_cont(&single, 1.0).unwrap_or(f64::NAN);
    let spots = (proto - want).abs() < 1e-12 && (uni - 1.0).abs() < 1e-12 && cont.abs() < 1e-12;
    check(
        "loss oracles",
        worst <= 1e-10 && spots,
        format!("50 instances, max deviation {worst:.2e}, spot values ok {spots}"),
    )
}

fn contacts() -> Check {
    let mut cfg = RunConfig::default();
    cfg.scenario.clients = 4;
    cfg.scenario.samples_per_class = 8;
    cfg.scenario.test_per_class = 2;
    cfg.scenario.input_dim = 4;
    cfg.model.latent_dim = 4;
    cfg.rounds = 3;
    cfg.warmup = 0;
    cfg.eval_interval = 3;
    let (m, t) = (4u64, 3u64);
    let mut counts = Vec::new();
    for method in [Method::MaplNoCgl, Method::Local] {
        cfg.method = method;
        match run_experiment(&cfg) {
            Ok(r) => counts.push(r.comm.contacts),
            Err(e) => return check("contact arithmetic", false, e.to_string()),
        }
    }
    let want = m * (m - 1) * t;
    check(
        "contact arithmetic",
        counts == [want, 0],
        format!("all-to-all {} (want {want}), local {}", counts[0], counts[1]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn shifted_threshold_is_caught() {
        fn broken(y: &[f64]) -> Vec<f64> {
            let mut w = project_to_simplex(y);
            // off-by-one in the active set shifts every entry
            let shift = 1.0 / y.len() as f64;
            w.iter_mut().for_each(|v| *v = (*v - shift).max(0.0));
            w
        }
        assert!(!projection(broken).passed);
    }
}
