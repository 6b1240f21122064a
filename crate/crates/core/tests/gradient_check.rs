//! Analytic gradients versus central finite differences.

use maplsim::losses::LossConfig;
use maplsim::model::{init_prototypes, sample_arch, ArchSpec, ClientModel, ModelDims};
use maplsim::numkernels::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn loss_at(m: &ClientModel, views: &[Vec<f64>], labels: &[usize], xi: &Mat, cfg: &LossConfig) -> f64 {
    m.backward(views, labels, xi, cfg).unwrap().0.total()
}

/// Returns the worst violation ratio (≤ 1 passes).
fn check(m: &ClientModel, views: &[Vec<f64>], labels: &[usize], xi: &Mat, cfg: &LossConfig) -> f64 {
    let (_, grads) = m.backward(views, labels, xi, cfg).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();
    let mut numeric = Vec::with_capacity(analytic.len());

    let groups = m.param_slices().len();
    for g in 0..groups {
        let len = m.param_slices()[g].len();
        for i in 0..len {
            let mut plus = m.clone();
            plus.param_slices_mut()[g][i] += STEP;
            let mut minus = m.clone();
            minus.param_slices_mut()[g][i] -= STEP;
            numeric.push(
                (loss_at(&plus, views, labels, xi, cfg) - loss_at(&minus, views, labels, xi, cfg)) / (2.0 * STEP),
            );
        }
    }
    for i in 0..xi.as_slice().len() {
        let mut plus = xi.clone();
        plus.as_mut_slice()[i] += STEP;
        let mut minus = xi.clone();
        minus.as_mut_slice()[i] -= STEP;
        numeric.push((loss_at(m, views, labels, &plus, cfg) - loss_at(m, views, labels, &minus, cfg)) / (2.0 * STEP));
    }
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-3 {
                (a - n).abs() / 1e-6
            } else {
                (a - n).abs() / scale / 1e-4
            }
        })
        .fold(0.0, f64::max)
}

fn instance(seed: u64, k: usize, b: usize, hidden: Vec<usize>) -> (ClientModel, Vec<Vec<f64>>, Vec<usize>, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = ArchSpec {
        hidden_sizes: hidden,
        input_dim: 3,
        latent_dim: 4,
        proj_dim: 4,
        num_classes: k,
    };
    let m = ClientModel::new(arch, &mut rng).unwrap();
    let xi = init_prototypes(k, 4, &mut rng);
    let mut labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
    labels.extend_from_within(..);
    let views = (0..2 * b)
        .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    (m, views, labels, xi)
}

#[test]
fn every_flag_combination_matches_finite_differences() {
    let mut seed = 100;
    for mask in 0..16u32 {
        for &(k, b) in &[(2, 2), (3, 4)] {
            let cfg = LossConfig {
                use_cont: mask & 1 != 0,
                use_ce: mask & 2 != 0,
                use_proto: mask & 4 != 0,
                use_uni: mask & 8 != 0,
                tau: 0.5,
            };
            seed += 1;
            let (m, views, labels, xi) = instance(seed, k, b, vec![5]);
            let worst = check(&m, &views, &labels, &xi, &cfg);
            assert!(worst <= 1.0, "mask {mask:04b} k {k} b {b}: ratio {worst}");
        }
    }
}

#[test]
fn deep_and_shallow_extractors_match_finite_differences() {
    for (i, hidden) in [vec![], vec![6, 5], vec![4, 4, 4]].into_iter().enumerate() {
        let (m, views, labels, xi) = instance(7 + i as u64, 3, 4, hidden);
        let worst = check(&m, &views, &labels, &xi, &LossConfig::all(1.0));
        assert!(worst <= 1.0, "extractor {i}: ratio {worst}");
    }
}

#[test]
fn pool_backbones_match_finite_differences() {
    let dims = ModelDims {
        input_dim: 3,
        latent_dim: 4,
        num_classes: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for idx in [2, 3] {
        let m = ClientModel::new(sample_arch(idx, dims).unwrap(), &mut rng).unwrap();
        let xi = init_prototypes(2, 4, &mut rng);
        let views: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let worst = check(&m, &views, &[0, 1, 0, 1], &xi, &LossConfig::all(1.0));
        assert!(worst <= 1.0, "backbone {idx}: ratio {worst}");
    }
}
