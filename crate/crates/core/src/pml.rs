//! Local personalized training: two stochastic views per sample, a joint
//! step on the model and its prototypes with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::losses::{LossConfig, LossTerms};
use crate::model::{ClientModel, GradientBundle};
use crate::numkernels::Mat;

/// Feature-vector augmentation: additive Gaussian noise followed by
/// independent coordinate dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub dropout_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            dropout_p: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            v.push(format!("augment.noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            v.push(format!("augment.dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.noise_sigma == 0.0 && self.dropout_p == 0.0 {
            v.push("augment: noise_sigma and dropout_p cannot both be zero".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(MaplError::InvalidConfig(v))
        }
    }
}

fn augment<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).unwrap());
    x.iter()
        .map(|&v| {
            let v = match &noise {
                Some(n) => v + n.sample(rng),
                None => v,
            };
            if cfg.dropout_p > 0.0 && rng.gen::<f64>() < cfg.dropout_p {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Two independent stochastic views of `x`.
pub fn make_views<R: Rng + ?Sized>(
    x: &[f64],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let a = augment(x, cfg, rng);
    let b = augment(x, cfg, rng);
    Ok((a, b))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for every parameter group plus the prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &ClientModel, xi: &Mat) -> Self {
        let mut sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        sizes.push(xi.as_slice().len());
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn apply(
        &mut self,
        cfg: &AdamConfig,
        model: &mut ClientModel,
        xi: &mut Mat,
        grads: &GradientBundle,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut params = model.param_slices_mut();
        params.push(xi.as_mut_slice());
        let grads = grads.slices();
        debug_assert_eq!(params.len(), grads.len());
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
                *pi -= cfg.lr * update;
            }
        }
    }
}

/// Everything a local epoch needs besides the mutable client state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlConfig {
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

/// Mean per-batch losses over one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochReport {
    pub terms: LossTerms,
    pub batches: usize,
}

impl EpochReport {
    pub fn total(&self) -> f64 {
        self.terms.total()
    }
}

/// One pass over `data` in reshuffled minibatches; each batch takes one
/// optimizer step on the model and the prototypes.
pub fn pml_epoch<R: Rng + ?Sized>(
    model: &mut ClientModel,
    xi: &mut Mat,
    data: &[(Vec<f64>, usize)],
    cfg: &PmlConfig,
    opt: &mut OptimizerState,
    rng: &mut R,
) -> Result<EpochReport> {
    if data.is_empty() {
        return Err(MaplError::InvalidArgument("local dataset is empty".into()));
    }
    let batch_size = cfg.batch_size.clamp(1, data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut sum = LossTerms::default();
    let mut batches = 0;
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let mut first = Vec::with_capacity(chunk.len());
        let mut second = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (xa, xb) = make_views(&data[i].0, &cfg.augment, rng)?;
            first.push(xa);
            second.push(xb);
        }
        first.append(&mut second);
        let labels: Vec<usize> = chunk.iter().chain(chunk).map(|&i| data[i].1).collect();
        let (terms, grads) = model
            .backward(&first, &labels, xi, &cfg.loss)
            .map_err(|e| match e {
                MaplError::NonFiniteLoss { term, detail } => MaplError::NonFiniteLoss {
                    term,
                    detail: format!("batch {b}: {detail}"),
                },
                other => other,
            })?;
        if !grads.all_finite() {
            return Err(MaplError::NonFiniteLoss {
                term: "gradient".into(),
                detail: format!("batch {b}: {terms:?}"),
            });
        }
        opt.apply(&cfg.adam, model, xi, &grads);
        sum.add_assign(&terms);
        batches += 1;
    }
    Ok(EpochReport {
        terms: sum.scale(1.0 / batches as f64),
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_prototypes, ArchSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<f64>, usize)> {
        (0..n)
            .map(|i| {
                let y = i % 2;
                let c = if y == 0 { 2.0 } else { -2.0 };
                (
                    vec![c + rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0), c * 0.5],
                    y,
                )
            })
            .collect()
    }

    fn setup(seed: u64) -> (ClientModel, Mat, Vec<(Vec<f64>, usize)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchSpec {
            hidden_sizes: vec![8],
            input_dim: 3,
            latent_dim: 4,
            proj_dim: 4,
            num_classes: 2,
        };
        let m = ClientModel::new(arch, &mut rng).unwrap();
        let xi = init_prototypes(2, 4, &mut rng);
        let data = toy_data(&mut rng, 40);
        (m, xi, data)
    }

    fn cfg(lr: f64, loss: LossConfig) -> PmlConfig {
        PmlConfig {
            loss,
            augment: AugmentConfig::default(),
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            batch_size: 8,
        }
    }

    #[test]
    fn degenerate_augment_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = AugmentConfig {
            noise_sigma: 0.0,
            dropout_p: 0.0,
        };
        assert!(make_views(&[1.0], &bad, &mut rng).is_err());
    }

    #[test]
    fn noise_views_differ_and_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig {
            noise_sigma: 0.1,
            dropout_p: 0.0,
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let (a, b) = make_views(&x, &cfg, &mut rng).unwrap();
            assert_ne!(a, b);
            for (ai, xi) in a.iter().zip(&x) {
                worst = worst.max((ai - xi).abs());
            }
        }
        assert!(worst < 5.5 * 0.1, "max deviation {worst}");
    }

    #[test]
    fn heavy_dropout_keeps_expected_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 0.05;
        let cfg = AugmentConfig {
            noise_sigma: 0.0,
            dropout_p: 1.0 - eps,
        };
        let d = 20;
        let x = vec![1.0; d];
        let draws = 10_000;
        let mass: f64 = (0..draws)
            .map(|_| make_views(&x, &cfg, &mut rng).unwrap().0.iter().sum::<f64>())
            .sum::<f64>()
            / draws as f64;
        assert!((mass - eps * d as f64).abs() < 0.05, "mass {mass}");
    }

    #[test]
    fn zero_lr_is_pure_evaluation() {
        let (mut m, mut xi, data) = setup(3);
        let (m0, xi0) = (m.clone(), xi.clone());
        let mut opt = OptimizerState::new(&m, &xi);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rep = pml_epoch(&mut m, &mut xi, &data, &cfg(0.0, LossConfig::all(1.0)), &mut opt, &mut rng).unwrap();
        assert!(rep.total().is_finite() && rep.batches == 5);
        assert_eq!(m, m0);
        assert_eq!(xi, xi0);
    }

    #[test]
    fn prototypes_frozen_without_proto_and_uni() {
        let (mut m, mut xi, data) = setup(5);
        let xi0 = xi.clone();
        let loss = LossConfig {
            use_proto: false,
            use_uni: false,
            ..LossConfig::all(1.0)
        };
        let mut opt = OptimizerState::new(&m, &xi);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        pml_epoch(&mut m, &mut xi, &data, &cfg(1e-2, loss), &mut opt, &mut rng).unwrap();
        assert_eq!(xi, xi0);
    }

    #[test]
    fn epoch_is_deterministic() {
        let run = || {
            let (mut m, mut xi, data) = setup(7);
            let mut opt = OptimizerState::new(&m, &xi);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            pml_epoch(&mut m, &mut xi, &data, &cfg(1e-3, LossConfig::all(1.0)), &mut opt, &mut rng).unwrap();
            (m, xi)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss_on_separable_toy_set() {
        let (mut m, mut xi, data) = setup(9);
        let c = cfg(1e-2, LossConfig::all(1.0));
        let mut opt = OptimizerState::new(&m, &xi);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let frozen = PmlConfig {
            adam: AdamConfig { lr: 0.0, ..c.adam },
            ..c
        };
        let mut probe = OptimizerState::new(&m, &xi);
        let before = pml_epoch(&mut m.clone(), &mut xi.clone(), &data, &frozen, &mut probe, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap()
            .total();
        for _ in 0..5 {
            pml_epoch(&mut m, &mut xi, &data, &c, &mut opt, &mut rng).unwrap();
        }
        let after = pml_epoch(&mut m.clone(), &mut xi.clone(), &data, &frozen, &mut probe, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap()
            .total();
        assert!(after < before, "before {before} after {after}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (mut m, mut xi, _) = setup(12);
        let mut opt = OptimizerState::new(&m, &xi);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pml_epoch(&mut m, &mut xi, &[], &cfg(1e-3, LossConfig::all(1.0)), &mut opt, &mut rng).is_err());
    }
}
