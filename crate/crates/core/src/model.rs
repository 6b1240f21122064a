//! Heterogeneous client model: feature extractor, projection head and
//! classifier head, with a hand-written reverse pass.
//!
//! The extractor is an MLP whose hidden widths vary across clients; only its
//! output width (the latent dimension) is shared. The projection head is a
//! two-layer MLP on the latent, the classifier a single affine map on the
//! latent (linear logits).

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::losses::{loss_and_grad, LossConfig, LossTerms, ViewBatch};
use crate::numkernels::{dot, norm2, Mat};

/// Hidden-width profiles of the extractor pool.
pub const BACKBONE_POOL: [&[usize]; 4] = [&[64], &[128], &[32, 32], &[64, 32]];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden_sizes: Vec<usize>,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

/// Dimensions shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.input_dim == 0 {
            bad.push("input_dim must be positive".to_string());
        }
        if self.latent_dim == 0 {
            bad.push("latent_dim must be positive".to_string());
        }
        if self.num_classes == 0 {
            bad.push("num_classes must be positive".to_string());
        }
        if self.proj_dim != self.latent_dim {
            bad.push(format!(
                "proj_dim ({}) must equal latent_dim ({})",
                self.proj_dim, self.latent_dim
            ));
        }
        if self.hidden_sizes.contains(&0) {
            bad.push("hidden widths must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(MaplError::InvalidConfig(bad))
        }
    }

    /// Layer widths of the extractor, input first, latent last.
    pub fn extractor_widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden_sizes.iter().copied())
            .chain(std::iter::once(self.latent_dim))
            .collect()
    }
}

/// Picks one of the four backbone profiles.
pub fn sample_arch(pool_index: usize, dims: ModelDims) -> Result<ArchSpec> {
    let hidden = BACKBONE_POOL.get(pool_index).ok_or_else(|| {
        MaplError::InvalidArgument(format!(
            "backbone pool index {pool_index} out of range 0..{}",
            BACKBONE_POOL.len()
        ))
    })?;
    Ok(ArchSpec {
        hidden_sizes: hidden.to_vec(),
        input_dim: dims.input_dim,
        latent_dim: dims.latent_dim,
        proj_dim: dims.latent_dim,
        num_classes: dims.num_classes,
    })
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Mat::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform in `±sqrt(1/fan_in)` for both weight and bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.as_mut_slice() {
            *w = rng.gen_range(-bound..=bound);
        }
        for b in &mut layer.bias {
            *b = rng.gen_range(-bound..=bound);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight.matvec(x, Some(&self.bias))
    }

    /// Accumulates `∂/∂W += g xᵀ`, `∂/∂b += g`; returns `Wᵀ g`.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense) -> Vec<f64> {
        grad.weight.add_outer(1.0, g, x);
        for (gb, gi) in grad.bias.iter_mut().zip(g) {
            *gb += gi;
        }
        self.weight.matvec_t(g)
    }

    fn scalar_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    fn shape_like(&self) -> Dense {
        Dense::zeros(self.input_dim(), self.output_dim())
    }

    fn all_finite(&self) -> bool {
        self.weight.all_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Output of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub latent: Vec<f64>,
    pub projection: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Intermediate activations kept for the reverse pass.
struct Trace {
    /// Input of every extractor layer (post-ReLU where applicable).
    extractor_inputs: Vec<Vec<f64>>,
    /// Post-ReLU hidden activation of the projection head.
    proj_hidden: Vec<f64>,
    out: Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientModel {
    pub arch: ArchSpec,
    pub theta: Vec<Dense>,
    pub psi: Vec<Dense>,
    pub phi: Dense,
}

/// Gradients congruent with a [`ClientModel`] and its prototype set.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_theta: Vec<Dense>,
    pub d_psi: Vec<Dense>,
    pub d_phi: Dense,
    pub d_xi: Mat,
}

impl GradientBundle {
    /// Parameter-group slices in the same order as [`ClientModel::param_slices_mut`]
    /// followed by `d_xi`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.d_theta.iter().chain(&self.d_psi).chain(std::iter::once(&self.d_phi)) {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(self.d_xi.as_slice());
        out
    }

    pub fn all_finite(&self) -> bool {
        self.d_theta.iter().chain(&self.d_psi).all(Dense::all_finite)
            && self.d_phi.all_finite()
            && self.d_xi.all_finite()
    }
}

impl ClientModel {
    pub fn new<R: Rng + ?Sized>(arch: ArchSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let widths = arch.extractor_widths();
        let theta = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        let (psi, phi) = init_heads(&arch, rng);
        Ok(Self {
            arch,
            theta,
            psi,
            phi,
        })
    }

    /// Model with every parameter set to zero.
    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        arch.validate()?;
        let widths = arch.extractor_widths();
        Ok(Self {
            theta: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            psi: vec![
                Dense::zeros(arch.latent_dim, arch.proj_dim),
                Dense::zeros(arch.proj_dim, arch.proj_dim),
            ],
            phi: Dense::zeros(arch.latent_dim, arch.num_classes),
            arch,
        })
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.theta.len());
        let mut h = x.to_vec();
        let last = self.theta.len() - 1;
        for (i, layer) in self.theta.iter().enumerate() {
            let mut next = layer.forward(&h);
            if i < last {
                relu(&mut next);
            }
            inputs.push(std::mem::replace(&mut h, next));
        }
        let latent = h;
        let mut hidden = self.psi[0].forward(&latent);
        relu(&mut hidden);
        let projection = self.psi[1].forward(&hidden);
        let logits = self.phi.forward(&latent);
        Trace {
            extractor_inputs: inputs,
            proj_hidden: hidden,
            out: Features {
                latent,
                projection,
                logits,
            },
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(MaplError::DimensionMismatch {
                context: "forward_features input",
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &[f64]) -> Result<Features> {
        self.check_input(x)?;
        Ok(self.trace(x).out)
    }

    /// Class logits only (used for evaluation).
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let last = self.theta.len() - 1;
        for (i, layer) in self.theta.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                relu(&mut h);
            }
        }
        Ok(self.phi.forward(&h))
    }

    /// Flattened classifier parameters (weights row by row, then bias).
    pub fn classifier_flat(&self) -> Vec<f64> {
        let mut v = self.phi.weight.as_slice().to_vec();
        v.extend_from_slice(&self.phi.bias);
        v
    }

    pub fn classifier_scalar_count(&self) -> usize {
        self.phi.scalar_count()
    }

    pub fn zero_grad(&self, num_prototypes: usize) -> GradientBundle {
        GradientBundle {
            d_theta: self.theta.iter().map(Dense::shape_like).collect(),
            d_psi: self.psi.iter().map(Dense::shape_like).collect(),
            d_phi: self.phi.shape_like(),
            d_xi: Mat::zeros(num_prototypes, self.arch.proj_dim),
        }
    }

    /// Mutable parameter groups: for every layer (extractor, projector,
    /// classifier) its weight then its bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self
            .theta
            .iter_mut()
            .chain(self.psi.iter_mut())
            .chain(std::iter::once(&mut self.phi))
        {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.theta.iter().chain(&self.psi).chain(std::iter::once(&self.phi)) {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().chain(&self.psi).all(Dense::all_finite) && self.phi.all_finite()
    }

    /// Loss of the configured terms on `views` (2B inputs, first views then
    /// second views) and its exact gradient w.r.t. every parameter and `xi`.
    pub fn backward(
        &self,
        views: &[Vec<f64>],
        labels: &[usize],
        xi: &Mat,
        cfg: &LossConfig,
    ) -> Result<(LossTerms, GradientBundle)> {
        if views.is_empty() {
            return Err(MaplError::InvalidArgument("empty batch".into()));
        }
        if views.len() != labels.len() {
            return Err(MaplError::DimensionMismatch {
                context: "backward labels",
                expected: views.len(),
                got: labels.len(),
            });
        }
        let k = self.arch.num_classes;
        if xi.shape() != (k, self.arch.proj_dim) {
            return Err(MaplError::DimensionMismatch {
                context: "backward prototypes",
                expected: k * self.arch.proj_dim,
                got: xi.as_slice().len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(MaplError::InvalidArgument(format!(
                "label {bad} outside 0..{k}"
            )));
        }
        for x in views {
            self.check_input(x)?;
        }

        let n = views.len();
        let traces: Vec<Trace> = views.iter().map(|x| self.trace(x)).collect();
        let need_unit = cfg.use_cont || cfg.use_proto;
        let dp = self.arch.proj_dim;

        let mut unit = Mat::zeros(n, dp);
        let mut proj_norms = vec![1.0; n];
        if need_unit {
            for (q, t) in traces.iter().enumerate() {
                let nrm = norm2(&t.out.projection);
                if nrm == 0.0 || !nrm.is_finite() {
                    return Err(MaplError::NonFiniteLoss {
                        term: if cfg.use_cont { "l_cont" } else { "l_proto" }.into(),
                        detail: format!("projection of view {q} has norm {nrm}"),
                    });
                }
                proj_norms[q] = nrm;
                for (u, p) in unit.row_mut(q).iter_mut().zip(&t.out.projection) {
                    *u = p / nrm;
                }
            }
        }
        let logits = Mat::from_rows(&traces.iter().map(|t| t.out.logits.as_slice()).collect::<Vec<_>>())?;
        let vb = ViewBatch {
            projections: unit,
            latents: Mat::zeros(n, 0),
            logits,
            labels: labels.to_vec(),
        };
        let lg = loss_and_grad(&vb, xi, cfg)?;
        if let Some(term) = lg.terms.first_non_finite() {
            return Err(MaplError::NonFiniteLoss {
                term: term.into(),
                detail: format!("{:?}", lg.terms),
            });
        }

        let mut grads = self.zero_grad(k);
        grads.d_xi = lg.d_xi;
        let classifier_active = cfg.use_ce;
        for (q, t) in traces.iter().enumerate() {
            let mut d_latent = vec![0.0; self.arch.latent_dim];
            if need_unit {
                // through p̂ = p/‖p‖
                let u = vb.projections.row(q);
                let g = lg.d_projections.row(q);
                let along = dot(u, g);
                let d_p: Vec<f64> = g
                    .iter()
                    .zip(u)
                    .map(|(gi, ui)| (gi - ui * along) / proj_norms[q])
                    .collect();
                let mut d_hidden = self.psi[1].backward(&t.proj_hidden, &d_p, &mut grads.d_psi[1]);
                for (dh, h) in d_hidden.iter_mut().zip(&t.proj_hidden) {
                    if *h <= 0.0 {
                        *dh = 0.0;
                    }
                }
                let d_z = self.psi[0].backward(&t.out.latent, &d_hidden, &mut grads.d_psi[0]);
                crate::numkernels::axpy(1.0, &d_z, &mut d_latent);
            }
            if classifier_active {
                let d_z = self.phi.backward(&t.out.latent, lg.d_logits.row(q), &mut grads.d_phi);
                crate::numkernels::axpy(1.0, &d_z, &mut d_latent);
            }
            if !need_unit && !classifier_active {
                continue;
            }
            let mut g = d_latent;
            for i in (0..self.theta.len()).rev() {
                let input = &t.extractor_inputs[i];
                let d_in = self.theta[i].backward(input, &g, &mut grads.d_theta[i]);
                if i == 0 {
                    break;
                }
                // input of layer i is relu(pre-activation of layer i-1)
                g = d_in
                    .into_iter()
                    .zip(input)
                    .map(|(d, &a)| if a > 0.0 { d } else { 0.0 })
                    .collect();
            }
        }
        Ok((lg.terms, grads))
    }

    /// Writes parameters as a one-line JSON header followed by little-endian
    /// f64 values in [`ClientModel::param_slices`] order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            arch: self.arch.clone(),
            shapes: self.layer_shapes(),
            scalars: self.param_slices().iter().map(|s| s.len()).sum(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in self.param_slices() {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut reader = std::io::BufReader::new(r);
        let mut line = String::new();
        std::io::BufRead::read_line(&mut reader, &mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(MaplError::Parse(format!(
                "unknown checkpoint format `{}`",
                header.format
            )));
        }
        let mut model = ClientModel::zeros(header.arch)?;
        if model.layer_shapes() != header.shapes {
            return Err(MaplError::Parse("checkpoint shapes disagree with arch".into()));
        }
        let mut buf = [0u8; 8];
        for s in model.param_slices_mut() {
            for v in s.iter_mut() {
                reader.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut v = Vec::new();
        for (i, l) in self.theta.iter().enumerate() {
            v.push((format!("theta.{i}"), l.output_dim(), l.input_dim()));
        }
        for (i, l) in self.psi.iter().enumerate() {
            v.push((format!("psi.{i}"), l.output_dim(), l.input_dim()));
        }
        v.push(("phi".into(), self.phi.output_dim(), self.phi.input_dim()));
        v
    }
}

const CHECKPOINT_FORMAT: &str = "maplsim-params-v1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    arch: ArchSpec,
    /// `(name, rows, cols)` per weight matrix; each is followed by its bias.
    shapes: Vec<(String, usize, usize)>,
    scalars: usize,
}

/// Prototype matrix initialized like a `d_p → K` linear layer.
/// Fresh projection and classifier heads; they depend only on the shared
/// widths, not on the extractor.
pub fn init_heads<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> (Vec<Dense>, Dense) {
    let psi = vec![
        Dense::init(arch.latent_dim, arch.proj_dim, rng),
        Dense::init(arch.proj_dim, arch.proj_dim, rng),
    ];
    (psi, Dense::init(arch.latent_dim, arch.num_classes, rng))
}

pub fn init_prototypes<R: Rng + ?Sized>(k: usize, proj_dim: usize, rng: &mut R) -> Mat {
    let bound = (1.0 / proj_dim as f64).sqrt();
    let mut xi = Mat::zeros(k, proj_dim);
    for v in xi.as_mut_slice() {
        *v = rng.gen_range(-bound..=bound);
    }
    xi
}
