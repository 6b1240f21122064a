//! Run configuration: JSON schema, built-in defaults, dotted overrides and
//! validation.
//!
//! Resolution order is built-in default, then the config file, then dotted
//! overrides (`cgl.mu1=0.5`), each layer replacing only the keys it names.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cgl::{GraphNorm, GraphParams};
use crate::error::{MaplError, Result};
use crate::losses::LossConfig;
use crate::model::{ModelDims, BACKBONE_POOL};
use crate::pml::{AdamConfig, AugmentConfig, PmlConfig};
use crate::scenarios::ScenarioSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Prototype gossip plus learned collaboration graph.
    Mapl,
    /// Prototype gossip over the fixed uniform all-to-all graph.
    MaplNoCgl,
    /// Isolated clients, no communication.
    Local,
}

impl std::str::FromStr for Method {
    type Err = MaplError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapl" => Ok(Method::Mapl),
            "mapl_no_cgl" => Ok(Method::MaplNoCgl),
            "local" => Ok(Method::Local),
            other => Err(MaplError::InvalidArgument(format!(
                "unknown method `{other}` (expected mapl, mapl_no_cgl or local)"
            ))),
        }
    }
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mapl => "mapl",
            Method::MaplNoCgl => "mapl_no_cgl",
            Method::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Shared latent (= projection) width.
    pub latent_dim: usize,
    /// Fixed backbone index for every client; `null` draws one per client.
    pub backbone: Option<usize>,
    /// Start every client's projection and classifier heads from the same
    /// draw; extractors stay per-client.
    pub shared_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            backbone: None,
            shared_heads: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            batch_size: 64,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CglConfig {
    /// Ablation switch; `method = mapl_no_cgl` forces it off.
    pub enabled: bool,
    pub steps: usize,
    pub lr: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub beta: f64,
    pub eps: f64,
    pub norm: GraphNorm,
    /// When off, every valid entry of the similarity vector is set to -1.
    pub use_similarity: bool,
    /// When off, the confidence vector is uniform.
    pub use_gamma: bool,
}

impl Default for CglConfig {
    fn default() -> Self {
        let g = GraphParams::default();
        Self {
            enabled: true,
            steps: 1,
            lr: 0.1,
            mu1: g.mu1,
            mu2: g.mu2,
            beta: g.beta,
            eps: g.eps,
            norm: g.norm,
            use_similarity: true,
            use_gamma: true,
        }
    }
}

impl CglConfig {
    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            mu1: self.mu1,
            mu2: self.mu2,
            beta: self.beta,
            eps: self.eps,
            norm: self.norm,
        }
    }
}

/// Execution knobs that cannot change results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecConfig {
    pub out_dir: String,
    /// Worker threads for client computation; 1 runs single-threaded.
    pub parallel: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs/latest".into(),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub rounds: usize,
    /// Rounds before classifier exchange and graph learning start.
    pub warmup: usize,
    pub eval_interval: usize,
    pub scenario: ScenarioSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cgl: CglConfig,
    pub exec: ExecConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Mapl,
            seed: 0,
            rounds: 400,
            warmup: 100,
            eval_interval: 10,
            scenario: ScenarioSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cgl: CglConfig::default(),
            exec: ExecConfig::default(),
        }
    }
}

impl RunConfig {
    /// Whether graph learning runs after warmup.
    pub fn cgl_active(&self) -> bool {
        self.method == Method::Mapl && self.cgl.enabled
    }

    pub fn communicates(&self) -> bool {
        self.method != Method::Local
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.scenario.input_dim,
            latent_dim: self.model.latent_dim,
            num_classes: self.scenario.classes,
        }
    }

    pub fn pml_config(&self) -> PmlConfig {
        PmlConfig {
            loss: self.train.loss,
            augment: self.train.augment,
            adam: self.train.adam,
            batch_size: self.train.batch_size,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.scenario.violations();
        v.extend(self.train.augment.violations());
        if self.warmup > self.rounds {
            v.push(format!("warmup ({}) must not exceed rounds ({})", self.warmup, self.rounds));
        }
        if self.eval_interval == 0 {
            v.push("eval_interval must be positive".into());
        }
        if self.model.latent_dim == 0 {
            v.push("model.latent_dim must be positive".into());
        }
        if let Some(b) = self.model.backbone {
            if b >= BACKBONE_POOL.len() {
                v.push(format!("model.backbone must be < {}, got {b}", BACKBONE_POOL.len()));
            }
        }
        if self.train.local_epochs == 0 {
            v.push("train.local_epochs must be positive".into());
        }
        if self.train.batch_size == 0 {
            v.push("train.batch_size must be positive".into());
        }
        let a = &self.train.adam;
        if !(a.lr >= 0.0 && a.lr.is_finite()) {
            v.push(format!("train.adam.lr must be >= 0, got {}", a.lr));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            v.push("train.adam.beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(a.eps > 0.0) {
            v.push("train.adam.eps must be positive".into());
        }
        if !(self.train.loss.tau > 0.0 && self.train.loss.tau.is_finite()) {
            v.push(format!("train.loss.tau must be positive, got {}", self.train.loss.tau));
        }
        let c = &self.cgl;
        if c.steps == 0 {
            v.push("cgl.steps must be positive".into());
        }
        for (name, val) in [("lr", c.lr), ("mu1", c.mu1), ("mu2", c.mu2), ("beta", c.beta)] {
            if !(val >= 0.0 && val.is_finite()) {
                v.push(format!("cgl.{name} must be >= 0, got {val}"));
            }
        }
        if !(c.eps > 0.0 && c.eps.is_finite()) {
            v.push(format!("cgl.eps must be positive, got {}", c.eps));
        }
        if self.exec.parallel == 0 {
            v.push("exec.parallel must be positive".into());
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

    /// Resolves defaults ← `file` (a JSON object) ← `overrides`.
    pub fn resolve(file: Option<&Value>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(f) = file {
            if !f.is_object() {
                return Err(MaplError::Parse("config file must hold a JSON object".into()));
            }
            merge(&mut value, f);
        }
        for (key, raw) in overrides {
            set_dotted(&mut value, key, raw)?;
        }
        serde_json::from_value(value).map_err(|e| MaplError::InvalidConfig(vec![e.to_string()]))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::resolve(Some(&v), &[])
    }

    /// The configuration as echoed into run summaries (execution knobs omitted).
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("exec");
        }
        v
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, pv) in p {
                match b.get_mut(k) {
                    Some(bv) if bv.is_object() && pv.is_object() => merge(bv, pv),
                    _ => {
                        b.insert(k.clone(), pv.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parses `raw` as JSON, falling back to a plain string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn set_dotted(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(MaplError::InvalidArgument(format!("malformed override key `{key}`")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| MaplError::InvalidArgument(format!("`{key}`: `{p}` is not a section")))?;
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| MaplError::InvalidArgument(format!("`{key}` does not name a field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Splits `a.b=c` into `("a.b", "c")`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| MaplError::InvalidArgument(format!("override `{s}` must look like key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
