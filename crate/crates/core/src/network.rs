//! Round-synchronous peer-to-peer simulator.
//!
//! Each round every client, independently and in any order:
//! 1. trains locally (model and prototypes);
//! 2. after warmup, pulls classifier weights from its current neighbours and
//!    updates its mixing row;
//! 3. pulls prototypes from the neighbours of the updated row;
//! 4. replaces its prototypes by the row-weighted combination.
//!
//! Everything a client reads from a peer comes from the snapshot taken at the
//! start of the round, so scheduling order cannot affect results.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cgl::{cgl_update, confidence_vector, infer_similarity, neighbors_of};
use crate::config::{Method, RunConfig};
use crate::error::{MaplError, Result};
use crate::losses::LossTerms;
use crate::metrics::{accuracy, graph_recovery, mean_std, CommTotals, MetricRow, RunResult};
use crate::model::{init_heads, init_prototypes, sample_arch, ClientModel, BACKBONE_POOL};
use crate::numkernels::{axpy, is_on_simplex, Mat};
use crate::pml::{pml_epoch, OptimizerState};
use crate::scenarios::{generate, ClientDataset, GeneratedData};
use crate::seeding::{rng_for, stream};

/// Tolerance on the row sum of a mixing row.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Prototypes,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundMessage {
    pub sender: usize,
    pub receiver: usize,
    pub kind: PayloadKind,
    pub scalar_count: usize,
}

/// Messages of one round and the derived contact count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLog {
    pub messages: Vec<RoundMessage>,
    /// Distinct ordered sender→receiver pairs.
    pub contacts: u64,
    /// Distinct senders per receiver.
    pub contacts_per_client: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLog {
    pub rounds: Vec<RoundLog>,
    pub totals: CommTotals,
}

impl CommLog {
    fn record(&mut self, log: RoundLog) {
        for m in &log.messages {
            match m.kind {
                PayloadKind::Prototypes => self.totals.prototype_messages += 1,
                PayloadKind::Classifier => self.totals.classifier_messages += 1,
            }
            self.totals.scalars += m.scalar_count as u64;
        }
        self.totals.contacts += log.contacts;
        self.rounds.push(log);
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub model: ClientModel,
    pub xi: Mat,
    pub opt: OptimizerState,
    /// This client's row of the mixing matrix.
    pub w: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub last_terms: Option<LossTerms>,
}

impl ClientState {
    pub fn degree(&self, me: usize) -> f64 {
        self.w
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != me)
            .map(|(_, v)| v)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkState {
    pub clients: Vec<ClientState>,
    /// Rounds completed so far.
    pub round: usize,
    pub config: RunConfig,
    pub data: GeneratedData,
    pub gamma: Vec<f64>,
    pub comm: CommLog,
}

/// Immutable copies of what peers publish, taken at the start of a round.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub classifiers: Vec<Vec<f64>>,
    pub prototypes: Vec<Mat>,
}

impl Snapshot {
    pub fn capture(st: &NetworkState) -> Self {
        Self {
            classifiers: st.clients.iter().map(|c| c.model.classifier_flat()).collect(),
            prototypes: st.clients.iter().map(|c| c.xi.clone()).collect(),
        }
    }
}

/// What one client did during a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub terms: LossTerms,
    pub classifier_from: Vec<usize>,
    pub prototypes_from: Vec<usize>,
}

/// `ξ ← w_ii ξ_self + Σ_j w_ij ξ_j` over self and the listed neighbours,
/// renormalized so that pruned mass does not shrink the prototypes.
pub fn aggregate_prototypes(
    owner: usize,
    xi_self: &Mat,
    neighbors: &[(usize, &Mat)],
    w: &[f64],
) -> Result<Mat> {
    let shape = xi_self.shape();
    let mut mass = w[owner];
    for &(j, x) in neighbors {
        if x.shape() != shape {
            return Err(MaplError::DimensionMismatch {
                context: "aggregate_prototypes",
                expected: shape.0 * shape.1,
                got: x.as_slice().len(),
            });
        }
        mass += w[j];
    }
    if mass > 1.0 + ROW_SUM_TOL {
        return Err(MaplError::InvalidArgument(format!(
            "aggregation weights sum to {mass} > 1"
        )));
    }
    if !(mass > 0.0) {
        return Err(MaplError::InvalidArgument("aggregation weights sum to zero".into()));
    }
    let mut out = Mat::zeros(shape.0, shape.1);
    axpy(w[owner] / mass, xi_self.as_slice(), out.as_mut_slice());
    for &(j, x) in neighbors {
        axpy(w[j] / mass, x.as_slice(), out.as_mut_slice());
    }
    Ok(out)
}

/// Checks a mixing row against the simplex constraints.
pub fn check_row(client: usize, round: usize, w: &[f64]) -> Result<()> {
    if is_on_simplex(w, ROW_SUM_TOL) {
        Ok(())
    } else {
        Err(MaplError::MixingViolation {
            client,
            round,
            detail: format!("sum {} min {}", w.iter().sum::<f64>(), w.iter().copied().fold(f64::INFINITY, f64::min)),
        })
    }
}

/// Advances client `me` by one round, reading peers only through `snap`.
pub fn step_client(
    me: usize,
    client: &mut ClientState,
    data: &ClientDataset,
    snap: &Snapshot,
    gamma: &[f64],
    cfg: &RunConfig,
    round: usize,
) -> Result<ClientOutcome> {
    let pml = cfg.pml_config();
    let mut sum = LossTerms::default();
    for _ in 0..cfg.train.local_epochs {
        let rep = pml_epoch(
            &mut client.model,
            &mut client.xi,
            &data.train,
            &pml,
            &mut client.opt,
            &mut client.rng,
        )?;
        sum.add_assign(&rep.terms);
    }
    let terms = sum.scale(1.0 / cfg.train.local_epochs as f64);
    client.last_terms = Some(terms);

    let m = client.w.len();
    let mut classifier_from = Vec::new();
    if cfg.cgl_active() && round >= cfg.warmup {
        classifier_from = neighbors_of(me, &client.w);
        let own = client.model.classifier_flat();
        let peers: Vec<(usize, &[f64])> = classifier_from
            .iter()
            .map(|&j| (j, snap.classifiers[j].as_slice()))
            .collect();
        let mut s = infer_similarity(me, m, &own, &peers)?;
        if !cfg.cgl.use_similarity {
            for (v, ok) in s.s.iter_mut().zip(&s.valid) {
                if *ok {
                    *v = -1.0;
                }
            }
        }
        let uniform;
        let g = if cfg.cgl.use_gamma {
            gamma
        } else {
            uniform = vec![1.0 / m as f64; m];
            &uniform
        };
        client.w = cgl_update(&client.w, &s, g, &cfg.cgl.graph_params(), cfg.cgl.lr, cfg.cgl.steps)?;
    }
    check_row(me, round, &client.w)?;

    let prototypes_from = if cfg.communicates() {
        neighbors_of(me, &client.w)
    } else {
        Vec::new()
    };
    let peers: Vec<(usize, &Mat)> = prototypes_from
        .iter()
        .map(|&j| (j, &snap.prototypes[j]))
        .collect();
    client.xi = aggregate_prototypes(me, &client.xi, &peers, &client.w)?;

    Ok(ClientOutcome {
        terms,
        classifier_from,
        prototypes_from,
    })
}

fn round_log(outcomes: &[ClientOutcome], proto_scalars: usize, classifier_scalars: usize) -> RoundLog {
    let m = outcomes.len();
    let mut log = RoundLog {
        contacts_per_client: vec![0; m],
        ..RoundLog::default()
    };
    for (i, o) in outcomes.iter().enumerate() {
        let mut senders = vec![false; m];
        for &j in &o.classifier_from {
            log.messages.push(RoundMessage {
                sender: j,
                receiver: i,
                kind: PayloadKind::Classifier,
                scalar_count: classifier_scalars,
            });
            senders[j] = true;
        }
        for &j in &o.prototypes_from {
            log.messages.push(RoundMessage {
                sender: j,
                receiver: i,
                kind: PayloadKind::Prototypes,
                scalar_count: proto_scalars,
            });
            senders[j] = true;
        }
        let c = senders.iter().filter(|&&s| s).count();
        log.contacts_per_client[i] = c;
        log.contacts += c as u64;
    }
    log
}

impl NetworkState {
    /// Fresh network: data generated, models initialized, mixing rows set to
    /// uniform (identity for the local baseline).
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = generate(&cfg.scenario, cfg.seed)?;
        let m = cfg.scenario.clients;
        let dims = cfg.model_dims();
        let mut clients = Vec::with_capacity(m);
        for i in 0..m {
            let idx = match cfg.model.backbone {
                Some(b) => b,
                None => rng_for(cfg.seed, stream::ARCH, i as u64).gen_range(0..BACKBONE_POOL.len()),
            };
            let arch = sample_arch(idx, dims)?;
            let mut init = rng_for(cfg.seed, stream::MODEL_INIT, i as u64);
            let mut model = ClientModel::new(arch, &mut init)?;
            if cfg.model.shared_heads {
                let (psi, phi) = init_heads(&model.arch, &mut rng_for(cfg.seed, stream::HEAD_INIT, 0));
                model.psi = psi;
                model.phi = phi;
            }
            let xi = init_prototypes(dims.num_classes, dims.latent_dim, &mut init);
            let opt = OptimizerState::new(&model, &xi);
            let w = match cfg.method {
                Method::Local => (0..m).map(|j| if j == i { 1.0 } else { 0.0 }).collect(),
                Method::Mapl | Method::MaplNoCgl => vec![1.0 / m as f64; m],
            };
            clients.push(ClientState {
                model,
                xi,
                opt,
                w,
                rng: rng_for(cfg.seed, stream::TRAINING, i as u64),
                last_terms: None,
            });
        }
        let counts: Vec<usize> = data.clients.iter().map(|c| c.train.len()).collect();
        let gamma = confidence_vector(&counts)?;
        Ok(Self {
            clients,
            round: 0,
            config: cfg.clone(),
            data,
            gamma,
            comm: CommLog::default(),
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn weight_matrix(&self) -> Mat {
        let rows: Vec<&[f64]> = self.clients.iter().map(|c| c.w.as_slice()).collect();
        Mat::from_rows(&rows).expect("rows share length")
    }

    /// Runs one round; returns the per-client outcomes and the round's log.
    pub fn run_round(&mut self) -> Result<(Vec<ClientOutcome>, RoundLog)> {
        if self.round >= self.config.rounds {
            return Err(MaplError::InvalidArgument(format!(
                "all {} rounds already ran",
                self.config.rounds
            )));
        }
        let snap = Snapshot::capture(self);
        let t = self.round;
        let cfg = &self.config;
        let gamma = &self.gamma;
        let datasets = &self.data.clients;
        let work = |(i, c): (usize, &mut ClientState)| step_client(i, c, &datasets[i], &snap, gamma, cfg, t);

        let outcomes: Vec<ClientOutcome> = if cfg.exec.parallel > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.exec.parallel)
                .build()
                .map_err(|e| MaplError::InvalidArgument(e.to_string()))?;
            pool.install(|| self.clients.par_iter_mut().enumerate().map(work).collect::<Result<_>>())?
        } else {
            self.clients.iter_mut().enumerate().map(work).collect::<Result<_>>()?
        };

        let proto_scalars = cfg.scenario.classes * cfg.model.latent_dim;
        let classifier_scalars = self.clients[0].model.classifier_scalar_count();
        let log = round_log(&outcomes, proto_scalars, classifier_scalars);
        self.comm.record(log.clone());
        self.round += 1;
        for (i, c) in self.clients.iter().enumerate() {
            check_row(i, self.round, &c.w)?;
        }
        Ok((outcomes, log))
    }

    fn evaluate(&self) -> Result<Vec<f64>> {
        self.clients
            .iter()
            .zip(&self.data.clients)
            .map(|(c, d)| accuracy(&c.model, &d.test))
            .collect()
    }
}

/// Full experiment with no per-round observer.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    run_experiment_with(cfg, |_| {})
}

/// Full experiment; `observe` sees the state at every round boundary,
/// including the initial one.
pub fn run_experiment_with<F: FnMut(&NetworkState)>(cfg: &RunConfig, mut observe: F) -> Result<RunResult> {
    let mut st = NetworkState::init(cfg)?;
    observe(&st);
    let m = st.num_clients();
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();

    let mut acc = st.evaluate()?;
    for i in 0..m {
        rows.push(MetricRow {
            round: 0,
            client: i,
            loss_total: None,
            loss_cont: None,
            loss_ce: None,
            loss_proto: None,
            loss_uni: None,
            acc: Some(acc[i]),
            degree: st.clients[i].degree(i),
            contacts: 0,
        });
    }
    snapshots.push((0, st.weight_matrix()));

    let mut contacts_per_round = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (outcomes, log) = st.run_round()?;
        observe(&st);
        let r = st.round;
        let eval_now = r % cfg.eval_interval == 0 || r == cfg.rounds;
        if eval_now {
            acc = st.evaluate()?;
            snapshots.push((r, st.weight_matrix()));
        }
        for (i, o) in outcomes.iter().enumerate() {
            rows.push(MetricRow {
                round: r,
                client: i,
                loss_total: Some(o.terms.total()),
                loss_cont: Some(o.terms.cont),
                loss_ce: Some(o.terms.ce),
                loss_proto: Some(o.terms.proto),
                loss_uni: Some(o.terms.uni),
                acc: eval_now.then(|| acc[i]),
                degree: st.clients[i].degree(i),
                contacts: log.contacts_per_client[i],
            });
        }
        contacts_per_round.push(log.contacts);
    }

    let final_weights = st.weight_matrix();
    let (mean, std) = mean_std(&acc);
    Ok(RunResult {
        rows,
        final_acc_mean: mean,
        final_acc_std: std,
        final_accuracy: acc,
        graph_recovery: graph_recovery(&final_weights, &st.data.clusters),
        final_weights,
        comm: st.comm.totals.clone(),
        contacts_per_round,
        weight_snapshots: snapshots,
        clusters: st.data.clusters.clone(),
        seed: cfg.seed,
    })
}
