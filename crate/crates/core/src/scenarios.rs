//! Synthetic label-skew scenarios: Gaussian class blobs shared by all
//! clients, with clusters of clients holding disjoint (1, 3) or overlapping
//! (2, 4) class subsets and fixed (1, 2) or randomized (3, 4) per-class counts.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MaplError, Result};
use crate::numkernels::Mat;
use crate::seeding::{rng_for, stream};

pub type Sample = (Vec<f64>, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// 1 and 3 give disjoint cluster class sets, 2 and 4 overlapping ones;
    /// 3 and 4 draw per-class counts from `samples_range`.
    pub id: u8,
    pub clients: usize,
    pub clusters: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub samples_range: [usize; 2],
    pub test_per_class: usize,
    pub input_dim: usize,
    pub class_sep: f64,
    pub within_sigma: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            id: 1,
            clients: 10,
            clusters: 2,
            classes: 10,
            samples_per_class: 300,
            samples_range: [100, 300],
            test_per_class: 15,
            input_dim: 32,
            class_sep: 6.0,
            within_sigma: 1.0,
        }
    }
}

impl ScenarioSpec {
    pub fn overlapping(&self) -> bool {
        matches!(self.id, 2 | 4)
    }

    pub fn randomized_counts(&self) -> bool {
        matches!(self.id, 3 | 4)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(1..=4).contains(&self.id) {
            v.push(format!("scenario.id must be 1..=4, got {}", self.id));
        }
        for (name, val) in [
            ("clients", self.clients),
            ("clusters", self.clusters),
            ("classes", self.classes),
            ("test_per_class", self.test_per_class),
            ("input_dim", self.input_dim),
        ] {
            if val == 0 {
                v.push(format!("scenario.{name} must be positive"));
            }
        }
        if self.clusters > 0 && self.clients % self.clusters != 0 {
            v.push(format!(
                "scenario.clusters ({}) must divide scenario.clients ({})",
                self.clusters, self.clients
            ));
        }
        if self.randomized_counts() {
            let [lo, hi] = self.samples_range;
            if lo == 0 || lo > hi {
                v.push(format!("scenario.samples_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
            }
        } else if self.samples_per_class == 0 {
            v.push("scenario.samples_per_class must be positive".into());
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            v.push(format!("scenario.class_sep must be positive, got {}", self.class_sep));
        }
        if !(self.within_sigma > 0.0 && self.within_sigma.is_finite()) {
            v.push(format!("scenario.within_sigma must be positive, got {}", self.within_sigma));
        }
        if (1..=4).contains(&self.id) && self.clusters > 0 && self.classes > 0 {
            if let Err(MaplError::InfeasibleScenario(msg)) =
                cluster_classes(self.id, self.clusters, self.classes)
            {
                v.push(msg);
            }
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

    pub fn cluster_of(&self, client: usize) -> usize {
        client / (self.clients / self.clusters)
    }
}

/// Class set of every cluster.
///
/// Classes are cut into `C` blocks of `⌊K/C⌋`. Disjoint scenarios use the
/// blocks as-is. Overlapping scenarios extend each block by the neighbouring
/// boundary classes so adjacent clusters share two classes; for `C > 2` the
/// first and last blocks are also treated as neighbours.
pub fn cluster_classes(scenario: u8, clusters: usize, classes: usize) -> Result<Vec<Vec<usize>>> {
    if clusters == 0 || classes < clusters {
        return Err(MaplError::InfeasibleScenario(format!(
            "need at least one class per cluster: classes ({classes}) >= clusters ({clusters})"
        )));
    }
    let block = classes / clusters;
    let base = |c: usize| (c * block..(c + 1) * block).collect::<BTreeSet<usize>>();
    let overlapping = matches!(scenario, 2 | 4);
    if !overlapping || clusters == 1 {
        return Ok((0..clusters).map(|c| base(c).into_iter().collect()).collect());
    }
    if block < 2 {
        return Err(MaplError::InfeasibleScenario(format!(
            "overlapping scenarios need at least 2 classes per cluster block: classes ({classes}) >= 2 * clusters ({clusters})"
        )));
    }
    let wrap = clusters > 2;
    Ok((0..clusters)
        .map(|c| {
            let mut set = base(c);
            if c + 1 < clusters {
                set.insert((c + 1) * block);
            } else if wrap {
                set.insert(0);
            }
            if c > 0 {
                set.insert(c * block - 1);
            } else if wrap {
                set.insert(clusters * block - 1);
            }
            set.into_iter().collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub class_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub clients: Vec<ClientDataset>,
    /// Ground-truth cluster of every client.
    pub clusters: Vec<usize>,
    /// `K × d` class means shared by all clients.
    pub class_means: Mat,
}

fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<GeneratedData> {
    spec.validate()?;
    let (k, d) = (spec.classes, spec.input_dim);
    let mut mean_rng = rng_for(seed, stream::DATA, u64::MAX);
    let mut means = Mat::zeros(k, d);
    for c in 0..k {
        let dir = loop {
            let v = standard_normal_vec(d, &mut mean_rng);
            if let Ok(u) = crate::numkernels::l2_normalize(&v) {
                break u;
            }
        };
        for (m, u) in means.row_mut(c).iter_mut().zip(dir) {
            *m = spec.class_sep * u;
        }
    }

    let cluster_sets = cluster_classes(spec.id, spec.clusters, spec.classes)?;
    let mut clients = Vec::with_capacity(spec.clients);
    let mut clusters = Vec::with_capacity(spec.clients);
    for i in 0..spec.clients {
        let cluster = spec.cluster_of(i);
        let class_set = cluster_sets[cluster].clone();
        let mut rng = rng_for(seed, stream::DATA, i as u64);
        let draw = |y: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Sample {
            let x = means
                .row(y)
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + spec.within_sigma * z
                })
                .collect::<Vec<f64>>();
            (x, y)
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &y in &class_set {
            let n = if spec.randomized_counts() {
                rng.gen_range(spec.samples_range[0]..=spec.samples_range[1])
            } else {
                spec.samples_per_class
            };
            for _ in 0..n {
                train.push(draw(y, &mut rng));
            }
            for _ in 0..spec.test_per_class {
                test.push(draw(y, &mut rng));
            }
        }
        clients.push(ClientDataset {
            train,
            test,
            class_set,
        });
        clusters.push(cluster);
    }
    Ok(GeneratedData {
        clients,
        clusters,
        class_means: means,
    })
}

/// Pairwise Jaccard overlap of the clients' class sets.
pub fn overlap_matrix(datasets: &[ClientDataset]) -> Mat {
    let sets: Vec<BTreeSet<usize>> = datasets
        .iter()
        .map(|d| d.class_set.iter().copied().collect())
        .collect();
    let m = sets.len();
    let mut out = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = if i == j {
                1.0
            } else {
                let inter = sets[i].intersection(&sets[j]).count();
                let union = sets[i].union(&sets[j]).count();
                if union == 0 {
                    0.0
                } else {
                    inter as f64 / union as f64
                }
            };
        }
    }
    out
}

/// Writes `client,split,label,x0,…` rows.
pub fn export_csv<W: Write>(datasets: &[ClientDataset], mut w: W) -> Result<()> {
    let d = datasets
        .iter()
        .flat_map(|c| c.train.iter().chain(&c.test))
        .map(|s| s.0.len())
        .next()
        .unwrap_or(0);
    write!(w, "client,split,label")?;
    for j in 0..d {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (i, c) in datasets.iter().enumerate() {
        for (split, rows) in [("train", &c.train), ("test", &c.test)] {
            for (x, y) in rows {
                write!(w, "{i},{split},{y}")?;
                for v in x {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// Reads rows written by [`export_csv`]. Class sets are reconstructed from
/// the training labels.
pub fn import_csv<R: BufRead>(r: R) -> Result<Vec<ClientDataset>> {
    let mut out: Vec<ClientDataset> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| MaplError::Parse(format!("dataset csv line {}: {what}", lineno + 1));
        let mut fields = line.split(',');
        let client: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("client id"))?;
        let split = fields.next().ok_or_else(|| bad("split"))?.to_string();
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("label"))?;
        let x = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<f64>>>()?;
        while out.len() <= client {
            out.push(ClientDataset {
                train: Vec::new(),
                test: Vec::new(),
                class_set: Vec::new(),
            });
        }
        match split.as_str() {
            "train" => out[client].train.push((x, label)),
            "test" => out[client].test.push((x, label)),
            _ => return Err(bad("split must be train or test")),
        }
    }
    for c in &mut out {
        let set: BTreeSet<usize> = c.train.iter().map(|s| s.1).collect();
        c.class_set = set.into_iter().collect();
    }
    Ok(out)
}
