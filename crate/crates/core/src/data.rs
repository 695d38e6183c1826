//! Synthetic source and downstream tasks.
//!
//! All tasks share one fixed input distribution: a mixture of 32 isotropic
//! Gaussian clusters in 16 dimensions, with centers drawn once from
//! [`WORLD_SEED`]. Features are standardized with the mixture's population
//! mean and variance, so every dataset sees the same marginal transform.
//!
//! * The source task labels each point by `cluster % 8` (8 classes, 4
//!   clusters each), so a linear probe on raw features does poorly while a
//!   network that learns the cluster structure does well.
//! * Downstream tasks reuse the clusters but relabel them: a per-cluster sign
//!   derived from the source classes, with a fixed subset flipped, plus a
//!   within-cluster linear direction weighted by `hardness`. Binary labels are
//!   drawn from a logistic of that score, so the task seed only changes the
//!   sampled points and label noise.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::numcore::{Dist, Matrix, Purpose, SeedStream};

pub const WORLD_SEED: u64 = 0x6d74_655f_776f_726c;
pub const INPUT_WIDTH: usize = 16;
pub const CLUSTERS: usize = 32;
pub const SOURCE_CLASSES: usize = 8;
pub const SOURCE_SIZE: usize = 8000;
const CENTER_SCALE: f64 = 1.5;
const CLUSTER_STD: f64 = 1.0;
/// Clusters whose downstream sign is flipped relative to the source partition.
const FLIPPED_CLUSTERS: usize = 8;
const CLUSTER_SIGN_WEIGHT: f64 = 1.5;
const DIRECTION_WEIGHT: f64 = 1.5;
const LABEL_SHARPNESS: f64 = 2.0;
const REGRESSION_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Targets,
    /// Sorted row indices used for training.
    pub train: Vec<usize>,
    /// Sorted row indices held out for evaluation. Disjoint from `train`.
    pub dev: Vec<usize>,
    pub task_id: String,
    pub gen_seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.y {
            Targets::Classes { classes, .. } => Some(*classes),
            Targets::Real(_) => None,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self.y {
            Targets::Classes { .. } => TaskKind::Classification,
            Targets::Real(_) => TaskKind::Regression,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.y {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    pub fn dev_inputs(&self) -> Matrix {
        self.x.select_rows(&self.dev)
    }

    pub fn dev_targets(&self) -> Targets {
        self.y.subset(&self.dev)
    }

    /// Writes `f0..f15,label,split` rows (split is `train` or `dev`).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in 0..self.x.cols() {
            let _ = write!(out, "f{c},");
        }
        out.push_str("label,split\n");
        let mut split = vec![""; self.len()];
        for &i in &self.train {
            split[i] = "train";
        }
        for &i in &self.dev {
            split[i] = "dev";
        }
        for r in 0..self.len() {
            for v in self.x.row(r) {
                let _ = write!(out, "{v},");
            }
            match &self.y {
                Targets::Classes { labels, .. } => {
                    let _ = write!(out, "{}", labels[r]);
                }
                Targets::Real(v) => {
                    let _ = write!(out, "{}", v[r]);
                }
            }
            let _ = writeln!(out, ",{}", split[r]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// The fixed mixture shared by every task.
struct World {
    centers: Vec<[f64; INPUT_WIDTH]>,
    mean: [f64; INPUT_WIDTH],
    sd: [f64; INPUT_WIDTH],
    /// Downstream sign per cluster.
    sign: Vec<f64>,
    /// Unit direction for the within-cluster downstream component.
    direction: [f64; INPUT_WIDTH],
}

impl World {
    fn new() -> Self {
        let s = SeedStream::new(WORLD_SEED, Purpose::DataGen);
        let raw = s.draw(0, CLUSTERS * INPUT_WIDTH, Dist::Normal).expect("normal draw");
        let centers: Vec<[f64; INPUT_WIDTH]> = raw
            .chunks_exact(INPUT_WIDTH)
            .map(|c| std::array::from_fn(|d| c[d] * CENTER_SCALE))
            .collect();
        let mut mean = [0.0; INPUT_WIDTH];
        let mut sd = [0.0; INPUT_WIDTH];
        for d in 0..INPUT_WIDTH {
            let m = centers.iter().map(|c| c[d]).sum::<f64>() / CLUSTERS as f64;
            let m2 = centers.iter().map(|c| c[d] * c[d]).sum::<f64>() / CLUSTERS as f64;
            mean[d] = m;
            sd[d] = (CLUSTER_STD * CLUSTER_STD + m2 - m * m).sqrt();
        }
        let flip = s.permutation(1, CLUSTERS);
        let mut sign: Vec<f64> = (0..CLUSTERS)
            .map(|k| if k % SOURCE_CLASSES < SOURCE_CLASSES / 2 { 1.0 } else { -1.0 })
            .collect();
        for &k in &flip[..FLIPPED_CLUSTERS] {
            sign[k] = -sign[k];
        }
        let dir = s.draw(2, INPUT_WIDTH, Dist::Normal).expect("normal draw");
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let direction = std::array::from_fn(|d| dir[d] / norm);
        World {
            centers,
            mean,
            sd,
            sign,
            direction,
        }
    }

    /// Samples one standardized point from `cluster` and its within-cluster offset.
    fn sample(&self, cluster: usize, noise: &[f64]) -> ([f64; INPUT_WIDTH], f64) {
        let c = &self.centers[cluster];
        let mut x = [0.0; INPUT_WIDTH];
        let mut along = 0.0;
        for d in 0..INPUT_WIDTH {
            let offset = noise[d] * CLUSTER_STD;
            along += offset * self.direction[d];
            x[d] = (c[d] + offset - self.mean[d]) / self.sd[d];
        }
        (x, along / CLUSTER_STD)
    }
}

fn split_indices(gen_seed: u64, n: usize, n_train: usize) -> (Vec<usize>, Vec<usize>) {
    let perm = SeedStream::new(gen_seed, Purpose::DataGen).permutation(1, n);
    let mut train = perm[..n_train].to_vec();
    let mut dev = perm[n_train..].to_vec();
    train.sort_unstable();
    dev.sort_unstable();
    (train, dev)
}

/// 8-class, 8000-point source task standing in for the pretraining corpus.
/// Class counts are exactly 1000 each.
pub fn gen_source_task(seed: u64) -> Dataset {
    let world = World::new();
    let s = SeedStream::new(seed, Purpose::DataGen);
    let mut rng = s.rng(2);
    let per_class = SOURCE_SIZE / SOURCE_CLASSES;
    let per_cluster_choices = CLUSTERS / SOURCE_CLASSES;
    let noise = s.draw(3, SOURCE_SIZE * INPUT_WIDTH, Dist::Normal).expect("normal draw");
    let mut x = Vec::with_capacity(SOURCE_SIZE * INPUT_WIDTH);
    let mut labels = Vec::with_capacity(SOURCE_SIZE);
    for i in 0..SOURCE_SIZE {
        let class = i / per_class;
        let pick = rand::Rng::random_range(&mut rng, 0..per_cluster_choices);
        let cluster = class + SOURCE_CLASSES * pick;
        let (p, _) = world.sample(cluster, &noise[i * INPUT_WIDTH..(i + 1) * INPUT_WIDTH]);
        x.extend_from_slice(&p);
        labels.push(class);
    }
    let (train, dev) = split_indices(seed, SOURCE_SIZE, SOURCE_SIZE * 9 / 10);
    Dataset {
        x: Matrix::from_vec(SOURCE_SIZE, INPUT_WIDTH, x).expect("sized"),
        y: Targets::Classes {
            labels,
            classes: SOURCE_CLASSES,
        },
        train,
        dev,
        task_id: "source".into(),
        gen_seed: seed,
    }
}

/// Shape of a downstream task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub kind: TaskKind,
    /// In `(0, 1]`; weight of the within-cluster component that pretrained
    /// features do not capture.
    pub hardness: f64,
    pub n: usize,
    pub n_train: usize,
}

impl TaskParams {
    /// The small downstream task (1200 points, 800 train / 400 dev).
    pub fn small(kind: TaskKind, hardness: f64) -> Self {
        Self {
            kind,
            hardness,
            n: 1200,
            n_train: 800,
        }
    }

    /// The large easy task (6000 points, 5000 train / 1000 dev).
    pub fn easy_large(kind: TaskKind) -> Self {
        Self {
            kind,
            hardness: 0.25,
            n: 6000,
            n_train: 5000,
        }
    }
}

/// The small downstream task of the given kind and hardness.
pub fn gen_downstream_task(seed: u64, kind: TaskKind, hardness: f64) -> Result<Dataset> {
    gen_downstream(seed, &TaskParams::small(kind, hardness))
}

pub fn gen_downstream(seed: u64, params: &TaskParams) -> Result<Dataset> {
    if !(params.hardness > 0.0 && params.hardness <= 1.0) {
        return Err(Error::contract(format!("hardness {} outside (0,1]", params.hardness)));
    }
    if params.n_train == 0 || params.n_train >= params.n {
        return Err(Error::contract("train split must be non-empty and leave a dev split"));
    }
    let world = World::new();
    let s = SeedStream::new(seed, Purpose::DataGen);
    let mut rng = s.rng(2);
    let n = params.n;
    let noise = s.draw(3, n * INPUT_WIDTH, Dist::Normal)?;
    let u = s.draw(4, n, Dist::Uniform)?;
    let eps = s.draw(5, n, Dist::Normal)?;
    let mut x = Vec::with_capacity(n * INPUT_WIDTH);
    let mut labels = Vec::with_capacity(n);
    let mut reals = Vec::with_capacity(n);
    for i in 0..n {
        let cluster = rand::Rng::random_range(&mut rng, 0..CLUSTERS);
        let (p, along) = world.sample(cluster, &noise[i * INPUT_WIDTH..(i + 1) * INPUT_WIDTH]);
        x.extend_from_slice(&p);
        let score = CLUSTER_SIGN_WEIGHT * world.sign[cluster] + DIRECTION_WEIGHT * params.hardness * along;
        let prob = 1.0 / (1.0 + (-LABEL_SHARPNESS * score).exp());
        match params.kind {
            TaskKind::Classification => labels.push(usize::from(u[i] < prob)),
            TaskKind::Regression => reals.push((prob + REGRESSION_NOISE * eps[i]).clamp(0.0, 1.0)),
        }
    }
    let y = match params.kind {
        TaskKind::Classification => Targets::Classes { labels, classes: 2 },
        TaskKind::Regression => Targets::Real(reals),
    };
    let (train, dev) = split_indices(seed, n, params.n_train);
    let kind = match params.kind {
        TaskKind::Classification => "cls",
        TaskKind::Regression => "reg",
    };
    Ok(Dataset {
        x: Matrix::from_vec(n, INPUT_WIDTH, x)?,
        y,
        train,
        dev,
        task_id: format!("downstream-{kind}-h{}-n{n}", params.hardness),
        gen_seed: seed,
    })
}
