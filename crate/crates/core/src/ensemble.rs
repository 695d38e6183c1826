//! Output-averaging ensembles and exhaustive member-combination evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Targets;
use crate::error::{Error, Result};
use crate::model::{predict, ModelSpec, PruneMask, TaskKind};
use crate::numcore::Matrix;
use crate::params::ParamVector;
use crate::pruning::MaskPolicy;
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Baseline,
    Bagging,
    BaseLt,
    ActiveLt,
    RandomLt,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Baseline,
        Scheme::Bagging,
        Scheme::BaseLt,
        Scheme::ActiveLt,
        Scheme::RandomLt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::Bagging => "bagging",
            Scheme::BaseLt => "base-lt",
            Scheme::ActiveLt => "active-lt",
            Scheme::RandomLt => "random-lt",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }

    /// Coefficient policy for lottery-ticket schemes; `None` for dense ones.
    pub fn policy(self) -> Option<MaskPolicy> {
        match self {
            Scheme::Baseline | Scheme::Bagging => None,
            Scheme::BaseLt => Some(MaskPolicy::None),
            Scheme::ActiveLt => Some(MaskPolicy::Active),
            Scheme::RandomLt => Some(MaskPolicy::Random),
        }
    }

    pub fn is_ticket(self) -> bool {
        self.policy().is_some()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Scheme> {
        Scheme::ALL.get(c as usize).copied()
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One trained ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberCheckpoint {
    pub params: ParamVector,
    pub mask: Option<PruneMask>,
    pub seed: u64,
    pub scheme: Scheme,
    /// 1 or 2 in the two-group protocol.
    pub group: u8,
}

/// Per-member model outputs on a fixed input set, computed once and reused
/// for every combination.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub members: usize,
    pub samples: usize,
    pub width: usize,
    pub task: TaskKind,
    /// `[members × samples × width]`, probabilities for classification.
    outputs: Vec<f64>,
}

impl PredictionTable {
    pub fn compute(spec: &ModelSpec, members: &[MemberCheckpoint], inputs: &Matrix) -> Result<Self> {
        check_homogeneous(members)?;
        let mut outputs = Vec::with_capacity(members.len() * inputs.rows() * spec.head.output_width);
        for m in members {
            outputs.extend_from_slice(predict(spec, &m.params, inputs)?.data());
        }
        Ok(Self {
            members: members.len(),
            samples: inputs.rows(),
            width: spec.head.output_width,
            task: spec.head.task,
            outputs,
        })
    }

    pub fn from_outputs(task: TaskKind, per_member: &[Matrix]) -> Result<Self> {
        let first = per_member
            .first()
            .ok_or_else(|| Error::contract("prediction table needs at least one member"))?;
        let (samples, width) = first.shape();
        let mut outputs = Vec::with_capacity(per_member.len() * samples * width);
        for m in per_member {
            if m.shape() != (samples, width) {
                return Err(Error::dim("member outputs differ in shape"));
            }
            if !m.is_finite() {
                return Err(Error::contract("member outputs must be finite"));
            }
            outputs.extend_from_slice(m.data());
        }
        Ok(Self {
            members: per_member.len(),
            samples,
            width,
            task,
            outputs,
        })
    }

    pub fn member(&self, i: usize) -> &[f64] {
        let n = self.samples * self.width;
        &self.outputs[i * n..(i + 1) * n]
    }

    pub fn member_matrix(&self, i: usize) -> Matrix {
        Matrix::from_vec(self.samples, self.width, self.member(i).to_vec()).expect("sized")
    }

    /// Argmax label per sample (first maximum wins).
    pub fn hard_labels(&self, i: usize) -> Vec<usize> {
        self.member(i).chunks(self.width).map(argmax).collect()
    }

    /// Mean output of the listed members.
    pub fn average(&self, subset: &[usize]) -> Result<Matrix> {
        if subset.is_empty() {
            return Err(Error::contract("ensemble needs at least one member"));
        }
        let n = self.samples * self.width;
        let mut acc = vec![0.0; n];
        for &i in subset {
            if i >= self.members {
                return Err(Error::contract(format!("member index {i} out of range")));
            }
            for (a, v) in acc.iter_mut().zip(self.member(i)) {
                *a += v;
            }
        }
        let k = subset.len() as f64;
        for a in &mut acc {
            *a /= k;
        }
        Matrix::from_vec(self.samples, self.width, acc)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_homogeneous(members: &[MemberCheckpoint]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::contract("ensemble needs at least one member"))?;
    if members.iter().any(|m| !m.params.same_layout(&first.params)) {
        return Err(Error::contract("ensemble members have different model layouts"));
    }
    Ok(())
}

/// `f_M(x) = Σ_θ f(x;θ) / |M|`, with dropout off. Classification members are
/// averaged as probabilities.
pub fn ensemble_predict(spec: &ModelSpec, members: &[MemberCheckpoint], inputs: &Matrix) -> Result<Matrix> {
    let table = PredictionTable::compute(spec, members, inputs)?;
    let all: Vec<usize> = (0..members.len()).collect();
    table.average(&all)
}

/// Every `k`-subset of `0..n` in lexicographic order.
pub fn enumerate_combos(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > n {
        return Err(Error::contract(format!("cannot choose {k} of {n}")));
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // Rightmost position that can still advance.
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            break;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Accuracy (classification) or Pearson correlation (regression), ×100.
pub fn metric(outputs: &Matrix, truth: &Targets) -> Result<f64> {
    if outputs.rows() != truth.len() || outputs.rows() == 0 {
        return Err(Error::dim(format!("{} outputs for {} targets", outputs.rows(), truth.len())));
    }
    match truth {
        Targets::Classes { labels, .. } => {
            let hits = (0..outputs.rows())
                .filter(|&r| argmax(outputs.row(r)) == labels[r])
                .count();
            Ok(100.0 * hits as f64 / labels.len() as f64)
        }
        Targets::Real(t) => {
            if outputs.cols() != 1 {
                return Err(Error::dim("regression metric needs one output column"));
            }
            Ok(100.0 * pearson(outputs.data(), t)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeScore {
    pub single: f64,
    pub ens: f64,
    pub diff: f64,
    /// Metric of every member, in table order.
    pub member_metrics: Vec<f64>,
    /// Metric of every evaluated combination, group 1 then group 2.
    pub combo_metrics: Vec<f64>,
}

/// Protocol evaluation with two groups of ten members.
pub fn evaluate_scheme(table: &PredictionTable, groups: &[Vec<usize>], k: usize, truth: &Targets) -> Result<SchemeScore> {
    if groups.len() != 2 || groups.iter().any(|g| g.len() != 10) {
        return Err(Error::contract(format!(
            "protocol needs two groups of ten members, got sizes {:?}",
            groups.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    evaluate_groups(table, groups, k, truth)
}

/// `single` is the mean member metric over all grouped members; `ens` is the
/// mean over all `C(|g|, k)` combinations within each group, averaged across
/// groups; `diff = ens − single`.
pub fn evaluate_groups(table: &PredictionTable, groups: &[Vec<usize>], k: usize, truth: &Targets) -> Result<SchemeScore> {
    if groups.is_empty() || k == 0 {
        return Err(Error::contract("need at least one group and k >= 1"));
    }
    let mut member_metrics = Vec::new();
    for g in groups {
        for &i in g {
            member_metrics.push(metric(&table.average(&[i])?, truth)?);
        }
    }
    let single = stable_mean(&member_metrics);

    let mut combo_metrics = Vec::new();
    let mut group_means = Vec::with_capacity(groups.len());
    for g in groups {
        let combos = enumerate_combos(g.len(), k)?;
        let scores = map_combos(&combos, |c| {
            let subset: Vec<usize> = c.iter().map(|&j| g[j]).collect();
            table.average(&subset).and_then(|m| metric(&m, truth))
        })?;
        group_means.push(stable_mean(&scores));
        combo_metrics.extend(scores);
    }
    let ens = stable_mean(&group_means);
    Ok(SchemeScore {
        single,
        ens,
        diff: ens - single,
        member_metrics,
        combo_metrics,
    })
}

/// Mean as `x₀ + Σ(xᵢ − x₀)/n`, exact when every value is equal.
pub fn stable_mean(x: &[f64]) -> f64 {
    let Some(&x0) = x.first() else { return f64::NAN };
    x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64
}

#[cfg(feature = "parallel")]
fn map_combos(combos: &[Vec<usize>], f: impl Fn(&[usize]) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    combos.par_iter().map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_combos(combos: &[Vec<usize>], f: impl Fn(&[usize]) -> Result<f64>) -> Result<Vec<f64>> {
    combos.iter().map(|c| f(c)).collect()
}
