//! Iterative magnitude pruning, coefficient-mask policies and mask overlap.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{apply_mask, ModelSpec, PruneMask};
use crate::numcore::{Dist, Purpose, SeedStream};
use crate::params::ParamVector;
use crate::training::{finetune, CoeffMask, TrainConfig};

/// How each round's pruning budget is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundBudget {
    /// `per_round_fraction` of the original prunable count every round.
    #[default]
    Original,
    /// `per_round_fraction` of the weights still alive, last round clipped
    /// to land on the target.
    Remaining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    /// One magnitude ranking across every prunable layer.
    #[default]
    Global,
    /// Each layer gives up its proportional share of the round budget.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpConfig {
    pub per_round_fraction: f64,
    pub target_ratio: f64,
    #[serde(default)]
    pub budget: RoundBudget,
    #[serde(default)]
    pub ranking: Ranking,
}

impl Default for ImpConfig {
    fn default() -> Self {
        Self {
            per_round_fraction: 0.10,
            target_ratio: 0.30,
            budget: RoundBudget::Original,
            ranking: Ranking::Global,
        }
    }
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_ratio == 0.0 {
            return Ok(());
        }
        if !(self.per_round_fraction > 0.0
            && self.per_round_fraction <= self.target_ratio
            && self.target_ratio < 1.0)
        {
            return Err(Error::contract(format!(
                "need 0 < per_round_fraction ({}) <= target_ratio ({}) < 1",
                self.per_round_fraction, self.target_ratio
            )));
        }
        if self.budget == RoundBudget::Original {
            let r = self.target_ratio / self.per_round_fraction;
            if (r - r.round()).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "target_ratio {} is not a whole number of {} rounds",
                    self.target_ratio, self.per_round_fraction
                )));
            }
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        if self.target_ratio == 0.0 {
            return 0;
        }
        match self.budget {
            RoundBudget::Original => (self.target_ratio / self.per_round_fraction).round() as usize,
            RoundBudget::Remaining => {
                ((1.0 - self.target_ratio).ln() / (1.0 - self.per_round_fraction).ln()).ceil() as usize
            }
        }
    }

    /// Cumulative number of pruned weights after each round, for a region of `n`.
    pub fn schedule(&self, n: usize) -> Vec<usize> {
        let rounds = self.rounds();
        let target = (self.target_ratio * n as f64).round() as usize;
        match self.budget {
            RoundBudget::Original => (1..=rounds)
                .map(|r| (r as f64 * self.target_ratio * n as f64 / rounds as f64).round() as usize)
                .collect(),
            RoundBudget::Remaining => {
                let mut pruned = 0usize;
                let mut out = Vec::with_capacity(rounds);
                for _ in 0..rounds {
                    let step = (self.per_round_fraction * (n - pruned) as f64).round() as usize;
                    pruned = (pruned + step).min(target);
                    out.push(pruned);
                }
                if let Some(last) = out.last_mut() {
                    *last = target;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    None,
    Active,
    Random,
}

/// Extends `current` with `k` more zeros at the smallest surviving |θ|,
/// ranked globally across the prunable region. Ties go to the lower flat index.
pub fn magnitude_prune(params: &ParamVector, current: &PruneMask, k: usize) -> Result<PruneMask> {
    prune_with(params, current, k, Ranking::Global)
}

pub fn prune_with(params: &ParamVector, current: &PruneMask, k: usize, ranking: Ranking) -> Result<PruneMask> {
    let ranges = current.ranges(params)?;
    let alive = current.surviving();
    if k > alive {
        return Err(Error::contract(format!(
            "cannot prune {k} weights, only {alive} survive"
        )));
    }
    let data = params.data();
    let mut bits = current.bits().to_vec();
    match ranking {
        Ranking::Global => {
            let flat: Vec<usize> = ranges.into_iter().flatten().collect();
            drop_smallest(&mut bits, 0..flat.len(), |j| data[flat[j]].abs(), k);
        }
        Ranking::PerLayer => {
            // Largest-remainder apportionment of k over layers by surviving count.
            let mut starts = Vec::with_capacity(ranges.len());
            let mut pos = 0;
            for r in &ranges {
                starts.push(pos..pos + r.len());
                pos += r.len();
            }
            let alive_per: Vec<usize> = starts
                .iter()
                .map(|s| bits[s.clone()].iter().filter(|&&b| b).count())
                .collect();
            let mut share: Vec<usize> = Vec::with_capacity(starts.len());
            let mut rem: Vec<(f64, usize)> = Vec::new();
            for (i, &a) in alive_per.iter().enumerate() {
                let exact = if alive == 0 { 0.0 } else { k as f64 * a as f64 / alive as f64 };
                share.push(exact.floor() as usize);
                rem.push((exact - exact.floor(), i));
            }
            let mut left = k - share.iter().sum::<usize>();
            rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in &rem {
                if left == 0 {
                    break;
                }
                if share[i] < alive_per[i] {
                    share[i] += 1;
                    left -= 1;
                }
            }
            for ((span, r), &kk) in starts.iter().zip(&ranges).zip(&share) {
                let base = r.start;
                let off = span.start;
                drop_smallest(&mut bits, span.clone(), |j| data[base + (j - off)].abs(), kk);
            }
        }
    }
    Ok(PruneMask::from_bits(current.region().to_vec(), bits))
}

fn drop_smallest(bits: &mut [bool], span: std::ops::Range<usize>, mag: impl Fn(usize) -> f64, k: usize) {
    if k == 0 {
        return;
    }
    let mut cand: Vec<(f64, usize)> = span.filter(|&j| bits[j]).map(|j| (mag(j), j)).collect();
    cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, j) in &cand[..k] {
        bits[j] = false;
    }
}

/// Masks after each round of an IMP run; `masks.last()` is the ticket.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpRun {
    pub rounds: Vec<PruneMask>,
    pub mask: PruneMask,
}

/// Finetune–prune–reset until `imp.target_ratio` of the prunable region is pruned.
///
/// `theta0` is the full starting vector (shared body plus this seed's head).
/// Every round restarts from `theta0` with the current mask applied, so the
/// head is reset to the same seeded draw each time.
pub fn run_imp(
    spec: &ModelSpec,
    theta0: &ParamVector,
    data: &Dataset,
    cfg: &TrainConfig,
    imp: &ImpConfig,
    coeff: Option<&CoeffMask>,
) -> Result<ImpRun> {
    imp.validate()?;
    spec.check_params(theta0)?;
    let mut mask = PruneMask::full(spec);
    let schedule = imp.schedule(mask.len());
    if schedule.len() != imp.rounds() {
        return Err(Error::contract("round schedule does not match round count"));
    }
    let mut rounds = Vec::with_capacity(schedule.len());
    let mut pruned = 0;
    for target in schedule {
        let start = apply_mask(theta0, &mask)?;
        let trained = finetune(spec, &start, &mask, coeff, data, cfg)?;
        mask = prune_with(&trained, &mask, target - pruned, imp.ranking)?;
        pruned = target;
        rounds.push(mask.clone());
    }
    Ok(ImpRun { rounds, mask })
}

/// `l = Σ_j m_j / (i−1)`: the element-wise mean of the previous seeds' masks.
pub fn active_coeff(previous: &[PruneMask]) -> Result<CoeffMask> {
    let first = previous
        .first()
        .ok_or_else(|| Error::contract("active masking needs at least one previous mask"))?;
    let mut sum = vec![0.0; first.len()];
    for m in previous {
        first.check_aligned(m)?;
        for (s, &b) in sum.iter_mut().zip(m.bits()) {
            if b {
                *s += 1.0;
            }
        }
    }
    let count = previous.len() as f64;
    CoeffMask::new(sum.into_iter().map(|s| s / count).collect())
}

/// Seed-dependent binary coefficients with `P(0) = target_ratio`.
pub fn random_coeff(seed: u64, n: usize, target_ratio: f64) -> Result<CoeffMask> {
    if n == 0 {
        return Err(Error::contract("random mask needs n > 0"));
    }
    if !(0.0..=1.0).contains(&target_ratio) {
        return Err(Error::contract(format!("target_ratio {target_ratio} outside [0,1]")));
    }
    let v = SeedStream::new(seed, Purpose::RandomMask).draw(0, n, Dist::Bernoulli(1.0 - target_ratio))?;
    CoeffMask::new(v)
}

/// `|a ∩ b| / |a ∪ b|` over surviving entries.
pub fn mask_iou(a: &PruneMask, b: &PruneMask) -> Result<f64> {
    a.check_aligned(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Err(Error::contract("IoU undefined for two empty masks"));
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric matrix of pairwise IoU, ones on the diagonal.
pub fn overlap_matrix(masks: &[PruneMask]) -> Result<Vec<Vec<f64>>> {
    if masks.len() < 2 {
        return Err(Error::contract("overlap matrix needs at least two masks"));
    }
    let n = masks.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = mask_iou(&masks[i], &masks[j])?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// Mean of the strictly upper-triangular entries.
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut s = 0.0;
    let mut c = 0;
    for i in 0..n {
        for j in i + 1..n {
            s += m[i][j];
            c += 1;
        }
    }
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}
