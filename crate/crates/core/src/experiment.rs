//! End-to-end protocol: pretrain a shared body, train members under each
//! scheme, and evaluate ensembles, diversity and mask overlap.

use crate::config::ExperimentConfig;
use crate::data::{gen_downstream, gen_source_task, Dataset, Targets};
use crate::diversity::{pairwise_report, DiversityReport};
use crate::ensemble::{evaluate_groups, MemberCheckpoint, PredictionTable, Scheme, SchemeScore};
use crate::error::{Error, Result};
use crate::model::{apply_mask, attach_head, init_pretrained, ModelSpec, PruneMask};
use crate::params::ParamVector;
use crate::pruning::{active_coeff, mean_off_diagonal, overlap_matrix, random_coeff, run_imp, MaskPolicy};
use crate::stats::t_test;
use crate::training::{bag_subset, finetune, CoeffMask};

/// Trains the shared body θ₀ on the source task.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<ParamVector> {
    let source = gen_source_task(cfg.data.source_seed);
    init_pretrained(&cfg.model_spec(), &source, cfg.pretrain.seed, &cfg.pretrain_config())
}

/// Everything a member needs: config, model, shared body and downstream data.
#[derive(Debug, Clone)]
pub struct Lab {
    pub cfg: ExperimentConfig,
    pub spec: ModelSpec,
    pub body: ParamVector,
    pub data: Dataset,
}

impl Lab {
    pub fn new(cfg: ExperimentConfig, body: ParamVector) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.model_spec();
        let data = gen_downstream(cfg.data.gen_seed, &cfg.task_params())?;
        // Fails early if the body does not fit the configured model.
        attach_head(&spec, &body, 0)?;
        Ok(Self { cfg, spec, body, data })
    }

    pub fn pretrained(cfg: ExperimentConfig) -> Result<Self> {
        let body = pretrain(&cfg)?;
        Self::new(cfg, body)
    }

    /// Shared body plus the seeded head of `seed`.
    pub fn theta0(&self, seed: u64) -> Result<ParamVector> {
        attach_head(&self.spec, &self.body, seed)
    }

    /// Finds the ticket for `seed` (IMP with the given coefficients).
    pub fn find_ticket(&self, seed: u64, coeff: Option<&CoeffMask>) -> Result<PruneMask> {
        let theta0 = self.theta0(seed)?;
        let run = run_imp(
            &self.spec,
            &theta0,
            &self.data,
            &self.cfg.train_config(seed),
            &self.cfg.imp,
            coeff,
        )?;
        Ok(run.mask)
    }

    /// Final finetune of a member from θ₀, optionally restricted to a ticket.
    pub fn finetune_member(&self, scheme: Scheme, seed: u64, mask: Option<PruneMask>, group: u8) -> Result<MemberCheckpoint> {
        let theta0 = self.theta0(seed)?;
        let cfg = self.cfg.train_config(seed);
        let full = PruneMask::full(&self.spec);
        let bagged;
        let data = if scheme == Scheme::Bagging {
            bagged = bag_subset(&self.data, seed)?;
            &bagged
        } else {
            &self.data
        };
        let m = mask.as_ref().unwrap_or(&full);
        let start = apply_mask(&theta0, m)?;
        let params = finetune(&self.spec, &start, m, None, data, &cfg)?;
        Ok(MemberCheckpoint {
            params,
            mask,
            seed,
            scheme,
            group,
        })
    }

    fn independent_member(&self, scheme: Scheme, seed: u64, group: u8) -> Result<MemberCheckpoint> {
        let mask = match scheme.policy() {
            None => None,
            Some(MaskPolicy::None) => Some(self.find_ticket(seed, None)?),
            Some(MaskPolicy::Random) => {
                let n = self.spec.prunable_len();
                let coeff = random_coeff(seed, n, self.cfg.imp.target_ratio)?;
                Some(self.find_ticket(seed, Some(&coeff))?)
            }
            Some(MaskPolicy::Active) => {
                return Err(Error::contract("active-lt members depend on earlier seeds"));
            }
        };
        self.finetune_member(scheme, seed, mask, group)
    }

    /// Trains one member per configured seed. Independent schemes run on up
    /// to `jobs` workers; active-lt always runs its seeds one after another
    /// in configured order.
    pub fn train_scheme(&self, scheme: Scheme, jobs: usize) -> Result<Vec<MemberCheckpoint>> {
        self.train_scheme_with(scheme, jobs, &|_, _| {})
    }

    pub fn train_scheme_with(
        &self,
        scheme: Scheme,
        jobs: usize,
        progress: &(dyn Fn(Scheme, u64) + Sync),
    ) -> Result<Vec<MemberCheckpoint>> {
        let seeds = &self.cfg.seeds.members;
        let groups = self.cfg.groups();
        if scheme == Scheme::ActiveLt {
            let mut masks: Vec<PruneMask> = Vec::with_capacity(seeds.len());
            let mut out = Vec::with_capacity(seeds.len());
            for (&seed, &g) in seeds.iter().zip(&groups) {
                let coeff = if masks.is_empty() {
                    None
                } else {
                    Some(active_coeff(&masks)?)
                };
                let mask = self.find_ticket(seed, coeff.as_ref())?;
                masks.push(mask.clone());
                out.push(self.finetune_member(scheme, seed, Some(mask), g)?);
                progress(scheme, seed);
            }
            return Ok(out);
        }
        let jobs_list: Vec<(u64, u8)> = seeds.iter().copied().zip(groups).collect();
        run_parallel(jobs, &jobs_list, |&(seed, g)| {
            let m = self.independent_member(scheme, seed, g)?;
            progress(scheme, seed);
            Ok(m)
        })
    }
}

#[cfg(feature = "parallel")]
fn run_parallel<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    use rayon::prelude::*;
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, R>(_jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R>) -> Result<Vec<R>> {
    items.iter().map(f).collect()
}

/// Results for one scheme.
#[derive(Debug, Clone)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub score: SchemeScore,
    pub diversity: Option<DiversityReport>,
    /// Pairwise IoU of the first five members' masks (ticket schemes only).
    pub overlap: Option<Vec<Vec<f64>>>,
    /// `ens` for `k = 1..=max_k`.
    pub sweep: Vec<f64>,
}

impl SchemeResult {
    pub fn mean_iou(&self) -> Option<f64> {
        self.overlap.as_deref().map(mean_off_diagonal)
    }
}

/// Member indices of each group, in member order.
pub fn group_indices(members: &[MemberCheckpoint]) -> Vec<Vec<usize>> {
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for (i, m) in members.iter().enumerate() {
        if m.group == 2 {
            g2.push(i);
        } else {
            g1.push(i);
        }
    }
    if g2.is_empty() {
        vec![g1]
    } else {
        vec![g1, g2]
    }
}

/// Evaluates one scheme's members on the dev split.
pub fn evaluate_members(
    spec: &ModelSpec,
    data: &Dataset,
    members: &[MemberCheckpoint],
    k: usize,
    max_k: usize,
) -> Result<SchemeResult> {
    let scheme = members
        .first()
        .ok_or_else(|| Error::contract("no members to evaluate"))?
        .scheme;
    let inputs = data.dev_inputs();
    let truth = data.dev_targets();
    let table = PredictionTable::compute(spec, members, &inputs)?;
    let groups = group_indices(members);
    let score = evaluate_groups(&table, &groups, k, &truth)?;
    let smallest = groups.iter().map(Vec::len).min().unwrap_or(0);
    let sweep = (1..=max_k.min(smallest))
        .map(|kk| evaluate_groups(&table, &groups, kk, &truth).map(|s| s.ens))
        .collect::<Result<Vec<_>>>()?;
    let diversity = match (&truth, members.len() >= 2) {
        (Targets::Classes { labels, .. }, true) => Some(pairwise_report(&table, labels)?),
        _ => None,
    };
    let masks: Vec<PruneMask> = members.iter().filter_map(|m| m.mask.clone()).take(5).collect();
    let overlap = if masks.len() >= 2 {
        Some(overlap_matrix(&masks)?)
    } else {
        None
    };
    Ok(SchemeResult {
        scheme,
        score,
        diversity,
        overlap,
        sweep,
    })
}

/// Two-sided p-value of a pooled t-test, NaN when undefined.
pub fn p_value(a: &[f64], b: &[f64]) -> f64 {
    t_test(a, b).map(|r| r.p).unwrap_or(f64::NAN)
}
