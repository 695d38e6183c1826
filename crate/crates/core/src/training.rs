//! SGD finetuning with linear decay, dropout, gradient masking and the
//! masked L1 regularizer.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::{forward, DropoutDraw, ModelSpec, PruneMask};
use crate::numcore::{Purpose, SeedStream};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    /// Initial L1 coefficient; decays on the learning-rate schedule.
    pub tau: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr0: 0.05,
            batch_size: 32,
            dropout_p: 0.1,
            tau: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::contract(format!("lr0 {} must be finite and non-negative", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::contract(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::contract(format!("tau {} must be finite and non-negative", self.tau)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// Linear decay from `lr0` at step 0 to exactly zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64, total_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::contract("schedule needs at least one step"));
        }
        Ok(Self { lr0, total_steps })
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        scaled(self.lr0, self, step)
    }
}

fn scaled(v0: f64, s: &LrSchedule, step: usize) -> Result<f64> {
    if step > s.total_steps {
        return Err(Error::contract(format!(
            "step {step} past schedule end {}",
            s.total_steps
        )));
    }
    // Remaining steps as the numerator, so the last step is 0 exactly.
    Ok(v0 * (s.total_steps - step) as f64 / s.total_steps as f64)
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64> {
    schedule.lr_at(step)
}

/// τ on the same linear schedule as the learning rate.
pub fn tau_at(tau0: f64, schedule: &LrSchedule, step: usize) -> Result<f64> {
    scaled(tau0, schedule, step)
}

/// Element-wise L1 coefficients over the prunable region.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMask {
    values: Vec<f64>,
}

impl CoeffMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract("L1 coefficients must be finite and non-negative"));
        }
        Ok(Self { values })
    }

    pub fn ones(n: usize) -> Self {
        Self { values: vec![1.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// What an observer sees after each update.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub step: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub tau: f64,
    /// Task loss plus the regularizer, evaluated before the update.
    pub loss: f64,
}

/// `θ ← θ − lr·g`
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Shrinks entries toward zero by `amount·coeff`, stopping at zero. This is
/// the proximal step of `amount·Σ coeff_i |θ_i|`.
pub fn l1_shrink(params: &mut [f64], indices: &[usize], coeff: &[f64], amount: f64) {
    for (&i, &c) in indices.iter().zip(coeff) {
        let v = params[i];
        let m = (v.abs() - amount * c).max(0.0);
        params[i] = m.copysign(v);
        if m == 0.0 {
            params[i] = 0.0;
        }
    }
}

pub fn finetune(
    spec: &ModelSpec,
    init: &ParamVector,
    mask: &PruneMask,
    coeff: Option<&CoeffMask>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    finetune_observed(spec, init, mask, coeff, data, cfg, &mut |_, _| {})
}

/// Minibatch SGD over `data.train`.
///
/// Each step: forward with inverted dropout, backward, zero the gradient of
/// every pruned weight, take an SGD step at `lr_at(step)`, then apply the
/// L1 proximal shrink `lr·τ_t·coeff` to the surviving prunable weights.
/// Pruned weights therefore stay exactly zero throughout.
pub fn finetune_observed(
    spec: &ModelSpec,
    init: &ParamVector,
    mask: &PruneMask,
    coeff: Option<&CoeffMask>,
    data: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepInfo, &ParamVector),
) -> Result<ParamVector> {
    cfg.validate()?;
    spec.check_params(init)?;
    if data.train.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    let region_idx = mask.param_indices(init)?;
    if let Some(c) = coeff {
        if c.len() != mask.len() {
            return Err(Error::dim(format!(
                "coefficient mask has {} entries, prunable region has {}",
                c.len(),
                mask.len()
            )));
        }
    }
    let pruned: Vec<usize> = region_idx
        .iter()
        .zip(mask.bits())
        .filter(|(_, &keep)| !keep)
        .map(|(&i, _)| i)
        .collect();
    if let Some(&i) = pruned.iter().find(|&&i| init.data()[i] != 0.0) {
        return Err(Error::contract(format!(
            "initial parameters are not mask-applied (index {i} is nonzero)"
        )));
    }
    // Regularizer acts on surviving prunable weights only.
    let (l1_idx, l1_coeff): (Vec<usize>, Vec<f64>) = match coeff {
        Some(c) if cfg.tau > 0.0 => region_idx
            .iter()
            .zip(mask.bits())
            .zip(c.values())
            .filter(|((_, &keep), &cv)| keep && cv > 0.0)
            .map(|((&i, _), &cv)| (i, cv))
            .unzip(),
        _ => (Vec::new(), Vec::new()),
    };

    let n_train = data.train.len();
    let steps_per_epoch = cfg.steps_per_epoch(n_train);
    let schedule = LrSchedule::new(cfg.lr0, cfg.epochs * steps_per_epoch)?;
    let shuffle = SeedStream::new(cfg.seed, Purpose::Shuffle);
    let dropout = SeedStream::new(cfg.seed, Purpose::Dropout);

    let mut params = init.clone();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffle.permutation(epoch as u64, n_train);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&k| data.train[k]).collect();
            let batch = data.x.select_rows(&rows);
            let (mut tape, out) = forward(
                spec,
                &params,
                &batch,
                Some(DropoutDraw {
                    stream: dropout,
                    call_index: step as u64,
                    p: cfg.dropout_p,
                }),
            )
            .map_err(|e| match e {
                Error::NonFiniteLayer { .. } => Error::NonFiniteLoss { step },
                other => other,
            })?;
            let loss = match &data.y {
                Targets::Classes { labels, .. } => {
                    let t: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                    tape.softmax_cross_entropy(out, &t)?
                }
                Targets::Real(v) => {
                    let t: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
                    tape.squared_error(out, &t)?
                }
            };
            let lr = schedule.lr_at(step)?;
            let tau = tau_at(cfg.tau, &schedule, step)?;
            let penalty: f64 = l1_idx
                .iter()
                .zip(&l1_coeff)
                .map(|(&i, c)| c * params.data()[i].abs())
                .sum();
            let total_loss = tape.value(loss).data()[0] + tau * penalty;
            if !total_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let mut grad = tape.backward()?;
            let g = grad.data_mut();
            for &i in &pruned {
                g[i] = 0.0;
            }
            sgd_step(params.data_mut(), g, lr);
            if !l1_idx.is_empty() {
                l1_shrink(params.data_mut(), &l1_idx, &l1_coeff, lr * tau);
            }
            observer(
                &StepInfo {
                    step,
                    total_steps: schedule.total_steps,
                    lr,
                    tau,
                    loss: total_loss,
                },
                &params,
            );
            step += 1;
        }
    }
    if !params.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(params)
}

/// Dataset whose train split is a seed-determined 90% subset, drawn without
/// replacement. Dev split is untouched.
pub fn bag_subset(data: &Dataset, seed: u64) -> Result<Dataset> {
    let n = data.train.len();
    if n < 10 {
        return Err(Error::contract(format!("bagging needs at least 10 training rows, got {n}")));
    }
    let k = n * 9 / 10;
    let perm = SeedStream::new(seed, Purpose::BagSubset).permutation(0, n);
    let mut train: Vec<usize> = perm[..k].iter().map(|&i| data.train[i]).collect();
    train.sort_unstable();
    Ok(Dataset {
        train,
        ..data.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_downstream_task;
    use crate::model::{apply_mask, attach_head, init_body, HeadSpec, TaskKind};

    fn tiny() -> (ModelSpec, ParamVector, Dataset) {
        let spec = ModelSpec::with_body(
            16,
            &[8, 8],
            HeadSpec {
                output_width: 2,
                task: TaskKind::Classification,
            },
        );
        let p = attach_head(&spec, &init_body(&spec, 1).unwrap(), 1).unwrap();
        let d = gen_downstream_task(1, TaskKind::Classification, 1.0).unwrap();
        (spec, p, d)
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::new(2e-5, 100).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 2e-5);
        assert_eq!(s.lr_at(100).unwrap(), 0.0);
        assert!(s.lr_at(101).is_err());
        assert_eq!(LrSchedule::new(1.0, 4).unwrap().lr_at(1).unwrap(), 0.75);
        let t = LrSchedule::new(1.0, 10).unwrap();
        assert_eq!(tau_at(0.0, &t, 3).unwrap(), 0.0);
        assert_eq!(tau_at(0.4, &t, 0).unwrap(), 0.4);
        assert_eq!(tau_at(0.4, &t, 5).unwrap(), 0.2);
        assert_eq!(tau_at(0.4, &t, 10).unwrap(), 0.0);
        assert!(tau_at(0.4, &t, 11).is_err());
    }

    #[test]
    fn one_sgd_step_by_hand() {
        // loss = θ², θ = 1, lr = 0.1 -> θ' = 1 - 0.1·2 = 0.8
        let mut theta = [1.0];
        let grad = [2.0 * theta[0]];
        sgd_step(&mut theta, &grad, 0.1);
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (spec, p, d) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            lr0: 0.0,
            ..TrainConfig::default()
        };
        let out = finetune(&spec, &p, &PruneMask::full(&spec), None, &d, &cfg).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn zero_tau_matches_no_regularizer() {
        let (spec, p, d) = tiny();
        let cfg = TrainConfig {
            epochs: 1,
            tau: 0.0,
            ..TrainConfig::default()
        };
        let mask = PruneMask::full(&spec);
        let ones = CoeffMask::ones(mask.len());
        let a = finetune(&spec, &p, &mask, None, &d, &cfg).unwrap();
        let b = finetune(&spec, &p, &mask, Some(&ones), &d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pruned_weights_stay_zero_every_step() {
        let (spec, p, d) = tiny();
        let n = spec.prunable_len();
        let bits = (0..n).map(|i| i % 3 != 0).collect();
        let mask = PruneMask::from_bits(spec.prunable_region(), bits);
        let init = apply_mask(&p, &mask).unwrap();
        let idx = mask.param_indices(&init).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            tau: 0.01,
            ..TrainConfig::default()
        };
        let coeff = CoeffMask::ones(n);
        let mut checked = 0;
        finetune_observed(&spec, &init, &mask, Some(&coeff), &d, &cfg, &mut |_, params| {
            for (&i, &keep) in idx.iter().zip(mask.bits()) {
                if !keep {
                    assert_eq!(params.data()[i], 0.0);
                }
            }
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, cfg.steps_per_epoch(d.train.len()));
    }

    #[test]
    fn unmasked_init_is_rejected() {
        let (spec, p, d) = tiny();
        let mask = PruneMask::from_bits(spec.prunable_region(), vec![false; spec.prunable_len()]);
        let cfg = TrainConfig::default();
        assert!(matches!(finetune(&spec, &p, &mask, None, &d, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_reports_step() {
        let spec = ModelSpec::with_body(
            16,
            &[8, 8],
            HeadSpec {
                output_width: 1,
                task: TaskKind::Regression,
            },
        );
        let p = attach_head(&spec, &init_body(&spec, 1).unwrap(), 1).unwrap();
        let d = gen_downstream_task(1, TaskKind::Regression, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            lr0: 1e3,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        match finetune(&spec, &p, &PruneMask::full(&spec), None, &d, &cfg) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn shrink_stops_at_zero() {
        let mut p = [0.05, -0.3, 0.2];
        l1_shrink(&mut p, &[0, 1, 2], &[1.0, 1.0, 0.0], 0.1);
        assert_eq!(p[0], 0.0);
        assert!((p[1] + 0.2).abs() < 1e-15);
        assert_eq!(p[2], 0.2);
    }

    #[test]
    fn bagging_subsets() {
        let (_, _, d) = tiny();
        let mut small = d.clone();
        small.train = (0..100).collect();
        small.dev = (100..200).collect();
        let a = bag_subset(&small, 1).unwrap();
        assert_eq!(a.train.len(), 90);
        assert_eq!(a, bag_subset(&small, 1).unwrap());
        assert_ne!(a.train, bag_subset(&small, 2).unwrap().train);
        assert!(a.train.iter().all(|i| small.train.contains(i)));
        small.train.truncate(9);
        assert!(matches!(bag_subset(&small, 1), Err(Error::Contract(_))));
    }
}
