//! WebAssembly bindings for the browser demo. Every entry point returns a
//! JSON string.

use multiticket::config::ExperimentConfig;
use multiticket::diversity::METRIC_NAMES;
use multiticket::ensemble::Scheme;
use multiticket::experiment::{evaluate_members, Lab};
use multiticket::training::{lr_at, tau_at, LrSchedule};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_MEMBERS: usize = 12;
const MAX_WIDTH: usize = 64;

#[derive(Serialize)]
struct Curve {
    steps: Vec<usize>,
    lr: Vec<f64>,
    tau: Vec<f64>,
}

/// Learning rate and τ along the linear schedule, sampled at `points` steps.
pub fn schedule_json(lr0: f64, tau0: f64, total_steps: usize, points: usize) -> Result<String, String> {
    let sched = LrSchedule::new(lr0, total_steps).map_err(|e| e.to_string())?;
    let points = points.clamp(2, 1000);
    let mut curve = Curve {
        steps: Vec::with_capacity(points),
        lr: Vec::with_capacity(points),
        tau: Vec::with_capacity(points),
    };
    for i in 0..points {
        let step = i * total_steps / (points - 1);
        curve.steps.push(step);
        curve.lr.push(lr_at(&sched, step).map_err(|e| e.to_string())?);
        curve.tau.push(tau_at(tau0, &sched, step).map_err(|e| e.to_string())?);
    }
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

fn demo_lab(members: usize, width: usize, tau: f64) -> Result<Lab, String> {
    if !(2..=MAX_MEMBERS).contains(&members) {
        return Err(format!("members must be in 2..={MAX_MEMBERS}"));
    }
    if !(2..=MAX_WIDTH).contains(&width) {
        return Err(format!("width must be in 2..={MAX_WIDTH}"));
    }
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.model.body = vec![width; 3];
    cfg.pretrain.epochs = 3;
    cfg.train.epochs = 3;
    cfg.train.tau = tau;
    cfg.data.n = 600;
    cfg.data.n_train = 400;
    cfg.seeds.members = (1..=members as u64).collect();
    Lab::pretrained(cfg).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Overlap {
    scheme: String,
    matrix: Vec<Vec<f64>>,
    mean: f64,
    sparsity: Vec<f64>,
}

/// Pairwise IoU of ticket masks found under one masking policy.
pub fn overlap_json(scheme: &str, members: usize, width: usize, tau: f64) -> Result<String, String> {
    let scheme = Scheme::parse(scheme).map_err(|e| e.to_string())?;
    if !scheme.is_ticket() {
        return Err(format!("{scheme} does not prune"));
    }
    let lab = demo_lab(members, width, tau)?;
    let trained = lab.train_scheme(scheme, 1).map_err(|e| e.to_string())?;
    let masks: Vec<_> = trained.iter().filter_map(|m| m.mask.clone()).collect();
    let matrix = multiticket::pruning::overlap_matrix(&masks).map_err(|e| e.to_string())?;
    let out = Overlap {
        scheme: scheme.name().into(),
        mean: multiticket::pruning::mean_off_diagonal(&matrix),
        sparsity: masks.iter().map(|m| m.sparsity()).collect(),
        matrix,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Gain {
    scheme: String,
    single: f64,
    ens_by_k: Vec<f64>,
    diversity: Vec<(String, f64)>,
}

/// Ensemble accuracy for growing k and pairwise diversity of one scheme.
pub fn gain_json(scheme: &str, members: usize, width: usize, tau: f64) -> Result<String, String> {
    let scheme = Scheme::parse(scheme).map_err(|e| e.to_string())?;
    let lab = demo_lab(members, width, tau)?;
    let trained = lab.train_scheme(scheme, 1).map_err(|e| e.to_string())?;
    let max_k = members / 2;
    let r = evaluate_members(&lab.spec, &lab.data, &trained, max_k.max(1), max_k).map_err(|e| e.to_string())?;
    let diversity = r
        .diversity
        .map(|d| METRIC_NAMES.iter().map(|n| n.to_string()).zip(d.values()).collect())
        .unwrap_or_default();
    let out = Gain {
        scheme: scheme.name().into(),
        single: r.score.single,
        ens_by_k: r.sweep,
        diversity,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn schedule(lr0: f64, tau0: f64, total_steps: usize, points: usize) -> Result<String, JsError> {
    schedule_json(lr0, tau0, total_steps, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mask_overlap(scheme: &str, members: usize, width: usize, tau: f64) -> Result<String, JsError> {
    overlap_json(scheme, members, width, tau).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ensemble_gain(scheme: &str, members: usize, width: usize, tau: f64) -> Result<String, JsError> {
    gain_json(scheme, members, width, tau).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reaches_zero() {
        let v: serde_json::Value = serde_json::from_str(&schedule_json(0.1, 0.3, 50, 11).unwrap()).unwrap();
        assert_eq!(v["lr"][0], 0.1);
        assert_eq!(v["lr"][10], 0.0);
        assert_eq!(v["tau"][10], 0.0);
        assert_eq!(v["steps"][10], 50);
        assert!(schedule_json(0.1, 0.3, 0, 5).is_err());
    }

    #[test]
    fn overlap_is_a_square_with_unit_diagonal() {
        let v: serde_json::Value = serde_json::from_str(&overlap_json("base-lt", 3, 8, 0.05).unwrap()).unwrap();
        let m = v["matrix"].as_array().unwrap();
        assert_eq!(m.len(), 3);
        for (i, row) in m.iter().enumerate() {
            assert_eq!(row[i], 1.0);
        }
        for s in v["sparsity"].as_array().unwrap() {
            assert!((s.as_f64().unwrap() - 0.3).abs() < 0.01);
        }
        assert!(overlap_json("baseline", 3, 8, 0.05).is_err());
    }

    #[test]
    fn gain_sweeps_half_the_members() {
        let v: serde_json::Value = serde_json::from_str(&gain_json("random-lt", 4, 8, 0.05).unwrap()).unwrap();
        assert_eq!(v["ens_by_k"].as_array().unwrap().len(), 2);
        assert_eq!(v["diversity"].as_array().unwrap().len(), 5);
        assert!(gain_json("nope", 4, 8, 0.05).is_err());
        assert!(gain_json("baseline", 40, 8, 0.05).is_err());
    }
}
