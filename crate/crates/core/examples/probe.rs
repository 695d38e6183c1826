//! Quick end-to-end run at a reduced width for timing and sanity checks.
//! Usage: probe WIDTH EPOCHS TAU [HARDNESS] [large]

use std::time::Instant;

use multiticket::config::ExperimentConfig;
use multiticket::data::TaskParams;
use multiticket::model::TaskKind;
use multiticket::ensemble::Scheme;
use multiticket::experiment::{evaluate_members, Lab};

fn main() -> multiticket::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let tau: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let hardness: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.model.body = vec![width; 3];
    cfg.train.epochs = epochs;
    cfg.train.tau = tau;
    cfg.data.hardness = hardness;
    if args.get(5).map(String::as_str) == Some("large") {
        let p = TaskParams::easy_large(TaskKind::Classification);
        cfg.data.hardness = p.hardness;
        cfg.data.n = p.n;
        cfg.data.n_train = p.n_train;
    }
    let t = Instant::now();
    let lab = Lab::pretrained(cfg)?;
    eprintln!("pretrain {:.1}s", t.elapsed().as_secs_f64());
    for scheme in Scheme::ALL {
        let t = Instant::now();
        let members = lab.train_scheme(scheme, 1)?;
        let r = evaluate_members(&lab.spec, &lab.data, &members, 5, 5)?;
        let d = r.diversity.as_ref().map(|d| d.values());
        println!(
            "{:10} single {:6.2} ens {:6.2} diff {:5.2} iou {:?} div {:?} sweep {:?} ({:.1}s)",
            scheme.name(),
            r.score.single,
            r.score.ens,
            r.score.diff,
            r.mean_iou(),
            d,
            r.sweep,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
