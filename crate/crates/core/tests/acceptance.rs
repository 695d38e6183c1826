//! Acceptance criteria, one PASS/FAIL line each.
//!
//! The directional runs (7-10) use a 3×64 body so the suite finishes in a few
//! minutes on one core. Set `MTE_ACCEPT_FULL=1` to run 7-9 at the 3×256 desk
//! scale instead; the frozen regression values then do not apply.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{naive_pair, naive_report, GradCase, PRIMS};
use multiticket::config::ExperimentConfig;
use multiticket::data::{TaskParams, Targets};
use multiticket::diversity::{contingency, labels_report, pair_measures};
use multiticket::ensemble::{enumerate_combos, evaluate_scheme, MemberCheckpoint, PredictionTable, Scheme};
use multiticket::experiment::{evaluate_members, Lab, SchemeResult};
use multiticket::model::{apply_mask, TaskKind};
use multiticket::pruning::{active_coeff, random_coeff, run_imp};
use multiticket::stats::t_test;
use multiticket::training::{finetune_observed, lr_at, tau_at, LrSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale();
    if std::env::var("MTE_ACCEPT_FULL").is_err() {
        cfg.model.body = vec![64, 64, 64];
    }
    cfg
}

fn full_scale() -> bool {
    std::env::var("MTE_ACCEPT_FULL").is_ok()
}

/// single, ens, diff, [Q, R, ND, D, C], mean IoU (NaN when maskless)
type Frozen = (Scheme, f64, f64, f64, [f64; 5], f64);

// Measured once with the shipped seeds at 3×64.
#[rustfmt::skip]
const FROZEN_SMALL: &[Frozen] = &[
    (Scheme::Baseline, 75.7625, 75.68799603174602, -0.07450396825397831, [0.9945136661452895, 0.0, -0.2210526315789473, 0.04264473684210528, 0.88433329600106], f64::NAN),
    (Scheme::Bagging, 75.35, 75.69047619047619, 0.3404761904761955, [0.9882985010462875, 0.0, -0.2157368421052632, 0.06152631578947362, 0.8354029542381997], f64::NAN),
    (Scheme::BaseLt, 74.8, 74.61359126984127, -0.18640873015873183, [0.9930914836327218, 0.0, -0.22802631578947363, 0.047947368421052655, 0.8731442056280538], 0.9856991652543566),
    (Scheme::ActiveLt, 75.1875, 76.01041666666666, 0.8229166666666572, [0.9704458870892719, 0.0, -0.20267105263157895, 0.09090789473684215, 0.7569252212361085], 0.5922866091100667),
    (Scheme::RandomLt, 75.2125, 75.86309523809524, 0.6505952380952351, [0.9792958044085389, 0.0, -0.20782894736842092, 0.0800921052631579, 0.7869900232798684], 0.6336130460287992),
];
#[rustfmt::skip]
const FROZEN_LARGE: &[Frozen] = &[
    (Scheme::Baseline, 92.88, 92.89781746031747, 0.017817460317473888, [0.9998077441682639, 0.0, -0.06862105263157901, 0.00515789473684211, 0.9611739528067726], f64::NAN),
    (Scheme::RandomLt, 92.535, 92.70932539682539, 0.17432539682539527, [0.998504704353684, 0.0, -0.06776842105263163, 0.01376315789473682, 0.9008586781226093], 0.574886539057976),
];

/// One dev sample is 0.25 accuracy points on the small task.
const METRIC_SLACK: f64 = 0.25;
const RATIO_SLACK: f64 = 0.005;

struct Runs {
    small: Vec<SchemeResult>,
    large: Vec<SchemeResult>,
    seconds: f64,
    small_lab: Lab,
}

impl Runs {
    fn get(results: &[SchemeResult], s: Scheme) -> &SchemeResult {
        results.iter().find(|r| r.scheme == s).expect("scheme evaluated")
    }
}

fn run_protocol() -> multiticket::Result<Runs> {
    let started = Instant::now();
    let cfg = fixture_config();
    let lab = Lab::pretrained(cfg.clone())?;
    let mut small = Vec::new();
    for s in Scheme::ALL {
        let members = lab.train_scheme(s, 1)?;
        small.push(evaluate_members(&lab.spec, &lab.data, &members, 5, 5)?);
    }
    let mut large_cfg = cfg.clone();
    large_cfg.model.body = vec![64, 64, 64];
    let p = TaskParams::easy_large(TaskKind::Classification);
    large_cfg.data.hardness = p.hardness;
    large_cfg.data.n = p.n;
    large_cfg.data.n_train = p.n_train;
    let body = if large_cfg.model == cfg.model {
        lab.body.clone()
    } else {
        multiticket::experiment::pretrain(&large_cfg)?
    };
    let large_lab = Lab::new(large_cfg, body)?;
    let mut large = Vec::new();
    for s in [Scheme::Baseline, Scheme::RandomLt] {
        let members = large_lab.train_scheme(s, 1)?;
        large.push(evaluate_members(&large_lab.spec, &large_lab.data, &members, 5, 5)?);
    }
    Ok(Runs {
        small,
        large,
        seconds: started.elapsed().as_secs_f64(),
        small_lab: lab,
    })
}

fn check_frozen(results: &[SchemeResult], frozen: &[Frozen]) -> Result<(), String> {
    if full_scale() {
        return Ok(());
    }
    ensure(!frozen.is_empty(), || "no frozen values recorded".into())?;
    for &(s, single, ens, diff, div, iou) in frozen {
        let r = Runs::get(results, s);
        let close = |a: f64, b: f64, tol: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol;
        ensure(
            close(r.score.single, single, METRIC_SLACK) && close(r.score.ens, ens, METRIC_SLACK) && close(r.score.diff, diff, METRIC_SLACK),
            || format!("{s}: single/ens/diff {:.4}/{:.4}/{:.4} drifted from frozen {single}/{ens}/{diff}", r.score.single, r.score.ens, r.score.diff),
        )?;
        if let Some(d) = &r.diversity {
            for (k, (got, want)) in d.values().iter().zip(div).enumerate() {
                ensure(close(*got, want, RATIO_SLACK), || format!("{s}: diversity metric {k} {got} drifted from {want}"))?;
            }
        }
        let got_iou = r.mean_iou().unwrap_or(f64::NAN);
        ensure(close(got_iou, iou, RATIO_SLACK), || format!("{s}: IoU {got_iou} drifted from {iou}"))?;
    }
    Ok(())
}

fn c1_gradients() -> Check {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut n = 0;
    for prim in PRIMS {
        for seed in 0..100u64 {
            let e = GradCase::random(prim, 1000 * seed + prim as u64).max_error(1e-5);
            ensure(e < 1e-6, || format!("{prim:?} seed {seed}: relative error {e:.3e}"))?;
            worst = worst.max(e);
            n += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{n} instances over {} primitives, worst rel. error {worst:.2e}, {secs:.2}s", PRIMS.len()))
}

fn c2_pruning(runs: &Runs) -> Check {
    let lab = &runs.small_lab;
    let theta0 = lab.theta0(1).map_err(|e| e.to_string())?;
    let cfg = lab.cfg.train_config(1);
    let run = run_imp(&lab.spec, &theta0, &lab.data, &cfg, &lab.cfg.imp, None).map_err(|e| e.to_string())?;
    let n = run.mask.len();
    ensure(run.rounds.len() == 3, || format!("{} rounds", run.rounds.len()))?;
    let mut prev_pruned = 0;
    for (i, m) in run.rounds.iter().enumerate() {
        let pruned = n - m.surviving();
        let want = (0.1 * (i + 1) as f64 * n as f64).round() as usize;
        ensure(pruned.abs_diff(want) <= 1, || format!("round {}: {pruned} pruned, want {want}", i + 1))?;
        ensure(pruned > prev_pruned, || "round did not prune".into())?;
        if i > 0 {
            let prev = &run.rounds[i - 1];
            ensure(prev.bits().iter().zip(m.bits()).all(|(a, b)| *a || !*b), || format!("round {} revived a weight", i + 1))?;
        }
        prev_pruned = pruned;
    }
    let pruned = n - run.mask.surviving();
    let target = (0.3 * n as f64).round() as usize;
    ensure(pruned.abs_diff(target) <= 1, || format!("final {pruned} vs {target}"))?;

    let idx = run.mask.param_indices(&theta0).map_err(|e| e.to_string())?;
    let dead: Vec<usize> = idx.iter().zip(run.mask.bits()).filter(|(_, b)| !**b).map(|(i, _)| *i).collect();
    let start = apply_mask(&theta0, &run.mask).map_err(|e| e.to_string())?;
    let mut steps = 0;
    let mut violations = 0;
    let mut with_l1 = cfg.clone();
    with_l1.tau = 0.05;
    finetune_observed(&lab.spec, &start, &run.mask, None, &lab.data, &with_l1, &mut |_, p| {
        steps += 1;
        violations += dead.iter().filter(|&&i| p.data()[i] != 0.0).count();
    })
    .map_err(|e| e.to_string())?;
    ensure(violations == 0, || format!("{violations} nonzero pruned entries"))?;
    Ok(format!(
        "{pruned}/{n} pruned ({:.4}), rounds monotone, {} pruned weights exactly 0 over {steps} steps",
        pruned as f64 / n as f64,
        dead.len()
    ))
}

fn c3_schedule(runs: &Runs) -> Check {
    let lab = &runs.small_lab;
    let cfg = lab.cfg.train_config(1);
    let total = cfg.epochs * cfg.steps_per_epoch(lab.data.train.len());
    for (lr0, t) in [(cfg.lr0, total), (0.05, 1), (0.3, 7), (1e-3, 100_000), (0.1, 2501)] {
        let s = LrSchedule::new(lr0, t).map_err(|e| e.to_string())?;
        let lr = lr_at(&s, t).map_err(|e| e.to_string())?;
        let tau = tau_at(0.05, &s, t).map_err(|e| e.to_string())?;
        ensure(lr == 0.0 && tau == 0.0, || format!("T={t}: lr {lr}, tau {tau}"))?;
        ensure(lr_at(&s, 0).unwrap() == lr0, || "lr(0) != lr0".into())?;
    }
    let mut last = None;
    let start = lab.theta0(1).map_err(|e| e.to_string())?;
    let full = multiticket::model::PruneMask::full(&lab.spec);
    let mut short = cfg.clone();
    short.epochs = 1;
    short.tau = 0.05;
    finetune_observed(&lab.spec, &start, &full, None, &lab.data, &short, &mut |info, _| last = Some(*info))
        .map_err(|e| e.to_string())?;
    let info = last.ok_or("no steps")?;
    let s = LrSchedule::new(short.lr0, info.total_steps).unwrap();
    let end_lr = lr_at(&s, info.total_steps).unwrap();
    let end_tau = tau_at(short.tau, &s, info.total_steps).unwrap();
    ensure(end_lr == 0.0 && end_tau == 0.0, || "training schedule does not end at 0".into())?;
    Ok(format!("lr = tau = 0 exactly at step T for 5 schedules and the {}-step training run", info.total_steps))
}

fn c4_coefficients() -> Check {
    let mk = |b: &[u8]| multiticket::model::PruneMask::from_bits(vec!["w".into()], b.iter().map(|&x| x == 1).collect());
    let m1 = mk(&[1, 1, 0, 0, 1, 0]);
    let m2 = mk(&[1, 0, 1, 0, 1, 0]);
    let m3 = mk(&[1, 0, 0, 0, 0, 1]);
    let cases: [(&[multiticket::model::PruneMask], [f64; 6]); 3] = [
        (&[m1.clone()], [1.0, 1.0, 0.0, 0.0, 1.0, 0.0]),
        (&[m1.clone(), m2.clone()], [1.0, 0.5, 0.5, 0.0, 1.0, 0.0]),
        (&[m1, m2, m3], [1.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 2.0 / 3.0, 1.0 / 3.0]),
    ];
    for (prev, want) in cases {
        let got = active_coeff(prev).map_err(|e| e.to_string())?;
        for (g, w) in got.values().iter().zip(want) {
            ensure((g - w).abs() < 1e-15, || format!("i={}: {:?} vs {want:?}", prev.len() + 1, got.values()))?;
        }
    }
    let r = random_coeff(1, 100_000, 0.3).map_err(|e| e.to_string())?;
    let zeros = r.values().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
    ensure((zeros - 0.3).abs() <= 0.01, || format!("zero fraction {zeros}"))?;
    ensure(r.values().iter().all(|&v| v == 0.0 || v == 1.0), || "non-binary entries".into())?;
    Ok(format!("active_coeff matches 3 hand fixtures; random_coeff zero fraction {zeros:.4}"))
}

fn c5_diversity_and_t() -> Check {
    let mut checked = 0usize;
    for n in 1..=4usize {
        let vecs: Vec<Vec<usize>> = (0..3usize.pow(n as u32))
            .map(|mut c| {
                (0..n)
                    .map(|_| {
                        let v = c % 3;
                        c /= 3;
                        v
                    })
                    .collect()
            })
            .collect();
        for truth in &vecs {
            for pi in &vecs {
                for pj in &vecs {
                    let got = pair_measures(&contingency(pi, pj, truth).map_err(|e| e.to_string())?);
                    for (g, (w, deg)) in got.iter().zip(naive_pair(pi, pj, truth)) {
                        ensure((g.value - w).abs() <= 1e-12 && g.degenerate == deg, || {
                            format!("pair {pi:?} {pj:?} truth {truth:?}")
                        })?;
                    }
                    checked += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tables = 0;
    for members in 2..=4usize {
        for samples in 1..=8usize {
            for _ in 0..250 {
                let labels: Vec<Vec<usize>> = (0..members)
                    .map(|_| (0..samples).map(|_| rng.random_range(0..3)).collect())
                    .collect();
                let truth: Vec<usize> = (0..samples).map(|_| rng.random_range(0..3)).collect();
                let rep = labels_report(&labels, &truth).map_err(|e| e.to_string())?;
                let (want, deg) = naive_report(&labels, &truth);
                for (g, w) in rep.values().iter().zip(want) {
                    ensure((g - w).abs() <= 1e-12, || format!("table {labels:?} truth {truth:?}"))?;
                }
                ensure(rep.degenerate == deg, || "degenerate counts differ".into())?;
                tables += 1;
            }
        }
    }
    let r = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure((r.t + 1.0).abs() <= 1e-9 && r.df == 8.0, || format!("t {} df {}", r.t, r.df))?;
    // scipy.stats.ttest_ind on the same samples.
    ensure((r.p - 0.346_593_507_087_334_16).abs() <= 1e-9, || format!("p {}", r.p))?;
    Ok(format!(
        "{checked} exhaustive pairs and {tables} tables match brute force; t={:.12}, df={}, p={:.12}",
        r.t, r.df, r.p
    ))
}

fn c6_combos(runs: &Runs) -> Check {
    let a = enumerate_combos(10, 5).map_err(|e| e.to_string())?.len();
    let b = enumerate_combos(10, 2).map_err(|e| e.to_string())?.len();
    ensure(a == 252 && b == 45, || format!("C(10,5)={a}, C(10,2)={b}"))?;
    let lab = &runs.small_lab;
    let one = lab
        .finetune_member(Scheme::Baseline, 1, None, 1)
        .map_err(|e| e.to_string())?;
    let members: Vec<MemberCheckpoint> = (0..20)
        .map(|i| MemberCheckpoint {
            group: if i < 10 { 1 } else { 2 },
            ..one.clone()
        })
        .collect();
    let table = PredictionTable::compute(&lab.spec, &members, &lab.data.dev_inputs()).map_err(|e| e.to_string())?;
    let groups = vec![(0..10).collect(), (10..20).collect()];
    let truth: Targets = lab.data.dev_targets();
    for k in [1, 2, 5] {
        let s = evaluate_scheme(&table, &groups, k, &truth).map_err(|e| e.to_string())?;
        ensure(s.diff == 0.0, || format!("k={k}: diff {}", s.diff))?;
    }
    Ok("C(10,5)=252, C(10,2)=45; identical members give diff = 0 exactly at k = 1, 2, 5".into())
}

fn fmt_row(r: &SchemeResult) -> String {
    format!("{} {:.2}/{:.2}/{:+.2}", r.scheme, r.score.single, r.score.ens, r.score.diff)
}

fn c7_table1(runs: &Runs) -> Check {
    let g = |s| Runs::get(&runs.small, s);
    let (base, rand) = (g(Scheme::Baseline), g(Scheme::RandomLt));
    ensure(rand.score.diff > base.score.diff, || format!("diff {} <= {}", rand.score.diff, base.score.diff))?;
    ensure(rand.score.ens >= base.score.ens, || format!("ens {} < {}", rand.score.ens, base.score.ens))?;
    for s in [Scheme::BaseLt, Scheme::ActiveLt, Scheme::RandomLt] {
        let gap = (g(s).score.single - base.score.single).abs();
        ensure(gap <= 1.5, || format!("{s} single off by {gap:.2}"))?;
    }
    check_frozen(&runs.small, FROZEN_SMALL)?;
    let rows: Vec<String> = runs.small.iter().map(fmt_row).collect();
    Ok(format!("single/ens/diff: {} ({:.0}s protocol)", rows.join(", "), runs.seconds))
}

fn c8_table3(runs: &Runs) -> Check {
    let d = |s| Runs::get(&runs.small, s).diversity.clone().ok_or(format!("{s}: no diversity"));
    let base = d(Scheme::Baseline)?;
    let mut parts = vec![format!("baseline Q {:.4} C {:.4} D {:.4}", base.q, base.corr, base.dis)];
    for s in [Scheme::BaseLt, Scheme::ActiveLt, Scheme::RandomLt] {
        let x = d(s)?;
        ensure(x.q < base.q && x.corr < base.corr && x.dis > base.dis, || {
            format!("{s}: Q {:.4} C {:.4} D {:.4} vs baseline {:.4} {:.4} {:.4}", x.q, x.corr, x.dis, base.q, base.corr, base.dis)
        })?;
        parts.push(format!("{s} Q {:.4} C {:.4} D {:.4}", x.q, x.corr, x.dis));
    }
    Ok(parts.join("; "))
}

fn c9_overlap(runs: &Runs) -> Check {
    let iou = |s| Runs::get(&runs.small, s).mean_iou().ok_or(format!("{s}: no masks"));
    let (b, a, r) = (iou(Scheme::BaseLt)?, iou(Scheme::ActiveLt)?, iou(Scheme::RandomLt)?);
    ensure(b > a && b > r, || format!("base-lt {b:.4} not above active-lt {a:.4} / random-lt {r:.4}"))?;
    ensure(b >= 0.95, || format!("base-lt IoU {b:.4} < 0.95"))?;
    Ok(format!("mean IoU base-lt {b:.4}, active-lt {a:.4}, random-lt {r:.4}"))
}

fn c10_negative(runs: &Runs) -> Check {
    let g = |s| Runs::get(&runs.large, s);
    let (base, rand) = (g(Scheme::Baseline), g(Scheme::RandomLt));
    ensure(rand.score.diff > base.score.diff, || format!("diff {} <= {}", rand.score.diff, base.score.diff))?;
    check_frozen(&runs.large, FROZEN_LARGE)?;
    let ens_order = if rand.score.ens < base.score.ens { "inverted" } else { "not inverted" };
    Ok(format!(
        "easy/large task: {}, {}; ens ordering {ens_order}",
        fmt_row(base),
        fmt_row(rand)
    ))
}

fn dump_frozen(label: &str, results: &[SchemeResult]) {
    if std::env::var("MTE_PRINT_FROZEN").is_err() {
        return;
    }
    println!("const {label}: &[Frozen] = &[");
    for r in results {
        let d = r.diversity.as_ref().map_or([f64::NAN; 5], |d| d.values());
        let iou = r.mean_iou().map_or("f64::NAN".to_string(), |v| format!("{v:?}"));
        println!(
            "    (Scheme::{:?}, {:?}, {:?}, {:?}, [{:?}, {:?}, {:?}, {:?}, {:?}], {iou}),",
            r.scheme, r.score.single, r.score.ens, r.score.diff, d[0], d[1], d[2], d[3], d[4]
        );
    }
    println!("];");
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let mut report = |n: usize, name: &'static str, c: Check| {
        match &c {
            Ok(d) => println!("PASS [{n:>2}] {name}: {d}"),
            Err(d) => println!("FAIL [{n:>2}] {name}: {d}"),
        }
        results.push((n, name, c));
    };
    report(1, "gradient oracle", c1_gradients());
    report(4, "formula fidelity", c4_coefficients());
    report(5, "diversity-metric oracle", c5_diversity_and_t());
    match run_protocol() {
        Ok(runs) => {
            dump_frozen("FROZEN_SMALL", &runs.small);
            dump_frozen("FROZEN_LARGE", &runs.large);
            report(2, "pruning exactness", c2_pruning(&runs));
            report(3, "scheduler endpoint", c3_schedule(&runs));
            report(6, "combination protocol", c6_combos(&runs));
            report(7, "directional accuracy (small task)", c7_table1(&runs));
            report(8, "directional diversity", c8_table3(&runs));
            report(9, "mask overlap ordering", c9_overlap(&runs));
            report(10, "negative result (easy/large task)", c10_negative(&runs));
        }
        Err(e) => {
            for (n, name) in [
                (2, "pruning exactness"),
                (3, "scheduler endpoint"),
                (6, "combination protocol"),
                (7, "directional accuracy (small task)"),
                (8, "directional diversity"),
                (9, "mask overlap ordering"),
                (10, "negative result (easy/large task)"),
            ] {
                report(n, name, Err(format!("protocol run failed: {e}")));
            }
        }
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
