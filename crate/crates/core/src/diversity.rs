//! Pairwise classifier diversity over hard labels.
//!
//! For a pair of classifiers on `N` samples:
//!
//! | counts | second correct | second wrong |
//! |--------|----------------|--------------|
//! | first correct | `a` | `b` |
//! | first wrong   | `c` | `d` |
//!
//! `d` further splits into `d_same` (both wrong with the same label) and
//! `d_diff` (both wrong, different labels).
//!
//! * Q statistic `(ad − bc) / (ad + bc)`
//! * ratio errors `d_diff / d_same`
//! * negative double fault `−d / N`
//! * disagreement `(b + c) / N`
//! * correlation `(ad − bc) / √((a+b)(c+d)(a+c)(b+d))`
//!
//! Q and correlation with a zero denominator are reported as 0, and ratio
//! errors with `d_same = 0` as `d_diff`; each such value carries a
//! degenerate flag so reports can count them.

use crate::ensemble::PredictionTable;
use crate::error::{Error, Result};
use crate::model::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyCounts {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub d_same: usize,
    pub d_diff: usize,
}

impl ContingencyCounts {
    pub fn total(&self) -> usize {
        self.a + self.b + self.c + self.d
    }
}

pub fn contingency(pred_i: &[usize], pred_j: &[usize], truth: &[usize]) -> Result<ContingencyCounts> {
    if pred_i.len() != truth.len() || pred_j.len() != truth.len() || truth.is_empty() {
        return Err(Error::contract(format!(
            "contingency needs equal non-empty lengths, got {}, {}, {}",
            pred_i.len(),
            pred_j.len(),
            truth.len()
        )));
    }
    let mut cc = ContingencyCounts::default();
    for ((&pi, &pj), &t) in pred_i.iter().zip(pred_j).zip(truth) {
        match (pi == t, pj == t) {
            (true, true) => cc.a += 1,
            (true, false) => cc.b += 1,
            (false, true) => cc.c += 1,
            (false, false) => {
                cc.d += 1;
                if pi == pj {
                    cc.d_same += 1;
                } else {
                    cc.d_diff += 1;
                }
            }
        }
    }
    Ok(cc)
}

/// A metric value plus whether it came from a degenerate-pair convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measure {
    pub value: f64,
    pub degenerate: bool,
}

impl Measure {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn flagged(value: f64) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

fn f(x: usize) -> f64 {
    x as f64
}

pub fn q_statistic(cc: &ContingencyCounts) -> Measure {
    let ad = f(cc.a) * f(cc.d);
    let bc = f(cc.b) * f(cc.c);
    if ad + bc == 0.0 {
        Measure::flagged(0.0)
    } else {
        Measure::ok((ad - bc) / (ad + bc))
    }
}

pub fn ratio_errors(cc: &ContingencyCounts) -> Measure {
    if cc.d_same == 0 {
        Measure::flagged(f(cc.d_diff))
    } else {
        Measure::ok(f(cc.d_diff) / f(cc.d_same))
    }
}

pub fn neg_double_fault(cc: &ContingencyCounts) -> Measure {
    Measure::ok(-f(cc.d) / f(cc.total()))
}

pub fn disagreement(cc: &ContingencyCounts) -> Measure {
    Measure::ok(f(cc.b + cc.c) / f(cc.total()))
}

pub fn correlation(cc: &ContingencyCounts) -> Measure {
    let den = f(cc.a + cc.b) * f(cc.c + cc.d) * f(cc.a + cc.c) * f(cc.b + cc.d);
    if den == 0.0 {
        Measure::flagged(0.0)
    } else {
        Measure::ok((f(cc.a) * f(cc.d) - f(cc.b) * f(cc.c)) / den.sqrt())
    }
}

pub const METRIC_NAMES: [&str; 5] = ["Q", "R", "ND", "D", "C"];

/// The five metrics averaged over all member pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub q: f64,
    pub r: f64,
    pub nd: f64,
    pub dis: f64,
    pub corr: f64,
    pub pairs: usize,
    /// Degenerate pairs per metric, in [`METRIC_NAMES`] order.
    pub degenerate: [usize; 5],
}

impl DiversityReport {
    pub fn values(&self) -> [f64; 5] {
        [self.q, self.r, self.nd, self.dis, self.corr]
    }
}

pub fn pair_measures(cc: &ContingencyCounts) -> [Measure; 5] {
    [
        q_statistic(cc),
        ratio_errors(cc),
        neg_double_fault(cc),
        disagreement(cc),
        correlation(cc),
    ]
}

/// Averages each metric over the `C(m, 2)` pairs, skipping degenerate pairs
/// for that metric. A metric whose pairs are all degenerate reports the mean
/// of the convention values.
pub fn pairwise_report(table: &PredictionTable, truth: &[usize]) -> Result<DiversityReport> {
    if table.task != TaskKind::Classification {
        return Err(Error::contract("diversity metrics are defined for classification only"));
    }
    if table.members < 2 {
        return Err(Error::contract("diversity needs at least two members"));
    }
    let labels: Vec<Vec<usize>> = (0..table.members).map(|i| table.hard_labels(i)).collect();
    labels_report(&labels, truth)
}

pub fn labels_report(labels: &[Vec<usize>], truth: &[usize]) -> Result<DiversityReport> {
    if labels.len() < 2 {
        return Err(Error::contract("diversity needs at least two members"));
    }
    let mut sum = [0.0; 5];
    let mut count = [0usize; 5];
    let mut fallback = [0.0; 5];
    let mut degenerate = [0usize; 5];
    let mut pairs = 0;
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let cc = contingency(&labels[i], &labels[j], truth)?;
            pairs += 1;
            for (k, m) in pair_measures(&cc).into_iter().enumerate() {
                if m.degenerate {
                    degenerate[k] += 1;
                    fallback[k] += m.value;
                } else {
                    sum[k] += m.value;
                    count[k] += 1;
                }
            }
        }
    }
    let v: Vec<f64> = (0..5)
        .map(|k| {
            if count[k] > 0 {
                sum[k] / count[k] as f64
            } else {
                fallback[k] / pairs as f64
            }
        })
        .collect();
    Ok(DiversityReport {
        q: v[0],
        r: v[1],
        nd: v[2],
        dis: v[3],
        corr: v[4],
        pairs,
        degenerate,
    })
}
