//! Report tables: accuracy with t-test p-values, diversity, mask IoU and the
//! member-count sweep, each as CSV and as aligned text.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::diversity::METRIC_NAMES;
use crate::ensemble::{MemberCheckpoint, Scheme};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_members, p_value, SchemeResult};
use crate::model::ModelSpec;

/// Schemes shown in the diversity table.
pub const DIVERSITY_SCHEMES: [Scheme; 4] = [Scheme::Baseline, Scheme::BaseLt, Scheme::ActiveLt, Scheme::RandomLt];

/// Schemes with an IoU matrix.
pub const TICKET_SCHEMES: [Scheme; 3] = [Scheme::BaseLt, Scheme::ActiveLt, Scheme::RandomLt];

pub const SWEEP_MAX_K: usize = 5;

#[derive(Debug, Clone)]
pub struct Report {
    pub k: usize,
    pub results: Vec<SchemeResult>,
}

impl Report {
    /// Evaluates every scheme present in `runs` (in the given order).
    pub fn build(spec: &ModelSpec, data: &Dataset, runs: &[Vec<MemberCheckpoint>], k: usize) -> Result<Self> {
        let results = runs
            .iter()
            .map(|members| evaluate_members(spec, data, members, k, SWEEP_MAX_K))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, results })
    }

    pub fn get(&self, scheme: Scheme) -> Option<&SchemeResult> {
        self.results.iter().find(|r| r.scheme == scheme)
    }

    fn require(&self, scheme: Scheme) -> Result<&SchemeResult> {
        self.get(scheme)
            .ok_or_else(|| Error::MissingArtifact(format!("scheme {scheme} was not evaluated")))
    }

    /// p-value of `scheme`'s combination metrics against `reference`'s.
    pub fn p_against(&self, scheme: Scheme, reference: Scheme) -> Option<f64> {
        let a = self.get(scheme)?;
        let b = self.get(reference)?;
        Some(p_value(&a.score.combo_metrics, &b.score.combo_metrics))
    }

    fn accuracy_rows(&self) -> Vec<[String; 6]> {
        self.results
            .iter()
            .map(|r| {
                let p = |reference| self.p_against(r.scheme, reference).map_or(String::from("-"), fmt_p);
                [
                    r.scheme.name().to_string(),
                    format!("{:.2}", r.score.single),
                    format!("{:.2}", r.score.ens),
                    format!("{:.2}", r.score.diff),
                    p(Scheme::Baseline),
                    p(Scheme::BaseLt),
                ]
            })
            .collect()
    }

    pub fn accuracy_csv(&self) -> String {
        let mut s = String::from("scheme,single,ens,diff,p_vs_baseline,p_vs_base_lt\n");
        for r in &self.results {
            let p = |reference| self.p_against(r.scheme, reference).map_or(String::new(), |p| format!("{p:.6e}"));
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{},{}",
                r.scheme.name(),
                r.score.single,
                r.score.ens,
                r.score.diff,
                p(Scheme::Baseline),
                p(Scheme::BaseLt)
            );
        }
        s
    }

    pub fn accuracy_text(&self) -> String {
        let header = ["scheme", "single", "ens.", "diff.", "p(baseline)", "p(base-lt)"].map(String::from);
        format!("ensemble size k={}\n{}", self.k, align(&header, &self.accuracy_rows()))
    }

    pub fn diversity_csv(&self) -> Result<String> {
        let mut s = format!("scheme,{}\n", METRIC_NAMES.join(","));
        for scheme in DIVERSITY_SCHEMES {
            let d = self.diversity_of(scheme)?;
            let vals: Vec<String> = d.values().iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{},{}", scheme.name(), vals.join(","));
        }
        Ok(s)
    }

    pub fn diversity_text(&self) -> Result<String> {
        let mut header = vec![String::from("scheme")];
        header.extend(METRIC_NAMES.iter().map(|m| m.to_string()));
        header.push("degenerate pairs".into());
        let mut rows = Vec::new();
        for scheme in DIVERSITY_SCHEMES {
            let d = self.diversity_of(scheme)?;
            let mut row = vec![scheme.name().to_string()];
            row.extend(d.values().iter().map(|v| format!("{v:.4}")));
            let flagged: Vec<String> = METRIC_NAMES
                .iter()
                .zip(d.degenerate)
                .filter(|(_, n)| *n > 0)
                .map(|(m, n)| format!("{m}:{n}/{}", d.pairs))
                .collect();
            row.push(if flagged.is_empty() { "-".into() } else { flagged.join(" ") });
            rows.push(row);
        }
        Ok(align(&header, &rows))
    }

    fn diversity_of(&self, scheme: Scheme) -> Result<&crate::diversity::DiversityReport> {
        self.require(scheme)?
            .diversity
            .as_ref()
            .ok_or_else(|| Error::contract(format!("no diversity measures for {scheme} (needs classification and two members)")))
    }

    /// IoU matrix of one ticket scheme, labelled by member seed.
    pub fn iou_csv(&self, scheme: Scheme, seeds: &[u64]) -> Result<String> {
        let m = self.iou_of(scheme)?;
        let labels: Vec<String> = seeds.iter().take(m.len()).map(|s| format!("seed{s}")).collect();
        let mut s = format!("seed,{}\n", labels.join(","));
        for (label, row) in labels.iter().zip(m) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{label},{}", vals.join(","));
        }
        Ok(s)
    }

    pub fn iou_text(&self, scheme: Scheme, seeds: &[u64]) -> Result<String> {
        let m = self.iou_of(scheme)?;
        let labels: Vec<String> = seeds.iter().take(m.len()).map(|s| format!("seed{s}")).collect();
        let mut header = vec![scheme.name().to_string()];
        header.extend(labels.iter().cloned());
        let rows: Vec<Vec<String>> = labels
            .iter()
            .zip(m)
            .map(|(l, row)| {
                let mut r = vec![l.clone()];
                r.extend(row.iter().map(|v| format!("{v:.3}")));
                r
            })
            .collect();
        let mean = self.require(scheme)?.mean_iou().unwrap_or(f64::NAN);
        Ok(format!("{}mean off-diagonal IoU {mean:.4}\n", align(&header, &rows)))
    }

    fn iou_of(&self, scheme: Scheme) -> Result<&Vec<Vec<f64>>> {
        self.require(scheme)?
            .overlap
            .as_ref()
            .ok_or_else(|| Error::contract(format!("{scheme} members carry no masks")))
    }

    /// Ensemble metric and gain over a single member for k = 1..=5.
    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("scheme,k,ens,gain\n");
        for r in &self.results {
            let base = r.sweep.first().copied().unwrap_or(f64::NAN);
            for (i, e) in r.sweep.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:.6},{:.6}", r.scheme.name(), i + 1, e, e - base);
            }
        }
        s
    }

    pub fn sweep_text(&self) -> String {
        let width = self.results.iter().map(|r| r.sweep.len()).max().unwrap_or(0);
        let mut header = vec![String::from("gain")];
        header.extend((1..=width).map(|k| format!("k={k}")));
        let rows: Vec<Vec<String>> = self
            .results
            .iter()
            .map(|r| {
                let base = r.sweep.first().copied().unwrap_or(f64::NAN);
                let mut row = vec![r.scheme.name().to_string()];
                row.extend(r.sweep.iter().map(|e| format!("{:+.2}", e - base)));
                row
            })
            .collect();
        align(&header, &rows)
    }
}

fn fmt_p(p: f64) -> String {
    if p.is_nan() {
        "nan".into()
    } else if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Left-aligned first column, right-aligned others.
pub fn align<S: AsRef<str>>(header: &[S], rows: &[impl AsRef<[S]>]) -> String {
    let ncol = header.len();
    let mut width = vec![0usize; ncol];
    let all = std::iter::once(header).chain(rows.iter().map(|r| r.as_ref()));
    for row in all.clone() {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.as_ref().chars().count());
        }
    }
    let mut out = String::new();
    for (i, row) in all.enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(j, (c, w))| {
                if j == 0 {
                    format!("{:<w$}", c.as_ref())
                } else {
                    format!("{:>w$}", c.as_ref())
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_pads_columns() {
        let t = align(&["a", "bb"], &[["ccc", "d"], ["e", "ffff"]]);
        assert_eq!(t, "a      bb\n---------\nccc     d\ne    ffff\n");
    }

    #[test]
    fn p_formatting() {
        assert_eq!(fmt_p(0.5), "0.5000");
        assert_eq!(fmt_p(1e-5), "1.00e-5");
        assert_eq!(fmt_p(f64::NAN), "nan");
    }
}
