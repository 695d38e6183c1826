//! Independent oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use multiticket::numcore::{Matrix, NodeId, Tape};
use multiticket::ParamVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prim {
    MatMul,
    AddBias,
    Add,
    Mul,
    Scale,
    Relu,
    Tanh,
    Dropout,
    SoftmaxCe,
    SquaredError,
    L1,
}

pub const PRIMS: [Prim; 11] = [
    Prim::MatMul,
    Prim::AddBias,
    Prim::Add,
    Prim::Mul,
    Prim::Scale,
    Prim::Relu,
    Prim::Tanh,
    Prim::Dropout,
    Prim::SoftmaxCe,
    Prim::SquaredError,
    Prim::L1,
];

/// One random instance of a primitive, reduced to a scalar loss.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub prim: Prim,
    pub params: ParamVector,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
    pub target: Vec<f64>,
    pub mask: Vec<f64>,
    pub coeff: Vec<f64>,
    pub c: f64,
}

/// Values bounded away from zero so kinks of relu and |x| are never crossed.
fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.1..2.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

fn values(rng: &mut ChaCha8Rng, n: usize, kink: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if kink { away_from_zero(rng) } else { rng.random_range(-2.0..2.0) })
        .collect()
}

impl GradCase {
    pub fn random(prim: Prim, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..5);
        let inner = rng.random_range(1..5);
        let cols = if prim == Prim::SquaredError { 1 } else { rng.random_range(2..5) };
        let kink = matches!(prim, Prim::Relu | Prim::L1);
        let mut params = ParamVector::new();
        let (ar, ac) = if prim == Prim::MatMul { (rows, inner) } else { (rows, cols) };
        params.push("a", ar, ac, values(&mut rng, ar * ac, kink)).unwrap();
        match prim {
            Prim::MatMul => params.push("b", inner, cols, values(&mut rng, inner * cols, false)).unwrap(),
            Prim::AddBias => params.push("b", 1, cols, values(&mut rng, cols, false)).unwrap(),
            Prim::Add | Prim::Mul => params.push("b", rows, cols, values(&mut rng, rows * cols, false)).unwrap(),
            _ => {}
        }
        let n = rows * cols;
        Self {
            prim,
            params,
            rows,
            cols,
            labels: (0..rows).map(|_| rng.random_range(0..cols)).collect(),
            target: values(&mut rng, rows, false),
            mask: (0..n).map(|_| if rng.random_bool(0.7) { 1.0 / 0.7 } else { 0.0 }).collect(),
            coeff: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            c: rng.random_range(-3.0..3.0),
        }
    }

    pub fn tape(&self, params: &ParamVector) -> (Tape, NodeId) {
        let mut t = Tape::new(params);
        let a = t.param(params, "a").unwrap();
        let b = || params.has("b");
        let y = match self.prim {
            Prim::MatMul => {
                assert!(b());
                let b = t.param(params, "b").unwrap();
                t.matmul(a, b).unwrap()
            }
            Prim::AddBias => {
                let b = t.param(params, "b").unwrap();
                t.add_bias(a, b).unwrap()
            }
            Prim::Add => {
                let b = t.param(params, "b").unwrap();
                t.add(a, b).unwrap()
            }
            Prim::Mul => {
                let b = t.param(params, "b").unwrap();
                t.mul(a, b).unwrap()
            }
            Prim::Scale => t.scale(a, self.c),
            Prim::Relu => t.relu(a),
            Prim::Tanh => t.tanh(a),
            Prim::Dropout => t.dropout(a, self.mask.clone()).unwrap(),
            Prim::SoftmaxCe => a,
            Prim::SquaredError => {
                let l = t.squared_error(a, &self.target).unwrap();
                return (t, l);
            }
            Prim::L1 => {
                let l = t.l1(a, self.coeff.clone()).unwrap();
                return (t, l);
            }
        };
        let l = t.softmax_cross_entropy(y, &self.labels).unwrap();
        (t, l)
    }

    pub fn loss(&self, params: &ParamVector) -> f64 {
        let (t, l) = self.tape(params);
        t.value(l).get(0, 0)
    }

    /// Largest `|g - fd| / max(1, |g|, |fd|)` over all parameters, with a
    /// central difference of step `h`.
    pub fn max_error(&self, h: f64) -> f64 {
        let (t, _) = self.tape(&self.params);
        let grad = t.backward().unwrap();
        let mut worst = 0.0f64;
        for i in 0..self.params.len() {
            let mut plus = self.params.clone();
            plus.data_mut()[i] += h;
            let mut minus = self.params.clone();
            minus.data_mut()[i] -= h;
            let fd = (self.loss(&plus) - self.loss(&minus)) / (2.0 * h);
            let g = grad.data()[i];
            worst = worst.max((g - fd).abs() / 1f64.max(g.abs()).max(fd.abs()));
        }
        worst
    }
}

/// Per-sample counting of the pairwise diversity metrics, without any of the
/// library's contingency code. Returns `(value, degenerate)` for Q, R, ND, D, C.
pub fn naive_pair(pi: &[usize], pj: &[usize], truth: &[usize]) -> [(f64, bool); 5] {
    let n = truth.len() as f64;
    let count = |f: &dyn Fn(usize) -> bool| (0..truth.len()).filter(|&s| f(s)).count() as f64;
    let a = count(&|s| pi[s] == truth[s] && pj[s] == truth[s]);
    let b = count(&|s| pi[s] == truth[s] && pj[s] != truth[s]);
    let c = count(&|s| pi[s] != truth[s] && pj[s] == truth[s]);
    let d = count(&|s| pi[s] != truth[s] && pj[s] != truth[s]);
    let same = count(&|s| pi[s] != truth[s] && pj[s] != truth[s] && pi[s] == pj[s]);
    let diff = count(&|s| pi[s] != truth[s] && pj[s] != truth[s] && pi[s] != pj[s]);
    let q = if a * d + b * c == 0.0 { (0.0, true) } else { ((a * d - b * c) / (a * d + b * c), false) };
    let r = if same == 0.0 { (diff, true) } else { (diff / same, false) };
    let marg = (a + b) * (c + d) * (a + c) * (b + d);
    let corr = if marg == 0.0 { (0.0, true) } else { ((a * d - b * c) / marg.sqrt(), false) };
    [q, r, (-d / n, false), ((b + c) / n, false), corr]
}

/// Averages of [`naive_pair`] over all pairs, skipping degenerate pairs per
/// metric (falling back to the mean of the convention values when every
/// pair is degenerate).
pub fn naive_report(labels: &[Vec<usize>], truth: &[usize]) -> ([f64; 5], [usize; 5]) {
    let mut ok: [Vec<f64>; 5] = Default::default();
    let mut flagged: [Vec<f64>; 5] = Default::default();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            for (k, (v, deg)) in naive_pair(&labels[i], &labels[j], truth).into_iter().enumerate() {
                if deg {
                    flagged[k].push(v);
                } else {
                    ok[k].push(v);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut out = [0.0; 5];
    let mut deg = [0; 5];
    for k in 0..5 {
        out[k] = if ok[k].is_empty() { mean(&flagged[k]) } else { mean(&ok[k]) };
        deg[k] = flagged[k].len();
    }
    (out, deg)
}

/// Textbook pooled two-sample t statistic and degrees of freedom.
pub fn naive_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let m = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let mu = m(x);
        x.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let sp2 = (ss(a) + ss(b)) / df;
    ((m(a) - m(b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt(), df)
}

pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::from_vec(rows, cols, data).unwrap()
}
