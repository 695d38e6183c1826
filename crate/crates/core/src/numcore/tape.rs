//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numcore::matrix::{softmax_rows, Matrix};
use crate::params::{ParamVector, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { offset: usize },
    MatMul(NodeId, NodeId),
    /// `[n×m] + [1×m]` broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    /// Multiplies by a fixed mask whose entries are 0 or `1/(1-p)`.
    Dropout { input: NodeId, mask: Vec<f64> },
    /// Mean cross entropy of row-wise softmax against class targets.
    SoftmaxCrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Matrix },
    /// Mean over rows of the squared error of a single-column prediction.
    SquaredError { pred: NodeId, target: Vec<f64> },
    /// `Σ coeff_i · |x_i|`
    L1 { input: NodeId, coeff: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recorded forward computation, replayable for gradients.
#[derive(Debug, Clone)]
pub struct Tape {
    layout: Vec<Segment>,
    n_params: usize,
    nodes: Vec<Node>,
}

impl Tape {
    /// Starts a tape whose gradients will share `params`' layout.
    pub fn new(params: &ParamVector) -> Self {
        Self {
            layout: params.segments().to_vec(),
            n_params: params.len(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf node holding a copy of the named parameter segment.
    pub fn param(&mut self, params: &ParamVector, name: &str) -> Result<NodeId> {
        let seg = params
            .segment(name)
            .ok_or_else(|| Error::contract(format!("no segment named {name}")))?;
        if !self.layout.iter().any(|s| s == seg) {
            return Err(Error::dim(format!("segment {name} not in tape layout")));
        }
        let value = params.matrix(name)?;
        let offset = seg.offset;
        Ok(self.push(Op::Param { offset }, value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim(format!(
                "bias {:?} does not broadcast over {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut v = av.clone();
        let cols = v.cols();
        for row in v.data_mut().chunks_mut(cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        Ok(self.push(Op::AddBias(a, bias), v))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "elementwise mul")?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for (x, y) in v.data_mut().iter_mut().zip(bv) {
            *x *= y;
        }
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn dropout(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(a).data().len() {
            return Err(Error::dim("dropout mask length differs from input"));
        }
        let mut v = self.value(a).clone();
        for (x, m) in v.data_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        Ok(self.push(Op::Dropout { input: a, mask }, v))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || lv.rows() == 0 {
            return Err(Error::dim(format!(
                "{} logit rows for {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(Error::dim(format!("target class {t} with {} logits", lv.cols())));
        }
        let probs = softmax_rows(lv);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -probs.get(r, t).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Matrix::scalar(loss),
        ))
    }

    pub fn squared_error(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.cols() != 1 || pv.rows() != target.len() || target.is_empty() {
            return Err(Error::dim(format!(
                "prediction {:?} against {} targets",
                pv.shape(),
                target.len()
            )));
        }
        let loss = pv
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / target.len() as f64;
        Ok(self.push(
            Op::SquaredError {
                pred,
                target: target.to_vec(),
            },
            Matrix::scalar(loss),
        ))
    }

    pub fn l1(&mut self, a: NodeId, coeff: Vec<f64>) -> Result<NodeId> {
        let av = self.value(a);
        if coeff.len() != av.data().len() {
            return Err(Error::dim("L1 coefficient length differs from input"));
        }
        let v = av.data().iter().zip(&coeff).map(|(x, c)| c * x.abs()).sum();
        Ok(self.push(Op::L1 { input: a, coeff }, Matrix::scalar(v)))
    }

    /// Gradient of the last node (which must be a scalar) with respect to
    /// every parameter, in the layout the tape was created with.
    pub fn backward(&self) -> Result<ParamVector> {
        let root = match self.nodes.last() {
            Some(n) if n.value.shape() == (1, 1) => self.nodes.len() - 1,
            Some(n) => {
                return Err(Error::contract(format!(
                    "backward needs a scalar loss at the tape end, found {:?}",
                    n.value.shape()
                )))
            }
            None => return Err(Error::contract("backward on an empty tape")),
        };

        let mut grad = vec![0.0; self.n_params];
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[root] = Some(Matrix::scalar(1.0));

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (dst, v) in grad[*offset..*offset + g.data().len()].iter_mut().zip(g.data()) {
                        *dst += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_bt(self.value(*b))?;
                    let db = self.value(*a).matmul_at(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddBias(a, b) => {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *b, Matrix::from_vec(1, cols, db)?);
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, bv, |g, y| g * y);
                    let db = zip_map(&g, av, |g, x| g * x);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, g.map(|v| v * c)),
                Op::Relu(a) => {
                    let da = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut adj, *a, da);
                }
                Op::Tanh(a) => {
                    let da = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut adj, *a, da);
                }
                Op::Dropout { input, mask } => {
                    let mut da = g;
                    for (d, m) in da.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut adj, *input, da);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.data()[0] / targets.len() as f64;
                    let mut d = probs.clone();
                    let cols = d.cols();
                    for (r, &t) in targets.iter().enumerate() {
                        d.data_mut()[r * cols + t] -= 1.0;
                    }
                    for v in d.data_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut adj, *logits, d);
                }
                Op::SquaredError { pred, target } => {
                    let scale = 2.0 * g.data()[0] / target.len() as f64;
                    let pv = self.value(*pred);
                    let d: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(p, t)| scale * (p - t))
                        .collect();
                    accumulate(&mut adj, *pred, Matrix::from_vec(pv.rows(), 1, d)?);
                }
                Op::L1 { input, coeff } => {
                    let s = g.data()[0];
                    let da = self.value(*input).data().iter().zip(coeff).map(|(x, c)| {
                        // Subgradient at zero is taken as zero.
                        if *x > 0.0 {
                            s * c
                        } else if *x < 0.0 {
                            -s * c
                        } else {
                            0.0
                        }
                    });
                    let iv = self.value(*input);
                    accumulate(&mut adj, *input, Matrix::from_vec(iv.rows(), iv.cols(), da.collect())?);
                }
            }
        }

        ParamVector::from_parts(self.layout.clone(), grad)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Matrix::from_vec(g.rows(), g.cols(), data).expect("shapes match")
}
