//! Feed-forward network: a shared pretrained body plus a per-seed task head.
//!
//! Layout of a full parameter vector, in order:
//! `body.0.weight`, `body.0.bias`, …, `body.{L-1}.bias`, `head.weight`, `head.bias`.
//! Weights are stored `[fan_in × fan_out]` so a forward layer is `x · W + b`.
//! The prunable region is every body weight matrix except the input layer's.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::{softmax_rows, Dist, Matrix, NodeId, Purpose, SeedStream, Tape};
use crate::params::ParamVector;
use crate::training::{self, TrainConfig};

pub use crate::params::{ParamVector as Params, Segment};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub output_width: usize,
    pub task: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_width: usize,
    pub body: Vec<BodyLayer>,
    pub head: HeadSpec,
    pub dropout_p: f64,
    /// Standard deviation of the freshly drawn head weights.
    pub head_init_std: f64,
}

impl ModelSpec {
    /// The default desk-scale network: 16 inputs, three 256-wide ReLU layers.
    pub fn desk_scale(head: HeadSpec) -> Self {
        Self::with_body(16, &[256, 256, 256], head)
    }

    pub fn with_body(input_width: usize, widths: &[usize], head: HeadSpec) -> Self {
        Self {
            input_width,
            body: widths
                .iter()
                .map(|&width| BodyLayer {
                    width,
                    activation: Activation::Relu,
                })
                .collect(),
            head,
            dropout_p: 0.1,
            head_init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.body.is_empty() {
            return Err(Error::contract("model needs at least one body layer"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::contract(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if self.input_width == 0 || self.head.output_width == 0 || self.body.iter().any(|l| l.width == 0) {
            return Err(Error::contract("layer widths must be positive"));
        }
        if self.head.task == TaskKind::Regression && self.head.output_width != 1 {
            return Err(Error::contract("regression head must have one output"));
        }
        Ok(())
    }

    pub fn body_weight(i: usize) -> String {
        format!("body.{i}.weight")
    }

    pub fn body_bias(i: usize) -> String {
        format!("body.{i}.bias")
    }

    /// `(fan_in, fan_out)` of body layer `i`.
    fn body_dims(&self, i: usize) -> (usize, usize) {
        let fan_in = if i == 0 { self.input_width } else { self.body[i - 1].width };
        (fan_in, self.body[i].width)
    }

    pub fn feature_width(&self) -> usize {
        self.body.last().map_or(self.input_width, |l| l.width)
    }

    /// Names of the prunable segments, in layout order.
    pub fn prunable_region(&self) -> Vec<String> {
        (1..self.body.len()).map(Self::body_weight).collect()
    }

    pub fn prunable_len(&self) -> usize {
        (1..self.body.len())
            .map(|i| {
                let (a, b) = self.body_dims(i);
                a * b
            })
            .sum()
    }

    /// Copy of this spec with a different head.
    pub fn with_head(&self, head: HeadSpec) -> Self {
        Self { head, ..self.clone() }
    }

    /// Checks that `params` is a complete body + head vector for this spec.
    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        let mut expected = Vec::new();
        for i in 0..self.body.len() {
            let (a, b) = self.body_dims(i);
            expected.push((Self::body_weight(i), a, b));
            expected.push((Self::body_bias(i), 1, b));
        }
        expected.push((HEAD_WEIGHT.to_string(), self.feature_width(), self.head.output_width));
        expected.push((HEAD_BIAS.to_string(), 1, self.head.output_width));
        if params.segments().len() != expected.len() {
            return Err(Error::dim(format!(
                "parameter vector has {} segments, model needs {}",
                params.segments().len(),
                expected.len()
            )));
        }
        for (seg, (name, r, c)) in params.segments().iter().zip(&expected) {
            if &seg.name != name || seg.rows != *r || seg.cols != *c {
                return Err(Error::dim(format!(
                    "segment {} is {}x{}, model expects {name} {r}x{c}",
                    seg.name, seg.rows, seg.cols
                )));
            }
        }
        Ok(())
    }
}

/// Dropout randomness for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DropoutDraw {
    pub stream: SeedStream,
    pub call_index: u64,
    pub p: f64,
}

/// Records a forward pass. Returns the tape and the output node (logits for
/// classification, raw scalar for regression).
pub fn forward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Matrix,
    dropout: Option<DropoutDraw>,
) -> Result<(Tape, NodeId)> {
    spec.check_params(params)?;
    if batch.cols() != spec.input_width {
        return Err(Error::dim(format!(
            "batch has {} columns, model input width is {}",
            batch.cols(),
            spec.input_width
        )));
    }
    let mut tape = Tape::new(params);
    let mut h = tape.input(batch.clone());
    // One RNG for the whole pass; masks for successive layers come from it in order.
    let mut drop_rng = dropout
        .filter(|d| d.p > 0.0)
        .map(|d| (d.stream.rng(d.call_index), d.p));
    for (i, layer) in spec.body.iter().enumerate() {
        let w = tape.param(params, &ModelSpec::body_weight(i))?;
        let b = tape.param(params, &ModelSpec::body_bias(i))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_bias(z, b)?;
        h = match layer.activation {
            Activation::Relu => tape.relu(z),
            Activation::Tanh => tape.tanh(z),
        };
        if let Some((rng, p)) = drop_rng.as_mut() {
            let n = tape.value(h).data().len();
            let keep = 1.0 / (1.0 - *p);
            let mask = (0..n)
                .map(|_| {
                    if rand::Rng::random::<f64>(rng) < *p {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect();
            h = tape.dropout(h, mask)?;
        }
        if !tape.value(h).is_finite() {
            return Err(Error::NonFiniteLayer {
                layer: i,
                context: "body activation".into(),
            });
        }
    }
    let w = tape.param(params, HEAD_WEIGHT)?;
    let b = tape.param(params, HEAD_BIAS)?;
    let z = tape.matmul(h, w)?;
    let out = tape.add_bias(z, b)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFiniteLayer {
            layer: spec.body.len(),
            context: "head output".into(),
        });
    }
    Ok((tape, out))
}

/// Inference output: class probabilities for classification, raw scalars for
/// regression. Dropout is off.
pub fn predict(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    let (tape, out) = forward(spec, params, inputs, None)?;
    let raw = tape.value(out);
    Ok(match spec.head.task {
        TaskKind::Classification => softmax_rows(raw),
        TaskKind::Regression => raw.clone(),
    })
}

/// He-normal body weights and zero biases drawn from the body-init stream.
pub fn init_body(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let stream = SeedStream::new(seed, Purpose::BodyInit);
    let mut p = ParamVector::new();
    for i in 0..spec.body.len() {
        let (fan_in, fan_out) = spec.body_dims(i);
        let std = (2.0 / fan_in as f64).sqrt();
        let w = stream
            .draw(i as u64, fan_in * fan_out, Dist::Normal)?
            .into_iter()
            .map(|v| v * std)
            .collect();
        p.push(&ModelSpec::body_weight(i), fan_in, fan_out, w)?;
        p.push(&ModelSpec::body_bias(i), 1, fan_out, vec![0.0; fan_out])?;
    }
    Ok(p)
}

/// Appends a head drawn from the head-init stream of `seed`. Body bytes are
/// copied unchanged.
pub fn attach_head(spec: &ModelSpec, body: &ParamVector, seed: u64) -> Result<ParamVector> {
    if body.has(HEAD_WEIGHT) || body.has(HEAD_BIAS) {
        return Err(Error::contract("parameter vector already has a head"));
    }
    let rows = spec.feature_width();
    let cols = spec.head.output_width;
    let w = SeedStream::new(seed, Purpose::HeadInit)
        .draw(0, rows * cols, Dist::Normal)?
        .into_iter()
        .map(|v| v * spec.head_init_std)
        .collect();
    let mut p = body.clone();
    p.push(HEAD_WEIGHT, rows, cols, w)?;
    p.push(HEAD_BIAS, 1, cols, vec![0.0; cols])?;
    spec.check_params(&p)?;
    Ok(p)
}

pub fn strip_head(params: &ParamVector) -> ParamVector {
    params.without(&[HEAD_WEIGHT, HEAD_BIAS])
}

/// Trains a body on the source task behind a throwaway head and returns the
/// body alone. This body is the shared starting point θ₀ of every member.
pub fn init_pretrained(
    spec: &ModelSpec,
    source: &Dataset,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    if source.x.cols() != spec.input_width {
        return Err(Error::dim(format!(
            "source task has {} features, model input width is {}",
            source.x.cols(),
            spec.input_width
        )));
    }
    let classes = source
        .num_classes()
        .ok_or_else(|| Error::contract("source task must be a classification task"))?;
    let source_spec = spec.with_head(HeadSpec {
        output_width: classes,
        task: TaskKind::Classification,
    });
    let body = init_body(&source_spec, seed)?;
    if cfg.epochs == 0 {
        return Ok(body);
    }
    let full = attach_head(&source_spec, &body, seed)?;
    let mask = PruneMask::full(&source_spec);
    let trained = training::finetune(&source_spec, &full, &mask, None, source, cfg)?;
    Ok(strip_head(&trained))
}

/// Binary mask over the prunable region (`true` = surviving).
///
/// Flat index `k` runs over the region's segments concatenated in layout order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    region: Vec<String>,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn full(spec: &ModelSpec) -> Self {
        Self {
            region: spec.prunable_region(),
            bits: vec![true; spec.prunable_len()],
        }
    }

    pub fn from_bits(region: Vec<String>, bits: Vec<bool>) -> Self {
        Self { region, bits }
    }

    pub fn region(&self) -> &[String] {
        &self.region
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn surviving(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of pruned entries.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        1.0 - self.surviving() as f64 / self.bits.len() as f64
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Parameter-vector ranges covered by the region, in flat-index order.
    pub fn ranges(&self, params: &ParamVector) -> Result<Vec<std::ops::Range<usize>>> {
        let mut out = Vec::with_capacity(self.region.len());
        let mut total = 0;
        for name in &self.region {
            let seg = params
                .segment(name)
                .ok_or_else(|| Error::dim(format!("mask region segment {name} missing from params")))?;
            total += seg.len();
            out.push(seg.range());
        }
        if total != self.bits.len() {
            return Err(Error::dim(format!(
                "mask has {} bits, prunable region has {total} parameters",
                self.bits.len()
            )));
        }
        Ok(out)
    }

    /// Parameter-vector index of every prunable entry.
    pub fn param_indices(&self, params: &ParamVector) -> Result<Vec<usize>> {
        Ok(self.ranges(params)?.into_iter().flatten().collect())
    }

    pub fn check_aligned(&self, other: &PruneMask) -> Result<()> {
        if self.region != other.region || self.bits.len() != other.bits.len() {
            return Err(Error::dim("masks are not aligned"));
        }
        Ok(())
    }
}

/// Zeroes every masked-out prunable entry; everything else is copied.
pub fn apply_mask(params: &ParamVector, mask: &PruneMask) -> Result<ParamVector> {
    let idx = mask.param_indices(params)?;
    let mut out = params.clone();
    let data = out.data_mut();
    for (&i, &keep) in idx.iter().zip(mask.bits()) {
        if !keep {
            data[i] = 0.0;
        }
    }
    Ok(out)
}
