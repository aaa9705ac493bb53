//! Frozen-backbone classifier with low-rank adapters.
//!
//! Layer `ℓ` maps `k_ℓ` inputs to `d_ℓ` outputs through an effective weight
//! `W = W₀ + ΔW_global + s·B·A` where `W₀` is frozen, `ΔW_global` is the merged
//! global adapter delta, and `s·B·A` is the agent's current low-rank adapter
//! (`s = α/r` or 1). Hidden layers use ReLU; the last layer emits logits.
//!
//! Update vectors concatenate `vec(ΔW¹) … vec(ΔW^L)` in layer order, each
//! `ΔW` flattened row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};

use super::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    /// Output dimension `d`.
    pub out: usize,
    /// Input dimension `k`.
    pub inp: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.out * self.inp
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shapes of the adapted layers, in update-vector order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub layers: Vec<LayerShape>,
}

impl ParamLayout {
    pub fn new(layers: Vec<LayerShape>) -> Self {
        Self { layers }
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum()
    }

    /// Concatenates the row-major vectorization of each layer matrix.
    pub fn flatten(&self, mats: &[Matrix]) -> Result<Vec<f64>> {
        if mats.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "flatten (layer count)",
                expected: self.layers.len(),
                actual: mats.len(),
            });
        }
        let mut out = Vec::with_capacity(self.total_len());
        for (m, shape) in mats.iter().zip(&self.layers) {
            if m.shape() != (shape.out, shape.inp) {
                return Err(Error::DimensionMismatch {
                    context: "flatten (layer shape)",
                    expected: shape.len(),
                    actual: m.rows() * m.cols(),
                });
            }
            out.extend_from_slice(m.as_slice());
        }
        Ok(out)
    }

    pub fn unflatten(&self, values: &[f64]) -> Result<Vec<Matrix>> {
        if values.len() != self.total_len() {
            return Err(Error::DimensionMismatch {
                context: "unflatten",
                expected: self.total_len(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        self.layers
            .iter()
            .map(|s| {
                let m = Matrix::from_vec(s.out, s.inp, values[offset..offset + s.len()].to_vec());
                offset += s.len();
                m
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraScaling {
    #[default]
    AlphaOverR,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    /// Bernoulli drop rate applied to rows of the adapter product during training.
    pub dropout: f64,
    pub scaling: LoraScaling,
    /// Standard deviation of the `A` initialization; `None` means `1/√k`.
    pub a_init_std: Option<f64>,
}

impl LoraSpec {
    pub fn scale(&self) -> f64 {
        match self.scaling {
            LoraScaling::AlphaOverR => self.alpha / self.rank as f64,
            LoraScaling::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    frozen: Vec<Matrix>,
    layout: ParamLayout,
    pub lora: LoraSpec,
    pub classes: usize,
}

impl SurrogateModel {
    /// `dims = [d_in, hidden…, classes]`. Frozen weights are drawn from
    /// `N(0, 1/fan_in)`.
    pub fn new(dims: &[usize], lora: LoraSpec, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "model needs an input and an output dimension",
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let classes = *dims.last().expect("len >= 2");
        if classes < 2 {
            return Err(Error::invalid("at least two output classes are required"));
        }
        if !(0.0..1.0).contains(&lora.dropout) {
            return Err(Error::invalid(format!(
                "LoRA dropout {} outside [0, 1)",
                lora.dropout
            )));
        }
        if !(lora.alpha > 0.0 && lora.alpha.is_finite()) {
            return Err(Error::invalid("LoRA alpha must be positive"));
        }
        let layers: Vec<LayerShape> = dims
            .windows(2)
            .map(|w| LayerShape {
                out: w[1],
                inp: w[0],
            })
            .collect();
        for s in &layers {
            if lora.rank == 0 || 2 * lora.rank > s.out.min(s.inp) {
                return Err(Error::invalid(format!(
                    "LoRA rank {} must satisfy 1 <= r <= min(d, k)/2 for a {}x{} layer",
                    lora.rank, s.out, s.inp
                )));
            }
        }
        let frozen = layers
            .iter()
            .map(|s| {
                let std = (1.0 / s.inp as f64).sqrt();
                Matrix::from_fn(s.out, s.inp, |_, _| std * rng.normal())
            })
            .collect();
        Ok(Self {
            frozen,
            layout: ParamLayout::new(layers),
            lora,
            classes,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn frozen(&self) -> &[Matrix] {
        &self.frozen
    }

    pub fn input_dim(&self) -> usize {
        self.layout.layers[0].inp
    }

    /// `W₀ + unflatten(params)` per layer.
    pub fn effective_weights(&self, params: &[f64]) -> Result<Vec<Matrix>> {
        let deltas = self.layout.unflatten(params)?;
        self.frozen
            .iter()
            .zip(&deltas)
            .map(|(w0, d)| w0.add(d))
            .collect()
    }

    /// Mean cross-entropy of the model at `params` and its gradient with
    /// respect to the flattened adapter delta.
    pub fn loss_grad_params(&self, params: &[f64], ds: &Dataset) -> Result<(f64, Vec<f64>)> {
        let weights = self.effective_weights(params)?;
        let (loss, grads) = loss_and_grad(&weights, ds)?;
        Ok((loss, self.layout.flatten(&grads)?))
    }

    pub fn accuracy_at(&self, params: &[f64], ds: &Dataset) -> Result<f64> {
        let weights = self.effective_weights(params)?;
        accuracy(&weights, ds)
    }
}

struct ForwardCache {
    /// Inputs to each layer (`H_0 = X`).
    inputs: Vec<Matrix>,
    /// Pre-activations of each layer.
    pre: Vec<Matrix>,
}

fn forward(weights: &[Matrix], x: &Matrix) -> Result<ForwardCache> {
    let mut inputs = Vec::with_capacity(weights.len());
    let mut pre = Vec::with_capacity(weights.len());
    let mut h = x.clone();
    for (l, w) in weights.iter().enumerate() {
        let z = h.matmul_t(w)?;
        let next = if l + 1 < weights.len() {
            z.map(|v| v.max(0.0))
        } else {
            z.clone()
        };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    Ok(ForwardCache { inputs, pre })
}

/// Row-wise softmax probabilities and the mean negative log-likelihood.
fn softmax_xent(logits: &Matrix, labels: &[usize]) -> (Matrix, f64) {
    let (n, c) = logits.shape();
    let mut probs = Matrix::zeros(n, c);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs[(i, j)] = e;
            sum += e;
        }
        for j in 0..c {
            probs[(i, j)] /= sum;
        }
        loss += -(row[labels[i]] - max - sum.ln());
    }
    (probs, loss / n as f64)
}

/// Mean softmax cross-entropy and its gradient with respect to every
/// effective layer weight.
pub fn loss_and_grad(weights: &[Matrix], ds: &Dataset) -> Result<(f64, Vec<Matrix>)> {
    if ds.is_empty() {
        return Err(Error::Empty {
            context: "loss_and_grad",
        });
    }
    let cache = forward(weights, &ds.features)?;
    let logits = cache.pre.last().expect("at least one layer");
    let (probs, loss) = softmax_xent(logits, &ds.labels);
    let n = ds.len() as f64;
    let mut delta = probs;
    for (i, &y) in ds.labels.iter().enumerate() {
        delta[(i, y)] -= 1.0;
    }
    delta = delta.scale(1.0 / n);

    let mut grads = vec![Matrix::zeros(0, 0); weights.len()];
    for l in (0..weights.len()).rev() {
        grads[l] = delta.t_matmul(&cache.inputs[l])?;
        if l > 0 {
            let dh = delta.matmul(&weights[l])?;
            let mask = &cache.pre[l - 1];
            delta = Matrix::from_fn(dh.rows(), dh.cols(), |i, j| {
                if mask[(i, j)] > 0.0 {
                    dh[(i, j)]
                } else {
                    0.0
                }
            });
        }
    }
    Ok((loss, grads))
}

pub fn predict(weights: &[Matrix], x: &Matrix) -> Result<Vec<usize>> {
    let cache = forward(weights, x)?;
    let logits = cache.pre.last().expect("at least one layer");
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(weights: &[Matrix], ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty {
            context: "accuracy",
        });
    }
    let pred = predict(weights, &ds.features)?;
    let correct = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Trainable low-rank factors for every adapted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// `A^(ℓ)`: `r × k`.
    pub a: Vec<Matrix>,
    /// `B^(ℓ)`: `d × r`.
    pub b: Vec<Matrix>,
}

impl LoraFactors {
    /// `A ~ N(0, σ²)`, `B = 0`, so the adapter starts as the zero map.
    pub fn init(model: &SurrogateModel, rng: &mut SeededRng) -> Self {
        let r = model.lora.rank;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for s in &model.layout.layers {
            let std = model.lora.a_init_std.unwrap_or((1.0 / s.inp as f64).sqrt());
            a.push(Matrix::from_fn(r, s.inp, |_, _| std * rng.normal()));
            b.push(Matrix::zeros(s.out, r));
        }
        Self { a, b }
    }

    /// Per-layer `s · diag(mask) · B · A`.
    pub fn deltas(&self, scale: f64, masks: Option<&[Vec<f64>]>) -> Result<Vec<Matrix>> {
        self.a
            .iter()
            .zip(&self.b)
            .enumerate()
            .map(|(l, (a, b))| {
                let mut ba = b.matmul(a)?.scale(scale);
                if let Some(m) = masks {
                    scale_rows(&mut ba, &m[l]);
                }
                Ok(ba)
            })
            .collect()
    }
}

fn scale_rows(m: &mut Matrix, factors: &[f64]) {
    for (i, &f) in factors.iter().enumerate() {
        m.row_mut(i).iter_mut().for_each(|v| *v *= f);
    }
}

/// Loss and factor gradients for `W = base + s·diag(mask)·B·A`.
pub fn lora_loss_grad(
    model: &SurrogateModel,
    base: &[Matrix],
    factors: &LoraFactors,
    masks: Option<&[Vec<f64>]>,
    ds: &Dataset,
) -> Result<(f64, LoraFactors)> {
    let scale = model.lora.scale();
    let deltas = factors.deltas(scale, masks)?;
    let weights: Vec<Matrix> = base
        .iter()
        .zip(&deltas)
        .map(|(w, d)| w.add(d))
        .collect::<Result<_>>()?;
    let (loss, gw) = loss_and_grad(&weights, ds)?;
    let mut ga = Vec::with_capacity(gw.len());
    let mut gb = Vec::with_capacity(gw.len());
    for (l, g) in gw.iter().enumerate() {
        let mut g = g.scale(scale);
        if let Some(m) = masks {
            scale_rows(&mut g, &m[l]);
        }
        // dL/dB = s·diag(m)·G·Aᵀ, dL/dA = s·(diag(m)·B)ᵀ·G
        gb.push(g.matmul_t(&factors.a[l])?);
        ga.push(factors.b[l].t_matmul(&g)?);
    }
    Ok((loss, LoraFactors { a: ga, b: gb }))
}
