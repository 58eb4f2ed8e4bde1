//! A small feed-forward softmax classifier with exact backpropagation.
//!
//! The network is dense layers with ReLU between them and a linear final
//! layer; [`MlpModel::forward`] adds the softmax. Losses in this crate are
//! written against class probabilities, so [`MlpModel::backward`] takes the
//! per-sample loss gradients ∂ℓ/∂u and composes them with the softmax
//! Jacobian `diag(u) − u·uᵀ` before the usual dense-layer chain rule; the
//! result is the exact gradient of the mean batch loss. The optimizer is
//! SGD with momentum, an L1 subgradient term inside the velocity update,
//! and an optional per-epoch cosine schedule.
//!
//! All kernels are sequential, so fixed seeds give bit-identical parameter
//! trajectories.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, StreamPurpose};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("batch width {got} does not match the model input dimension {expected}")]
    BatchWidthMismatch { got: usize, expected: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(String),
    #[error("epoch {epoch} out of range for a schedule over {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("non-finite gradient in layer {layer}; run diverged")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite parameter in layer {layer} after update; run diverged")]
    NonFiniteParameter { layer: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// One dense layer; `w` is input×output so a batch row maps as `x·w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Dense ReLU network ending in a linear (logit) layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

/// Gradients for one layer, shaped like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

/// Gradient of the mean batch loss for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

/// Everything [`MlpModel::forward`] computes: the input of each layer
/// (`inputs[i]` feeds layer `i`), the final logits, and their softmax.
/// Kept around because backpropagation replays it.
#[derive(Debug, Clone)]
pub struct Forward {
    pub inputs: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl MlpModel {
    /// Builds `dims[0] → dims[1] → … → dims.last()` with ReLU between
    /// layers. Weights start at Normal(0, 2/fan_in) — the scaling that
    /// keeps ReLU activations from shrinking or exploding with depth —
    /// and biases at zero. Layer `i` draws from stream `(seed, WeightInit, i)`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::InvalidArchitecture(format!(
                "need at least input and output dims, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidArchitecture(format!(
                "zero-width layer in {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = stream(seed, StreamPurpose::WeightInit, i as u64);
                let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    std * rng.sample::<f64, _>(StandardNormal)
                });
                DenseLayer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// `(d, h_1, …, K)`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().map(|l| l.w.nrows()).collect();
        dims.push(self.layers.last().expect("at least one layer").w.ncols());
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").w.ncols()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::InvalidArchitecture("no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].w.ncols() != pair[1].w.nrows() {
                return Err(NnError::InvalidArchitecture(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].w.ncols(),
                    i + 1,
                    pair[1].w.nrows()
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.b.len() != layer.w.ncols() {
                return Err(NnError::InvalidArchitecture(format!(
                    "layer {i} bias length {} vs width {}",
                    layer.b.len(),
                    layer.w.ncols()
                )));
            }
            if layer.w.iter().chain(layer.b.iter()).any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteParameter { layer: i });
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Forward, NnError> {
        if batch.ncols() != self.input_dim() {
            return Err(NnError::BatchWidthMismatch {
                got: batch.ncols(),
                expected: self.input_dim(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(h.clone());
            let mut z = inputs[i].dot(&layer.w);
            z += &layer.b;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|x| x.max(0.0));
            }
            h = z;
        }
        let probs = softmax_rows(&h);
        Ok(Forward {
            inputs,
            logits: h,
            probs,
        })
    }

    /// Gradient of the mean batch loss given per-sample probability
    /// gradients (`dl_dprobs` row `i` is ∂ℓ_i/∂u at `forward.probs` row
    /// `i`). The softmax Jacobian turns each row `g` into logit gradients
    /// `u ⊙ (g − (g·u))`, scaled by `1/batch` for the mean; dense layers
    /// then backpropagate as usual, with ReLU passing gradient only where
    /// its output was strictly positive.
    pub fn backward(
        &self,
        forward: &Forward,
        dl_dprobs: ArrayView2<'_, f64>,
    ) -> Result<Grads, NnError> {
        if dl_dprobs.dim() != forward.probs.dim() {
            return Err(NnError::ShapeMismatch(format!(
                "dl_dprobs is {:?} but the forward pass produced {:?}",
                dl_dprobs.dim(),
                forward.probs.dim()
            )));
        }
        if forward.inputs.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch(
                "forward cache does not match this model".into(),
            ));
        }
        let batch = forward.probs.nrows() as f64;
        let mut dz = Array2::zeros(forward.probs.raw_dim());
        for ((u_row, g_row), mut dz_row) in forward
            .probs
            .rows()
            .into_iter()
            .zip(dl_dprobs.rows())
            .zip(dz.rows_mut())
        {
            let dot: f64 = g_row.dot(&u_row);
            for ((slot, &u), &g) in dz_row.iter_mut().zip(u_row).zip(g_row) {
                *slot = u * (g - dot) / batch;
            }
        }

        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &forward.inputs[i];
            let dw = input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].w.t());
                // inputs[i] is layer i-1's post-ReLU output; zero it out
                // wherever the unit was inactive (flat at exactly 0 too).
                da.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
            grads.push(LayerGrads { dw, db });
        }
        grads.reverse();
        Ok(Grads { layers: grads })
    }

    /// Class probabilities for a batch.
    pub fn predict_probs(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward(batch)?.probs)
    }

    /// Most probable class per row; ties go to the lowest index.
    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<Vec<usize>, NnError> {
        let probs = self.predict_probs(batch)?;
        Ok(probs.rows().into_iter().map(|row| argmax(&row)).collect())
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &x) in row.iter().enumerate() {
        if x > best_value {
            best = i;
            best_value = x;
        }
    }
    best
}

/// Row-wise softmax with max subtraction, so magnitudes up to ~1e300 stay
/// finite.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    out
}

/// Anything that maps feature rows to class-probability rows. Lets risk
/// estimators accept models without caring about their internals.
pub trait Classifier {
    fn class_probabilities(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError>;
    fn n_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
}

impl Classifier for MlpModel {
    fn class_probabilities(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.predict_probs(batch)
    }

    fn n_classes(&self) -> usize {
        MlpModel::n_classes(self)
    }

    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// SGD configuration plus velocity buffers. One instance drives one
/// training run; velocities persist across steps and epochs.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr0: f64,
    pub momentum: f64,
    pub l1_decay: f64,
    pub schedule: LrSchedule,
    pub total_epochs: usize,
    velocity: Vec<LayerGrads>,
}

impl OptimizerState {
    pub fn new(
        lr0: f64,
        momentum: f64,
        l1_decay: f64,
        schedule: LrSchedule,
        total_epochs: usize,
        model: &MlpModel,
    ) -> Result<Self, NnError> {
        // lr0 = 0 is allowed: a frozen model is a useful baseline.
        if !lr0.is_finite() || lr0 < 0.0 {
            return Err(NnError::InvalidOptimizer(format!(
                "learning rate must be nonnegative, got {lr0}"
            )));
        }
        if !momentum.is_finite() || !(0.0..1.0).contains(&momentum) {
            return Err(NnError::InvalidOptimizer(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !l1_decay.is_finite() || l1_decay < 0.0 {
            return Err(NnError::InvalidOptimizer(format!(
                "l1_decay must be nonnegative, got {l1_decay}"
            )));
        }
        if total_epochs == 0 {
            return Err(NnError::InvalidOptimizer("total_epochs must be positive".into()));
        }
        let velocity = model
            .layers
            .iter()
            .map(|layer| LayerGrads {
                dw: Array2::zeros(layer.w.raw_dim()),
                db: Array1::zeros(layer.b.raw_dim()),
            })
            .collect();
        Ok(Self {
            lr0,
            momentum,
            l1_decay,
            schedule,
            total_epochs,
            velocity,
        })
    }

    /// Learning rate for an epoch: constant, or the half-cosine ramp
    /// `lr0·½(1 + cos(π·epoch/total))`, which starts at `lr0` and reaches 0
    /// at `epoch = total`. Accepts `epoch = total` so the endpoint is
    /// inspectable even though no step happens there.
    pub fn lr_at(&self, epoch: usize) -> Result<f64, NnError> {
        if epoch > self.total_epochs {
            return Err(NnError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(match self.schedule {
            LrSchedule::Constant => self.lr0,
            LrSchedule::Cosine => {
                let phase = std::f64::consts::PI * epoch as f64 / self.total_epochs as f64;
                self.lr0 * 0.5 * (1.0 + phase.cos())
            }
        })
    }
}

/// One SGD update: `v ← momentum·v + grad + l1_decay·sign(param)` then
/// `param ← param − lr_epoch·v`, with `sign(0) = 0` so the L1 term never
/// pushes a parameter off zero. Rejects non-finite gradients and
/// parameters so divergence surfaces as an error instead of NaN spread.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Grads,
    opt: &mut OptimizerState,
    epoch: usize,
) -> Result<(), NnError> {
    if epoch >= opt.total_epochs {
        return Err(NnError::EpochOutOfRange {
            epoch,
            total: opt.total_epochs,
        });
    }
    if grads.layers.len() != model.layers.len() || opt.velocity.len() != model.layers.len() {
        return Err(NnError::ShapeMismatch(
            "gradient/velocity layer count does not match the model".into(),
        ));
    }
    let lr = opt.lr_at(epoch)?;
    for (i, ((layer, grad), vel)) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity)
        .enumerate()
    {
        if grad.dw.dim() != layer.w.dim() || grad.db.dim() != layer.b.dim() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient shape does not match layer {i}"
            )));
        }
        if grad.dw.iter().chain(grad.db.iter()).any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { layer: i });
        }
        let (momentum, l1) = (opt.momentum, opt.l1_decay);
        let update = |param: &mut f64, v: &mut f64, g: f64| {
            *v = momentum * *v + g + l1 * subgradient_sign(*param);
            *param -= lr * *v;
        };
        for ((p, v), &g) in layer.w.iter_mut().zip(vel.dw.iter_mut()).zip(grad.dw.iter()) {
            update(p, v, g);
        }
        for ((p, v), &g) in layer.b.iter_mut().zip(vel.db.iter_mut()).zip(grad.db.iter()) {
            update(p, v, g);
        }
        if layer.w.iter().chain(layer.b.iter()).any(|p| !p.is_finite()) {
            return Err(NnError::NonFiniteParameter { layer: i });
        }
    }
    Ok(())
}

fn subgradient_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    /// Row-major `fan_in × fan_out`.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    layer_dims: Vec<usize>,
    layers: Vec<CheckpointLayer>,
}

pub const CHECKPOINT_MAGIC: &str = "VBLAB-MLP-1";

/// Writes the model as versioned JSON: a magic string, the layer sizes,
/// and row-major parameter arrays. JSON floats round-trip f64 exactly.
pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    model.validate()?;
    let checkpoint = Checkpoint {
        magic: CHECKPOINT_MAGIC.to_string(),
        layer_dims: model.layer_dims(),
        layers: model
            .layers
            .iter()
            .map(|layer| CheckpointLayer {
                w: layer.w.iter().copied().collect(),
                b: layer.b.to_vec(),
            })
            .collect(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel, NnError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let checkpoint: Checkpoint = serde_json::from_reader(file)?;
    if checkpoint.magic != CHECKPOINT_MAGIC {
        return Err(NnError::BadCheckpoint(format!(
            "magic {:?}, expected {CHECKPOINT_MAGIC:?}",
            checkpoint.magic
        )));
    }
    if checkpoint.layer_dims.len() < 2
        || checkpoint.layers.len() + 1 != checkpoint.layer_dims.len()
    {
        return Err(NnError::BadCheckpoint(format!(
            "{} layers with dims {:?}",
            checkpoint.layers.len(),
            checkpoint.layer_dims
        )));
    }
    let layers = checkpoint
        .layer_dims
        .windows(2)
        .zip(checkpoint.layers)
        .enumerate()
        .map(|(i, (pair, layer))| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if layer.w.len() != fan_in * fan_out || layer.b.len() != fan_out {
                return Err(NnError::BadCheckpoint(format!(
                    "layer {i} parameter counts do not match dims {fan_in}x{fan_out}"
                )));
            }
            let w = Array2::from_shape_vec((fan_in, fan_out), layer.w)
                .expect("length checked above");
            Ok(DenseLayer {
                w,
                b: Array1::from_vec(layer.b),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = MlpModel { layers };
    model.validate()?;
    Ok(model)
}

// ====== Tests ======

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSpec;
    use ndarray::array;

    fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, StreamPurpose::Sampling, 3);
        Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let mut model = MlpModel::new(&[3, 4], 0).unwrap();
        model.layers[0].w.fill(0.0);
        model.layers[0].b.fill(1.7);
        let fwd = model.forward(random_batch(5, 3, 0).view()).unwrap();
        for row in fwd.probs.rows() {
            for &p in row.iter() {
                assert!((p - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut model = MlpModel::new(&[1, 2], 0).unwrap();
        model.layers[0].w = array![[1000.0, 0.0]];
        model.layers[0].b.fill(0.0);
        let fwd = model.forward(array![[1.0]].view()).unwrap();
        assert!((fwd.probs[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(fwd.probs[[0, 1]].abs() < 1e-12);

        let extreme = softmax_rows(&array![[1e4, -1e4, 0.0]]);
        assert!(extreme.iter().all(|p| p.is_finite()));
        assert!((extreme.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_layer_softmax_matches_hand_values() {
        let mut model = MlpModel::new(&[1, 3], 0).unwrap();
        // Logits (0, ln2, ln3) exponentiate to (1, 2, 3).
        model.layers[0].w = array![[0.0, 2.0f64.ln(), 3.0f64.ln()]];
        model.layers[0].b.fill(0.0);
        let fwd = model.forward(array![[1.0]].view()).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (p, e) in fwd.probs.row(0).iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = MlpModel::new(&[3, 2], 0).unwrap();
        assert!(matches!(
            model.forward(random_batch(4, 5, 1).view()),
            Err(NnError::BatchWidthMismatch {
                got: 5,
                expected: 3
            })
        ));
    }

    #[test]
    fn zero_probability_gradients_give_zero_parameter_gradients() {
        let model = MlpModel::new(&[4, 6, 3], 1).unwrap();
        let batch = random_batch(5, 4, 2);
        let fwd = model.forward(batch.view()).unwrap();
        let zeros = Array2::zeros(fwd.probs.raw_dim());
        let grads = model.backward(&fwd, zeros.view()).unwrap();
        for layer in &grads.layers {
            assert!(layer.dw.iter().all(|&g| g == 0.0));
            assert!(layer.db.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn cross_entropy_through_softmax_is_probs_minus_one_hot() {
        // With the identity matrix as batch, dw = xᵀ·dz = dz, exposing the
        // logit gradient directly.
        let d = 4;
        let model = MlpModel::new(&[d, 3], 5).unwrap();
        let batch = Array2::eye(d);
        let labels = [0usize, 2, 1, 2];
        let fwd = model.forward(batch.view()).unwrap();
        let mut dl_dprobs = Array2::zeros(fwd.probs.raw_dim());
        for (i, &y) in labels.iter().enumerate() {
            let row = fwd.probs.row(i).to_vec();
            let grad = LossSpec::Ce.grad(&row, y).unwrap();
            dl_dprobs.row_mut(i).assign(&Array1::from_vec(grad));
        }
        let grads = model.backward(&fwd, dl_dprobs.view()).unwrap();
        for (i, &y) in labels.iter().enumerate() {
            for (j, &g) in grads.layers[0].dw.row(i).iter().enumerate() {
                let expected = (fwd.probs[[i, j]] - f64::from(u8::from(j == y))) / d as f64;
                assert!(
                    (g - expected).abs() < 1e-9,
                    "sample {i} class {j}: {g} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn every_family_passes_end_to_end_finite_differences() {
        let specs = [
            LossSpec::Ce,
            LossSpec::Mae,
            LossSpec::El,
            LossSpec::Sl,
            LossSpec::vce(2.0).unwrap(),
            LossSpec::vel(3.0).unwrap(),
            LossSpec::vsl(0.5).unwrap(),
            LossSpec::Nce,
            LossSpec::combined(1.0, 0.5, LossSpec::Nce, LossSpec::vce(1.5).unwrap()).unwrap(),
        ];
        let batch = random_batch(8, 5, 9);
        let labels = [0usize, 3, 1, 2, 3, 0, 1, 2];
        for spec in &specs {
            let model = MlpModel::new(&[5, 7, 4], 11).unwrap();
            let fwd = model.forward(batch.view()).unwrap();
            let mut dl_dprobs = Array2::zeros(fwd.probs.raw_dim());
            for (i, &y) in labels.iter().enumerate() {
                let grad = spec.grad(&fwd.probs.row(i).to_vec(), y).unwrap();
                dl_dprobs.row_mut(i).assign(&Array1::from_vec(grad));
            }
            let grads = model.backward(&fwd, dl_dprobs.view()).unwrap();

            let mean_loss = |m: &MlpModel| {
                let fwd = m.forward(batch.view()).unwrap();
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| spec.value(&fwd.probs.row(i).to_vec(), y).unwrap())
                    .sum::<f64>()
                    / labels.len() as f64
            };

            let h = 1e-5;
            for layer in 0..model.layers.len() {
                let n_w = model.layers[layer].w.len();
                let n_b = model.layers[layer].b.len();
                for param in 0..n_w + n_b {
                    let read = |m: &MlpModel| {
                        if param < n_w {
                            m.layers[layer].w.as_slice().unwrap()[param]
                        } else {
                            m.layers[layer].b[param - n_w]
                        }
                    };
                    let write = |m: &mut MlpModel, x: f64| {
                        if param < n_w {
                            m.layers[layer].w.as_slice_mut().unwrap()[param] = x;
                        } else {
                            m.layers[layer].b[param - n_w] = x;
                        }
                    };
                    let analytic = if param < n_w {
                        grads.layers[layer].dw.as_slice().unwrap()[param]
                    } else {
                        grads.layers[layer].db[param - n_w]
                    };
                    let mut probe = model.clone();
                    let base = read(&model);
                    write(&mut probe, base + h);
                    let up = mean_loss(&probe);
                    write(&mut probe, base - h);
                    let down = mean_loss(&probe);
                    let numeric = (up - down) / (2.0 * h);
                    let scale = analytic.abs().max(numeric.abs());
                    if scale < 1e-8 {
                        continue;
                    }
                    assert!(
                        (analytic - numeric).abs() / scale < 1e-4,
                        "{spec}: layer {layer} param {param}: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn plain_sgd_is_exactly_param_minus_lr_grad() {
        let mut model = MlpModel::new(&[2, 2], 3).unwrap();
        let before = model.clone();
        let grads = Grads {
            layers: vec![LayerGrads {
                dw: array![[1.0, -2.0], [0.5, 0.0]],
                db: array![0.25, -0.75],
            }],
        };
        let mut opt =
            OptimizerState::new(0.1, 0.0, 0.0, LrSchedule::Constant, 10, &model).unwrap();
        sgd_step(&mut model, &grads, &mut opt, 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(
                    model.layers[0].w[[i, j]],
                    before.layers[0].w[[i, j]] - 0.1 * grads.layers[0].dw[[i, j]]
                );
            }
            assert_eq!(
                model.layers[0].b[i],
                before.layers[0].b[i] - 0.1 * grads.layers[0].db[i]
            );
        }
    }

    #[test]
    fn momentum_accumulates_across_steps() {
        // Constant unit gradient, momentum 0.9, lr 0.1, param from 0:
        // v: 1 then 1.9; param: -0.1 then -0.29.
        let mut model = MlpModel::new(&[1, 1], 0).unwrap();
        model.layers[0].w[[0, 0]] = 0.0;
        let grads = Grads {
            layers: vec![LayerGrads {
                dw: array![[1.0]],
                db: array![0.0],
            }],
        };
        let mut opt =
            OptimizerState::new(0.1, 0.9, 0.0, LrSchedule::Constant, 10, &model).unwrap();
        sgd_step(&mut model, &grads, &mut opt, 0).unwrap();
        assert!((model.layers[0].w[[0, 0]] - (-0.1)).abs() < 1e-15);
        sgd_step(&mut model, &grads, &mut opt, 0).unwrap();
        assert!((model.layers[0].w[[0, 0]] - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn l1_term_pushes_toward_zero_and_ignores_exact_zero() {
        let mut model = MlpModel::new(&[1, 2], 0).unwrap();
        model.layers[0].w = array![[2.0, -2.0]];
        model.layers[0].b = array![0.0, 0.0];
        let grads = Grads {
            layers: vec![LayerGrads {
                dw: array![[0.0, 0.0]],
                db: array![0.0, 0.0],
            }],
        };
        let mut opt =
            OptimizerState::new(0.5, 0.0, 0.1, LrSchedule::Constant, 10, &model).unwrap();
        sgd_step(&mut model, &grads, &mut opt, 0).unwrap();
        assert!((model.layers[0].w[[0, 0]] - 1.95).abs() < 1e-15);
        assert!((model.layers[0].w[[0, 1]] + 1.95).abs() < 1e-15);
        // Zero parameters stay exactly zero under pure L1.
        assert_eq!(model.layers[0].b[0], 0.0);
    }

    #[test]
    fn cosine_schedule_hits_its_endpoints() {
        let model = MlpModel::new(&[2, 2], 0).unwrap();
        let opt =
            OptimizerState::new(0.2, 0.9, 0.0, LrSchedule::Cosine, 100, &model).unwrap();
        assert_eq!(opt.lr_at(0).unwrap(), 0.2);
        assert!((opt.lr_at(50).unwrap() - 0.1).abs() < 1e-15);
        assert!(opt.lr_at(100).unwrap().abs() < 1e-16);
        assert!(opt.lr_at(101).is_err());

        let constant =
            OptimizerState::new(0.2, 0.9, 0.0, LrSchedule::Constant, 100, &model).unwrap();
        assert_eq!(constant.lr_at(99).unwrap(), 0.2);
    }

    #[test]
    fn quadratic_bowl_converges_monotonically_after_warmup() {
        // Gradient of ½‖p‖² is p itself. Momentum 0.9 underdamps this
        // system for rates above ~0.0026 (parameters swing through zero and
        // back), so the monotone-decay check runs in the damped regime.
        let mut model = MlpModel::new(&[2, 3], 7).unwrap();
        let mut opt =
            OptimizerState::new(0.003, 0.9, 0.0, LrSchedule::Constant, 1000, &model).unwrap();
        let norm = |m: &MlpModel| {
            m.layers[0]
                .w
                .iter()
                .chain(m.layers[0].b.iter())
                .map(|p| p * p)
                .sum::<f64>()
                .sqrt()
        };
        let initial = norm(&model);
        let mut previous = f64::INFINITY;
        for step in 0..100 {
            let grads = Grads {
                layers: vec![LayerGrads {
                    dw: model.layers[0].w.clone(),
                    db: model.layers[0].b.clone(),
                }],
            };
            sgd_step(&mut model, &grads, &mut opt, 0).unwrap();
            let now = norm(&model);
            if step >= 5 {
                assert!(now < previous, "norm rose at step {step}: {now} > {previous}");
            }
            previous = now;
        }
        assert!(norm(&model) < 0.05 * initial);
    }

    #[test]
    fn divergent_gradients_and_parameters_are_rejected() {
        let mut model = MlpModel::new(&[1, 1], 0).unwrap();
        let mut opt =
            OptimizerState::new(0.1, 0.0, 0.0, LrSchedule::Constant, 10, &model).unwrap();
        let bad = Grads {
            layers: vec![LayerGrads {
                dw: array![[f64::NAN]],
                db: array![0.0],
            }],
        };
        assert!(matches!(
            sgd_step(&mut model, &bad, &mut opt, 0),
            Err(NnError::NonFiniteGradient { layer: 0 })
        ));
        let huge = Grads {
            layers: vec![LayerGrads {
                dw: array![[f64::MAX]],
                db: array![0.0],
            }],
        };
        let mut opt =
            OptimizerState::new(1e300, 0.0, 0.0, LrSchedule::Constant, 10, &model).unwrap();
        assert!(matches!(
            sgd_step(&mut model, &huge, &mut opt, 0),
            Err(NnError::NonFiniteParameter { layer: 0 })
        ));
        assert!(matches!(
            sgd_step(&mut model, &bad, &mut opt, 12),
            Err(NnError::EpochOutOfRange { .. })
        ));
    }

    #[test]
    fn optimizer_validates_settings() {
        let model = MlpModel::new(&[2, 2], 0).unwrap();
        assert!(OptimizerState::new(0.0, 0.9, 0.0, LrSchedule::Constant, 10, &model).is_ok());
        assert!(OptimizerState::new(-0.1, 0.9, 0.0, LrSchedule::Constant, 10, &model).is_err());
        assert!(OptimizerState::new(0.1, 1.0, 0.0, LrSchedule::Constant, 10, &model).is_err());
        assert!(OptimizerState::new(0.1, 0.9, -0.1, LrSchedule::Constant, 10, &model).is_err());
        assert!(OptimizerState::new(0.1, 0.9, 0.0, LrSchedule::Constant, 0, &model).is_err());
    }

    #[test]
    fn initialization_is_seeded_and_scaled() {
        let a = MlpModel::new(&[20, 128, 10], 42).unwrap();
        let b = MlpModel::new(&[20, 128, 10], 42).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::new(&[20, 128, 10], 43).unwrap();
        assert_ne!(a.layers[0].w, c.layers[0].w);

        assert!(a.layers.iter().all(|l| l.b.iter().all(|&x| x == 0.0)));
        // Sample std of the first layer's 2560 weights should sit near
        // sqrt(2/20) ≈ 0.316.
        let w = &a.layers[0].w;
        let mean = w.sum() / w.len() as f64;
        let std =
            (w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - (2.0f64 / 20.0).sqrt()).abs() < 0.02, "std {std}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = MlpModel::new(&[6, 9, 4], 17).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"magic\":\"VBLAB-MLP-1\""));
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(
            &path,
            r#"{"magic":"VBLAB-MLP-9","layer_dims":[2,2],"layers":[{"w":[1,2,3,4],"b":[0,0]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NnError::BadCheckpoint(_))
        ));
        std::fs::write(
            &path,
            r#"{"magic":"VBLAB-MLP-1","layer_dims":[2,2],"layers":[{"w":[1,2,3],"b":[0,0]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NnError::BadCheckpoint(_))
        ));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NnError::Json(_))));
    }

    #[test]
    fn prediction_breaks_ties_toward_the_lowest_index() {
        let row = array![0.25, 0.25, 0.25, 0.25];
        assert_eq!(argmax(&row.view()), 0);
        let row = array![0.1, 0.45, 0.45];
        assert_eq!(argmax(&row.view()), 1);
    }
}
