//! A from-scratch dense feed-forward binary classifier.
//!
//! Hidden layers use ReLU, the single output unit uses a sigmoid, and the
//! loss is binary cross-entropy computed in the pre-sigmoid form so it stays
//! finite for any finite parameters. Feature standardization is fitted on the
//! training split and stored with the model, so a saved model is a complete,
//! self-contained predictor.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SCHEMA_VERSION: u32 = 1;

/// Per-feature affine normalization captured at train time. Zero-variance
/// features keep std = 1 so they pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization { means: vec![0.0; dim], stds: vec![1.0; dim] }
    }

    /// Fits means and population standard deviations from feature rows.
    pub fn fit(features: ArrayView2<f64>) -> Self {
        let count = features.nrows().max(1) as f64;
        let dim = features.ncols();
        let mut means = vec![0.0; dim];
        for row in features.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m /= count;
        }
        let mut vars = vec![0.0; dim];
        for row in features.rows() {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        let stds = vars
            .into_iter()
            .map(|v| {
                let sd = (v / count).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { means, stds }
    }

    fn apply_rows(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Dense feed-forward network with a single sigmoid output.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    /// Per layer, shape (out, in).
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    standardization: Standardization,
}

/// Parameter gradients matching a model's shapes.
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Optimizer choice for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Plain minibatch gradient descent.
    Sgd,
    /// Adaptive-moments updates with the usual published defaults.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Training hyperparameters. The paper-facing architecture choices live in
/// the model; everything here is artifact plumbing, logged alongside outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            train_fraction: 0.9,
        }
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Labeled feature rows; labels are 0.0 or 1.0.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.iter().any(|l| *l != 0.0 && *l != 1.0) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|l| *l == 0.0) && self.labels.iter().any(|l| *l == 1.0)
    }

    /// Seeded shuffle-split into (train, holdout).
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0 < train_fraction && train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must be in (0, 1)"));
        }
        let count = self.len();
        if count < 2 {
            return Err(Error::invalid("need at least 2 rows to split"));
        }
        let mut order: Vec<usize> = (0..count).collect();
        let mut r = rng::stream(seed);
        for i in (1..count).rev() {
            let j = r.gen_range(0..=i);
            order.swap(i, j);
        }
        let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count - 1);
        let take = |idx: &[usize]| {
            let feats = Array2::from_shape_fn((idx.len(), self.features.ncols()), |(i, j)| {
                self.features[(idx[i], j)]
            });
            let labels = idx.iter().map(|&i| self.labels[i]).collect();
            Dataset { features: feats, labels }
        };
        Ok((take(&order[..n_train]), take(&order[n_train..])))
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Stable binary cross-entropy from the logit.
fn bce_from_logit(z: f64, label: f64) -> f64 {
    z.max(0.0) - label * z + (-z.abs()).exp().ln_1p()
}

/// Initializes a model with fan-in-scaled uniform weights
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and zero biases, deterministically per
/// seed.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("need at least input and output layers"));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::invalid("output layer must have size 1"));
    }
    let mut r = rng::stream(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for win in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| r.gen_range(-bound..bound));
        weights.push(w);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        standardization: Standardization::identity(layer_sizes[0]),
    })
}

impl MlpModel {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn set_standardization(&mut self, st: Standardization) -> Result<()> {
        if st.means.len() != self.input_dim() || st.stds.len() != self.input_dim() {
            return Err(Error::ShapeMismatch("standardization dimension".into()));
        }
        if st.stds.iter().any(|s| *s <= 0.0) {
            return Err(Error::invalid("standardization stds must be positive"));
        }
        self.standardization = st;
        Ok(())
    }

    /// Probability that `x` belongs to class 1.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(sigmoid(self.forward_logit(x)?))
    }

    fn forward_logit(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} vs model input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a: Vec<f64> = x
            .iter()
            .zip(&self.standardization.means)
            .zip(&self.standardization.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = vec![0.0; w.nrows()];
            for (o, (wrow, bias)) in w.rows().into_iter().zip(b).enumerate() {
                let z: f64 = wrow.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>() + bias;
                next[o] = if l == last { z } else { relu(z) };
            }
            a = next;
        }
        Ok(a[0])
    }

    /// Standardized batch logits, with the per-layer pre-activations and
    /// activations needed for backprop.
    fn forward_batch(&self, x_std: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut activations = vec![x_std.clone()];
        let mut pre = Vec::new();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations.last().unwrap().dot(&w.t());
            z += b;
            pre.push(z.clone());
            let a = if l == last { z } else { z.mapv(relu) };
            activations.push(a);
        }
        (pre, activations)
    }

    /// Exact gradient of the mean binary cross-entropy over the batch.
    /// The ReLU subgradient at 0 is taken as 0.
    pub fn grad(&self, features: ArrayView2<f64>, labels: &[f64]) -> Result<Gradients> {
        if features.nrows() != labels.len() || features.nrows() == 0 {
            return Err(Error::invalid("batch must be nonempty with matching labels"));
        }
        let x_std = self.standardization.apply_rows(features);
        let (pre, activations) = self.forward_batch(&x_std);
        Ok(self.backprop(&pre, &activations, labels))
    }

    fn backprop(
        &self,
        pre: &[Array2<f64>],
        activations: &[Array2<f64>],
        labels: &[f64],
    ) -> Gradients {
        let batch = labels.len() as f64;
        let layers = self.weights.len();
        let mut gw: Vec<Array2<f64>> = Vec::with_capacity(layers);
        let mut gb: Vec<Array1<f64>> = Vec::with_capacity(layers);

        // Output delta: (sigmoid(z) - y) / batch.
        let z_out = &pre[layers - 1];
        let mut delta = Array2::from_shape_fn(z_out.dim(), |(i, j)| {
            (sigmoid(z_out[(i, j)]) - labels[i]) / batch
        });

        for l in (0..layers).rev() {
            let dw = delta.t().dot(&activations[l]);
            let db = delta.sum_axis(Axis(0));
            gw.push(dw);
            gb.push(db);
            if l > 0 {
                let mut prev = delta.dot(&self.weights[l]);
                prev.zip_mut_with(&pre[l - 1], |d, z| {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        Gradients { weights: gw, biases: gb }
    }

    /// Mean binary cross-entropy of the model on (features, labels).
    pub fn loss(&self, features: ArrayView2<f64>, labels: &[f64]) -> f64 {
        let x_std = self.standardization.apply_rows(features);
        let (pre, _) = self.forward_batch(&x_std);
        let z_out = pre.last().unwrap();
        z_out
            .column(0)
            .iter()
            .zip(labels)
            .map(|(z, y)| bce_from_logit(*z, *y))
            .sum::<f64>()
            / labels.len() as f64
    }
}

/// Fraction of rows whose thresholded prediction (p >= 0.5 means class 1)
/// matches the label.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    for (row, label) in data.features.rows().into_iter().zip(&data.labels) {
        let p = model.forward(row)?;
        let predicted = if p >= 0.5 { 1.0 } else { 0.0 };
        if predicted == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

impl AdamState {
    fn new(model: &MlpModel) -> Self {
        AdamState {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }
}

/// Trains on `train` (standardization refitted from it) and returns the
/// trained model with its per-epoch history. A non-finite loss triggers one
/// restart at half the learning rate; a second failure is an error.
pub fn train(
    model: &MlpModel,
    train_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochRecord>)> {
    if !train_set.has_both_classes() {
        return Err(Error::SingleClass);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    match train_once(model, train_set, cfg, cfg.learning_rate) {
        Ok(out) => Ok(out),
        Err(Error::TrainingDiverged(_)) => {
            train_once(model, train_set, cfg, cfg.learning_rate * 0.5)
        }
        Err(e) => Err(e),
    }
}

fn train_once(
    init: &MlpModel,
    train_set: &Dataset,
    cfg: &TrainConfig,
    learning_rate: f64,
) -> Result<(MlpModel, Vec<EpochRecord>)> {
    let mut model = init.clone();
    model.set_standardization(Standardization::fit(train_set.features.view()))?;
    let x_std = model.standardization.apply_rows(train_set.features.view());
    let count = train_set.len();

    let mut adam = AdamState::new(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut shuffler = rng::stream(rng::derive(cfg.seed, &[0x5u64]));

    let mut order: Vec<usize> = (0..count).collect();
    for epoch in 0..cfg.epochs {
        for i in (1..count).rev() {
            let j = shuffler.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = Array2::from_shape_fn((chunk.len(), x_std.ncols()), |(i, j)| {
                x_std[(chunk[i], j)]
            });
            let yb: Vec<f64> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (pre, activations) = model.forward_batch(&xb);
            let z_out = pre.last().unwrap();
            let batch_loss = z_out
                .column(0)
                .iter()
                .zip(&yb)
                .map(|(z, y)| bce_from_logit(*z, *y))
                .sum::<f64>()
                / yb.len() as f64;
            epoch_loss += batch_loss;
            batches += 1;
            let grads = model.backprop(&pre, &activations, &yb);
            apply_update(&mut model, &grads, &mut adam, cfg.optimizer, learning_rate);
        }
        let loss = epoch_loss / batches as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at epoch {epoch} (lr = {learning_rate})"
            )));
        }
        let train_accuracy = evaluate(&model, train_set)?;
        history.push(EpochRecord { epoch, loss, train_accuracy });
    }
    Ok((model, history))
}

fn apply_update(
    model: &mut MlpModel,
    grads: &Gradients,
    adam: &mut AdamState,
    optimizer: Optimizer,
    lr: f64,
) {
    match optimizer {
        Optimizer::Sgd => {
            for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                w.zip_mut_with(g, |wi, gi| *wi -= lr * gi);
            }
            for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                b.zip_mut_with(g, |bi, gi| *bi -= lr * gi);
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t as i32);
            let bc2 = 1.0 - beta2.powi(adam.t as i32);
            for l in 0..model.weights.len() {
                let (m, v) = (&mut adam.m_w[l], &mut adam.v_w[l]);
                let g = &grads.weights[l];
                m.zip_mut_with(g, |mi, gi| *mi = beta1 * *mi + (1.0 - beta1) * gi);
                v.zip_mut_with(g, |vi, gi| *vi = beta2 * *vi + (1.0 - beta2) * gi * gi);
                let w = &mut model.weights[l];
                ndarray::Zip::from(w).and(&*m).and(&*v).for_each(|wi, mi, vi| {
                    *wi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                });
                let (mb, vb) = (&mut adam.m_b[l], &mut adam.v_b[l]);
                let gb = &grads.biases[l];
                mb.zip_mut_with(gb, |mi, gi| *mi = beta1 * *mi + (1.0 - beta1) * gi);
                vb.zip_mut_with(gb, |vi, gi| *vi = beta2 * *vi + (1.0 - beta2) * gi * gi);
                let b = &mut model.biases[l];
                ndarray::Zip::from(b).and(&*mb).and(&*vb).for_each(|bi, mi, vi| {
                    *bi -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                });
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    layer_sizes: Vec<usize>,
    hidden_activation: String,
    output_activation: String,
    /// Row-major weight matrices, one per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    feature_means: Vec<f64>,
    feature_stds: Vec<f64>,
}

/// Writes the model as versioned JSON.
pub fn save(model: &MlpModel, path: &std::path::Path) -> Result<()> {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        layer_sizes: model.layer_sizes.clone(),
        hidden_activation: "relu".into(),
        output_activation: "sigmoid".into(),
        weights: model.weights.iter().map(|w| w.iter().copied().collect()).collect(),
        biases: model.biases.iter().map(|b| b.to_vec()).collect(),
        feature_means: model.standardization.means.clone(),
        feature_stds: model.standardization.stds.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Loads a model saved by [`save`], refusing schema mismatches.
pub fn load(path: &std::path::Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: file.schema_version, expected: SCHEMA_VERSION });
    }
    if file.hidden_activation != "relu" || file.output_activation != "sigmoid" {
        return Err(Error::invalid("unsupported activation tags in model file"));
    }
    if file.layer_sizes.len() < 2 {
        return Err(Error::invalid("model file has too few layers"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, win) in file.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (win[0], win[1]);
        let w = file
            .weights
            .get(l)
            .ok_or_else(|| Error::invalid("missing weight matrix"))?;
        if w.len() != fan_in * fan_out {
            return Err(Error::ShapeMismatch(format!("weight matrix {l}")));
        }
        weights.push(Array2::from_shape_vec((fan_out, fan_in), w.clone()).expect("shape"));
        let b = file.biases.get(l).ok_or_else(|| Error::invalid("missing bias vector"))?;
        if b.len() != fan_out {
            return Err(Error::ShapeMismatch(format!("bias vector {l}")));
        }
        biases.push(Array1::from_vec(b.clone()));
    }
    let dim = file.layer_sizes[0];
    if file.feature_means.len() != dim || file.feature_stds.len() != dim {
        return Err(Error::ShapeMismatch("standardization arrays".into()));
    }
    Ok(MlpModel {
        layer_sizes: file.layer_sizes,
        weights,
        biases,
        standardization: Standardization {
            means: file.feature_means,
            stds: file.feature_stds,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_shapes_match_architecture() {
        let m = mlp_init(&[6, 3, 9, 1], 0).unwrap();
        let dims: Vec<(usize, usize)> = m.weights().iter().map(|w| w.dim()).collect();
        assert_eq!(dims, vec![(3, 6), (9, 3), (1, 9)]);
        let m = mlp_init(&[4000, 30, 1], 0).unwrap();
        let dims: Vec<(usize, usize)> = m.weights().iter().map(|w| w.dim()).collect();
        assert_eq!(dims, vec![(30, 4000), (1, 30)]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = mlp_init(&[5, 3, 1], 9).unwrap();
        let b = mlp_init(&[5, 3, 1], 9).unwrap();
        assert_eq!(a.weights()[0], b.weights()[0]);
        assert_eq!(a.weights()[1], b.weights()[1]);
    }

    #[test]
    fn init_rejects_bad_architectures() {
        assert!(mlp_init(&[4], 0).is_err());
        assert!(mlp_init(&[4, 0, 1], 0).is_err());
        assert!(mlp_init(&[4, 3, 2], 0).is_err());
    }

    #[test]
    fn zero_model_outputs_half() {
        let mut m = mlp_init(&[3, 2, 1], 0).unwrap();
        for w in m.weights.iter_mut() {
            w.fill(0.0);
        }
        let p = m.forward(array![10.0, -3.0, 0.5].view()).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn forward_matches_hand_computed_network() {
        // 2 -> 2 -> 1 with fixed weights, identity standardization.
        let mut m = mlp_init(&[2, 2, 1], 0).unwrap();
        m.weights[0] = array![[0.5, -1.0], [2.0, 0.25]];
        m.biases[0] = array![0.1, -0.2];
        m.weights[1] = array![[1.5, -0.5]];
        m.biases[1] = array![0.05];
        let x = array![0.4, 0.8];
        // Hidden: z1 = 0.5*0.4 - 1.0*0.8 + 0.1 = -0.5 -> relu 0
        //         z2 = 2.0*0.4 + 0.25*0.8 - 0.2 = 0.8 -> relu 0.8
        // Output: z = 1.5*0 - 0.5*0.8 + 0.05 = -0.35
        let expect = 1.0 / (1.0 + (0.35f64).exp());
        let p = m.forward(x.view()).unwrap();
        assert!((p - expect).abs() < 1e-12);
    }

    #[test]
    fn forward_monotone_in_input_for_positive_weight() {
        let mut m = mlp_init(&[1, 1], 0).unwrap();
        m.weights[0] = array![[2.0]];
        m.biases[0] = array![0.0];
        let p1 = m.forward(array![0.1].view()).unwrap();
        let p2 = m.forward(array![0.9].view()).unwrap();
        assert!(p2 > p1);
    }

    #[test]
    fn forward_rejects_length_mismatch() {
        let m = mlp_init(&[3, 2, 1], 0).unwrap();
        assert!(m.forward(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn output_bias_gradient_vanishes_on_balanced_batch_of_zero_model() {
        let mut m = mlp_init(&[2, 2, 1], 0).unwrap();
        for w in m.weights.iter_mut() {
            w.fill(0.0);
        }
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let grads = m.grad(x.view(), &[0.0, 1.0]).unwrap();
        // Output 0.5 on both rows: mean(0.5 - y) = 0.
        assert!(grads.biases[1][0].abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let m = mlp_init(&[3, 4, 1], 2).unwrap();
        let x1 = array![[0.3, -0.7, 1.1], [0.9, 0.2, -0.4]];
        let x2 = array![
            [0.3, -0.7, 1.1],
            [0.9, 0.2, -0.4],
            [0.3, -0.7, 1.1],
            [0.9, 0.2, -0.4]
        ];
        let g1 = m.grad(x1.view(), &[1.0, 0.0]).unwrap();
        let g2 = m.grad(x2.view(), &[1.0, 0.0, 1.0, 0.0]).unwrap();
        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    /// Central finite differences against the analytic gradient on random
    /// batches; parameters whose ReLU pre-activation sits within 1e-7 of zero
    /// are excluded, since the subgradient convention makes them one-sided.
    #[test]
    fn gradient_matches_finite_differences() {
        let max_rel = gradient_check_max_rel_error(&[5, 3, 9, 1], 20, 123);
        println!("gradient check: max relative error {max_rel:.3e}");
        assert!(max_rel <= 1e-5, "max relative gradient error {max_rel}");
    }

    /// Worst per-parameter discrepancy between analytic and central
    /// finite-difference gradients, relative to the gradient's own scale:
    /// |fd - exact| / max(|fd|, |exact|, 0.01 * ||grad||_inf). The floor keeps
    /// finite-difference roundoff on near-zero components (absolute noise
    /// around 1e-9 at step 1e-6) from masquerading as backprop error.
    pub fn gradient_check_max_rel_error(sizes: &[usize], batches: usize, seed: u64) -> f64 {
        let step = 1e-6;
        let mut worst = 0.0f64;
        for b in 0..batches as u64 {
            let model = mlp_init(sizes, rng::derive(seed, &[b, 0])).unwrap();
            let mut r = rng::stream(rng::derive(seed, &[b, 1]));
            let rows = 4;
            let x = Array2::from_shape_fn((rows, sizes[0]), |_| rng::normal(&mut r));
            let labels: Vec<f64> =
                (0..rows).map(|_| if r.gen::<bool>() { 1.0 } else { 0.0 }).collect();
            let analytic = model.grad(x.view(), &labels).unwrap();
            let grad_inf = analytic
                .weights
                .iter()
                .flat_map(|w| w.iter())
                .chain(analytic.biases.iter().flat_map(|b| b.iter()))
                .fold(0.0f64, |acc, g| acc.max(g.abs()));
            let floor = 0.01 * grad_inf;

            // Pre-activations to find hidden units near the ReLU kink.
            let x_std = model.standardization.apply_rows(x.view());
            let (pre, _) = model.forward_batch(&x_std);
            let hidden_layers = model.weights.len() - 1;

            for l in 0..model.weights.len() {
                let (rows_w, cols_w) = model.weights[l].dim();
                for i in 0..rows_w {
                    // The subgradient convention at 0 makes finite differences
                    // one-sided there; the contract excludes those units.
                    if l < hidden_layers && pre[l].column(i).iter().any(|z| z.abs() < 1e-7) {
                        continue;
                    }
                    for j in 0..cols_w {
                        let mut plus = model.clone();
                        plus.weights[l][(i, j)] += step;
                        let mut minus = model.clone();
                        minus.weights[l][(i, j)] -= step;
                        let numeric = (plus.loss(x.view(), &labels)
                            - minus.loss(x.view(), &labels))
                            / (2.0 * step);
                        let exact = analytic.weights[l][(i, j)];
                        let denom = numeric.abs().max(exact.abs()).max(floor);
                        worst = worst.max((numeric - exact).abs() / denom);
                    }
                    let mut plus = model.clone();
                    plus.biases[l][i] += step;
                    let mut minus = model.clone();
                    minus.biases[l][i] -= step;
                    let numeric =
                        (plus.loss(x.view(), &labels) - minus.loss(x.view(), &labels))
                            / (2.0 * step);
                    let exact = analytic.biases[l][i];
                    let denom = numeric.abs().max(exact.abs()).max(floor);
                    worst = worst.max((numeric - exact).abs() / denom);
                }
            }
        }
        worst
    }

    fn separable_toy() -> Dataset {
        // Two clusters split by x0 + x1 = 0.
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut r = rng::stream(5);
        for _ in 0..40 {
            let cls = r.gen::<bool>();
            let (cx, cy) = if cls { (1.5, 1.0) } else { (-1.5, -1.0) };
            feats.push([cx + 0.3 * rng::normal(&mut r), cy + 0.3 * rng::normal(&mut r)]);
            labels.push(if cls { 1.0 } else { 0.0 });
        }
        let features = Array2::from_shape_fn((40, 2), |(i, j)| feats[i][j]);
        Dataset::new(features, labels).unwrap()
    }

    #[test]
    fn training_fits_linearly_separable_data() {
        let data = separable_toy();
        let model = mlp_init(&[2, 4, 1], 1).unwrap();
        let cfg = TrainConfig { epochs: 200, seed: 1, ..TrainConfig::default() };
        let (trained, history) = train(&model, &data, &cfg).unwrap();
        assert!(history.iter().all(|h| h.loss.is_finite()));
        let acc = evaluate(&trained, &data).unwrap();
        assert_eq!(acc, 1.0, "training accuracy {acc}");
    }

    #[test]
    fn training_refuses_single_class() {
        let features = Array2::zeros((4, 2));
        let data = Dataset::new(features, vec![1.0; 4]).unwrap();
        let model = mlp_init(&[2, 2, 1], 0).unwrap();
        assert!(matches!(
            train(&model, &data, &TrainConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = separable_toy();
        let model = mlp_init(&[2, 4, 1], 3).unwrap();
        let cfg = TrainConfig { epochs: 30, seed: 9, ..TrainConfig::default() };
        let (a, _) = train(&model, &data, &cfg).unwrap();
        let (b, _) = train(&model, &data, &cfg).unwrap();
        for (wa, wb) in a.weights().iter().zip(b.weights()) {
            assert_eq!(wa, wb);
        }
    }

    #[test]
    fn standardized_features_have_zero_mean_unit_variance() {
        let mut r = rng::stream(17);
        let feats = Array2::from_shape_fn((64, 5), |(_, j)| {
            3.0 * (j as f64 + 1.0) * rng::normal(&mut r) + j as f64
        });
        let st = Standardization::fit(feats.view());
        let std_rows = st.apply_rows(feats.view());
        for j in 0..5 {
            let col = std_rows.column(j);
            let mean = col.sum() / 64.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() <= 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-8, "variance {var}");
        }
    }

    #[test]
    fn zero_variance_feature_passes_through() {
        let feats = Array2::from_shape_fn((10, 2), |(i, j)| if j == 0 { 5.0 } else { i as f64 });
        let st = Standardization::fit(feats.view());
        assert_eq!(st.stds[0], 1.0);
    }

    #[test]
    fn evaluate_ties_classify_positive() {
        let mut m = mlp_init(&[2, 1], 0).unwrap();
        m.weights[0].fill(0.0);
        // Output is exactly 0.5 everywhere; threshold rule says class 1.
        let data = Dataset::new(
            Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64),
            vec![1.0, 1.0, 0.0, 1.0],
        )
        .unwrap();
        let acc = evaluate(&m, &data).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn save_load_round_trip_preserves_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut model = mlp_init(&[4, 3, 1], 11).unwrap();
        model
            .set_standardization(Standardization {
                means: vec![0.5, -1.0, 3.0, 0.0],
                stds: vec![1.5, 2.0, 0.25, 1.0],
            })
            .unwrap();
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        let x = array![0.2, -0.4, 2.0, 1.0];
        let a = model.forward(x.view()).unwrap();
        let b = loaded.forward(x.view()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn load_rejects_truncated_and_wrong_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, "{\"schema_version\": 1, \"layer_si").unwrap();
        assert!(load(&path).is_err());
        let model = mlp_init(&[2, 1], 0).unwrap();
        save(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load(&path), Err(Error::SchemaVersion { found: 99, .. })));
    }

    #[test]
    fn label_flip_symmetry_keeps_accuracy() {
        let data = separable_toy();
        let flipped = Dataset::new(
            data.features.clone(),
            data.labels.iter().map(|l| 1.0 - l).collect(),
        )
        .unwrap();
        let model = mlp_init(&[2, 4, 1], 7).unwrap();
        let cfg = TrainConfig { epochs: 200, seed: 2, ..TrainConfig::default() };
        let (m1, _) = train(&model, &data, &cfg).unwrap();
        let (m2, _) = train(&model, &flipped, &cfg).unwrap();
        let a1 = evaluate(&m1, &data).unwrap();
        let a2 = evaluate(&m2, &flipped).unwrap();
        assert_eq!(a1, 1.0);
        assert_eq!(a2, 1.0);
    }
}
