//! Small fully connected networks for range correction, direct coordinate
//! regression, and seat classification.
//!
//! The architecture is fixed: two ReLU hidden layers, a linear output layer,
//! and one of four heads selected by [`NnVariant`]. Regression heads train
//! with mean squared error (half the squared error summed per sample,
//! averaged over the batch), the classification head with softmax
//! cross-entropy. Everything runs on plain `f64` matrices with fixed
//! reduction order, so a given seed reproduces a training run bit for bit.

pub mod checkpoint;
pub mod features;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use features::{build_features, fit_feature_spec, AnchorScope, FeatureSpec};
pub use train::{train, EpochStats, TrainConfig, TrainOutput};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::PositionRecord;
use crate::error::{Error, Result};

/// Which quantity the output layer predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnVariant {
    /// One range per forward pass; input describes a single anchor.
    RangeOneAnchor,
    /// Every anchor's range at once from the full measurement vector.
    RangeAll,
    /// Tag (x, y) in cabin coordinates.
    Coord,
    /// Seat label as a class.
    SeatLabel,
}

impl NnVariant {
    pub fn head_name(self) -> &'static str {
        match self {
            NnVariant::RangeOneAnchor => "range_1a",
            NnVariant::RangeAll => "range_all",
            NnVariant::Coord => "coord",
            NnVariant::SeatLabel => "seat_label",
        }
    }

    pub fn from_head_name(name: &str) -> Result<Self> {
        match name {
            "range_1a" => Ok(NnVariant::RangeOneAnchor),
            "range_all" => Ok(NnVariant::RangeAll),
            "coord" => Ok(NnVariant::Coord),
            "seat_label" => Ok(NnVariant::SeatLabel),
            other => Err(Error::Format(format!("unknown model head {other:?}"))),
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, NnVariant::SeatLabel)
    }
}

/// A trained (or freshly initialized) multilayer perceptron.
///
/// `weights[l]` maps activations of layer `l` to pre-activations of layer
/// `l + 1`: the matrix has one row per output unit. `layer_dims` lists the
/// input width, the hidden widths, and the output width.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub variant: NnVariant,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub feature_spec: FeatureSpec,
    /// Class index to seat label, classification head only.
    pub label_map: Vec<String>,
    pub trained: bool,
}

/// Supervision for a single feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Expected outputs, one per output unit.
    Regression(Vec<f64>),
    /// Class index into the label map.
    Class(usize),
}

impl MlpModel {
    /// Output width implied by the variant.
    pub(crate) fn output_dim(variant: NnVariant, spec: &FeatureSpec, classes: usize) -> usize {
        match variant {
            NnVariant::RangeOneAnchor => 1,
            NnVariant::RangeAll => spec.anchor_ids.len(),
            NnVariant::Coord => 2,
            NnVariant::SeatLabel => classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.feature_spec.validate()?;
        if self.layer_dims.len() < 2 {
            return Err(Error::Format("network needs at least input and output layers".into()));
        }
        if self.weights.len() != self.layer_dims.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::Format("layer count does not match weights".into()));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.nrows() != self.layer_dims[l + 1] || w.ncols() != self.layer_dims[l] {
                return Err(Error::Format(format!("weight {l} shape mismatch")));
            }
            if self.biases[l].len() != self.layer_dims[l + 1] {
                return Err(Error::Format(format!("bias {l} length mismatch")));
            }
        }
        if self.layer_dims[0] != self.feature_spec.feature_len() {
            return Err(Error::Format("input width does not match feature spec".into()));
        }
        let classes = self.label_map.len();
        let expected = Self::output_dim(self.variant, &self.feature_spec, classes);
        if self.layer_dims[self.layer_dims.len() - 1] != expected {
            return Err(Error::Format("output width does not match head".into()));
        }
        if self.variant.is_classification() && classes < 2 {
            return Err(Error::Format("classification head needs at least two labels".into()));
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    /// Forward pass for a single feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.layer_dims[0] {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.layer_dims[0],
                features.len()
            )));
        }
        let x = DMatrix::from_column_slice(features.len(), 1, features);
        let (activations, _) = self.forward_batch(&x);
        Ok(activations.last().unwrap().column(0).iter().cloned().collect())
    }

    /// Forward pass over a batch, one sample per column. Returns activations
    /// per layer (input first, output last) and pre-activations per layer.
    fn forward_batch(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let layers = self.weights.len();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre = Vec::with_capacity(layers);
        activations.push(x.clone());
        for l in 0..layers {
            let mut z = &self.weights[l] * activations.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            pre.push(z.clone());
            if l + 1 < layers {
                z.apply(|v| *v = v.max(0.0)); // ReLU on hidden layers only
            }
            activations.push(z);
        }
        (activations, pre)
    }
}

/// Gradients with the same shapes as the model parameters.
pub(crate) struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Batched supervision, one sample per column of the feature matrix.
#[derive(Debug)]
pub(crate) enum BatchTargets {
    /// `values` is output-dim x batch; `mask` matches and zeroes out
    /// entries that carry no supervision (absent anchors).
    Regression { values: DMatrix<f64>, mask: DMatrix<f64> },
    Class(Vec<usize>),
}

fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in col.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Loss over a batch, optionally with parameter gradients.
///
/// Regression: L = (1/B) * sum_b sum_o mask * 0.5 * (y - t)^2.
/// Classification: L = (1/B) * sum_b -log softmax(y)[class_b].
pub(crate) fn loss_and_gradients(
    model: &MlpModel,
    x: &DMatrix<f64>,
    targets: &BatchTargets,
    want_grads: bool,
) -> Result<(f64, Option<Gradients>)> {
    let batch = x.ncols() as f64;
    let (activations, pre) = model.forward_batch(x);
    let output = activations.last().unwrap();

    // Loss and dL/d(output), shape output-dim x batch.
    let (loss, mut delta) = match targets {
        BatchTargets::Regression { values, mask } => {
            let diff = output - values;
            let mut loss = 0.0;
            for (d, m) in diff.iter().zip(mask.iter()) {
                loss += 0.5 * m * d * d;
            }
            let grad = diff.zip_map(mask, |d, m| d * m / batch);
            (loss / batch, grad)
        }
        BatchTargets::Class(classes) => {
            let probs = softmax_columns(output);
            let mut loss = 0.0;
            let mut grad = probs.clone();
            for (b, &class) in classes.iter().enumerate() {
                if class >= output.nrows() {
                    return Err(Error::InvalidInput(format!(
                        "class index {class} out of range for {} outputs",
                        output.nrows()
                    )));
                }
                loss -= probs[(class, b)].max(1e-300).ln();
                grad[(class, b)] -= 1.0;
            }
            grad /= batch;
            (loss / batch, grad)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    if !want_grads {
        return Ok((loss, None));
    }

    let layers = model.weights.len();
    let mut grads = Gradients {
        weights: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
        biases: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
    };
    for l in (0..layers).rev() {
        grads.weights[l] = &delta * activations[l].transpose();
        for (i, row) in delta.row_iter().enumerate() {
            grads.biases[l][i] = row.sum();
        }
        if l > 0 {
            let mut back = model.weights[l].transpose() * delta;
            // ReLU derivative on the hidden pre-activation.
            back.zip_apply(&pre[l - 1], |g, z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = back;
        }
    }
    Ok((loss, Some(grads)))
}

pub(crate) fn batch_targets_from(model: &MlpModel, targets: &[Target]) -> Result<BatchTargets> {
    let out_dim = *model.layer_dims.last().unwrap();
    if model.variant.is_classification() {
        let mut classes = Vec::with_capacity(targets.len());
        for t in targets {
            match t {
                Target::Class(c) => classes.push(*c),
                Target::Regression(_) => {
                    return Err(Error::HeadMismatch {
                        expected: model.variant.head_name().into(),
                        actual: "regression target".into(),
                    })
                }
            }
        }
        Ok(BatchTargets::Class(classes))
    } else {
        let mut values = DMatrix::zeros(out_dim, targets.len());
        let mask = DMatrix::from_element(out_dim, targets.len(), 1.0);
        for (b, t) in targets.iter().enumerate() {
            match t {
                Target::Regression(v) if v.len() == out_dim => {
                    for (i, &y) in v.iter().enumerate() {
                        values[(i, b)] = y;
                    }
                }
                Target::Regression(v) => {
                    return Err(Error::InvalidInput(format!(
                        "target has {} values, head produces {out_dim}",
                        v.len()
                    )))
                }
                Target::Class(_) => {
                    return Err(Error::HeadMismatch {
                        expected: model.variant.head_name().into(),
                        actual: "class target".into(),
                    })
                }
            }
        }
        Ok(BatchTargets::Regression { values, mask })
    }
}

/// Compares analytic gradients against central finite differences on one
/// sample and returns the worst deviation, measured as
/// |analytic - numeric| / max(1, max absolute gradient entry).
///
/// Cost grows with the parameter count squared; meant for small test models.
pub fn gradient_check(
    model: &MlpModel,
    features: &[f64],
    target: &Target,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    model.validate()?;
    let x = DMatrix::from_column_slice(features.len(), 1, features);
    let targets = batch_targets_from(model, std::slice::from_ref(target))?;
    let (_, grads) = loss_and_gradients(model, &x, &targets, true)?;
    let grads = grads.unwrap();

    let mut scale = 1.0_f64;
    for g in grads.weights.iter().flat_map(|w| w.iter()).chain(grads.biases.iter().flat_map(|b| b.iter())) {
        scale = scale.max(g.abs());
    }

    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    let layers = model.weights.len();
    for l in 0..layers {
        for idx in 0..model.weights[l].len() {
            let original = model.weights[l][idx];
            probe.weights[l][idx] = original + epsilon;
            let (up, _) = loss_and_gradients(&probe, &x, &targets, false)?;
            probe.weights[l][idx] = original - epsilon;
            let (down, _) = loss_and_gradients(&probe, &x, &targets, false)?;
            probe.weights[l][idx] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max((grads.weights[l][idx] - numeric).abs() / scale);
        }
        for idx in 0..model.biases[l].len() {
            let original = model.biases[l][idx];
            probe.biases[l][idx] = original + epsilon;
            let (up, _) = loss_and_gradients(&probe, &x, &targets, false)?;
            probe.biases[l][idx] = original - epsilon;
            let (down, _) = loss_and_gradients(&probe, &x, &targets, false)?;
            probe.biases[l][idx] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max((grads.biases[l][idx] - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

// ── predictions ────────────────────────────────────────────────────────────

fn require_trained(model: &MlpModel) -> Result<()> {
    if !model.trained {
        return Err(Error::UntrainedModel);
    }
    model.validate()
}

/// Predicted range per anchor for the range heads. One-anchor models emit a
/// prediction for every anchor present in the record; all-anchor models emit
/// one per spec anchor in ascending id order.
pub fn predict_ranges(model: &MlpModel, record: &PositionRecord) -> Result<Vec<(u32, f64)>> {
    require_trained(model)?;
    match model.variant {
        NnVariant::RangeOneAnchor => {
            let mut out = Vec::new();
            for (anchor, v) in build_features(record, &model.feature_spec) {
                let y = model.forward(&v)?;
                out.push((anchor.expect("single scope tags vectors with an anchor"), y[0]));
            }
            Ok(out)
        }
        NnVariant::RangeAll => {
            let (_, v) = build_features(record, &model.feature_spec)
                .pop()
                .ok_or_else(|| Error::InvalidInput("record produced no features".into()))?;
            let y = model.forward(&v)?;
            Ok(model.feature_spec.anchor_ids.iter().cloned().zip(y).collect())
        }
        other => Err(Error::HeadMismatch {
            expected: "range_1a or range_all".into(),
            actual: other.head_name().into(),
        }),
    }
}

/// Predicted tag coordinates for the coordinate head.
pub fn predict_coords(model: &MlpModel, record: &PositionRecord) -> Result<(f64, f64)> {
    require_trained(model)?;
    if model.variant != NnVariant::Coord {
        return Err(Error::HeadMismatch {
            expected: "coord".into(),
            actual: model.variant.head_name().into(),
        });
    }
    let (_, v) = build_features(record, &model.feature_spec)
        .pop()
        .ok_or_else(|| Error::InvalidInput("record produced no features".into()))?;
    let y = model.forward(&v)?;
    Ok((y[0], y[1]))
}

/// Predicted seat label for the classification head. Ties resolve to the
/// lowest class index, which the sorted label map makes lexicographic.
pub fn predict_seat<'m>(model: &'m MlpModel, record: &PositionRecord) -> Result<&'m str> {
    require_trained(model)?;
    if model.variant != NnVariant::SeatLabel {
        return Err(Error::HeadMismatch {
            expected: "seat_label".into(),
            actual: model.variant.head_name().into(),
        });
    }
    let (_, v) = build_features(record, &model.feature_spec)
        .pop()
        .ok_or_else(|| Error::InvalidInput("record produced no features".into()))?;
    let y = model.forward(&v)?;
    let mut best = 0;
    for (i, &logit) in y.iter().enumerate() {
        if logit > y[best] {
            best = i;
        }
    }
    Ok(&model.label_map[best])
}
