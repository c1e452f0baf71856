//! Adam training loop with record-level validation holdout and early
//! stopping.
//!
//! Supervision comes straight from a dataset: true ranges for the range
//! heads, tag coordinates for the coordinate head, seat labels for the
//! classifier. The validation holdout is carved out of the train split by
//! record, never by sample, so all measurements of one position stay on one
//! side. Runs are deterministic for a given (dataset, config) pair.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{tag_point, Dataset, PositionRecord, Split};
use crate::error::{Error, Result};
use crate::nn::features::{fit_feature_spec, FeatureSpec};
use crate::nn::{batch_targets_from, loss_and_gradients, BatchTargets, MlpModel, NnVariant, Target};
use crate::rng;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Widths of the two hidden layers.
    pub hidden_dims: (usize, usize),
    /// Fraction of train-split records held out for validation.
    pub val_fraction: f64,
    /// Epochs without validation improvement before training stops.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            hidden_dims: (256, 128),
            val_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidInput(
                "batch size, epochs, and patience must be positive".into(),
            ));
        }
        if self.hidden_dims.0 == 0 || self.hidden_dims.1 == 0 {
            return Err(Error::InvalidInput("hidden layers need at least one unit".into()));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::InvalidInput("val fraction must lie in [0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean loss over the gradient batches of this epoch.
    pub train_loss: f64,
    /// Loss on the validation holdout, when one exists.
    pub val_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub history: Vec<EpochStats>,
    /// Loss over the full train split with the final weights.
    pub final_train_loss: f64,
    /// Loss over the test split with the final weights, when one exists.
    pub test_loss: Option<f64>,
    /// Best validation loss seen; the final weights reproduce it.
    pub best_val_loss: Option<f64>,
}

struct TrainSample {
    features: Vec<f64>,
    target: Target,
    /// Per-output supervision mask for regression heads.
    mask: Vec<f64>,
    record_idx: usize,
}

const PATH_SPLIT: u64 = 0x6E6E_7370; // validation holdout
const PATH_INIT: u64 = 0x6E6E_696E; // weight init
const PATH_ORDER: u64 = 0x6E6E_6F72; // batch order

fn build_samples(
    dataset: &Dataset,
    split: Split,
    variant: NnVariant,
    spec: &FeatureSpec,
    label_index: &[String],
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for (record_idx, record) in dataset.records.iter().enumerate() {
        if record.split != split {
            continue;
        }
        out.extend(record_samples(dataset, record, record_idx, variant, spec, label_index)?);
    }
    Ok(out)
}

fn record_samples(
    dataset: &Dataset,
    record: &PositionRecord,
    record_idx: usize,
    variant: NnVariant,
    spec: &FeatureSpec,
    label_index: &[String],
) -> Result<Vec<TrainSample>> {
    let normalized = crate::nn::build_features(record, spec);
    let mut out = Vec::with_capacity(normalized.len());
    match variant {
        NnVariant::RangeOneAnchor => {
            for (anchor, features) in normalized {
                let id = anchor.expect("single scope tags vectors with an anchor");
                let sample = record
                    .samples
                    .iter()
                    .find(|s| s.anchor_id == id)
                    .expect("feature vector built from an existing sample");
                out.push(TrainSample {
                    features,
                    target: Target::Regression(vec![sample.true_range]),
                    mask: vec![1.0],
                    record_idx,
                });
            }
        }
        NnVariant::RangeAll => {
            for (_, features) in normalized {
                let mut values = Vec::with_capacity(spec.anchor_ids.len());
                let mut mask = Vec::with_capacity(spec.anchor_ids.len());
                for &id in &spec.anchor_ids {
                    match record.samples.iter().find(|s| s.anchor_id == id) {
                        Some(s) => {
                            values.push(s.true_range);
                            mask.push(1.0);
                        }
                        None => {
                            values.push(0.0);
                            mask.push(0.0);
                        }
                    }
                }
                out.push(TrainSample {
                    features,
                    target: Target::Regression(values),
                    mask,
                    record_idx,
                });
            }
        }
        NnVariant::Coord => {
            let seat = dataset
                .layout
                .seat(&record.seat)
                .ok_or_else(|| Error::Format(format!("record references unknown seat {:?}", record.seat)))?;
            let tag = tag_point(seat, record.placement);
            for (_, features) in normalized {
                out.push(TrainSample {
                    features,
                    target: Target::Regression(vec![tag.x, tag.y]),
                    mask: vec![1.0; 2],
                    record_idx,
                });
            }
        }
        NnVariant::SeatLabel => {
            let class = label_index
                .iter()
                .position(|l| l == &record.seat)
                .ok_or_else(|| Error::Format(format!("record references unknown seat {:?}", record.seat)))?;
            for (_, features) in normalized {
                out.push(TrainSample {
                    features,
                    target: Target::Class(class),
                    mask: Vec::new(),
                    record_idx,
                });
            }
        }
    }
    Ok(out)
}

fn batch_of(model: &MlpModel, samples: &[&TrainSample]) -> Result<(DMatrix<f64>, BatchTargets)> {
    let in_dim = model.layer_dims[0];
    let x = DMatrix::from_fn(in_dim, samples.len(), |i, c| samples[c].features[i]);
    let targets: Vec<Target> = samples.iter().map(|s| s.target.clone()).collect();
    let mut batch = batch_targets_from(model, &targets)?;
    if let BatchTargets::Regression { mask, .. } = &mut batch {
        for (c, s) in samples.iter().enumerate() {
            for (r, &m) in s.mask.iter().enumerate() {
                mask[(r, c)] = m;
            }
        }
    }
    Ok((x, batch))
}

/// Mean loss over a sample set, in fixed chunks so the reduction order never
/// depends on batch configuration.
fn eval_loss(model: &MlpModel, samples: &[&TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("loss over an empty sample set".into()));
    }
    const CHUNK: usize = 512;
    let mut total = 0.0;
    for chunk in samples.chunks(CHUNK) {
        let (x, targets) = batch_of(model, chunk)?;
        let (loss, _) = loss_and_gradients(model, &x, &targets, false)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn he_init(dims: &[usize], seed: u64) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let mut rng = rng::stream(seed, &[PATH_INIT]);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
            rng.sample::<f64, _>(StandardNormal) * std
        }));
        biases.push(DVector::zeros(fan_out));
    }
    (weights, biases)
}

struct Adam {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: u64,
    lr: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel, lr: f64) -> Self {
        Adam {
            m_w: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &crate::nn::Gradients) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for l in 0..model.weights.len() {
            for idx in 0..model.weights[l].len() {
                let g = grads.weights[l][idx];
                let m = &mut self.m_w[l][idx];
                let v = &mut self.v_w[l][idx];
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                model.weights[l][idx] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
            for idx in 0..model.biases[l].len() {
                let g = grads.biases[l][idx];
                let m = &mut self.m_b[l][idx];
                let v = &mut self.v_b[l][idx];
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                model.biases[l][idx] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Trains a network of the given variant on the train split.
pub fn train(dataset: &Dataset, variant: NnVariant, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    dataset.layout.validate()?;
    if !dataset.has_split(Split::Train) {
        return Err(Error::EmptySplit(Split::Train));
    }

    let spec = fit_feature_spec(dataset, variant)?;
    let mut label_map: Vec<String> = dataset.layout.seats.iter().map(|s| s.label.clone()).collect();
    label_map.sort();

    let out_dim = MlpModel::output_dim(variant, &spec, label_map.len());
    let dims = vec![spec.feature_len(), config.hidden_dims.0, config.hidden_dims.1, out_dim];
    let (weights, biases) = he_init(&dims, config.seed);
    let mut model = MlpModel {
        variant,
        layer_dims: dims,
        weights,
        biases,
        feature_spec: spec.clone(),
        label_map,
        trained: false,
    };
    model.validate()?;

    let samples = build_samples(dataset, Split::Train, variant, &spec, &model.label_map)?;
    let test_samples = build_samples(dataset, Split::Test, variant, &spec, &model.label_map)?;

    // Regression targets are in meters, far from the zero a fresh network
    // emits; Adam moves each parameter by at most ~lr per step, so closing
    // that gap through the weights wastes thousands of steps. Starting the
    // output biases at the train-split target means removes the offset.
    // Classification logits already start centered.
    if !variant.is_classification() {
        let mut sums = vec![0.0; out_dim];
        let mut counts = vec![0.0; out_dim];
        for s in &samples {
            if let Target::Regression(values) = &s.target {
                for (i, &t) in values.iter().enumerate() {
                    sums[i] += s.mask[i] * t;
                    counts[i] += s.mask[i];
                }
            }
        }
        let last = model.biases.len() - 1;
        for i in 0..out_dim {
            if counts[i] > 0.0 {
                model.biases[last][i] = sums[i] / counts[i];
            }
        }
    }

    // Record-level holdout: shuffle record indices, hold out the tail.
    let mut record_ids: Vec<usize> = {
        let mut ids: Vec<usize> = samples.iter().map(|s| s.record_idx).collect();
        ids.dedup(); // samples of one record are contiguous
        ids
    };
    let mut split_rng = rng::stream(config.seed, &[PATH_SPLIT]);
    shuffle(&mut record_ids, &mut split_rng);
    let val_records = (record_ids.len() as f64 * config.val_fraction).floor() as usize;
    let val_set: std::collections::HashSet<usize> =
        record_ids[record_ids.len() - val_records..].iter().cloned().collect();

    let train_samples: Vec<&TrainSample> =
        samples.iter().filter(|s| !val_set.contains(&s.record_idx)).collect();
    let val_samples: Vec<&TrainSample> =
        samples.iter().filter(|s| val_set.contains(&s.record_idx)).collect();
    if train_samples.is_empty() {
        return Err(Error::EmptySplit(Split::Train));
    }

    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order_rng = rng::stream(config.seed, &[PATH_ORDER]);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<DMatrix<f64>>, Vec<DVector<f64>>)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 1..=config.epochs {
        shuffle(&mut order, &mut order_rng);
        let mut epoch_loss = 0.0;
        for batch_ids in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = batch_ids.iter().map(|&i| train_samples[i]).collect();
            let (x, targets) = batch_of(&model, &batch)?;
            let (loss, grads) = loss_and_gradients(&model, &x, &targets, true)?;
            adam.update(&mut model, &grads.unwrap());
            epoch_loss += loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_samples.len() as f64;

        let val_loss = if val_samples.is_empty() {
            None
        } else {
            Some(eval_loss(&model, &val_samples)?)
        };
        history.push(EpochStats { epoch, train_loss, val_loss });

        if let Some(v) = val_loss {
            let improved = best.as_ref().map_or(true, |(b, _, _)| v < b - 1e-12);
            if improved {
                best = Some((v, model.weights.clone(), model.biases.clone()));
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= config.patience {
                    break;
                }
            }
        }
    }

    let best_val_loss = best.as_ref().map(|(v, _, _)| *v);
    if let Some((_, w, b)) = best {
        model.weights = w;
        model.biases = b;
    }
    model.trained = true;

    let all_train: Vec<&TrainSample> = samples.iter().collect();
    let final_train_loss = eval_loss(&model, &all_train)?;
    let test_loss = if test_samples.is_empty() {
        None
    } else {
        let refs: Vec<&TrainSample> = test_samples.iter().collect();
        Some(eval_loss(&model, &refs)?)
    };

    Ok(TrainOutput { model, history, final_train_loss, test_loss, best_val_loss })
}
