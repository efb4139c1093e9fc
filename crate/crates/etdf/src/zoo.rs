//! Victim-model construction and training: named presets, deterministic
//! initialization, cross-entropy training with SGD-momentum or Adam, and
//! temperature-based defensive distillation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, ModelMeta, ModelSpec};
use crate::rng::{salt, stream};
use crate::scalar::{lit, Scalar};
use crate::tensor::{argmax, softmax_slice, Tensor};

pub const PRESET_NAMES: [&str; 4] = [
    "lenet5",
    "cnn-distilled-mnist",
    "cnn-distilled-cifar10",
    "small-cnn-cifar10",
];

/// Architecture presets for the victims attacked in the experiments.
pub fn preset(name: &str) -> Result<ModelSpec> {
    let spec = match name {
        "lenet5" => ModelSpec {
            input_shape: [1, 28, 28],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 6,
                    kernel: 5,
                    padding: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv2d {
                    in_channels: 6,
                    out_channels: 16,
                    kernel: 5,
                    padding: 0,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 400,
                    outputs: 120,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 120,
                    outputs: 84,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 84,
                    outputs: 10,
                },
            ],
            class_count: 10,
        },
        "cnn-distilled-mnist" => ModelSpec {
            input_shape: [1, 28, 28],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 16 * 7 * 7,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 10,
                },
            ],
            class_count: 10,
        },
        "cnn-distilled-cifar10" | "small-cnn-cifar10" => ModelSpec {
            input_shape: [3, 32, 32],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 16,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv2d {
                    in_channels: 16,
                    out_channels: 32,
                    kernel: 3,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 32 * 8 * 8,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 10,
                },
            ],
            class_count: 10,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {PRESET_NAMES:?}"
            )))
        }
    };
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// When present, cross-entropy is taken on temperature-softened softmax
    /// outputs; must be >= 1.
    pub distill_temperature: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 3,
            seed: 42,
            optimizer: Optimizer::Adam,
            distill_temperature: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(t) = self.distill_temperature {
            if !(t >= 1.0) {
                return Err(Error::Config(format!(
                    "distillation temperature {t} must be >= 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Deterministically initialize a model from `(spec, seed)`: weights are
/// fan-in-scaled uniform (variance `2 / fan_in`), biases zero. Equal inputs
/// give bitwise-equal parameters.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = stream(seed, salt::INIT);
    let mut params = Vec::new();
    for shape in spec.param_shapes() {
        if shape.len() > 1 {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let tensor = Tensor::from_fn(&shape, |_| {
                lit::<T>((rng.gen::<f64>() * 2.0 - 1.0) * bound)
            });
            params.push(tensor);
        } else {
            params.push(Tensor::zeros(&shape));
        }
    }
    let meta = ModelMeta {
        seed,
        ..ModelMeta::default()
    };
    Model::new(spec.clone(), params, meta)
}

enum Targets<'a, T> {
    Hard(&'a [usize]),
    Soft(&'a [Vec<T>]),
}

impl<T: Scalar> Targets<'_, T> {
    fn label(&self, i: usize, class_count: usize) -> usize {
        match self {
            Targets::Hard(labels) => labels[i],
            Targets::Soft(rows) => argmax(&rows[i][..class_count]),
        }
    }
}

enum OptimizerState<T> {
    SgdMomentum { velocity: Vec<Tensor<T>> },
    Adam {
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        step: u32,
    },
}

impl<T: Scalar> OptimizerState<T> {
    fn new(kind: Optimizer, shapes: &[Vec<usize>]) -> Self {
        let zeros = || shapes.iter().map(|s| Tensor::zeros(s)).collect::<Vec<_>>();
        match kind {
            Optimizer::SgdMomentum => OptimizerState::SgdMomentum { velocity: zeros() },
            Optimizer::Adam => OptimizerState::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    fn apply(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: T) {
        match self {
            OptimizerState::SgdMomentum { velocity } => {
                let momentum = lit::<T>(0.9);
                for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity) {
                    for ((pv, gv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut())
                    {
                        *vv = momentum * *vv + *gv;
                        *pv -= lr * *vv;
                    }
                }
            }
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let beta1 = lit::<T>(0.9);
                let beta2 = lit::<T>(0.999);
                let eps = lit::<T>(1e-8);
                let bias1 = T::one() - beta1.powi(*step as i32);
                let bias2 = T::one() - beta2.powi(*step as i32);
                for ((p, g), (mt, vt)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    for (((pv, gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mt.data_mut())
                        .zip(vt.data_mut())
                    {
                        *mv = beta1 * *mv + (T::one() - beta1) * *gv;
                        *vv = beta2 * *vv + (T::one() - beta2) * *gv * *gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Train in place with cross-entropy on softmax outputs. Deterministic for
/// fixed `(model, dataset, cfg)`: one seeded shuffling stream drives every
/// epoch, and batch gradients accumulate in sample order.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    train_with_targets(model, dataset, Targets::Hard(dataset.labels()), cfg)
}

fn train_with_targets<T: Scalar>(
    model: &mut Model<T>,
    dataset: &Dataset<T>,
    targets: Targets<'_, T>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if dataset.class_count() != model.class_count() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model expects {}",
            dataset.class_count(),
            model.class_count()
        )));
    }
    if let Targets::Soft(rows) = &targets {
        if rows.len() != dataset.len() {
            return Err(Error::Data("soft-label count mismatch".into()));
        }
    }

    let class_count = model.class_count();
    let temperature = lit::<T>(cfg.distill_temperature.unwrap_or(1.0));
    let lr = lit::<T>(cfg.learning_rate);
    let shapes = model.spec().param_shapes();
    let mut optimizer = OptimizerState::new(cfg.optimizer, &shapes);
    let mut grads: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    let mut rng = stream(cfg.seed, salt::SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            for g in &mut grads {
                g.data_mut().fill(T::zero());
            }
            let batch_scale = lit::<T>(1.0 / batch.len() as f64) / temperature;
            for &i in batch {
                let image = dataset.image(i);
                let trace = model.forward_trace(&image)?;
                let logits = trace.logits();
                let probs = softmax_slice(logits.values(), temperature);

                let mut seed_grad = vec![T::zero(); class_count];
                let mut sample_loss = 0.0f64;
                match &targets {
                    Targets::Hard(labels) => {
                        let y = labels[i];
                        sample_loss -= probs[y].to_f64().unwrap_or(f64::NAN).max(1e-300).ln();
                        for (k, g) in seed_grad.iter_mut().enumerate() {
                            let q = if k == y { T::one() } else { T::zero() };
                            *g = (probs[k] - q) * batch_scale;
                        }
                    }
                    Targets::Soft(rows) => {
                        let q_row = &rows[i];
                        for (k, g) in seed_grad.iter_mut().enumerate() {
                            let p = probs[k].to_f64().unwrap_or(f64::NAN);
                            let q = q_row[k].to_f64().unwrap_or(f64::NAN);
                            if q > 0.0 {
                                sample_loss -= q * p.max(1e-300).ln();
                            }
                            *g = (probs[k] - q_row[k]) * batch_scale;
                        }
                    }
                }
                loss_sum += sample_loss;
                if logits.argmax() == targets.label(i, class_count) {
                    correct += 1;
                }
                model.backward(&trace, &seed_grad, Some(&mut grads));
            }
            optimizer.apply(model.params_mut(), &grads, lr);
        }
        let loss = loss_sum / n as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochStats {
            loss,
            accuracy: correct as f64 / n as f64,
        });
    }
    model.meta_mut().epochs += cfg.epochs;
    Ok(history)
}

/// Teacher softmax outputs at the given temperature, one row per sample.
pub fn soft_labels<T: Scalar>(
    teacher: &Model<T>,
    dataset: &Dataset<T>,
    temperature: f64,
) -> Result<Vec<Vec<T>>> {
    let temp = lit::<T>(temperature);
    let mut rows = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let logits = teacher.forward(&dataset.image(i))?;
        rows.push(softmax_slice(logits.values(), temp));
    }
    Ok(rows)
}

/// Defensive distillation: train a teacher at temperature `T`, label the
/// training set with its temperature-`T` softmax outputs, then train the
/// student on those soft labels at the same temperature. The returned
/// student is evaluated at temperature 1 (its raw logits).
pub fn distill_train<T: Scalar>(
    teacher_spec: &ModelSpec,
    student_spec: &ModelSpec,
    dataset: &Dataset<T>,
    temperature: f64,
    cfg: &TrainConfig,
) -> Result<Model<T>> {
    if !(temperature >= 1.0) {
        return Err(Error::Config(format!(
            "distillation temperature {temperature} must be >= 1"
        )));
    }
    let distill_cfg = TrainConfig {
        distill_temperature: Some(temperature),
        ..cfg.clone()
    };
    let mut teacher = build_model::<T>(teacher_spec, cfg.seed)?;
    train(&mut teacher, dataset, &distill_cfg)?;
    let soft = soft_labels(&teacher, dataset, temperature)?;

    let student_seed = stream(cfg.seed, salt::STUDENT).gen::<u64>();
    let mut student = build_model::<T>(student_spec, student_seed)?;
    train_with_targets(&mut student, dataset, Targets::Soft(&soft), &distill_cfg)?;
    student.meta_mut().distill_temperature = Some(temperature);
    Ok(student)
}

/// Top-1 accuracy; argmax ties break to the lowest class index.
pub fn evaluate<T: Scalar>(model: &Model<T>, dataset: &Dataset<T>) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if dataset.class_count() != model.class_count() {
        return Err(Error::Data(format!(
            "dataset has {} classes, model expects {}",
            dataset.class_count(),
            model.class_count()
        )));
    }
    let mut correct = 0usize;
    for i in 0..dataset.len() {
        let logits = model.forward(&dataset.image(i))?;
        if logits.argmax() == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
