//! The tabular MLP, the splittable CNN, the inverse decoder, and minibatch
//! classifier training.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TabularDataset;
use crate::nn::{
    checkpoint, cross_entropy_batch, Conv2d, ConvTranspose2d, Dense, Layer, NnError, Optimizer, Parameterized,
    Sequential, Tensor, TrainConfig,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid cut point {0}: expected one of {{2, 4, 6}}")]
    InvalidCut(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
}

pub const MLP_HIDDEN: usize = 100;
pub const CNN_CHANNELS: usize = 32;
pub const CUT_POINTS: [usize; 3] = [2, 4, 6];

/// `d_in -> 100 -> 100 -> C` with ReLU hidden activations and a softmax head.
pub fn build_mlp(d_in: usize, classes: usize, seed: u64) -> Result<Sequential, ModelError> {
    if d_in == 0 || classes < 2 {
        return Err(ModelError::InvalidArgument(format!("need d_in >= 1 and C >= 2, got {d_in} and {classes}")));
    }
    let mut rng = seed::rng_from_seed(seed);
    let layers = vec![
        Layer::Dense(Dense::new("fc1", d_in, MLP_HIDDEN, &mut rng)),
        Layer::Relu,
        Layer::Dense(Dense::new("fc2", MLP_HIDDEN, MLP_HIDDEN, &mut rng)),
        Layer::Relu,
        Layer::Dense(Dense::new("fc3", MLP_HIDDEN, classes, &mut rng)),
        Layer::Softmax,
    ];
    Ok(Sequential::new(vec![d_in], layers)?)
}

/// Architecture hyperparameters of a [`SplitCnn`], also its JSON sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub image_side: usize,
    pub classes: usize,
    pub cut_point: usize,
    pub hidden_width: usize,
}

impl CnnArch {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !CUT_POINTS.contains(&self.cut_point) {
            return Err(ModelError::InvalidCut(self.cut_point));
        }
        if self.image_side == 0 || self.image_side % 8 != 0 {
            return Err(ModelError::InvalidArgument(format!(
                "image side {} must be a positive multiple of 8",
                self.image_side
            )));
        }
        if self.classes < 2 || self.hidden_width == 0 {
            return Err(ModelError::InvalidArgument("need C >= 2 and a positive hidden width".into()));
        }
        Ok(())
    }

    /// Number of leading layers held by party A.
    pub fn split_index(&self) -> usize {
        // each conv pair is conv, relu, conv, relu, pool
        5 * self.cut_point / 2
    }

    /// Per-sample shape of the intercepted activation.
    pub fn activation_shape(&self) -> Vec<usize> {
        let s = self.image_side >> (self.cut_point / 2);
        vec![CNN_CHANNELS, s, s]
    }
}

/// Six 3x3 convs (32 channels) with a 2x2 maxpool after every second one,
/// then `FC(hidden) + ReLU` and `FC(C) + softmax`, split after the pool that
/// follows conv `cut_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCnn {
    arch: CnnArch,
    front: Sequential,
    back: Sequential,
}

pub fn build_split_cnn(
    image_side: usize,
    classes: usize,
    cut_point: usize,
    hidden_width: usize,
    seed: u64,
) -> Result<SplitCnn, ModelError> {
    let arch = CnnArch { image_side, classes, cut_point, hidden_width };
    arch.validate()?;
    let mut rng = seed::rng_from_seed(seed);
    let mut layers = Vec::new();
    let mut in_ch = 1;
    for i in 1..=6 {
        layers.push(Layer::Conv2d(Conv2d::new(&format!("conv{i}"), in_ch, CNN_CHANNELS, 3, &mut rng)));
        layers.push(Layer::Relu);
        if i % 2 == 0 {
            layers.push(Layer::MaxPool2d);
        }
        in_ch = CNN_CHANNELS;
    }
    let flat = CNN_CHANNELS * (image_side / 8) * (image_side / 8);
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(Dense::new("fc1", flat, hidden_width, &mut rng)));
    layers.push(Layer::Relu);
    layers.push(Layer::Dense(Dense::new("fc2", hidden_width, classes, &mut rng)));
    layers.push(Layer::Softmax);
    let full = Sequential::new(vec![1, image_side, image_side], layers)?;
    SplitCnn::from_full(arch, full)
}

impl SplitCnn {
    pub fn from_full(arch: CnnArch, full: Sequential) -> Result<SplitCnn, ModelError> {
        arch.validate()?;
        let (front, back) = full.split_at(arch.split_index())?;
        if front.output_shape() != arch.activation_shape() {
            return Err(ModelError::InvalidArgument(format!(
                "layer stack does not match the architecture: cut activation {:?}",
                front.output_shape()
            )));
        }
        Ok(SplitCnn { arch, front, back })
    }

    pub fn from_halves(arch: CnnArch, front: Sequential, back: Sequential) -> Result<SplitCnn, ModelError> {
        SplitCnn::from_full(arch, Sequential::concat(front, back)?)
    }

    pub fn arch(&self) -> CnnArch {
        self.arch
    }

    /// Party A's layers.
    pub fn front(&self) -> &Sequential {
        &self.front
    }

    /// Party B's layers.
    pub fn back(&self) -> &Sequential {
        &self.back
    }

    pub fn into_halves(self) -> (Sequential, Sequential) {
        (self.front, self.back)
    }

    pub fn full(&self) -> Sequential {
        Sequential::concat(self.front.clone(), self.back.clone()).expect("halves were split from one stack")
    }

    /// The same parameters re-partitioned at another cut point.
    pub fn with_cut(&self, cut_point: usize) -> Result<SplitCnn, ModelError> {
        SplitCnn::from_full(CnnArch { cut_point, ..self.arch }, self.full())
    }

    pub fn activation_shape(&self) -> Vec<usize> {
        self.arch.activation_shape()
    }

    /// Class probabilities through both halves.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.back.predict(&self.front.predict(x)?)?)
    }

    /// Parameters to `path`, architecture to `path` with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save(self, path)?;
        let sidecar = path.with_extension("json");
        fs::write(&sidecar, serde_json::to_string_pretty(&self.arch).expect("arch serializes")).map_err(NnError::Io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SplitCnn, ModelError> {
        let sidecar = path.with_extension("json");
        let text = fs::read_to_string(&sidecar).map_err(NnError::Io)?;
        let arch: CnnArch = serde_json::from_str(&text)
            .map_err(|e| ModelError::Sidecar { path: sidecar.display().to_string(), message: e.to_string() })?;
        let mut model = build_split_cnn(arch.image_side, arch.classes, arch.cut_point, arch.hidden_width, 0)?;
        checkpoint::load(&mut model, path)?;
        Ok(model)
    }
}

impl Parameterized for SplitCnn {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.front.named_params();
        p.extend(self.back.named_params());
        p
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.front.named_params_mut();
        p.extend(self.back.named_params_mut());
        p
    }
}

/// Decoder with `upsamples` ConvT(2x)+ReLU blocks of `width` channels, then a
/// 3x3 conv to one channel and a sigmoid. With no upsampling block a single
/// 3x3 conv+ReLU block of `width` channels takes its place.
pub fn build_decoder(input_shape: &[usize], upsamples: usize, width: usize, seed: u64) -> Result<Sequential, ModelError> {
    if input_shape.len() != 3 {
        return Err(ModelError::InvalidArgument(format!("decoder input must be (C, H, W), got {input_shape:?}")));
    }
    let mut rng = seed::rng_from_seed(seed);
    let mut layers = Vec::new();
    let mut ch = input_shape[0];
    if upsamples == 0 {
        layers.push(Layer::Conv2d(Conv2d::new("mix", ch, width, 3, &mut rng)));
        layers.push(Layer::Relu);
        ch = width;
    }
    for i in 1..=upsamples {
        layers.push(Layer::ConvTranspose2d(ConvTranspose2d::new(&format!("up{i}"), ch, width, &mut rng)));
        layers.push(Layer::Relu);
        ch = width;
    }
    layers.push(Layer::Conv2d(Conv2d::new("out", ch, 1, 3, &mut rng)));
    layers.push(Layer::Sigmoid);
    Ok(Sequential::new(input_shape.to_vec(), layers)?)
}

/// Inverse network for a legal cut activation of a `image_side` CNN: one
/// upsampling block per pool crossed.
pub fn build_inverse_net(activation_shape: &[usize], image_side: usize, seed: u64) -> Result<Sequential, ModelError> {
    let pools = CUT_POINTS.iter().map(|c| c / 2).find(|&k| {
        image_side % 8 == 0 && activation_shape == [CNN_CHANNELS, image_side >> k, image_side >> k]
    });
    match pools {
        Some(k) => build_decoder(activation_shape, k, CNN_CHANNELS, seed),
        None => Err(ModelError::InvalidArgument(format!(
            "activation shape {activation_shape:?} is not a cut shape for {image_side}x{image_side} images"
        ))),
    }
}

/// Per-feature z-scoring with training-set statistics. Zero-variance features
/// get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], width: usize) -> Standardizer {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// One epoch of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// The minibatch index lists for one epoch: a seeded shuffle cut into chunks
/// of `batch_size`, the last one possibly short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut seed::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Stream label for the batch-order RNG of a training run.
pub const SHUFFLE_STREAM: &str = "shuffle";

/// Minibatch cross-entropy training of a softmax-headed stack.
pub fn train_classifier<M: ClassifierStack>(
    model: &mut M,
    inputs: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    let n = labels.len();
    if n == 0 {
        return Err(ModelError::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if inputs.batch_len() != n {
        return Err(ModelError::InvalidArgument(format!("{} inputs but {n} labels", inputs.batch_len())));
    }
    config.validate(n)?;
    let mut opt = Optimizer::new(config);
    let mut rng = seed::stream(config.seed, SHUFFLE_STREAM);
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (mut loss_sum, mut hits) = (0.0, 0);
        for batch in epoch_batches(n, config.batch_size, &mut rng) {
            let x = inputs.select(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let probs = model.forward_train(&x)?;
            let loss = cross_entropy_batch(&probs, &y)?;
            loss_sum += loss.value() * batch.len() as f64;
            hits += (0..batch.len()).filter(|&i| crate::metrics::argmax(probs.sample(i)) == y[i]).count();
            model.backward_train(&loss)?;
            opt.step(model)?;
        }
        trace.push(EpochStats { loss: loss_sum / n as f64, accuracy: hits as f64 / n as f64 });
    }
    Ok(trace)
}

/// A model trainable by [`train_classifier`].
pub trait ClassifierStack: Parameterized {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor, NnError>;
    fn backward_train(&mut self, loss: &crate::nn::Loss) -> Result<(), NnError>;
}

impl ClassifierStack for Sequential {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward(x)
    }

    fn backward_train(&mut self, loss: &crate::nn::Loss) -> Result<(), NnError> {
        self.backward(loss)
    }
}

impl ClassifierStack for SplitCnn {
    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor, NnError> {
        let v = self.front.forward(x)?;
        self.back.forward(&v)
    }

    fn backward_train(&mut self, loss: &crate::nn::Loss) -> Result<(), NnError> {
        let g = self.back.backward_from(loss.grad(), true)?.expect("input gradient requested");
        self.front.backward_from(&g, false)?;
        Ok(())
    }
}

/// Batched top-1 predictions.
pub fn predict_classes(probs: &Tensor) -> Vec<usize> {
    (0..probs.batch_len()).map(|i| crate::metrics::argmax(probs.sample(i))).collect()
}

/// An MLP over standardized attribute level indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularClassifier {
    pub mlp: Sequential,
    pub scaler: Standardizer,
    pub classes: usize,
}

fn as_features(record: &[usize]) -> Vec<f64> {
    record.iter().map(|&v| v as f64).collect()
}

impl TabularClassifier {
    /// Fit the scaler on `train` and train a fresh MLP initialized from `init_seed`.
    pub fn fit(train: &TabularDataset, config: &TrainConfig, init_seed: u64) -> Result<(Self, Vec<EpochStats>), ModelError> {
        let width = train.schema().attributes.len();
        let classes = train.schema().classes;
        let raw: Vec<Vec<f64>> = train.records().iter().map(|r| as_features(r)).collect();
        let scaler = Standardizer::fit(&raw, width);
        let mut model = TabularClassifier { mlp: build_mlp(width, classes, init_seed)?, scaler, classes };
        if train.is_empty() {
            return Err(ModelError::InvalidArgument("cannot train on an empty dataset".into()));
        }
        let x = model.encode(train.records());
        let trace = train_classifier(&mut model.mlp, &x, train.labels(), config)?;
        Ok((model, trace))
    }

    /// Standardized `(N, d)` feature batch. `records` must be nonempty.
    pub fn encode(&self, records: &[Vec<usize>]) -> Tensor {
        let d = self.scaler.mean.len();
        let data: Vec<f64> = records.iter().flat_map(|r| self.scaler.transform(&as_features(r))).collect();
        Tensor::new(vec![records.len(), d], data).expect("records match the schema width")
    }

    /// Class probabilities for each record.
    pub fn probabilities(&self, records: &[Vec<usize>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let probs = self.mlp.predict(&self.encode(records))?;
        Ok((0..records.len()).map(|i| probs.sample(i).to_vec()).collect())
    }

    pub fn predict(&self, records: &[Vec<usize>]) -> Result<Vec<usize>, ModelError> {
        Ok(predict_classes(&self.mlp.predict(&self.encode(records))?))
    }
}
