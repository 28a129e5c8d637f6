#![allow(dead_code)]

use inferguard::nn::{
    cross_entropy_batch, Conv2d, ConvTranspose2d, Dense, Layer, Loss, Parameterized, Sequential, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// How the scalar objective is formed from the stack output.
#[derive(Clone)]
pub enum Objective {
    /// `Σ rᵢ yᵢ` for a fixed random vector `r`.
    Projection(Vec<f64>),
    /// Batch-mean cross-entropy against fixed labels.
    CrossEntropy(Vec<usize>),
}

impl Objective {
    fn eval(&self, y: &Tensor) -> f64 {
        match self {
            Objective::Projection(r) => y.data().iter().zip(r).map(|(a, b)| a * b).sum(),
            Objective::CrossEntropy(labels) => cross_entropy_batch(y, labels).unwrap().value(),
        }
    }

    fn loss(&self, y: &Tensor) -> Loss {
        match self {
            Objective::Projection(r) => Loss::new(self.eval(y), Tensor::from_slice(y.shape(), r).unwrap()),
            Objective::CrossEntropy(labels) => cross_entropy_batch(y, labels).unwrap(),
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest elementwise relative error between analytic gradients (parameters
/// and input) and central finite differences.
pub fn max_gradient_error(net: &Sequential, x: &Tensor, objective: &Objective) -> f64 {
    let mut net = net.clone();
    let y = net.forward(x).unwrap();
    let loss = objective.loss(&y);
    let dx = net.backward_from(loss.grad(), true).unwrap().unwrap();
    let analytic_params: Vec<Vec<f64>> =
        net.named_params().iter().map(|(_, p)| p.grad().unwrap().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let f = |n: &Sequential, x: &Tensor| objective.eval(&n.predict(x).unwrap());

    for (pi, analytic) in analytic_params.iter().enumerate() {
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            plus.named_params_mut()[pi].1.data_mut()[j] += FD_STEP;
            let mut minus = net.clone();
            minus.named_params_mut()[pi].1.data_mut()[j] -= FD_STEP;
            let numeric = (f(&plus, x) - f(&minus, x)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    for (j, &a) in dx.data().iter().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[j] += FD_STEP;
        let mut xm = x.clone();
        xm.data_mut()[j] -= FD_STEP;
        let numeric = (f(&net, &xp) - f(&net, &xm)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(a, numeric));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Distinct values spaced far wider than the FD step, so no pooling window
/// changes its argmax under perturbation.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    v.shuffle(rng);
    v
}

pub const LAYER_KINDS: [&str; 7] =
    ["dense", "conv3x3", "maxpool2x2", "relu", "softmax+cross_entropy", "conv_transpose", "sigmoid"];

/// One random gradient-check instance for the named layer kind.
pub fn instance(kind: &str, seed: u64) -> (Sequential, Tensor, Objective) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 2;
    let (net, x) = match kind {
        "dense" => {
            let net = Sequential::new(vec![3], vec![Layer::Dense(Dense::new("fc", 3, 2, &mut rng))]).unwrap();
            let x = Tensor::new(vec![batch, 3], uniform(&mut rng, batch * 3, -1.0, 1.0)).unwrap();
            (net, x)
        }
        "conv3x3" => {
            let mut conv = Conv2d::new("conv", 2, 3, 3, &mut rng);
            let n = conv.bias.len();
            conv.bias.data_mut().copy_from_slice(&uniform(&mut rng, n, -0.5, 0.5));
            let net = Sequential::new(vec![2, 5, 4], vec![Layer::Conv2d(conv)]).unwrap();
            let x = Tensor::new(vec![batch, 2, 5, 4], uniform(&mut rng, batch * 40, -1.0, 1.0)).unwrap();
            (net, x)
        }
        "maxpool2x2" => {
            let net = Sequential::new(vec![2, 4, 6], vec![Layer::MaxPool2d]).unwrap();
            let x = Tensor::new(vec![batch, 2, 4, 6], distinct(&mut rng, batch * 48)).unwrap();
            (net, x)
        }
        "relu" => {
            let net = Sequential::new(vec![7], vec![Layer::Relu]).unwrap();
            let x = Tensor::new(vec![batch, 7], away_from_zero(&mut rng, batch * 7)).unwrap();
            (net, x)
        }
        "softmax+cross_entropy" => {
            let net = Sequential::new(vec![4], vec![Layer::Dense(Dense::new("fc", 4, 3, &mut rng)), Layer::Softmax])
                .unwrap();
            let x = Tensor::new(vec![batch, 4], uniform(&mut rng, batch * 4, -2.0, 2.0)).unwrap();
            let labels = (0..batch).map(|_| rng.random_range(0..3)).collect();
            return (net, x, Objective::CrossEntropy(labels));
        }
        "conv_transpose" => {
            let mut up = ConvTranspose2d::new("up", 2, 3, &mut rng);
            let n = up.bias.len();
            up.bias.data_mut().copy_from_slice(&uniform(&mut rng, n, -0.5, 0.5));
            let net = Sequential::new(vec![2, 3, 2], vec![Layer::ConvTranspose2d(up)]).unwrap();
            let x = Tensor::new(vec![batch, 2, 3, 2], uniform(&mut rng, batch * 12, -1.0, 1.0)).unwrap();
            (net, x)
        }
        "sigmoid" => {
            let net = Sequential::new(vec![6], vec![Layer::Sigmoid]).unwrap();
            let x = Tensor::new(vec![batch, 6], uniform(&mut rng, batch * 6, -4.0, 4.0)).unwrap();
            (net, x)
        }
        other => panic!("unknown layer kind {other}"),
    };
    let out_len = net.predict(&x).unwrap().len();
    let r = uniform(&mut rng, out_len, -1.0, 1.0);
    (net, x, Objective::Projection(r))
}

/// Class probabilities of a fixed random table model over three binary
/// attributes and two classes.
pub struct TableModel {
    table: Vec<[f64; 2]>,
}

impl TableModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..8)
            .map(|_| {
                let p: f64 = rng.random_range(0.05..0.95);
                [p, 1.0 - p]
            })
            .collect();
        TableModel { table }
    }

    pub fn probs(&self, r: &[usize]) -> Vec<f64> {
        self.table[r[0] * 4 + r[1] * 2 + r[2]].to_vec()
    }
}

/// Exhaustive posterior argmax over the two levels of `target`; the first
/// maximum wins.
pub fn brute_force_attribute(
    model: &TableModel,
    record: &[usize],
    target: usize,
    observed: usize,
    prior: &[f64],
    hard: bool,
) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for v in 0..2 {
        let mut r = record.to_vec();
        r[target] = v;
        let probs = model.probs(&r);
        let likelihood = if hard {
            let top = if probs[1] > probs[0] { 1 } else { 0 };
            if top == observed { 1.0 } else { 0.0 }
        } else {
            probs[observed]
        };
        if prior[v] * likelihood > best.1 {
            best = (v, prior[v] * likelihood);
        }
    }
    best.0
}
