use rand::Rng;

use super::gemm::{gemm, Op};
use super::Tensor;

/// One stage of a [`Sequential`](super::Sequential) stack.
///
/// Every layer consumes and produces batched tensors whose leading axis is the
/// batch axis. Spatial layers expect `(channels, height, width)` samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    /// 2×2 window, stride 2. Ties go to the first index in row-major order.
    MaxPool2d,
    Relu,
    Sigmoid,
    /// Softmax over the (flat) sample.
    Softmax,
    Flatten,
}

/// Values a layer keeps from its forward pass for use in backward.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Argmax { input_shape: Vec<usize>, index: Vec<usize> },
    Output(Tensor),
    Shape(Vec<usize>),
}

fn kaiming_uniform<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer, `y = x·W + b` with `W` stored `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            name: name.to_string(),
            weight: Tensor::from_parts(vec![inputs, outputs], kaiming_uniform(inputs * outputs, inputs, rng)),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Square-kernel convolution, stride 1, zero padding `(k-1)/2` so spatial size
/// is preserved. Weight layout `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            name: name.to_string(),
            weight: Tensor::from_parts(
                vec![out_ch, in_ch, kernel, kernel],
                kaiming_uniform(out_ch * fan_in, fan_in, rng),
            ),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

/// Fractionally strided convolution: kernel 4, stride 2, padding 1, which
/// doubles height and width exactly. Weight layout `(in, out, 4, 4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

const UP_K: usize = 4;
const UP_S: usize = 2;
const UP_P: usize = 1;

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        // each output pixel sees in_ch * (k/s)^2 taps
        let fan_in = in_ch * (UP_K / UP_S) * (UP_K / UP_S);
        ConvTranspose2d {
            name: name.to_string(),
            weight: Tensor::from_parts(
                vec![in_ch, out_ch, UP_K, UP_K],
                kaiming_uniform(in_ch * out_ch * UP_K * UP_K, fan_in, rng),
            ),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Unfold `x` of shape `(c, h, w)` into `(c·k·k, ho·wo)` patches.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, out: &mut [f64]) {
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let cols = ho * wo;
    debug_assert_eq!(out.len(), c * k * k * cols);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut out[((ci * k + ky) * k + kx) * cols..((ci * k + ky) * k + kx + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patches back into a `(c, h, w)` image.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, out: &mut [f64]) {
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let n = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..((ci * k + ky) * k + kx + 1) * n];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn spatial(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Some((*c, *h, *w)),
        _ => None,
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::ConvTranspose2d(_) => "conv_transpose2d",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Dense(l) => Some(&l.name),
            Layer::Conv2d(l) => Some(&l.name),
            Layer::ConvTranspose2d(l) => Some(&l.name),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self.name() {
            Some(n) => format!("{} '{}'", self.kind(), n),
            None => self.kind().to_string(),
        }
    }

    /// Per-sample output shape, or a message explaining why `input` is not
    /// accepted.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Dense(d) => {
                if input == [d.inputs()] {
                    Ok(vec![d.outputs()])
                } else {
                    Err(format!("expected input ({},), got {input:?}", d.inputs()))
                }
            }
            Layer::Conv2d(cv) => match spatial(input) {
                Some((c, h, w)) if c == cv.in_channels() => Ok(vec![cv.out_channels(), h, w]),
                _ => Err(format!("expected input ({}, H, W), got {input:?}", cv.in_channels())),
            },
            Layer::ConvTranspose2d(up) => match spatial(input) {
                Some((c, h, w)) if c == up.in_channels() => Ok(vec![up.out_channels(), 2 * h, 2 * w]),
                _ => Err(format!("expected input ({}, H, W), got {input:?}", up.in_channels())),
            },
            Layer::MaxPool2d => match spatial(input) {
                Some((c, h, w)) if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(format!("expected (C, H, W) with even H and W, got {input:?}")),
            },
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Softmax => {
                if input.iter().product::<usize>() >= 1 {
                    Ok(input.to_vec())
                } else {
                    Err("softmax over an empty sample".into())
                }
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Evaluate the layer on a batch. When `record` is set, also return what
    /// the backward pass needs.
    pub(crate) fn forward(&self, x: &Tensor, record: bool) -> (Tensor, Option<Cache>) {
        let batch = x.batch_len();
        let out_sample = self
            .output_shape(x.sample_shape())
            .expect("shape validated by the caller");
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&out_sample);
        let keep_input = |x: &Tensor| if record { Some(Cache::Input(x.clone())) } else { None };

        match self {
            Layer::Dense(d) => {
                let (n_in, n_out) = (d.inputs(), d.outputs());
                let mut y = Vec::with_capacity(batch * n_out);
                for _ in 0..batch {
                    y.extend_from_slice(d.bias.data());
                }
                gemm(batch, n_in, n_out, x.data(), Op::Normal, d.weight.data(), Op::Normal, &mut y);
                (Tensor::from_parts(out_shape, y), keep_input(x))
            }
            Layer::Conv2d(cv) => {
                let (c, h, w) = spatial(x.sample_shape()).unwrap();
                let k = cv.kernel();
                let kk = c * k * k;
                let co = cv.out_channels();
                let hw = h * w;
                let mut y = vec![0.0; batch * co * hw];
                let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
                for b in 0..batch {
                    let xs = x.sample(b);
                    let ys = &mut y[b * co * hw..(b + 1) * co * hw];
                    for (o, row) in ys.chunks_exact_mut(hw).enumerate() {
                        row.fill(cv.bias.data()[o]);
                    }
                    let patches: &[f64] = if k == 1 {
                        xs
                    } else {
                        im2col(xs, c, h, w, k, 1, (k - 1) / 2, &mut cols);
                        &cols
                    };
                    gemm(co, kk, hw, cv.weight.data(), Op::Normal, patches, Op::Normal, ys);
                }
                (Tensor::from_parts(out_shape, y), keep_input(x))
            }
            Layer::ConvTranspose2d(up) => {
                let (ci, h, w) = spatial(x.sample_shape()).unwrap();
                let co = up.out_channels();
                let rows = co * UP_K * UP_K;
                let (ho, wo) = (2 * h, 2 * w);
                let mut y = vec![0.0; batch * co * ho * wo];
                let mut cols = vec![0.0; rows * h * w];
                for b in 0..batch {
                    cols.fill(0.0);
                    gemm(rows, ci, h * w, up.weight.data(), Op::Transposed, x.sample(b), Op::Normal, &mut cols);
                    let ys = &mut y[b * co * ho * wo..(b + 1) * co * ho * wo];
                    for (o, plane) in ys.chunks_exact_mut(ho * wo).enumerate() {
                        plane.fill(up.bias.data()[o]);
                    }
                    col2im(&cols, co, ho, wo, UP_K, UP_S, UP_P, ys);
                }
                (Tensor::from_parts(out_shape, y), keep_input(x))
            }
            Layer::MaxPool2d => {
                let (c, h, w) = spatial(x.sample_shape()).unwrap();
                let (ho, wo) = (h / 2, w / 2);
                let mut y = Vec::with_capacity(batch * c * ho * wo);
                let mut index = Vec::with_capacity(if record { batch * c * ho * wo } else { 0 });
                let data = x.data();
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * h * w;
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut best = base + 2 * oy * w + 2 * ox;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let at = base + (2 * oy + dy) * w + 2 * ox + dx;
                                    if data[at] > data[best] {
                                        best = at;
                                    }
                                }
                                y.push(data[best]);
                                if record {
                                    index.push(best);
                                }
                            }
                        }
                    }
                }
                let cache = record.then(|| Cache::Argmax { input_shape: x.shape().to_vec(), index });
                (Tensor::from_parts(out_shape, y), cache)
            }
            Layer::Relu => {
                let y = Tensor::from_parts(out_shape, x.data().iter().map(|&v| v.max(0.0)).collect());
                let cache = record.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::Sigmoid => {
                let y = Tensor::from_parts(out_shape, x.data().iter().map(|&v| sigmoid(v)).collect());
                let cache = record.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::Softmax => {
                let width = x.len() / batch;
                let mut y = Vec::with_capacity(x.len());
                for b in 0..batch {
                    softmax_into(x.sample(b), &mut y);
                }
                debug_assert_eq!(y.len(), batch * width);
                let y = Tensor::from_parts(out_shape, y);
                let cache = record.then(|| Cache::Output(y.clone()));
                (y, cache)
            }
            Layer::Flatten => {
                let y = Tensor::from_parts(out_shape, x.data().to_vec());
                (y, record.then(|| Cache::Shape(x.shape().to_vec())))
            }
        }
    }

    /// Accumulate parameter gradients from `grad` (gradient of the loss w.r.t.
    /// this layer's output) and, if requested, return the gradient w.r.t. the
    /// layer's input.
    pub(crate) fn backward(&mut self, cache: &Cache, grad: &Tensor, need_input: bool) -> Option<Tensor> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(x)) => {
                let batch = x.batch_len();
                let (n_in, n_out) = (d.inputs(), d.outputs());
                let g = grad.data();
                gemm(n_in, batch, n_out, x.data(), Op::Transposed, g, Op::Normal, d.weight.grad_or_zero());
                let db = d.bias.grad_or_zero();
                for row in g.chunks_exact(n_out) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
                need_input.then(|| {
                    let mut dx = vec![0.0; batch * n_in];
                    gemm(batch, n_out, n_in, g, Op::Normal, d.weight.data(), Op::Transposed, &mut dx);
                    Tensor::from_parts(x.shape().to_vec(), dx)
                })
            }
            (Layer::Conv2d(cv), Cache::Input(x)) => {
                let batch = x.batch_len();
                let (c, h, w) = spatial(x.sample_shape()).unwrap();
                let k = cv.kernel();
                let kk = c * k * k;
                let co = cv.out_channels();
                let hw = h * w;
                let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
                let mut dcols = vec![0.0; kk * hw];
                let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                for b in 0..batch {
                    let xs = x.sample(b);
                    let gs = grad.sample(b);
                    let patches: &[f64] = if k == 1 {
                        xs
                    } else {
                        im2col(xs, c, h, w, k, 1, (k - 1) / 2, &mut cols);
                        &cols
                    };
                    gemm(co, hw, kk, gs, Op::Normal, patches, Op::Transposed, cv.weight.grad_or_zero());
                    let db = cv.bias.grad_or_zero();
                    for (acc, row) in db.iter_mut().zip(gs.chunks_exact(hw)) {
                        *acc += row.iter().sum::<f64>();
                    }
                    if need_input {
                        dcols.fill(0.0);
                        gemm(kk, co, hw, cv.weight.data(), Op::Transposed, gs, Op::Normal, &mut dcols);
                        col2im(&dcols, c, h, w, k, 1, (k - 1) / 2, &mut dx[b * c * hw..(b + 1) * c * hw]);
                    }
                }
                need_input.then(|| Tensor::from_parts(x.shape().to_vec(), dx))
            }
            (Layer::ConvTranspose2d(up), Cache::Input(x)) => {
                let batch = x.batch_len();
                let (ci, h, w) = spatial(x.sample_shape()).unwrap();
                let co = up.out_channels();
                let rows = co * UP_K * UP_K;
                let (ho, wo) = (2 * h, 2 * w);
                let mut dcols = vec![0.0; rows * h * w];
                let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                for b in 0..batch {
                    let gs = grad.sample(b);
                    im2col(gs, co, ho, wo, UP_K, UP_S, UP_P, &mut dcols);
                    gemm(ci, h * w, rows, x.sample(b), Op::Normal, &dcols, Op::Transposed, up.weight.grad_or_zero());
                    let db = up.bias.grad_or_zero();
                    for (acc, plane) in db.iter_mut().zip(gs.chunks_exact(ho * wo)) {
                        *acc += plane.iter().sum::<f64>();
                    }
                    if need_input {
                        let dst = &mut dx[b * ci * h * w..(b + 1) * ci * h * w];
                        gemm(ci, rows, h * w, up.weight.data(), Op::Normal, &dcols, Op::Normal, dst);
                    }
                }
                need_input.then(|| Tensor::from_parts(x.shape().to_vec(), dx))
            }
            (Layer::MaxPool2d, Cache::Argmax { input_shape, index }) => need_input.then(|| {
                let mut dx = vec![0.0; input_shape.iter().product()];
                for (&at, &g) in index.iter().zip(grad.data()) {
                    dx[at] += g;
                }
                Tensor::from_parts(input_shape.clone(), dx)
            }),
            (Layer::Relu, Cache::Output(y)) => need_input.then(|| {
                let dx = y
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&out, &g)| if out > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::from_parts(y.shape().to_vec(), dx)
            }),
            (Layer::Sigmoid, Cache::Output(y)) => need_input.then(|| {
                let dx = y
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                Tensor::from_parts(y.shape().to_vec(), dx)
            }),
            (Layer::Softmax, Cache::Output(y)) => need_input.then(|| {
                let batch = y.batch_len();
                let mut dx = Vec::with_capacity(y.len());
                for b in 0..batch {
                    let (ys, gs) = (y.sample(b), grad.sample(b));
                    let dot: f64 = ys.iter().zip(gs).map(|(p, g)| p * g).sum();
                    dx.extend(ys.iter().zip(gs).map(|(p, g)| p * (g - dot)));
                }
                Tensor::from_parts(y.shape().to_vec(), dx)
            }),
            (Layer::Flatten, Cache::Shape(shape)) => {
                need_input.then(|| Tensor::from_parts(shape.clone(), grad.data().to_vec()))
            }
            (layer, _) => unreachable!("cache does not belong to {}", layer.describe()),
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Layer::Dense(Dense { name, weight, bias })
            | Layer::Conv2d(Conv2d { name, weight, bias })
            | Layer::ConvTranspose2d(ConvTranspose2d { name, weight, bias }) => {
                vec![(format!("{name}.weight"), weight), (format!("{name}.bias"), bias)]
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Layer::Dense(Dense { name, weight, bias })
            | Layer::Conv2d(Conv2d { name, weight, bias })
            | Layer::ConvTranspose2d(ConvTranspose2d { name, weight, bias }) => {
                vec![(format!("{name}.weight"), weight), (format!("{name}.bias"), bias)]
            }
            _ => Vec::new(),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &z in logits {
        let e = (z - max).exp();
        sum += e;
        out.push(e);
    }
    for p in &mut out[start..] {
        *p = (*p / sum).max(f64::MIN_POSITIVE);
    }
}
