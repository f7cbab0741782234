//! Forward layers with exact analytic gradients.
//!
//! The layer inventory is fixed: dense, relu, softmax, batchnorm, dropout,
//! conv2d, maxpool2d, flatten. Parameters live in a [`ParamArena`] so the
//! optimizer, the checkpointer, and the gradient checker can walk them by
//! stable name without knowing the network structure.
//!
//! Every forward pass returns a [`Cache`] holding exactly what the matching
//! backward pass needs. Backward accumulates parameter gradients into the
//! arena and returns the input gradient.

use crate::error::{Result, ScanError};
use crate::rng::SeededRng;
use crate::tensor::{matmul, Tensor};

/// Train vs eval semantics (dropout, batchnorm statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One parameter tensor with its gradient and momentum buffer.
#[derive(Debug, Clone)]
pub struct ParamState {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum_buf: Tensor,
    /// Running statistics are stored here too but skipped by the optimizer.
    pub trainable: bool,
}

/// Handle into a [`ParamArena`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Flat store of all parameters of a model, addressed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct ParamArena {
    params: Vec<ParamState>,
}

impl ParamArena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(ParamState {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            momentum_buf: Tensor::zeros(&shape),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn state(&self, id: ParamId) -> &ParamState {
        &self.params[id.0]
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        self.params[id.0].grad.add_scaled_inplace(grad, 1.0);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamState> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamState> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Looks a parameter up by its registered name.
    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of trainable scalar parameters.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

/// Fan-based uniform init keeps early activations at unit scale.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Affine map `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        arena: &mut ParamArena,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SeededRng,
    ) -> Dense {
        let w = arena.alloc(
            format!("{prefix}.w"),
            glorot_uniform(&[in_dim, out_dim], in_dim, out_dim, rng),
            true,
        );
        let b = arena.alloc(format!("{prefix}.b"), Tensor::zeros(&[out_dim]), true);
        Dense { w, b, in_dim, out_dim }
    }
}

/// Batch normalization over the channel axis.
///
/// Rank-2 input is `batch x features` (per-feature stats over the batch);
/// rank-4 input is `batch x channels x h x w` (per-channel stats over batch
/// and space). Running statistics use momentum 0.9 and biased variance.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(arena: &mut ParamArena, prefix: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: arena.alloc(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0), true),
            beta: arena.alloc(format!("{prefix}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: arena.alloc(
                format!("{prefix}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: arena.alloc(
                format!("{prefix}.running_var"),
                Tensor::full(&[channels], 1.0),
                false,
            ),
            channels,
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Inverted dropout: scaling happens at train time, eval is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Dropout> {
        if !(0.0..1.0).contains(&rate) {
            return Err(ScanError::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }
}

/// 2-D convolution, zero padding, square stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        arena: &mut ParamArena,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let w = arena.alloc(
            format!("{prefix}.w"),
            glorot_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, fan_out, rng),
            true,
        );
        let b = arena.alloc(format!("{prefix}.b"), Tensor::zeros(&[out_channels]), true);
        Conv2d { w, b, in_channels, out_channels, kernel, stride, pad }
    }
}

/// Non-overlapping max pooling (window == stride by default).
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

/// One layer of the fixed inventory.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Softmax,
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Flatten,
}

/// Forward-pass state consumed by the matching backward call.
#[derive(Debug, Clone)]
pub enum Cache {
    Dense { input: Tensor },
    Relu { input: Tensor },
    Softmax { output: Tensor },
    BatchNorm { xhat: Tensor, sigma: Vec<f64>, dims: (usize, usize, usize), train: bool },
    Dropout { mask: Option<Tensor> },
    Conv2d { input: Tensor, out_hw: (usize, usize) },
    MaxPool2d { argmax: Vec<usize>, in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
}

impl Layer {
    /// Runs the layer forward, returning the output and the backward cache.
    pub fn forward(
        &self,
        arena: &mut ParamArena,
        input: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Dense(d) => {
                let x = as_matrix(input)?;
                if x.shape()[1] != d.in_dim {
                    return Err(ScanError::shape(format!(
                        "dense expects {} input features, got shape {:?}",
                        d.in_dim,
                        input.shape()
                    )));
                }
                let mut out = matmul(&x, arena.value(d.w))?;
                let bias = arena.value(d.b).data().to_vec();
                for r in 0..out.rows() {
                    let row = out.row_mut(r);
                    for (v, b) in row.iter_mut().zip(&bias) {
                        *v += b;
                    }
                }
                Ok((out, Cache::Dense { input: x }))
            }
            Layer::Relu => {
                let out = input.map(|v| if v > 0.0 { v } else { 0.0 });
                Ok((out, Cache::Relu { input: input.clone() }))
            }
            Layer::Softmax => {
                let x = as_matrix(input)?;
                let mut out = x.clone();
                for r in 0..out.rows() {
                    let row = out.row_mut(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                Ok((out.clone(), Cache::Softmax { output: out }))
            }
            Layer::BatchNorm(bn) => bn_forward(bn, arena, input, mode),
            Layer::Dropout(d) => {
                if mode == Mode::Eval || d.rate == 0.0 {
                    return Ok((input.clone(), Cache::Dropout { mask: None }));
                }
                let keep = 1.0 - d.rate;
                let mut mask = Tensor::zeros(input.shape());
                for m in mask.data_mut() {
                    *m = if rng.bool(keep) { 1.0 / keep } else { 0.0 };
                }
                let mut out = input.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                Ok((out, Cache::Dropout { mask: Some(mask) }))
            }
            Layer::Conv2d(c) => conv_forward(c, arena, input),
            Layer::MaxPool2d(p) => pool_forward(p, input),
            Layer::Flatten => {
                if input.rank() < 2 {
                    return Err(ScanError::shape(format!(
                        "flatten expects rank >= 2, got {:?}",
                        input.shape()
                    )));
                }
                let batch = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                let out = input.reshape(&[batch, rest])?;
                Ok((out, Cache::Flatten { in_shape: input.shape().to_vec() }))
            }
        }
    }

    /// Exact analytic backward pass; accumulates parameter gradients into the
    /// arena and returns the gradient w.r.t. the layer input.
    pub fn backward(
        &self,
        arena: &mut ParamArena,
        cache: &Cache,
        upstream: &Tensor,
    ) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => {
                let g = as_matrix(upstream)?;
                let dw = matmul(&input.transpose2(), &g)?;
                arena.accumulate_grad(d.w, &dw);
                let mut db = Tensor::zeros(&[d.out_dim]);
                for r in 0..g.rows() {
                    for (acc, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                arena.accumulate_grad(d.b, &db);
                matmul(&g, &arena.value(d.w).transpose2())
            }
            (Layer::Relu, Cache::Relu { input }) => {
                let mut out = upstream.clone();
                for (g, x) in out.data_mut().iter_mut().zip(input.data()) {
                    if *x <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok(out)
            }
            (Layer::Softmax, Cache::Softmax { output }) => {
                let p = output;
                let g = as_matrix(upstream)?;
                let mut out = p.clone();
                for r in 0..p.rows() {
                    let prow = p.row(r);
                    let grow = g.row(r);
                    let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    let orow = out.row_mut(r);
                    for j in 0..prow.len() {
                        orow[j] = prow[j] * (grow[j] - dot);
                    }
                }
                Ok(out)
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, sigma, dims, train }) => {
                bn_backward(bn, arena, xhat, sigma, *dims, *train, upstream)
            }
            (Layer::Dropout(_), Cache::Dropout { mask }) => match mask {
                None => Ok(upstream.clone()),
                Some(mask) => {
                    let mut out = upstream.clone();
                    for (g, m) in out.data_mut().iter_mut().zip(mask.data()) {
                        *g *= m;
                    }
                    Ok(out)
                }
            },
            (Layer::Conv2d(c), Cache::Conv2d { input, out_hw }) => {
                conv_backward(c, arena, input, *out_hw, upstream)
            }
            (Layer::MaxPool2d(_), Cache::MaxPool2d { argmax, in_shape }) => {
                let mut dx = Tensor::zeros(in_shape);
                for (g, &src) in upstream.data().iter().zip(argmax) {
                    dx.data_mut()[src] += g;
                }
                Ok(dx)
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => upstream.reshape(in_shape),
            _ => Err(ScanError::shape("layer/cache kind mismatch in backward".to_string())),
        }
    }
}

/// Layer pipeline; forward keeps one cache per layer for the backward sweep.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Sequential {
        Sequential { layers }
    }

    pub fn forward(
        &self,
        arena: &mut ParamArena,
        input: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(arena, &x, mode, rng)?;
            caches.push(cache);
            x = out;
        }
        Ok((x, caches))
    }

    pub fn backward(
        &self,
        arena: &mut ParamArena,
        caches: &[Cache],
        upstream: &Tensor,
    ) -> Result<Tensor> {
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            g = layer.backward(arena, cache, &g)?;
        }
        Ok(g)
    }
}

/// Views rank >= 2 input as a matrix `batch x features`; rank 1 as `1 x n`.
fn as_matrix(t: &Tensor) -> Result<Tensor> {
    match t.rank() {
        0 => Err(ScanError::shape("scalar where matrix expected".to_string())),
        1 => t.reshape(&[1, t.len()]),
        2 => Ok(t.clone()),
        _ => {
            let batch = t.shape()[0];
            let rest: usize = t.shape()[1..].iter().product();
            t.reshape(&[batch, rest])
        }
    }
}

/// Splits a tensor into (batch, channels, spatial) for channel-wise stats.
fn bn_dims(input: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    match input.rank() {
        2 => {
            if input.shape()[1] != channels {
                return Err(ScanError::shape(format!(
                    "batchnorm over {channels} features, got {:?}",
                    input.shape()
                )));
            }
            Ok((input.shape()[0], channels, 1))
        }
        4 => {
            if input.shape()[1] != channels {
                return Err(ScanError::shape(format!(
                    "batchnorm over {channels} channels, got {:?}",
                    input.shape()
                )));
            }
            Ok((input.shape()[0], channels, input.shape()[2] * input.shape()[3]))
        }
        _ => Err(ScanError::shape(format!(
            "batchnorm expects rank 2 or 4, got {:?}",
            input.shape()
        ))),
    }
}

fn bn_forward(
    bn: &BatchNorm,
    arena: &mut ParamArena,
    input: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    let (b, c, s) = bn_dims(input, bn.channels)?;
    let n = (b * s) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = Tensor::zeros(input.shape());
    let mut sigma = vec![0.0; c];

    let gamma = arena.value(bn.gamma).data().to_vec();
    let beta = arena.value(bn.beta).data().to_vec();

    let idx = |bi: usize, ci: usize, si: usize| bi * c * s + ci * s + si;

    if mode == Mode::Train {
        let mut means = vec![0.0; c];
        let mut vars = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for bi in 0..b {
                for si in 0..s {
                    sum += x[idx(bi, ci, si)];
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for bi in 0..b {
                for si in 0..s {
                    let d = x[idx(bi, ci, si)] - mean;
                    var += d * d;
                }
            }
            var /= n;
            means[ci] = mean;
            vars[ci] = var;
            sigma[ci] = (var + bn.eps).sqrt();
            for bi in 0..b {
                for si in 0..s {
                    let i = idx(bi, ci, si);
                    let xh = (x[i] - mean) / sigma[ci];
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = gamma[ci] * xh + beta[ci];
                }
            }
        }
        let m = bn.momentum;
        {
            let rm = arena.value_mut(bn.running_mean);
            for (r, mu) in rm.data_mut().iter_mut().zip(&means) {
                *r = m * *r + (1.0 - m) * mu;
            }
        }
        {
            let rv = arena.value_mut(bn.running_var);
            for (r, v) in rv.data_mut().iter_mut().zip(&vars) {
                *r = m * *r + (1.0 - m) * v;
            }
        }
        Ok((out, Cache::BatchNorm { xhat, sigma, dims: (b, c, s), train: true }))
    } else {
        let rm = arena.value(bn.running_mean).data().to_vec();
        let rv = arena.value(bn.running_var).data().to_vec();
        for ci in 0..c {
            sigma[ci] = (rv[ci] + bn.eps).sqrt();
            for bi in 0..b {
                for si in 0..s {
                    let i = idx(bi, ci, si);
                    let xh = (x[i] - rm[ci]) / sigma[ci];
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = gamma[ci] * xh + beta[ci];
                }
            }
        }
        Ok((out, Cache::BatchNorm { xhat, sigma, dims: (b, c, s), train: false }))
    }
}

fn bn_backward(
    bn: &BatchNorm,
    arena: &mut ParamArena,
    xhat: &Tensor,
    sigma: &[f64],
    dims: (usize, usize, usize),
    train: bool,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (b, c, s) = dims;
    if upstream.shape() != xhat.shape() {
        return Err(ScanError::shape(format!(
            "batchnorm backward: upstream {:?} vs cached {:?}",
            upstream.shape(),
            xhat.shape()
        )));
    }
    let n = (b * s) as f64;
    let g = upstream.data();
    let xh = xhat.data();
    let gamma = arena.value(bn.gamma).data().to_vec();
    let idx = |bi: usize, ci: usize, si: usize| bi * c * s + ci * s + si;

    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dx = Tensor::zeros(xhat.shape());

    for ci in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for bi in 0..b {
            for si in 0..s {
                let i = idx(bi, ci, si);
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
        }
        dbeta.data_mut()[ci] = sum_g;
        dgamma.data_mut()[ci] = sum_gx;
        if train {
            // dxhat = g * gamma; dx folds in the mean/variance coupling.
            for bi in 0..b {
                for si in 0..s {
                    let i = idx(bi, ci, si);
                    let dxh = g[i] * gamma[ci];
                    dx.data_mut()[i] =
                        (n * dxh - gamma[ci] * sum_g - xh[i] * gamma[ci] * sum_gx)
                            / (n * sigma[ci]);
                }
            }
        } else {
            for bi in 0..b {
                for si in 0..s {
                    let i = idx(bi, ci, si);
                    dx.data_mut()[i] = g[i] * gamma[ci] / sigma[ci];
                }
            }
        }
    }
    arena.accumulate_grad(bn.gamma, &dgamma);
    arena.accumulate_grad(bn.beta, &dbeta);
    Ok(dx)
}

fn conv_out_dim(in_dim: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = in_dim + 2 * pad;
    if padded < kernel {
        return Err(ScanError::shape(format!(
            "conv kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn conv_forward(c: &Conv2d, arena: &mut ParamArena, input: &Tensor) -> Result<(Tensor, Cache)> {
    if input.rank() != 4 || input.shape()[1] != c.in_channels {
        return Err(ScanError::shape(format!(
            "conv2d expects batch x {} x h x w, got {:?}",
            c.in_channels,
            input.shape()
        )));
    }
    let (batch, _, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let oh = conv_out_dim(h, c.kernel, c.stride, c.pad)?;
    let ow = conv_out_dim(w, c.kernel, c.stride, c.pad)?;
    let weight = arena.value(c.w).data().to_vec();
    let bias = arena.value(c.b).data().to_vec();
    let x = input.data();
    let mut out = Tensor::zeros(&[batch, c.out_channels, oh, ow]);
    let k = c.kernel;

    let xin = |bi: usize, ci: usize, ih: usize, iw: usize| x[((bi * c.in_channels + ci) * h + ih) * w + iw];
    let wat = |o: usize, ci: usize, kh: usize, kw: usize| weight[((o * c.in_channels + ci) * k + kh) * k + kw];

    for bi in 0..batch {
        for o in 0..c.out_channels {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c.in_channels {
                        for kh in 0..k {
                            let ih = (ohi * c.stride + kh) as isize - c.pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (owi * c.stride + kw) as isize - c.pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += xin(bi, ci, ih as usize, iw as usize) * wat(o, ci, kh, kw);
                            }
                        }
                    }
                    out.data_mut()[((bi * c.out_channels + o) * oh + ohi) * ow + owi] = acc;
                }
            }
        }
    }
    Ok((out, Cache::Conv2d { input: input.clone(), out_hw: (oh, ow) }))
}

fn conv_backward(
    c: &Conv2d,
    arena: &mut ParamArena,
    input: &Tensor,
    out_hw: (usize, usize),
    upstream: &Tensor,
) -> Result<Tensor> {
    let (batch, _, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (oh, ow) = out_hw;
    if upstream.shape() != [batch, c.out_channels, oh, ow] {
        return Err(ScanError::shape(format!(
            "conv2d backward: upstream {:?}, expected {:?}",
            upstream.shape(),
            [batch, c.out_channels, oh, ow]
        )));
    }
    let k = c.kernel;
    let x = input.data();
    let g = upstream.data();
    let weight = arena.value(c.w).data().to_vec();

    let mut dw = Tensor::zeros(&[c.out_channels, c.in_channels, k, k]);
    let mut db = Tensor::zeros(&[c.out_channels]);
    let mut dx = Tensor::zeros(input.shape());

    let xin = |bi: usize, ci: usize, ih: usize, iw: usize| x[((bi * c.in_channels + ci) * h + ih) * w + iw];
    let gat = |bi: usize, o: usize, ohi: usize, owi: usize| g[((bi * c.out_channels + o) * oh + ohi) * ow + owi];
    let wat = |o: usize, ci: usize, kh: usize, kw: usize| weight[((o * c.in_channels + ci) * k + kh) * k + kw];

    for bi in 0..batch {
        for o in 0..c.out_channels {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let gv = gat(bi, o, ohi, owi);
                    if gv == 0.0 {
                        continue;
                    }
                    db.data_mut()[o] += gv;
                    for ci in 0..c.in_channels {
                        for kh in 0..k {
                            let ih = (ohi * c.stride + kh) as isize - c.pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (owi * c.stride + kw) as isize - c.pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let (ih, iw) = (ih as usize, iw as usize);
                                dw.data_mut()[((o * c.in_channels + ci) * k + kh) * k + kw] +=
                                    gv * xin(bi, ci, ih, iw);
                                dx.data_mut()[((bi * c.in_channels + ci) * h + ih) * w + iw] +=
                                    gv * wat(o, ci, kh, kw);
                            }
                        }
                    }
                }
            }
        }
    }
    arena.accumulate_grad(c.w, &dw);
    arena.accumulate_grad(c.b, &db);
    Ok(dx)
}

fn pool_forward(p: &MaxPool2d, input: &Tensor) -> Result<(Tensor, Cache)> {
    if input.rank() != 4 {
        return Err(ScanError::shape(format!(
            "maxpool2d expects rank-4 input, got {:?}",
            input.shape()
        )));
    }
    let (batch, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if h < p.window || w < p.window {
        return Err(ScanError::shape(format!(
            "maxpool2d window {} larger than input {h}x{w}",
            p.window
        )));
    }
    let oh = (h - p.window) / p.stride + 1;
    let ow = (w - p.window) / p.stride + 1;
    let x = input.data();
    let mut out = Tensor::zeros(&[batch, c, oh, ow]);
    let mut argmax = vec![0usize; batch * c * oh * ow];
    for bi in 0..batch {
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for kh in 0..p.window {
                        for kw in 0..p.window {
                            let ih = ohi * p.stride + kh;
                            let iw = owi * p.stride + kw;
                            let i = ((bi * c + ci) * h + ih) * w + iw;
                            // First maximum wins; scan order is row-major.
                            if x[i] > best {
                                best = x[i];
                                best_idx = i;
                            }
                        }
                    }
                    let oi = ((bi * c + ci) * oh + ohi) * ow + owi;
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((out, Cache::MaxPool2d { argmax, in_shape: input.shape().to_vec() }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> SeededRng {
        SeededRng::new(77)
    }

    #[test]
    fn relu_forward_definition() {
        let mut arena = ParamArena::new();
        let x = Tensor::from_vec(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, _) = Layer::Relu.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_zeroes_nonpositive() {
        let mut arena = ParamArena::new();
        let x = Tensor::from_vec(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let (_, cache) = Layer::Relu.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        let up = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let dx = Layer::Relu.backward(&mut arena, &cache, &up).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let mut arena = ParamArena::new();
        let x = Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (p, _) = Layer::Softmax.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!((p.data()[1] - 0.5).abs() < 1e-12);

        let a = Tensor::from_vec(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let b = a.map(|v| v + 7.5);
        let (pa, _) = Layer::Softmax.forward(&mut arena, &a, Mode::Eval, &mut rng()).unwrap();
        let (pb, _) = Layer::Softmax.forward(&mut arena, &b, Mode::Eval, &mut rng()).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_log3_example() {
        let mut arena = ParamArena::new();
        let x = Tensor::from_vec(vec![1, 2], vec![3.0f64.ln(), 0.0]).unwrap();
        let (p, _) = Layer::Softmax.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-12);
        assert!((p.data()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut arena = ParamArena::new();
        let mut r = rng();
        let conv = Conv2d::new(&mut arena, "c", 1, 1, 1, 1, 0, &mut r);
        arena.value_mut(conv.w).fill(1.0);
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let (y, _) = Layer::Conv2d(conv).forward(&mut arena, &x, Mode::Eval, &mut r).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let mut arena = ParamArena::new();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let pool = Layer::MaxPool2d(MaxPool2d { window: 2, stride: 2 });
        let (y, cache) = pool.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let up = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let dx = pool.backward(&mut arena, &cache, &up).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_identity_train_scales() {
        let mut arena = ParamArena::new();
        let d = Layer::Dropout(Dropout::new(0.5).unwrap());
        let x = Tensor::full(&[4, 8], 1.0);
        let (y, _) = d.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y, x);
        let (y, _) = d.forward(&mut arena, &x, Mode::Train, &mut rng()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut arena = ParamArena::new();
        let bn = BatchNorm::new(&mut arena, "bn", 2);
        // Fresh stats are mean 0 / var 1, so eval is ~identity.
        let x = Tensor::from_vec(vec![3, 2], vec![1.0, -2.0, 0.5, 0.0, -1.0, 3.0]).unwrap();
        let layer = Layer::BatchNorm(bn);
        let (y, _) = layer.forward(&mut arena, &x, Mode::Eval, &mut rng()).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut arena = ParamArena::new();
        let bn = BatchNorm::new(&mut arena, "bn", 1);
        let x = Tensor::from_vec(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let layer = Layer::BatchNorm(bn);
        let (y, _) = layer.forward(&mut arena, &x, Mode::Train, &mut rng()).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dense_shape_mismatch_is_reported() {
        let mut arena = ParamArena::new();
        let mut r = rng();
        let d = Dense::new(&mut arena, "d", 3, 2, &mut r);
        let x = Tensor::zeros(&[1, 4]);
        assert!(Layer::Dense(d).forward(&mut arena, &x, Mode::Eval, &mut r).is_err());
    }

    #[test]
    fn eval_forward_is_bitwise_repeatable() {
        let mut arena = ParamArena::new();
        let mut r = rng();
        let seq = Sequential::new(vec![
            Layer::Dense(Dense::new(&mut arena, "d0", 4, 8, &mut r)),
            Layer::BatchNorm(BatchNorm::new(&mut arena, "bn", 8)),
            Layer::Relu,
            Layer::Dropout(Dropout::new(0.5).unwrap()),
            Layer::Dense(Dense::new(&mut arena, "d1", 8, 3, &mut r)),
            Layer::Softmax,
        ]);
        let x = Tensor::from_vec(vec![2, 4], (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let (a, _) = seq.forward(&mut arena, &x, Mode::Eval, &mut r.clone()).unwrap();
        let (b, _) = seq.forward(&mut arena, &x, Mode::Eval, &mut r.clone()).unwrap();
        assert_eq!(a, b);
    }
}
