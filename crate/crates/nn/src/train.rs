//! Mini-batch SGD with optional low-precision emulation.
//!
//! Under a format, every tensor a step produces is rounded to the format:
//! each layer's forward output, each backward output, each gradient and each
//! updated weight. Products inside one layer are summed in binary64, which
//! stands in for the quire (one rounding per dot product).

use std::fmt;

use lowprec_core::numformats::FastRounder;
use lowprec_core::FormatSpec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv;
use crate::data::DatasetSplit;
use crate::gemm::gemm;
use crate::network::{self, channel_layout, Layer, Network};
use crate::quantized::Forward;
use crate::tensor::Tensor;
use crate::NnError;

/// Arithmetic used for every tensor during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Precision {
    Exact,
    Format(FormatSpec),
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Exact => f.write_str("exact"),
            Precision::Format(s) => write!(f, "{s}"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = lowprec_core::FormatError;

    /// `exact` or a format string.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "exact" {
            Ok(Precision::Exact)
        } else {
            s.parse().map(Precision::Format)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    /// Softmax cross-entropy over integer labels.
    CrossEntropy,
    /// Half mean squared error over real targets.
    Mse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub precision: Precision,
    pub lr: f64,
    /// Factor applied to the learning rate after every epoch.
    pub lr_decay: f64,
    /// L2 penalty coefficient on weights (not biases).
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            precision: Precision::Exact,
            lr: 0.01,
            lr_decay: 1.0,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Recipe that clears the MNIST FC baseline: SGD at 0.1 with per-epoch
    /// decay 0.9 and a small L2 term, batch 32, 20 epochs.
    pub fn baseline() -> Self {
        TrainConfig {
            lr: 0.1,
            lr_decay: 0.9,
            weight_decay: 5e-4,
            epochs: 20,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        // zero is allowed: a frozen run is a useful degenerate case
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(NnError::Config(format!("lr decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NnError::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Supervision for one step.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Labels(&'a [usize]),
    Values(&'a Tensor),
}

/// Parameter gradients of one layer; both empty for parameterless layers.
/// Batch norm stores `γ` in `weight` and `β` in `bias`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

enum Cache {
    Input(Tensor),
    MaxPool { arg: Vec<usize>, in_shape: Vec<usize> },
    AvgPool { in_shape: Vec<usize> },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Output(Tensor),
    Flatten { in_shape: Vec<usize> },
}

fn round(r: Option<&FastRounder>, xs: &mut [f64]) {
    if let Some(r) = r {
        r.round_slice(xs);
    }
}

/// Layers actually trained through; a trailing softmax is folded into the loss.
fn body(net: &Network) -> &[Layer] {
    match net.layers.last() {
        Some(Layer::Softmax) => &net.layers[..net.layers.len() - 1],
        _ => &net.layers,
    }
}

fn forward_train(layers: &[Layer], x: &Tensor, r: Option<&FastRounder>) -> Result<(Tensor, Vec<Cache>), NnError> {
    let mut cur = x.clone();
    round(r, &mut cur.data);
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (mut next, cache) = match layer {
            Layer::Dense(d) => (network::dense_forward(d, &cur)?, Cache::Input(cur)),
            Layer::Conv2d(c) => (network::conv_forward(c, &cur)?, Cache::Input(cur)),
            Layer::MaxPool(p) => {
                let (y, arg) = network::max_pool(*p, &cur)?;
                (y, Cache::MaxPool { arg, in_shape: cur.shape })
            }
            Layer::AvgPool(p) => (network::avg_pool(*p, &cur)?, Cache::AvgPool { in_shape: cur.shape }),
            Layer::BatchNorm(bn) => batchnorm_train(bn, cur)?,
            Layer::ReLU | Layer::Softmax => {
                let y = layer.forward(&cur)?;
                (y.clone(), Cache::Output(y))
            }
            Layer::Flatten => {
                let shape = cur.shape.clone();
                (layer.forward(&cur)?, Cache::Flatten { in_shape: shape })
            }
        };
        round(r, &mut next.data);
        caches.push(cache);
        cur = next;
    }
    Ok((cur, caches))
}

fn batchnorm_train(bn: &network::BatchNorm, x: Tensor) -> Result<(Tensor, Cache), NnError> {
    let (c, plane) = channel_layout(&x)?;
    if c != bn.channels() {
        return Err(NnError::Shape(format!("batch norm has {} channels, input {c}", bn.channels())));
    }
    let count = (x.batch() * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for sample in x.data.chunks(c * plane) {
        for (ch, block) in sample.chunks(plane).enumerate() {
            mean[ch] += block.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for sample in x.data.chunks(c * plane) {
        for (ch, block) in sample.chunks(plane).enumerate() {
            var[ch] += block.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut xhat = x.data;
    let shift: Vec<f64> = mean.iter().zip(&inv_std).map(|(m, s)| -m * s).collect();
    network::apply_channel_affine(&mut xhat, c, plane, &inv_std, &shift);
    let mut y = xhat.clone();
    network::apply_channel_affine(&mut y, c, plane, &bn.gamma, &bn.beta);
    Ok((
        Tensor { data: y, shape: x.shape },
        Cache::BatchNorm { xhat, inv_std, mean, var },
    ))
}

/// Backpropagate `dy` through `layers`; returns per-layer gradients and the
/// gradient with respect to the network input.
fn backward(
    layers: &[Layer],
    caches: &[Cache],
    mut dy: Tensor,
    r: Option<&FastRounder>,
) -> Result<(Vec<Grads>, Tensor), NnError> {
    let mut grads = vec![Grads::default(); layers.len()];
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let mut dx = match (layer, cache) {
            (Layer::Dense(d), Cache::Input(x)) => {
                let b = x.batch();
                let mut gw = vec![0.0; d.weight.len()];
                gemm(d.outputs, b, d.inputs, &dy.data, true, &x.data, false, 0.0, &mut gw);
                let mut gb = vec![0.0; d.outputs];
                for row in dy.data.chunks(d.outputs) {
                    gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
                }
                let mut dx = Tensor::zeros(&[b, d.inputs]);
                gemm(b, d.outputs, d.inputs, &dy.data, false, &d.weight, false, 0.0, &mut dx.data);
                grads[i] = Grads { weight: gw, bias: gb };
                dx
            }
            (Layer::Conv2d(c), Cache::Input(x)) => {
                let g = c.geometry(x)?;
                let (k, p, pl) = (c.out_channels, g.positions(), g.patch_len());
                let mut gw = vec![0.0; c.weight.len()];
                let mut gb = vec![0.0; k];
                let mut dx = Tensor::zeros(&x.shape);
                let in_len = x.row_len();
                let mut cols = vec![0.0; p * pl];
                let mut dcols = vec![0.0; p * pl];
                for (s, dys) in dy.data.chunks(k * p).enumerate() {
                    conv::im2col(&x.data[s * in_len..][..in_len], &g, &mut cols);
                    gemm(k, p, pl, dys, false, &cols, false, 1.0, &mut gw);
                    for (ch, block) in dys.chunks(p).enumerate() {
                        gb[ch] += block.iter().sum::<f64>();
                    }
                    gemm(p, k, pl, dys, true, &c.weight, false, 0.0, &mut dcols);
                    conv::col2im(&dcols, &g, &mut dx.data[s * in_len..][..in_len]);
                }
                grads[i] = Grads { weight: gw, bias: gb };
                dx
            }
            (Layer::MaxPool(_), Cache::MaxPool { arg, in_shape }) => {
                let plane_in = in_shape[2] * in_shape[3];
                let plane_out = dy.len() / (in_shape[0] * in_shape[1]);
                let mut dx = Tensor::zeros(in_shape);
                for (pi, (dxp, dyp)) in dx.data.chunks_mut(plane_in).zip(dy.data.chunks(plane_out)).enumerate() {
                    for (j, &g) in dyp.iter().enumerate() {
                        dxp[arg[pi * plane_out + j]] += g;
                    }
                }
                dx
            }
            (Layer::AvgPool(p), Cache::AvgPool { in_shape }) => {
                let (h, w) = (in_shape[2], in_shape[3]);
                let plane_out = dy.len() / (in_shape[0] * in_shape[1]);
                let mut dx = Tensor::zeros(in_shape);
                for (dxp, dyp) in dx.data.chunks_mut(h * w).zip(dy.data.chunks(plane_out)) {
                    conv::avg_pool_plane_backward(dyp, h, w, p.size, p.stride, dxp);
                }
                dx
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, .. }) => {
                let (c, plane) = channel_layout(&dy)?;
                let count = (dy.batch() * plane) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (sy, sx) in dy.data.chunks(c * plane).zip(xhat.chunks(c * plane)) {
                    for (ch, (by, bx)) in sy.chunks(plane).zip(sx.chunks(plane)).enumerate() {
                        sum_dy[ch] += by.iter().sum::<f64>();
                        sum_dy_xhat[ch] += by.iter().zip(bx).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let mut dx = dy.clone();
                for (sy, sx) in dx.data.chunks_mut(c * plane).zip(xhat.chunks(c * plane)) {
                    for (ch, (by, bx)) in sy.chunks_mut(plane).zip(sx.chunks(plane)).enumerate() {
                        let k = bn.gamma[ch] * inv_std[ch] / count;
                        for (v, xh) in by.iter_mut().zip(bx) {
                            *v = k * (count * *v - sum_dy[ch] - xh * sum_dy_xhat[ch]);
                        }
                    }
                }
                grads[i] = Grads { weight: sum_dy_xhat, bias: sum_dy };
                dx
            }
            (Layer::ReLU, Cache::Output(y)) => {
                let mut dx = dy.clone();
                dx.data.iter_mut().zip(&y.data).for_each(|(g, &v)| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                dx
            }
            (Layer::Softmax, Cache::Output(y)) => {
                let n = y.row_len();
                let mut dx = dy.clone();
                for (g, s) in dx.data.chunks_mut(n).zip(y.data.chunks(n)) {
                    let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
                    g.iter_mut().zip(s).for_each(|(gi, si)| *gi = si * (*gi - dot));
                }
                dx
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => dy.clone().reshape(in_shape)?,
            _ => unreachable!("cache matches its layer"),
        };
        round(r, &mut dx.data);
        round(r, &mut grads[i].weight);
        round(r, &mut grads[i].bias);
        dy = dx;
    }
    Ok((grads, dy))
}

/// Mean loss and its gradient with respect to `out`.
fn loss_grad(out: &Tensor, target: Target<'_>) -> Result<(f64, Tensor), NnError> {
    let b = out.batch();
    match target {
        Target::Labels(labels) => {
            if labels.len() != b || out.shape.len() != 2 || labels.iter().any(|&l| l >= out.shape[1]) {
                return Err(NnError::Shape(format!("{} labels for outputs {:?}", labels.len(), out.shape)));
            }
            let mut p = network::softmax_rows(out);
            let n = out.shape[1];
            let mut loss = 0.0;
            for (row, &l) in p.data.chunks_mut(n).zip(labels) {
                loss -= row[l].max(f64::MIN_POSITIVE).ln();
                row[l] -= 1.0;
                row.iter_mut().for_each(|v| *v /= b as f64);
            }
            Ok((loss / b as f64, p))
        }
        Target::Values(t) => {
            if t.data.len() != out.data.len() {
                return Err(NnError::Shape(format!("targets {:?} for outputs {:?}", t.shape, out.shape)));
            }
            let mut g = out.clone();
            let mut loss = 0.0;
            for (gi, ti) in g.data.iter_mut().zip(&t.data) {
                let e = *gi - ti;
                loss += 0.5 * e * e;
                *gi = e / b as f64;
            }
            Ok((loss / b as f64, g))
        }
    }
}

/// Loss, parameter gradients and input gradient in binary64, with batch
/// norm in training mode. A trailing softmax is part of the loss.
pub fn loss_and_gradients(net: &Network, x: &Tensor, target: Target<'_>) -> Result<(f64, Vec<Grads>, Tensor), NnError> {
    let layers = body(net);
    let (out, caches) = forward_train(layers, x, None)?;
    let (loss, dy) = loss_grad(&out, target)?;
    let (grads, dx) = backward(layers, &caches, dy, None)?;
    Ok((loss, grads, dx))
}

/// Training-mode loss only; the objective that [`loss_and_gradients`] differentiates.
pub fn training_loss(net: &Network, x: &Tensor, target: Target<'_>) -> Result<f64, NnError> {
    let (out, _) = forward_train(body(net), x, None)?;
    Ok(loss_grad(&out, target)?.0)
}

/// Trains a network in place, one SGD step per mini-batch.
pub struct Trainer {
    cfg: TrainConfig,
    lr: f64,
    rounder: Option<FastRounder>,
}

const BN_MOMENTUM: f64 = 0.1;

impl Trainer {
    /// Rejects invalid hyperparameters, and layers other than dense, ReLU,
    /// softmax and flatten when a format is emulated.
    pub fn new(net: &Network, cfg: TrainConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let rounder = match cfg.precision {
            Precision::Exact => None,
            Precision::Format(spec) => {
                if let Some(l) = net
                    .layers
                    .iter()
                    .find(|l| !matches!(l, Layer::Dense(_) | Layer::ReLU | Layer::Softmax | Layer::Flatten))
                {
                    return Err(NnError::UnsupportedLayer(l.kind_name()));
                }
                Some(FastRounder::new(spec))
            }
        };
        Ok(Trainer { lr: cfg.lr, cfg, rounder })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Learning rate of the next step.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decay_lr(&mut self) {
        self.lr *= self.cfg.lr_decay;
    }

    /// Round every parameter to the training format.
    pub fn prepare(&self, net: &mut Network) {
        for layer in &mut net.layers {
            if let Layer::Dense(d) = layer {
                round(self.rounder.as_ref(), &mut d.weight);
                round(self.rounder.as_ref(), &mut d.bias);
            }
        }
    }

    /// One SGD step on a batch; returns the batch loss.
    pub fn step(&self, net: &mut Network, x: &Tensor, target: Target<'_>) -> Result<f64, NnError> {
        let r = self.rounder.as_ref();
        let n = body(net).len();
        let (out, caches) = forward_train(&net.layers[..n], x, r)?;
        let (loss, mut dy) = loss_grad(&out, target)?;
        round(r, &mut dy.data);
        let (grads, _) = backward(&net.layers[..n], &caches, dy, r)?;
        let lr = self.lr;
        for ((layer, g), cache) in net.layers.iter_mut().zip(&grads).zip(&caches) {
            let (w, b) = match layer {
                Layer::Dense(d) => (&mut d.weight, &mut d.bias),
                Layer::Conv2d(c) => (&mut c.weight, &mut c.bias),
                Layer::BatchNorm(bn) => {
                    if let Cache::BatchNorm { mean, var, .. } = cache {
                        for ch in 0..bn.channels() {
                            bn.mean[ch] += BN_MOMENTUM * (mean[ch] - bn.mean[ch]);
                            bn.var[ch] += BN_MOMENTUM * (var[ch] - bn.var[ch]);
                        }
                    }
                    (&mut bn.gamma, &mut bn.beta)
                }
                _ => continue,
            };
            let wd = self.cfg.weight_decay;
            w.iter_mut().zip(&g.weight).for_each(|(p, d)| *p -= lr * (d + wd * *p));
            b.iter_mut().zip(&g.bias).for_each(|(p, d)| *p -= lr * d);
            round(r, w);
            round(r, b);
        }
        Ok(loss)
    }

    /// One pass over `data` in a seeded shuffled order.
    pub fn epoch(&self, net: &mut Network, data: &DatasetSplit, rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let x = data.batch(chunk);
            let labels = data.batch_labels(chunk);
            total += self.step(net, &x, Target::Labels(&labels))? * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }
}

/// Inference under the training emulation: the input and every layer output
/// rounded to the format, as in a training forward pass.
pub struct Emulated<'a> {
    net: &'a Network,
    rounder: Option<FastRounder>,
}

impl<'a> Emulated<'a> {
    pub fn new(net: &'a Network, precision: Precision) -> Self {
        let rounder = match precision {
            Precision::Exact => None,
            Precision::Format(spec) => Some(FastRounder::new(spec)),
        };
        Emulated { net, rounder }
    }
}

impl Forward for Emulated<'_> {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let r = self.rounder.as_ref();
        let mut cur = x.clone();
        round(r, &mut cur.data);
        for layer in &self.net.layers {
            cur = layer.forward(&cur)?;
            round(r, &mut cur.data);
        }
        Ok(cur)
    }
}

/// Train `net` (already initialised) for `cfg.epochs` epochs.
/// Identical inputs and seed give bitwise-identical weights.
pub fn train(net: Network, data: &DatasetSplit, cfg: &TrainConfig) -> Result<Network, NnError> {
    Ok(train_with_report(net, data, cfg, |_, _| {})?.0)
}

/// [`train`], calling `on_epoch(epoch, mean_loss)` after every epoch.
pub fn train_with_report(
    mut net: Network,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Network, TrainReport), NnError> {
    let mut trainer = Trainer::new(&net, cfg.clone())?;
    trainer.prepare(&mut net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut report = TrainReport::default();
    for e in 0..cfg.epochs {
        let loss = trainer.epoch(&mut net, data, &mut rng)?;
        on_epoch(e, loss);
        report.epoch_losses.push(loss);
        trainer.decay_lr();
    }
    Ok((net, report))
}
