use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{self, ConvGeom};
use crate::gemm::gemm;
use crate::tensor::Tensor;
use crate::NnError;
use lowprec_core::par::*;

/// Fully connected layer; `weight` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// 2-D convolution; `weight` is `K × C × R × S`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool {
    pub size: usize,
    pub stride: usize,
}

/// Per-channel (NCHW input) or per-feature (2-D input) normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    MaxPool(Pool),
    AvgPool(Pool),
    BatchNorm(BatchNorm),
    ReLU,
    Softmax,
    Flatten,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub(crate) fn geometry(&self, x: &Tensor) -> Result<ConvGeom, NnError> {
        if x.shape.len() != 4 || x.shape[1] != self.in_channels {
            return Err(NnError::Shape(format!(
                "conv expects [B, {}, H, W], got {:?}",
                self.in_channels, x.shape
            )));
        }
        conv::geometry(
            self.in_channels,
            x.shape[2],
            x.shape[3],
            self.kernel_h,
            self.kernel_w,
            self.stride,
            self.pad,
        )
        .ok_or_else(|| NnError::Shape(format!("kernel does not fit input {:?}", x.shape)))
    }
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `(scale, shift)` per channel so that `y = scale·x + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(&self.var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

/// Channel count and plane size that a per-channel op sees in `x`.
pub(crate) fn channel_layout(x: &Tensor) -> Result<(usize, usize), NnError> {
    match x.shape.len() {
        2 => Ok((x.shape[1], 1)),
        4 => Ok((x.shape[1], x.shape[2] * x.shape[3])),
        _ => Err(NnError::Shape(format!("expected [B, C] or [B, C, H, W], got {:?}", x.shape))),
    }
}

pub(crate) fn pool_shape(p: Pool, x: &Tensor) -> Result<(usize, usize), NnError> {
    if x.shape.len() != 4 {
        return Err(NnError::Shape(format!("pooling expects NCHW, got {:?}", x.shape)));
    }
    match (
        conv::pool_out(x.shape[2], p.size, p.stride),
        conv::pool_out(x.shape[3], p.size, p.stride),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(NnError::Shape(format!("pool window does not fit {:?}", x.shape))),
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = x.row_len();
    if n == 0 {
        return out;
    }
    for row in out.data.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::ReLU => "relu",
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    /// Whether the layer is a multiply-accumulate layer run on EMACs.
    pub fn is_mac(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    /// Operands per output dot product: `in` for dense, `C·R·S` for conv.
    pub fn n_op(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.inputs),
            Layer::Conv2d(c) => Some(c.patch_len()),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::BatchNorm(b) => 2 * b.channels(),
            _ => 0,
        }
    }

    /// Binary64 inference forward (batch norm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Dense(d) => dense_forward(d, x),
            Layer::Conv2d(c) => conv_forward(c, x),
            Layer::MaxPool(p) => Ok(max_pool(*p, x)?.0),
            Layer::AvgPool(p) => avg_pool(*p, x),
            Layer::BatchNorm(bn) => {
                let (c, plane) = channel_layout(x)?;
                if c != bn.channels() {
                    return Err(NnError::Shape(format!("batch norm has {} channels, input {c}", bn.channels())));
                }
                let (scale, shift) = bn.affine();
                let mut y = x.clone();
                apply_channel_affine(&mut y.data, c, plane, &scale, &shift);
                Ok(y)
            }
            Layer::ReLU => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(y)
            }
            Layer::Softmax => Ok(softmax_rows(x)),
            Layer::Flatten => {
                let b = x.batch();
                let r = x.row_len();
                x.clone().reshape(&[b, r])
            }
        }
    }
}

pub(crate) fn apply_channel_affine(data: &mut [f64], c: usize, plane: usize, scale: &[f64], shift: &[f64]) {
    for sample in data.chunks_mut(c * plane) {
        for (ch, block) in sample.chunks_mut(plane).enumerate() {
            for v in block {
                *v = *v * scale[ch] + shift[ch];
            }
        }
    }
}

pub(crate) fn dense_forward(d: &Dense, x: &Tensor) -> Result<Tensor, NnError> {
    if x.shape.len() != 2 || x.shape[1] != d.inputs {
        return Err(NnError::Shape(format!("dense expects [B, {}], got {:?}", d.inputs, x.shape)));
    }
    let b = x.batch();
    let mut y = Tensor::zeros(&[b, d.outputs]);
    for row in y.data.chunks_mut(d.outputs) {
        row.copy_from_slice(&d.bias);
    }
    gemm(b, d.inputs, d.outputs, &x.data, false, &d.weight, true, 1.0, &mut y.data);
    Ok(y)
}

pub(crate) fn conv_forward(c: &Conv2d, x: &Tensor) -> Result<Tensor, NnError> {
    let g = c.geometry(x)?;
    let (b, k, p, pl) = (x.batch(), c.out_channels, g.positions(), g.patch_len());
    let in_len = x.row_len();
    let mut y = Tensor::zeros(&[b, k, g.out_h(), g.out_w()]);
    y.data.par_chunks_mut(k * p).enumerate().for_each(|(i, out)| {
        let mut cols = vec![0.0; p * pl];
        conv::im2col(&x.data[i * in_len..][..in_len], &g, &mut cols);
        for (ch, block) in out.chunks_mut(p).enumerate() {
            block.fill(c.bias[ch]);
        }
        gemm(k, pl, p, &c.weight, false, &cols, true, 1.0, out);
    });
    Ok(y)
}

/// Max pooling plus the flat argmax index of every output.
pub(crate) fn max_pool(p: Pool, x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let (oh, ow) = pool_shape(p, x)?;
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    let mut arg = vec![0usize; y.len()];
    for ((xi, yi), ai) in x
        .data
        .chunks(h * w)
        .zip(y.data.chunks_mut(oh * ow))
        .zip(arg.chunks_mut(oh * ow))
    {
        conv::max_pool_plane(xi, h, w, p.size, p.stride, yi, ai);
    }
    Ok((y, arg))
}

pub(crate) fn avg_pool(p: Pool, x: &Tensor) -> Result<Tensor, NnError> {
    let (oh, ow) = pool_shape(p, x)?;
    let (b, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let mut y = Tensor::zeros(&[b, c, oh, ow]);
    for (xi, yi) in x.data.chunks(h * w).zip(y.data.chunks_mut(oh * ow)) {
        conv::avg_pool_plane(xi, h, w, p.size, p.stride, yi);
    }
    Ok(y)
}

/// A feedforward stack of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Named reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// 784–256–256–256–10 with ReLU.
    Fc,
    MnistConv,
    FashionConv,
    CifarConv,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Fc, Arch::MnistConv, Arch::FashionConv, Arch::CifarConv];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Fc => "fc",
            Arch::MnistConv => "mnist-conv",
            Arch::FashionConv => "fashion-conv",
            Arch::CifarConv => "cifar-conv",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Per-sample input shape.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Arch::CifarConv => [3, 32, 32],
            _ => [1, 28, 28],
        }
    }

    /// Layers with zero parameters; see [`Network::init`].
    pub fn build(self) -> Network {
        use Layer::*;
        let pool = || MaxPool(Pool { size: 2, stride: 2 });
        let layers = match self {
            Arch::Fc => vec![
                Flatten,
                Dense(self::Dense::zeros(784, 256)),
                ReLU,
                Dense(self::Dense::zeros(256, 256)),
                ReLU,
                Dense(self::Dense::zeros(256, 256)),
                ReLU,
                Dense(self::Dense::zeros(256, 10)),
                Softmax,
            ],
            Arch::MnistConv => vec![
                Conv2d(self::Conv2d::zeros(1, 32, 5, 1, 2)),
                ReLU,
                Conv2d(self::Conv2d::zeros(32, 64, 5, 1, 2)),
                ReLU,
                pool(),
                Flatten,
                Dense(self::Dense::zeros(64 * 14 * 14, 108)),
                ReLU,
                Dense(self::Dense::zeros(108, 10)),
                Softmax,
            ],
            Arch::FashionConv => vec![
                Conv2d(self::Conv2d::zeros(1, 32, 3, 1, 1)),
                BatchNorm(self::BatchNorm::identity(32)),
                ReLU,
                pool(),
                Conv2d(self::Conv2d::zeros(32, 64, 3, 1, 1)),
                ReLU,
                pool(),
                Flatten,
                Dense(self::Dense::zeros(64 * 7 * 7, 512)),
                ReLU,
                Dense(self::Dense::zeros(512, 512)),
                ReLU,
                Dense(self::Dense::zeros(512, 10)),
                Softmax,
            ],
            Arch::CifarConv => vec![
                Conv2d(self::Conv2d::zeros(3, 32, 3, 1, 1)),
                ReLU,
                Conv2d(self::Conv2d::zeros(32, 32, 3, 1, 1)),
                ReLU,
                pool(),
                Conv2d(self::Conv2d::zeros(32, 64, 3, 1, 1)),
                ReLU,
                Conv2d(self::Conv2d::zeros(64, 64, 3, 1, 1)),
                ReLU,
                pool(),
                Conv2d(self::Conv2d::zeros(64, 128, 3, 1, 1)),
                ReLU,
                Conv2d(self::Conv2d::zeros(128, 224, 3, 1, 1)),
                ReLU,
                Conv2d(self::Conv2d::zeros(224, 256, 3, 1, 1)),
                ReLU,
                pool(),
                Flatten,
                Dense(self::Dense::zeros(256 * 4 * 4, 10)),
                Softmax,
            ],
        };
        Network { layers }
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    /// He-uniform weights `U(±√(6/fan_in))`, zero biases.
    pub fn init(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let (w, b, fan_in) = match layer {
                Layer::Dense(d) => (&mut d.weight, &mut d.bias, d.inputs),
                Layer::Conv2d(c) => {
                    let f = c.patch_len();
                    (&mut c.weight, &mut c.bias, f)
                }
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
            b.fill(0.0);
        }
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Indices of the multiply-accumulate layers.
    pub fn mac_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_mac()).collect()
    }

    /// Weight tensor of every MAC layer, in order.
    pub fn mac_weights(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d.weight.as_slice()),
                Layer::Conv2d(c) => Some(c.weight.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Reference binary64 forward pass.
    pub fn forward_exact(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Replace every batch norm by an affine fold into the preceding
    /// dense or conv layer.
    pub fn fold_batchnorm(&self) -> Result<Network, NnError> {
        let mut out: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let Layer::BatchNorm(bn) = layer else {
                out.push(layer.clone());
                continue;
            };
            let (scale, shift) = bn.affine();
            let (w, b, per) = match out.last_mut() {
                Some(Layer::Dense(d)) if d.outputs == bn.channels() => (&mut d.weight, &mut d.bias, d.inputs),
                Some(Layer::Conv2d(c)) if c.out_channels == bn.channels() => {
                    let per = c.patch_len();
                    (&mut c.weight, &mut c.bias, per)
                }
                prev => {
                    return Err(NnError::Fold(format!(
                        "batch norm follows {}",
                        prev.map_or("nothing", |l| l.kind_name())
                    )))
                }
            };
            for (ch, row) in w.chunks_mut(per).enumerate() {
                row.iter_mut().for_each(|v| *v *= scale[ch]);
                b[ch] = b[ch] * scale[ch] + shift[ch];
            }
        }
        Ok(Network { layers: out })
    }
}
