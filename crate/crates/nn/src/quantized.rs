//! Inference with every dense and conv layer computed as
//! `Y_j = Q(α1·A)·Q(α2·W_j) / (α1·α2) + B_j`, each dot product exact and
//! rounded once. Other layers run in binary64 on the descaled values.

use lowprec_core::emac::{Coeffs, DotEngine};
use lowprec_core::{FormatSpec, LayerStats, QuantScheme};

use crate::conv::{self, ConvGeom};
use crate::data::DatasetSplit;
use crate::network::{Conv2d, Layer, Network};
use crate::tensor::Tensor;
use crate::NnError;

/// Anything that maps a batch of inputs to a batch of outputs.
pub trait Forward {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError>;
}

impl Forward for Network {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.forward_exact(x)
    }
}

/// `max |A|` entering each MAC layer, in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub max_abs: Vec<f64>,
}

/// Calibration samples used when none are specified.
pub const CALIBRATION_SAMPLES: usize = 1000;

impl Calibration {
    /// Exact forward over the first `samples` items of `data`.
    pub fn from_data(net: &Network, data: &DatasetSplit, samples: usize) -> Result<Self, NnError> {
        let n = samples.min(data.len());
        let mut max_abs = vec![0.0f64; net.mac_layers().len()];
        for start in (0..n).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
            let mut cur = data.batch(&idx);
            let mut m = 0;
            for layer in &net.layers {
                if layer.is_mac() {
                    max_abs[m] = max_abs[m].max(cur.max_abs());
                    m += 1;
                }
                cur = layer.forward(&cur)?;
            }
        }
        Ok(Calibration { max_abs })
    }
}

#[derive(Clone, Debug)]
enum MacShape {
    Dense { inputs: usize, outputs: usize },
    Conv(Conv2d),
}

#[derive(Clone, Debug)]
struct MacLayer {
    shape: MacShape,
    engine: DotEngine,
    weights: Coeffs,
    bias: Vec<f64>,
    alpha1: f64,
    alpha2: f64,
}

#[derive(Clone, Debug)]
enum QLayer {
    Mac(Box<MacLayer>),
    Plain(Layer),
}

/// A network prepared for low-precision inference in one format and scheme.
#[derive(Clone, Debug)]
pub struct QuantizedNet {
    mode: Option<(FormatSpec, QuantScheme)>,
    layers: Vec<QLayer>,
}

impl QuantizedNet {
    /// Fold batch norms, then quantize each MAC layer's weights with the
    /// layer's `α2` and size its engine for `N_op` = fan-in.
    pub fn new(net: &Network, spec: FormatSpec, scheme: QuantScheme, calib: &Calibration) -> Result<Self, NnError> {
        let net = net.fold_batchnorm()?;
        let macs = net.mac_layers().len();
        if calib.max_abs.len() != macs {
            return Err(NnError::MissingCalibration { needed: macs, got: calib.max_abs.len() });
        }
        let mut layers = Vec::with_capacity(net.layers.len());
        let mut m = 0;
        for layer in net.layers {
            let (shape, w, b) = match layer {
                Layer::Dense(d) => (
                    MacShape::Dense { inputs: d.inputs, outputs: d.outputs },
                    d.weight,
                    d.bias,
                ),
                Layer::Conv2d(mut c) => {
                    let (w, b) = (std::mem::take(&mut c.weight), std::mem::take(&mut c.bias));
                    (MacShape::Conv(c), w, b)
                }
                other => {
                    layers.push(QLayer::Plain(other));
                    continue;
                }
            };
            let stats = LayerStats::from_weights(&w, calib.max_abs[m]);
            m += 1;
            let (alpha1, alpha2) = scheme.scales(&stats)?;
            let n_op = match &shape {
                MacShape::Dense { inputs, .. } => *inputs,
                MacShape::Conv(c) => c.patch_len(),
            };
            let engine = DotEngine::new(spec, n_op)?;
            let weights = engine.quantize(&w, alpha2)?;
            layers.push(QLayer::Mac(Box::new(MacLayer {
                shape,
                engine,
                weights,
                bias: b,
                alpha1,
                alpha2,
            })));
        }
        Ok(QuantizedNet { mode: Some((spec, scheme)), layers })
    }

    /// Quantization disabled: forwards exactly like `net`.
    pub fn passthrough(net: &Network) -> Self {
        QuantizedNet {
            mode: None,
            layers: net.layers.iter().cloned().map(QLayer::Plain).collect(),
        }
    }

    pub fn mode(&self) -> Option<(FormatSpec, QuantScheme)> {
        self.mode
    }

    /// `(α1, α2)` of every MAC layer.
    pub fn scales(&self) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                QLayer::Mac(m) => Some((m.alpha1, m.alpha2)),
                QLayer::Plain(_) => None,
            })
            .collect()
    }

    /// Quantize-and-dot through the layers. With `sequential`, the dot
    /// products run on the calling thread only.
    fn run(&self, x: &Tensor, sequential: bool) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                QLayer::Plain(l) => l.forward(&cur)?,
                QLayer::Mac(m) => m.forward(&cur, sequential)?,
            };
        }
        Ok(cur)
    }

    pub fn forward_sequential(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.run(x, true)
    }
}

impl Forward for QuantizedNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.run(x, false)
    }
}

impl MacLayer {
    fn matmul(&self, a: &Coeffs, k: usize, sequential: bool) -> Result<Vec<u32>, NnError> {
        Ok(if sequential {
            self.engine.matmul_sequential(&self.weights, a, k)?
        } else {
            self.engine.matmul(&self.weights, a, k)?
        })
    }

    fn descale(&self, bits: u32) -> f64 {
        self.engine.value(bits) / (self.alpha1 * self.alpha2)
    }

    fn forward(&self, x: &Tensor, sequential: bool) -> Result<Tensor, NnError> {
        match &self.shape {
            MacShape::Dense { inputs, outputs } => {
                if x.shape.len() != 2 || x.shape[1] != *inputs {
                    return Err(NnError::Shape(format!("dense expects [B, {inputs}], got {:?}", x.shape)));
                }
                let a = self.engine.quantize(&x.data, self.alpha1)?;
                let bits = self.matmul(&a, *inputs, sequential)?;
                let data = bits
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| self.descale(b) + self.bias[i % outputs])
                    .collect();
                Tensor::new(data, vec![x.batch(), *outputs])
            }
            MacShape::Conv(c) => {
                let g: ConvGeom = c.geometry(x)?;
                let (k, p, pl) = (c.out_channels, g.positions(), g.patch_len());
                let in_len = x.row_len();
                let mut y = Tensor::zeros(&[x.batch(), k, g.out_h(), g.out_w()]);
                let mut cols = vec![0.0; p * pl];
                for (s, out) in y.data.chunks_mut(k * p).enumerate() {
                    conv::im2col(&x.data[s * in_len..][..in_len], &g, &mut cols);
                    let a = self.engine.quantize(&cols, self.alpha1)?;
                    // bits[pos][ch]
                    let bits = self.matmul(&a, pl, sequential)?;
                    for (pos, row) in bits.chunks(k).enumerate() {
                        for (ch, &b) in row.iter().enumerate() {
                            out[ch * p + pos] = self.descale(b) + self.bias[ch];
                        }
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Batch size used by evaluation and calibration.
pub const EVAL_BATCH: usize = 500;

/// Top-1 accuracy in percent over `data`; ties resolve to the lowest class.
pub fn evaluate<M: Forward + ?Sized>(model: &M, data: &DatasetSplit) -> Result<f64, NnError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let y = model.forward(&data.batch(&idx))?;
        correct += y
            .argmax_rows()
            .iter()
            .zip(data.batch_labels(&idx))
            .filter(|(p, l)| **p == *l)
            .count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}
