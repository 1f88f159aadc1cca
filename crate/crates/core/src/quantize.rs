//! Rounding and linear quantization of real tensors onto a format.
//!
//! Rounding quantization maps each value straight to its nearest
//! representable neighbour (clipping at the range ends). Linear quantization
//! first scales activations by `α1 = β / max|A|` and weights by
//! `α2 = 2β / (max W − min W)`; the shift variant restricts both scales to
//! powers of two so that descaling is an exponent adjustment.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numformats::{FormatError, FormatSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("beta must be one of 1, 2, 4, 8 (got {0})")]
    InvalidBeta(u32),
    #[error("unknown quantization scheme {0:?}; expected round, linear-mult or linear-shift")]
    UnknownScheme(String),
    #[error("shape {shape:?} does not hold {len} elements")]
    Shape { shape: Vec<usize>, len: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Range target of linear quantization, one of 1, 2, 4, 8.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Beta(u32);

impl Beta {
    pub const ALL: [Beta; 4] = [Beta(1), Beta(2), Beta(4), Beta(8)];

    pub fn new(b: u32) -> Result<Self, QuantError> {
        match b {
            1 | 2 | 4 | 8 => Ok(Beta(b)),
            _ => Err(QuantError::InvalidBeta(b)),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantScheme {
    Round,
    LinearMult(Beta),
    LinearShift(Beta),
}

/// Scheme names without β, as accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Round,
    LinearMult,
    LinearShift,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Round, SchemeKind::LinearMult, SchemeKind::LinearShift];

    pub fn with_beta(self, beta: Beta) -> QuantScheme {
        match self {
            SchemeKind::Round => QuantScheme::Round,
            SchemeKind::LinearMult => QuantScheme::LinearMult(beta),
            SchemeKind::LinearShift => QuantScheme::LinearShift(beta),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Round => "round",
            SchemeKind::LinearMult => "linear-mult",
            SchemeKind::LinearShift => "linear-shift",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round" => Ok(SchemeKind::Round),
            "linear-mult" => Ok(SchemeKind::LinearMult),
            "linear-shift" => Ok(SchemeKind::LinearShift),
            _ => Err(QuantError::UnknownScheme(s.to_string())),
        }
    }
}

impl QuantScheme {
    pub fn kind(self) -> SchemeKind {
        match self {
            QuantScheme::Round => SchemeKind::Round,
            QuantScheme::LinearMult(_) => SchemeKind::LinearMult,
            QuantScheme::LinearShift(_) => SchemeKind::LinearShift,
        }
    }

    pub fn beta(self) -> Option<Beta> {
        match self {
            QuantScheme::Round => None,
            QuantScheme::LinearMult(b) | QuantScheme::LinearShift(b) => Some(b),
        }
    }

    /// `(α1, α2)` for one layer; `(1, 1)` under rounding quantization.
    pub fn scales(self, stats: &LayerStats) -> Result<(f64, f64), QuantError> {
        match self {
            QuantScheme::Round => Ok((1.0, 1.0)),
            QuantScheme::LinearMult(b) => compute_scales(stats, b),
            QuantScheme::LinearShift(b) => {
                let (a1, a2) = compute_scales(stats, b)?;
                Ok((nearest_power_of_two(a1), nearest_power_of_two(a2)))
            }
        }
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.beta() {
            None => write!(f, "{}", self.kind()),
            Some(b) => write!(f, "{}(beta={})", self.kind(), b),
        }
    }
}

/// Statistics a layer's scales are computed from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerStats {
    /// `max |A|` over the calibration activations entering the layer.
    pub max_abs_activation: f64,
    pub max_weight: f64,
    pub min_weight: f64,
}

impl LayerStats {
    pub fn from_weights(weights: &[f64], max_abs_activation: f64) -> Self {
        let (min_weight, max_weight) = weights
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        LayerStats {
            max_abs_activation,
            max_weight,
            min_weight,
        }
    }
}

/// `α1 = β / max|A|`, `α2 = 2β / (max W − min W)`.
pub fn compute_scales(stats: &LayerStats, beta: Beta) -> Result<(f64, f64), QuantError> {
    let b = beta.as_f64();
    let a = stats.max_abs_activation;
    if !(a > 0.0 && a.is_finite()) {
        return Err(QuantError::DegenerateRange(format!("activation maximum {a}")));
    }
    let span = stats.max_weight - stats.min_weight;
    if !(span > 0.0 && span.is_finite()) {
        return Err(QuantError::DegenerateRange(format!(
            "weights span [{}, {}]",
            stats.min_weight, stats.max_weight
        )));
    }
    Ok((b / a, 2.0 * b / span))
}

/// `2^round(log2 α)`, with ties going to the larger exponent.
pub fn nearest_power_of_two(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha.is_finite(), "scale must be positive and finite");
    let mut e = alpha.log2().floor() as i32;
    // log2 can be off by one ulp near exact powers of two
    if 2f64.powi(e) > alpha {
        e -= 1;
    } else if 2f64.powi(e + 1) <= alpha {
        e += 1;
    }
    let m = alpha / 2f64.powi(e);
    // m in [1, 2): the log-domain midpoint is m = √2, compared exactly as m² ≥ 2
    if m * m >= 2.0 {
        2f64.powi(e + 1)
    } else {
        2f64.powi(e)
    }
}

/// `y / (α1·α2)`.
pub fn descale(y: f64, alpha1: f64, alpha2: f64) -> f64 {
    y / (alpha1 * alpha2)
}

/// Raw patterns of a scaled, quantized tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    pub bits: Vec<u32>,
    pub shape: Vec<usize>,
    pub spec: FormatSpec,
    /// Scale applied before rounding.
    pub alpha: f64,
}

impl QTensor {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Quantized values in the scaled domain.
    pub fn values(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| self.spec.value(b).expect("quantized patterns are real"))
            .collect()
    }

    /// Quantized values mapped back through `1/α`.
    pub fn dequantize(&self) -> Vec<f64> {
        self.values().into_iter().map(|v| v / self.alpha).collect()
    }
}

/// `q_i = round(α·t_i)` with the format's saturation rules.
pub fn quantize_tensor(
    data: &[f64],
    shape: &[usize],
    spec: FormatSpec,
    alpha: f64,
) -> Result<QTensor, QuantError> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(QuantError::Shape {
            shape: shape.to_vec(),
            len: data.len(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(QuantError::DegenerateRange(format!("scale {alpha}")));
    }
    let bits = data
        .iter()
        .map(|&t| spec.round(alpha * t))
        .collect::<Result<Vec<u32>, FormatError>>()?;
    Ok(QTensor {
        bits,
        shape: shape.to_vec(),
        spec,
        alpha,
    })
}

/// Quantize a weight tensor and return its quantized values in the original
/// domain, the per-element view used by distortion measurements.
pub fn quantize_weights(weights: &[f64], spec: FormatSpec, scheme: QuantScheme) -> Result<Vec<f64>, QuantError> {
    let alpha = match scheme {
        QuantScheme::Round => 1.0,
        _ => {
            // α1 is irrelevant to weights; any positive activation maximum will do.
            let stats = LayerStats::from_weights(weights, 1.0);
            scheme.scales(&stats)?.1
        }
    };
    Ok(quantize_tensor(weights, &[weights.len()], spec, alpha)?.dequantize())
}
