//! Exact multiply-and-accumulate.
//!
//! Products are formed without rounding, summed in a [`Quire`] wide enough
//! that `N_op` of them can never overflow, and the sum is rounded once into
//! the destination format. [`posit_dot`] follows the staged posit datapath
//! (decode, multiply, accumulate, extract, round/encode); [`exact_dot`] gives
//! the same single-rounding contract for minifloat and fixed point, and
//! [`DotEngine`] is the integer fast path used by network layers.

mod engine;
mod quire;

use thiserror::Error;

use crate::numformats::{
    posit_decode, posit_encode_round, FormatError, FormatSpec, PositBits, PositClass, PositSpec,
};

pub use engine::{CoeffSlice, Coeffs, DotEngine, DotPath};
pub use quire::{quire_width, Extracted, Product, Quire, QuireWidth};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmacError {
    #[error("operand lengths differ: {weights} weights vs {activations} activations")]
    LengthMismatch { weights: usize, activations: usize },
    #[error("dot product of length {len} exceeds quire capacity N_op = {n_op}")]
    TooLong { len: usize, n_op: usize },
    #[error("NaR operand at index {index}")]
    NaRInput { index: usize },
    #[error("infinite or NaN operand at index {index}")]
    NonReal { index: usize },
    #[error("quire capacity of {capacity} products exceeded")]
    CapacityExceeded { capacity: usize },
    #[error("quire capacity must be at least 1")]
    ZeroCapacity,
    #[error("quire overflowed its register width")]
    QuireOverflow,
    #[error("product has bits below the quire's least significant bit")]
    BelowQuireResolution,
    #[error("operands or quires use different formats")]
    Mismatch,
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// A decoded posit operand with its fraction left-aligned to the widest
/// possible fraction field.
#[derive(Clone, Copy, Debug)]
struct PositOperand {
    neg: bool,
    scale_factor: i32,
    frac: u64,
}

fn decode_operand(spec: PositSpec, bits: u32, index: usize) -> Result<Option<PositOperand>, EmacError> {
    let d = posit_decode(PositBits { bits, spec });
    match d.class {
        PositClass::NaR => Err(EmacError::NaRInput { index }),
        PositClass::Zero => Ok(None),
        PositClass::Normal => Ok(Some(PositOperand {
            neg: d.sign < 0,
            scale_factor: d.scale_factor,
            frac: d.frac << (spec.max_frac_bits() - d.fs),
        })),
    }
}

/// Multiplication stage output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PositProduct {
    sign: bool,
    /// `1.frac_w × 1.frac_a` with `2·F` fraction bits, `F` the widest fraction field.
    frac_mult: u64,
    /// Set when the product significand is in `[2, 4)`.
    ovf: bool,
    sf_mult: i32,
}

fn multiply(spec: PositSpec, w: PositOperand, a: PositOperand) -> PositProduct {
    let f = spec.max_frac_bits();
    let sig_w = (1u64 << f) | w.frac;
    let sig_a = (1u64 << f) | a.frac;
    let frac_mult = sig_w * sig_a;
    let ovf = frac_mult >> (2 * f + 1) & 1 == 1;
    PositProduct {
        sign: w.neg ^ a.neg,
        frac_mult,
        ovf,
        sf_mult: w.scale_factor + a.scale_factor + ovf as i32,
    }
}

impl PositProduct {
    /// Fixed-point record for the quire. The overflow normalisation is carried
    /// in the scale factor so that no product bit is shifted out.
    fn to_quire_product(self, spec: PositSpec) -> Product {
        let f = spec.max_frac_bits() as i32;
        Product {
            neg: self.sign,
            sig: self.frac_mult,
            lsb_exp: self.sf_mult - self.ovf as i32 - 2 * f,
        }
    }
}

fn check_lengths(w: usize, a: usize, n_op: usize) -> Result<(), EmacError> {
    if w != a {
        return Err(EmacError::LengthMismatch {
            weights: w,
            activations: a,
        });
    }
    if w > n_op {
        return Err(EmacError::TooLong { len: w, n_op });
    }
    Ok(())
}

/// Exact posit dot product rounded once.
///
/// `n_op` sizes the quire; inputs longer than that are rejected, as are NaR
/// operands. An exactly zero sum encodes as the zero pattern.
pub fn posit_dot(
    weights: &[PositBits],
    activations: &[PositBits],
    n_op: usize,
) -> Result<PositBits, EmacError> {
    check_lengths(weights.len(), activations.len(), n_op)?;
    let spec = match weights.first().or(activations.first()) {
        Some(p) => p.spec,
        None => {
            return Err(EmacError::Format(FormatError::InvalidSpec(
                "empty posit dot product has no format".into(),
            )))
        }
    };
    let mut quire = Quire::new(FormatSpec::Posit(spec), n_op)?;
    for (i, (w, a)) in weights.iter().zip(activations).enumerate() {
        if w.spec != spec || a.spec != spec {
            return Err(EmacError::Mismatch);
        }
        let w = decode_operand(spec, w.bits, i)?;
        let a = decode_operand(spec, a.bits, i)?;
        let product = match (w, a) {
            (Some(w), Some(a)) => multiply(spec, w, a).to_quire_product(spec),
            _ => Product::ZERO,
        };
        quire.accumulate(product)?;
    }
    Ok(round_posit_quire(spec, &quire))
}

/// Fraction and scale-factor extraction followed by rounding and encoding.
///
/// The slice below the leading one is `2·(n−2−es)` bits, widened to
/// `2^es + 1` where truncated exponent bits put the rounding midpoint
/// between two powers of two further down.
pub(crate) fn round_posit_quire(spec: PositSpec, quire: &Quire) -> PositBits {
    let width = (2 * (spec.n() - 2 - spec.es())).max((1 << spec.es()) + 1);
    match quire.extract(width) {
        None => PositBits::zero(spec),
        Some(x) => posit_encode_round(spec, x.neg, x.scale_factor, x.frac, x.width, x.sticky),
    }
}

/// Exact dot product of two pattern vectors in any format, rounded once.
pub fn exact_dot(spec: FormatSpec, weights: &[u32], activations: &[u32], n_op: usize) -> Result<u32, EmacError> {
    check_lengths(weights.len(), activations.len(), n_op)?;
    let mut quire = Quire::new(spec, n_op)?;
    for (i, (&w, &a)) in weights.iter().zip(activations).enumerate() {
        let p = Product::of(spec, w, a).ok_or(match spec {
            FormatSpec::Posit(_) => EmacError::NaRInput { index: i },
            _ => EmacError::NonReal { index: i },
        })?;
        quire.accumulate(p)?;
    }
    Ok(quire.to_format())
}

/// Dispatch to [`posit_dot`] for posits and [`exact_dot`] otherwise.
pub fn dot(spec: FormatSpec, weights: &[u32], activations: &[u32], n_op: usize) -> Result<u32, EmacError> {
    match spec {
        FormatSpec::Posit(p) => {
            check_lengths(weights.len(), activations.len(), n_op)?;
            if weights.is_empty() {
                return Ok(0);
            }
            let w: Vec<PositBits> = weights.iter().map(|&b| PositBits::new(b, p)).collect::<Result<_, _>>()?;
            let a: Vec<PositBits> = activations.iter().map(|&b| PositBits::new(b, p)).collect::<Result<_, _>>()?;
            Ok(posit_dot(&w, &a, n_op)?.bits)
        }
        _ => exact_dot(spec, weights, activations, n_op),
    }
}
