use crate::numformats::{Dyadic, FastRounder, FormatError, FormatSpec};
use crate::par::*;

use super::quire::{layout, Product, Quire};
use super::{check_lengths, EmacError};

/// Which integer width carries the exact accumulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DotPath {
    /// `i32` coefficients, `i64` accumulator (quire width <= 64).
    Narrow,
    /// `i64` coefficients, `i128` accumulator (quire width <= 128).
    Medium,
    /// Limb-based [`Quire`].
    Wide,
}

/// Operands prepared for a [`DotEngine`]: every value as an integer multiple
/// of the format's least significant step, or raw patterns for the wide path.
#[derive(Clone, Debug, PartialEq)]
pub enum Coeffs {
    Narrow(Vec<i32>),
    Medium(Vec<i64>),
    Wide(Vec<u32>),
}

#[derive(Clone, Copy, Debug)]
pub enum CoeffSlice<'a> {
    Narrow(&'a [i32]),
    Medium(&'a [i64]),
    Wide(&'a [u32]),
}

impl Coeffs {
    pub fn len(&self) -> usize {
        match self {
            Coeffs::Narrow(v) => v.len(),
            Coeffs::Medium(v) => v.len(),
            Coeffs::Wide(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, start: usize, end: usize) -> CoeffSlice<'_> {
        match self {
            Coeffs::Narrow(v) => CoeffSlice::Narrow(&v[start..end]),
            Coeffs::Medium(v) => CoeffSlice::Medium(&v[start..end]),
            Coeffs::Wide(v) => CoeffSlice::Wide(&v[start..end]),
        }
    }

    pub fn as_slice(&self) -> CoeffSlice<'_> {
        self.slice(0, self.len())
    }
}

/// Exact dot products for one format and quire capacity, using the
/// narrowest native integers that provably hold the quire.
///
/// Results are bit-identical to [`super::exact_dot`]/[`super::posit_dot`]:
/// the accumulator is the same fixed-point register, only its storage differs.
#[derive(Clone, Debug)]
pub struct DotEngine {
    spec: FormatSpec,
    n_op: usize,
    path: DotPath,
    lsb_exp: i32,
    /// pattern -> coefficient, for formats of at most 16 bits
    coeff_lut: Option<Vec<i64>>,
    rounder: FastRounder,
}

const LUT_MAX_BITS: u32 = 16;

impl DotEngine {
    pub fn new(spec: FormatSpec, n_op: usize) -> Result<Self, EmacError> {
        if n_op == 0 {
            return Err(EmacError::ZeroCapacity);
        }
        let width = layout(spec, n_op).width;
        let lsb_exp = spec.lsb_exp();
        // largest coefficient magnitude, exact in f64 for every supported format
        let max_coeff = spec.max_value() * 2f64.powi(-lsb_exp);
        let max_neg = match spec {
            FormatSpec::Fixed(f) => -f.min_value() * 2f64.powi(-lsb_exp),
            _ => max_coeff,
        };
        let path = if width <= 64 && max_coeff < 2f64.powi(31) && max_neg <= 2f64.powi(31) {
            DotPath::Narrow
        } else if width <= 128 && max_coeff < 2f64.powi(63) && max_neg <= 2f64.powi(63) {
            DotPath::Medium
        } else {
            DotPath::Wide
        };
        let mut engine = DotEngine {
            spec,
            n_op,
            path,
            lsb_exp,
            coeff_lut: None,
            rounder: FastRounder::new(spec),
        };
        if path != DotPath::Wide && spec.bits() <= LUT_MAX_BITS {
            let lut = (0..(1u32 << spec.bits()))
                .map(|b| engine.coeff_of(b).unwrap_or(0))
                .collect();
            engine.coeff_lut = Some(lut);
        }
        Ok(engine)
    }

    pub fn spec(&self) -> FormatSpec {
        self.spec
    }

    pub fn n_op(&self) -> usize {
        self.n_op
    }

    pub fn path(&self) -> DotPath {
        self.path
    }

    fn coeff_of(&self, bits: u32) -> Option<i64> {
        let (neg, m, q) = self.spec.decompose(bits)?;
        let c = (m as i64) << (q - self.lsb_exp);
        Some(if neg { -c } else { c })
    }

    /// Convert patterns into coefficients for this engine's path.
    pub fn coeffs(&self, bits: &[u32]) -> Result<Coeffs, EmacError> {
        for (index, &b) in bits.iter().enumerate() {
            if !self.spec.is_real(b) {
                return Err(match self.spec {
                    FormatSpec::Posit(_) => EmacError::NaRInput { index },
                    _ => EmacError::NonReal { index },
                });
            }
        }
        let coeff = |b: u32| match &self.coeff_lut {
            Some(lut) => lut[b as usize],
            None => self.coeff_of(b).expect("checked real"),
        };
        Ok(match self.path {
            DotPath::Narrow => Coeffs::Narrow(bits.iter().map(|&b| coeff(b) as i32).collect()),
            DotPath::Medium => Coeffs::Medium(bits.iter().map(|&b| coeff(b)).collect()),
            DotPath::Wide => Coeffs::Wide(bits.to_vec()),
        })
    }

    /// Round each `scale · x` to the format and return the coefficients.
    pub fn quantize(&self, xs: &[f64], scale: f64) -> Result<Coeffs, EmacError> {
        if let Some(index) = xs.iter().position(|&x| !(scale * x).is_finite()) {
            return Err(EmacError::NonReal { index });
        }
        let unit = 2f64.powi(-self.lsb_exp);
        let coeff = |x: f64| self.rounder.round(scale * x) * unit;
        Ok(match self.path {
            DotPath::Narrow => Coeffs::Narrow(xs.iter().map(|&x| coeff(x) as i32).collect()),
            DotPath::Medium => Coeffs::Medium(xs.iter().map(|&x| coeff(x) as i64).collect()),
            DotPath::Wide => Coeffs::Wide(
                xs.iter()
                    .map(|&x| self.spec.round(scale * x))
                    .collect::<Result<Vec<u32>, FormatError>>()?,
            ),
        })
    }

    /// Value of a result pattern.
    pub fn value(&self, bits: u32) -> f64 {
        self.spec.value(bits).expect("dot results are real")
    }

    /// Exact dot product rounded once to the format.
    pub fn dot(&self, w: CoeffSlice<'_>, a: CoeffSlice<'_>) -> Result<u32, EmacError> {
        match (w, a) {
            (CoeffSlice::Narrow(w), CoeffSlice::Narrow(a)) => {
                check_lengths(w.len(), a.len(), self.n_op)?;
                Ok(self.round_sum(dot_narrow(w, a) as i128))
            }
            (CoeffSlice::Medium(w), CoeffSlice::Medium(a)) => {
                check_lengths(w.len(), a.len(), self.n_op)?;
                Ok(self.round_sum(dot_medium(w, a)))
            }
            (CoeffSlice::Wide(w), CoeffSlice::Wide(a)) => {
                check_lengths(w.len(), a.len(), self.n_op)?;
                let mut q = Quire::new(self.spec, self.n_op)?;
                for (i, (&x, &y)) in w.iter().zip(a).enumerate() {
                    let p = Product::of(self.spec, x, y).ok_or(EmacError::NonReal { index: i })?;
                    q.accumulate(p)?;
                }
                Ok(q.to_format())
            }
            _ => Err(EmacError::Mismatch),
        }
    }

    fn round_sum(&self, sum: i128) -> u32 {
        self.spec
            .round_dyadic(&Dyadic::from_i128(sum, 2 * self.lsb_exp))
    }

    /// `out[r][j] = dot(w_row_j, a_row_r)` for row-major `a` (rows × k) and
    /// `w` (cols × k). Rows of `a` are processed in parallel.
    pub fn matmul(&self, w: &Coeffs, a: &Coeffs, k: usize) -> Result<Vec<u32>, EmacError> {
        let (rows, cols) = self.matmul_dims(w, a, k)?;
        let mut out = vec![0u32; rows * cols];
        if cols == 0 {
            return Ok(out);
        }
        out.par_chunks_mut(cols)
            .enumerate()
            .try_for_each(|(r, row)| self.fill_row(w, a, k, r, row))?;
        Ok(out)
    }

    /// [`Self::matmul`] on the calling thread only.
    pub fn matmul_sequential(&self, w: &Coeffs, a: &Coeffs, k: usize) -> Result<Vec<u32>, EmacError> {
        let (rows, cols) = self.matmul_dims(w, a, k)?;
        let mut out = vec![0u32; rows * cols];
        if cols == 0 {
            return Ok(out);
        }
        for (r, row) in out.chunks_mut(cols).enumerate() {
            self.fill_row(w, a, k, r, row)?;
        }
        Ok(out)
    }

    fn matmul_dims(&self, w: &Coeffs, a: &Coeffs, k: usize) -> Result<(usize, usize), EmacError> {
        if k == 0 || !w.len().is_multiple_of(k) || !a.len().is_multiple_of(k) {
            return Err(EmacError::LengthMismatch {
                weights: w.len(),
                activations: a.len(),
            });
        }
        if k > self.n_op {
            return Err(EmacError::TooLong { len: k, n_op: self.n_op });
        }
        Ok((a.len() / k, w.len() / k))
    }

    fn fill_row(&self, w: &Coeffs, a: &Coeffs, k: usize, r: usize, row: &mut [u32]) -> Result<(), EmacError> {
        let a_row = a.slice(r * k, (r + 1) * k);
        for (j, out) in row.iter_mut().enumerate() {
            *out = self.dot(w.slice(j * k, (j + 1) * k), a_row)?;
        }
        Ok(())
    }
}

#[inline]
fn dot_narrow(w: &[i32], a: &[i32]) -> i64 {
    // Eight independent lanes keep the loop vectorisable.
    let mut lanes = [0i64; 8];
    let wc = w.chunks_exact(8);
    let ac = a.chunks_exact(8);
    let (wr, ar) = (wc.remainder(), ac.remainder());
    for (x, y) in wc.zip(ac) {
        for l in 0..8 {
            lanes[l] += x[l] as i64 * y[l] as i64;
        }
    }
    let tail: i64 = wr.iter().zip(ar).map(|(&x, &y)| x as i64 * y as i64).sum();
    lanes.iter().sum::<i64>() + tail
}

#[inline]
fn dot_medium(w: &[i64], a: &[i64]) -> i128 {
    w.iter().zip(a).map(|(&x, &y)| x as i128 * y as i128).sum()
}
