use std::fmt;

use super::dyadic::{rne_shr, Dyadic};
use super::FormatError;

/// Signed two's-complement fixed point: `n` bits, `nf` of them fractional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedSpec {
    n: u32,
    nf: u32,
}

impl FixedSpec {
    pub fn new(n: u32, nf: u32) -> Result<Self, FormatError> {
        if !(2..=32).contains(&n) || nf > n - 1 {
            return Err(FormatError::InvalidSpec(format!(
                "fixed(n={n}, nf={nf}) needs 2 <= n <= 32, nf <= n - 1"
            )));
        }
        Ok(FixedSpec { n, nf })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nf(&self) -> u32 {
        self.nf
    }

    fn mask(&self) -> u32 {
        if self.n == 32 {
            u32::MAX
        } else {
            (1u32 << self.n) - 1
        }
    }

    /// The raw integer behind a pattern.
    pub fn count(&self, bits: u32) -> i64 {
        let b = (bits & self.mask()) as i64;
        if b >> (self.n - 1) == 1 {
            b - (1i64 << self.n)
        } else {
            b
        }
    }

    pub fn value(&self, bits: u32) -> f64 {
        self.count(bits) as f64 * 2f64.powi(-(self.nf as i32))
    }

    pub fn max_value(&self) -> f64 {
        ((1i64 << (self.n - 1)) - 1) as f64 * 2f64.powi(-(self.nf as i32))
    }

    pub fn min_value(&self) -> f64 {
        -((1i64 << (self.n - 1)) as f64) * 2f64.powi(-(self.nf as i32))
    }

    /// Nearest multiple of `2^-nf`, ties to even, saturated to the range.
    pub fn encode(&self, d: &Dyadic) -> u32 {
        if d.is_zero() {
            return 0;
        }
        let limit_pos = (1u128 << (self.n - 1)) - 1;
        let limit_neg = 1u128 << (self.n - 1);
        // count = sig · 2^(exp − 63 + nf)
        let up_shift = d.exp + self.nf as i32 - 63;
        let c = if up_shift >= 0 {
            if up_shift > 40 {
                u128::MAX
            } else {
                (d.sig as u128) << up_shift
            }
        } else {
            rne_shr(d.sig as u128, (-up_shift) as u32, d.sticky)
        };
        let signed = if d.neg {
            -(c.min(limit_neg) as i64)
        } else {
            c.min(limit_pos) as i64
        };
        (signed as u32) & self.mask()
    }
}

impl fmt::Display for FixedSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fixed{}f{}", self.n, self.nf)
    }
}
