use std::fmt;

use super::dyadic::{rne_shr, Dyadic};
use super::FormatError;

/// Sign-magnitude binary float with `we` exponent bits, IEEE-style bias and
/// subnormals. The all-ones exponent is reserved for infinities and NaNs,
/// which quantization never produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MinifloatSpec {
    n: u32,
    we: u32,
}

impl MinifloatSpec {
    pub fn new(n: u32, we: u32) -> Result<Self, FormatError> {
        if n > 32 || !(2..=11).contains(&we) || we + 1 > n {
            return Err(FormatError::InvalidSpec(format!(
                "float(n={n}, we={we}) needs n <= 32, 2 <= we <= 11, we <= n - 1"
            )));
        }
        Ok(MinifloatSpec { n, we })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn we(&self) -> u32 {
        self.we
    }

    pub fn frac_bits(&self) -> u32 {
        self.n - 1 - self.we
    }

    pub fn bias(&self) -> i32 {
        (1 << (self.we - 1)) - 1
    }

    /// Unbiased exponent of the smallest normal.
    pub fn emin(&self) -> i32 {
        1 - self.bias()
    }

    /// Unbiased exponent of the largest finite binade.
    pub fn emax(&self) -> i32 {
        (1 << self.we) - 2 - self.bias()
    }

    /// Exponent of the smallest subnormal step.
    pub fn lsb_exp(&self) -> i32 {
        self.emin() - self.frac_bits() as i32
    }

    fn sign_bit(&self) -> u32 {
        1u32 << (self.n - 1)
    }

    pub fn max_finite_bits(&self) -> u32 {
        let wf = self.frac_bits();
        ((((1u32 << self.we) - 2) << wf) | ((1u32 << wf) - 1)) & !self.sign_bit()
    }

    pub fn max_finite(&self) -> f64 {
        self.value(self.max_finite_bits()).expect("finite")
    }

    pub fn is_exceptional(&self, bits: u32) -> bool {
        let exp_field = (bits >> self.frac_bits()) & ((1u32 << self.we) - 1);
        exp_field == (1u32 << self.we) - 1
    }

    pub fn value(&self, bits: u32) -> Result<f64, FormatError> {
        if self.is_exceptional(bits) {
            return Err(FormatError::ExceptionalPattern(bits));
        }
        let wf = self.frac_bits();
        let exp_field = ((bits >> wf) & ((1u32 << self.we) - 1)) as i32;
        let frac = (bits & ((1u32 << wf) - 1)) as u64;
        let mag = if exp_field == 0 {
            frac as f64 * 2f64.powi(self.lsb_exp())
        } else {
            ((1u64 << wf) | frac) as f64 * 2f64.powi(exp_field - self.bias() - wf as i32)
        };
        Ok(if bits & self.sign_bit() != 0 { -mag } else { mag })
    }

    /// Nearest finite value, ties to even, saturating at the largest finite
    /// magnitude. Zero results are always the `+0` pattern.
    pub fn encode(&self, d: &Dyadic) -> u32 {
        if d.is_zero() {
            return 0;
        }
        let wf = self.frac_bits() as i32;
        let emin = self.emin();
        let mag = if d.exp > self.emax() {
            self.max_finite_bits()
        } else {
            let quantum = d.exp.max(emin) - wf;
            // value = sig · 2^(exp − 63); count of quanta = sig >> (quantum − exp + 63)
            let shift = (quantum - d.exp + 63) as u32;
            let c = if wf == 0 && d.exp >= emin {
                // No fraction bits: the tie partner differs in the exponent
                // field, so evenness is judged on the whole pattern.
                let rem = d.sig & !(1u64 << 63);
                let half = 1u64 << 62;
                let base_odd = (d.exp - emin) % 2 == 0;
                let up = rem > half || (rem == half && (d.sticky || base_odd));
                1 + up as u128
            } else {
                rne_shr(d.sig as u128, shift, d.sticky)
            };
            let pattern = if d.exp < emin {
                c
            } else {
                (((d.exp - emin) as u128) << wf) + c
            };
            pattern.min(self.max_finite_bits() as u128) as u32
        };
        if mag == 0 {
            0
        } else if d.neg {
            mag | self.sign_bit()
        } else {
            mag
        }
    }
}

impl fmt::Display for MinifloatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "float{}e{}", self.n, self.we)
    }
}
