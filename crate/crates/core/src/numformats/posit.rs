use std::fmt;

use super::dyadic::{rne_shr, Dyadic};
use super::FormatError;

/// Parameters of an `n`-bit posit with `es` exponent bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PositSpec {
    n: u32,
    es: u32,
}

impl PositSpec {
    pub fn new(n: u32, es: u32) -> Result<Self, FormatError> {
        if !(2..=32).contains(&n) || es > 3 || es + 3 > n {
            return Err(FormatError::InvalidSpec(format!(
                "posit(n={n}, es={es}) needs 2 <= n <= 32, es <= 3, es <= n - 3"
            )));
        }
        Ok(PositSpec { n, es })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn es(&self) -> u32 {
        self.es
    }

    pub(crate) fn mask(&self) -> u32 {
        if self.n == 32 {
            u32::MAX
        } else {
            (1u32 << self.n) - 1
        }
    }

    pub fn nar(&self) -> u32 {
        1u32 << (self.n - 1)
    }

    pub fn maxpos_bits(&self) -> u32 {
        self.nar() - 1
    }

    /// Scale factor of maxpos, `2^es · (n − 2)`; minpos has the negation.
    pub fn max_scale(&self) -> i32 {
        ((self.n - 2) << self.es) as i32
    }

    /// Width of the fraction field when the regime is as short as possible.
    pub fn max_frac_bits(&self) -> u32 {
        self.n - 3 - self.es
    }

    pub fn maxpos(&self) -> f64 {
        2f64.powi(self.max_scale())
    }

    pub fn minpos(&self) -> f64 {
        2f64.powi(-self.max_scale())
    }

    pub fn decode(&self, bits: u32) -> DecodedPosit {
        decode(*self, bits)
    }

    pub fn encode(&self, d: &Dyadic) -> u32 {
        encode_nearest(*self, d)
    }

    /// Exact value; `None` for NaR.
    pub fn value(&self, bits: u32) -> Option<f64> {
        self.decode(bits).value()
    }
}

impl fmt::Display for PositSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "posit{}es{}", self.n, self.es)
    }
}

/// An `n`-bit pattern interpreted as a posit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PositBits {
    pub bits: u32,
    pub spec: PositSpec,
}

impl PositBits {
    pub fn new(bits: u32, spec: PositSpec) -> Result<Self, FormatError> {
        if bits & !spec.mask() != 0 {
            return Err(FormatError::PatternOutOfRange {
                bits,
                n: spec.n(),
            });
        }
        Ok(PositBits { bits, spec })
    }

    pub fn zero(spec: PositSpec) -> Self {
        PositBits { bits: 0, spec }
    }

    pub fn is_nar(&self) -> bool {
        self.bits == self.spec.nar()
    }

    /// Pattern read as an `n`-bit two's-complement integer; posit order equals this order.
    pub fn as_signed(&self) -> i64 {
        let n = self.spec.n();
        let b = self.bits as i64;
        if b >> (n - 1) & 1 == 1 {
            b - (1i64 << n)
        } else {
            b
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositClass {
    Zero,
    NaR,
    Normal,
}

/// Field-level view of a posit pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodedPosit {
    pub class: PositClass,
    pub sign: i8,
    /// Regime value.
    pub k: i32,
    /// Exponent field value, with truncated trailing exponent bits read as zero.
    pub e: u32,
    pub frac: u64,
    pub fs: u32,
    /// `k · 2^es + e`.
    pub scale_factor: i32,
}

impl DecodedPosit {
    fn special(class: PositClass) -> Self {
        DecodedPosit {
            class,
            sign: 1,
            k: 0,
            e: 0,
            frac: 0,
            fs: 0,
            scale_factor: 0,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self.class {
            PositClass::Zero => Some(0.0),
            PositClass::NaR => None,
            PositClass::Normal => {
                let sig = (1u64 << self.fs) | self.frac;
                let v = sig as f64 * 2f64.powi(self.scale_factor - self.fs as i32);
                Some(if self.sign < 0 { -v } else { v })
            }
        }
    }
}

pub(crate) fn decode(spec: PositSpec, bits: u32) -> DecodedPosit {
    let n = spec.n();
    let es = spec.es();
    let bits = bits & spec.mask();
    if bits == 0 {
        return DecodedPosit::special(PositClass::Zero);
    }
    if bits == spec.nar() {
        return DecodedPosit::special(PositClass::NaR);
    }
    let negative = bits >> (n - 1) == 1;
    let mag = if negative {
        bits.wrapping_neg() & spec.mask()
    } else {
        bits
    };
    let body_len = n - 1;
    // Left-align the n-1 bits after the sign.
    let body = (mag as u64) << (64 - body_len);
    let lead = body >> 63;
    let run = if lead == 1 {
        body.leading_ones()
    } else {
        body.leading_zeros()
    }
    .min(body_len);
    let k = if lead == 1 {
        run as i32 - 1
    } else {
        -(run as i32)
    };
    let consumed = (run + 1).min(body_len);
    let remaining = body_len - consumed;
    let rest = if remaining == 0 {
        0u64
    } else {
        (mag as u64) & ((1u64 << remaining) - 1)
    };
    let e_bits = es.min(remaining);
    let fs = remaining - e_bits;
    let e = ((rest >> fs) as u32) << (es - e_bits);
    let frac = if fs == 0 { 0 } else { rest & ((1u64 << fs) - 1) };
    DecodedPosit {
        class: PositClass::Normal,
        sign: if negative { -1 } else { 1 },
        k,
        e,
        frac,
        fs,
        scale_factor: (k << es) + e as i32,
    }
}

/// Encode to the nearest posit, ties to the even pattern.
///
/// Magnitudes above maxpos saturate to maxpos and nonzero magnitudes below
/// minpos saturate to minpos; a finite input never yields zero or NaR.
pub(crate) fn encode_nearest(spec: PositSpec, d: &Dyadic) -> u32 {
    if d.is_zero() {
        return 0;
    }
    let n = spec.n() as i32;
    let es = spec.es();
    let max_scale = spec.max_scale();
    let sf = d.exp;
    let mag = if sf >= max_scale {
        spec.maxpos_bits()
    } else if sf < -max_scale {
        1
    } else {
        let k = sf.div_euclid(1 << es);
        let e = sf.rem_euclid(1 << es) as u128;
        let (reg_len, reg_bits) = if k >= 0 {
            (k + 2, ((1u128 << (k + 1)) - 1) << 1)
        } else {
            (1 - k, 1u128)
        };
        // regime | exponent | 63 fraction bits
        let body = (reg_bits << (es + 63)) | (e << 63) | d.frac63() as u128;
        let total = reg_len as u32 + es + 63;
        let drop = total - (n as u32 - 1);
        let kept_exp = (n - 1 - reg_len).clamp(0, es as i32) as u32;
        if kept_exp == es {
            // Neighbours are one fraction ULP apart: guard/sticky rounding is
            // exactly nearest-value rounding.
            rne_shr(body, drop, d.sticky) as u32
        } else {
            // Trailing exponent bits fall off: neighbours are 2^gap binades
            // apart, so the midpoint is arithmetic, not the pattern midpoint.
            let lo = (body >> drop) as u32;
            let gap = 1i32 << (es - kept_exp);
            let within = (e as i32) & (gap - 1);
            let up = if within < gap - 1 {
                false
            } else {
                let threshold = 1u64 << (63 - gap);
                let f = d.frac63();
                f > threshold || (f == threshold && (d.sticky || lo & 1 == 1))
            };
            lo + up as u32
        }
    };
    if d.neg {
        mag.wrapping_neg() & spec.mask()
    } else {
        mag
    }
}

/// Pack a sign, scale factor and `1.frac` significand into a posit, rounding
/// once to nearest (ties to even) and saturating at the regime limits.
pub fn posit_encode_round(
    spec: PositSpec,
    negative: bool,
    scale_factor: i32,
    frac: u64,
    frac_width: u32,
    sticky: bool,
) -> PositBits {
    assert!(frac_width <= 63, "fraction wider than 63 bits");
    let frac = if frac_width == 0 {
        0
    } else {
        frac & ((1u64 << frac_width) - 1)
    };
    let sig = (1u64 << 63) | (frac << (63 - frac_width));
    let d = Dyadic {
        neg: negative,
        sig,
        exp: scale_factor,
        sticky,
    };
    PositBits {
        bits: encode_nearest(spec, &d),
        spec,
    }
}

/// Field-level decode of a posit pattern.
pub fn posit_decode(p: PositBits) -> DecodedPosit {
    decode(p.spec, p.bits)
}

/// Exact value of a posit pattern, or `NaR`.
pub fn posit_to_real(p: PositBits) -> ExtReal {
    match posit_decode(p).value() {
        Some(v) => ExtReal::Real(v),
        None => ExtReal::NaR,
    }
}

/// Nearest posit to a finite real.
pub fn real_to_posit(x: f64, spec: PositSpec) -> Result<PositBits, FormatError> {
    let d = Dyadic::from_f64(x).ok_or(FormatError::NonFinite)?;
    Ok(PositBits {
        bits: encode_nearest(spec, &d),
        spec,
    })
}

/// A real number or the posit "not a real" token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Real(f64),
    NaR,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(n: u32, es: u32) -> PositSpec {
        PositSpec::new(n, es).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(PositSpec::new(8, 6).is_err());
        assert!(PositSpec::new(33, 1).is_err());
        assert!(PositSpec::new(4, 2).is_err());
        assert!(PositSpec::new(5, 2).is_ok());
    }

    #[test]
    fn decode_examples() {
        let d = p(8, 0).decode(0);
        assert_eq!(d.class, PositClass::Zero);

        let d = p(8, 1).decode(0b0111_0110);
        assert_eq!(d.class, PositClass::Normal);
        assert_eq!((d.sign, d.k, d.e, d.frac, d.fs), (1, 2, 1, 2, 2));
        assert_eq!(d.value(), Some(48.0));

        let d = p(8, 0).decode(0b0011_1000);
        assert_eq!((d.sign, d.k, d.frac, d.fs), (1, -1, 24, 5));
        assert_eq!(d.value(), Some(0.875));

        let d = p(8, 0).decode(0xC0);
        assert_eq!(d.sign, -1);
        assert_eq!(d.value(), Some(-1.0));
    }

    #[test]
    fn to_real_examples() {
        let s = p(8, 1);
        assert_eq!(posit_to_real(PositBits::new(0x40, s).unwrap()), ExtReal::Real(1.0));
        assert_eq!(posit_to_real(PositBits::new(0x7f, s).unwrap()), ExtReal::Real(4096.0));
        assert_eq!(posit_to_real(PositBits::new(0x80, s).unwrap()), ExtReal::NaR);
    }

    #[test]
    fn from_real_examples() {
        assert_eq!(real_to_posit(0.0, p(8, 2)).unwrap().bits, 0);
        let r = real_to_posit(1.3, p(8, 0)).unwrap();
        assert_eq!(r.bits, 0b0100_1010);
        assert_eq!(p(8, 0).value(r.bits), Some(1.3125));
        assert_eq!(real_to_posit(1e9, p(8, 1)).unwrap().bits, 0x7f);
        assert_eq!(real_to_posit(-1e9, p(8, 1)).unwrap().bits, 0x81);
        assert_eq!(real_to_posit(1e-30, p(8, 1)).unwrap().bits, 0x01);
        assert!(matches!(
            real_to_posit(f64::NAN, p(8, 1)),
            Err(FormatError::NonFinite)
        ));
    }

    #[test]
    fn encode_round_examples() {
        let s = p(8, 1);
        assert_eq!(posit_encode_round(s, false, 0, 0, 0, false).bits, 0x40);
        assert_eq!(posit_encode_round(s, false, 14, 0, 0, false).bits, 0x7f);
        assert_eq!(posit_encode_round(s, true, 0, 0, 0, false).bits, 0xc0);
    }

    #[test]
    fn truncated_exponent_uses_arithmetic_midpoint() {
        // posit8es1: 0x7e = 1024 and 0x7f = 4096 are adjacent; midpoint 2560.
        let s = p(8, 1);
        assert_eq!(real_to_posit(2300.0, s).unwrap().bits, 0x7e);
        assert_eq!(real_to_posit(2600.0, s).unwrap().bits, 0x7f);
        // 2560 is an exact tie: even pattern 0x7e.
        assert_eq!(real_to_posit(2560.0, s).unwrap().bits, 0x7e);
        // Near minpos: 2^-12 (0x01) and 2^-10 (0x02), midpoint 5·2^-13.
        assert_eq!(real_to_posit(4.9 / 8192.0, s).unwrap().bits, 0x01);
        assert_eq!(real_to_posit(5.1 / 8192.0, s).unwrap().bits, 0x02);
    }

    #[test]
    fn round_trip_exhaustive_small() {
        for n in 3..=10 {
            for es in 0..=3u32.min(n - 3) {
                let s = p(n, es);
                for bits in 0..(1u32 << n) {
                    if bits == s.nar() {
                        continue;
                    }
                    let d = s.decode(bits);
                    let back = match d.class {
                        PositClass::Zero => 0,
                        _ => posit_encode_round(s, d.sign < 0, d.scale_factor, d.frac, d.fs, false).bits,
                    };
                    assert_eq!(back, bits, "{s} pattern {bits:#x}");
                }
            }
        }
    }
}
