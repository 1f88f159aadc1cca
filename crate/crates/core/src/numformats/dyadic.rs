/// An exact binary value `±sig · 2^(exp − 63)` carried into a rounding step.
///
/// `sig` is normalised (bit 63 set) unless the value is zero. `sticky` records
/// that nonzero bits below `sig` were discarded, so the true magnitude is
/// strictly greater than the one encoded by `sig`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dyadic {
    pub neg: bool,
    pub sig: u64,
    pub exp: i32,
    pub sticky: bool,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic {
        neg: false,
        sig: 0,
        exp: 0,
        sticky: false,
    };

    pub fn is_zero(&self) -> bool {
        self.sig == 0
    }

    /// Exact decomposition of a finite `f64`. Returns `None` for NaN or infinities.
    pub fn from_f64(x: f64) -> Option<Dyadic> {
        if !x.is_finite() {
            return None;
        }
        if x == 0.0 {
            return Some(Dyadic::ZERO);
        }
        let bits = x.to_bits();
        let neg = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let mant = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            // subnormal: value = mant · 2^-1074
            (mant, -1074)
        } else {
            (mant | (1u64 << 52), biased - 1075)
        };
        Some(Dyadic::from_parts(neg, m as u128, e))
    }

    /// `±mag · 2^lsb_exp` for a 128-bit magnitude.
    pub fn from_parts(neg: bool, mag: u128, lsb_exp: i32) -> Dyadic {
        if mag == 0 {
            return Dyadic::ZERO;
        }
        let top = 127 - mag.leading_zeros() as i32;
        let (sig, sticky) = if top >= 63 {
            let drop = (top - 63) as u32;
            let sig = (mag >> drop) as u64;
            let sticky = drop > 0 && mag & ((1u128 << drop) - 1) != 0;
            (sig, sticky)
        } else {
            ((mag << (63 - top)) as u64, false)
        };
        Dyadic {
            neg,
            sig,
            exp: lsb_exp + top,
            sticky,
        }
    }

    /// Exact signed integer scaled by `2^lsb_exp`.
    pub fn from_i128(v: i128, lsb_exp: i32) -> Dyadic {
        Dyadic::from_parts(v < 0, v.unsigned_abs(), lsb_exp)
    }

    /// The fraction bits below the hidden one, as a 63-bit field.
    pub(crate) fn frac63(&self) -> u64 {
        self.sig & !(1u64 << 63)
    }
}

/// Round `v >> shift` to nearest, ties to even, with an extra sticky input
/// standing for nonzero bits below `v`.
pub(crate) fn rne_shr(v: u128, shift: u32, sticky: bool) -> u128 {
    if shift == 0 {
        return v;
    }
    if shift > 128 {
        return 0;
    }
    let q = if shift == 128 { 0 } else { v >> shift };
    let rem = if shift == 128 {
        v
    } else {
        v & ((1u128 << shift) - 1)
    };
    let half = 1u128 << (shift - 1);
    let up = rem > half || (rem == half && (sticky || q & 1 == 1));
    q + up as u128
}
