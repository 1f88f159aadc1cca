//! Parameterised posit, minifloat and fixed-point formats.
//!
//! Every format rounds to the nearest representable value with ties going to
//! the even bit pattern, and saturates instead of overflowing. Values are
//! carried as `f64`, which holds every value of every supported format
//! exactly.

mod dyadic;
mod fast;
mod fixed;
mod minifloat;
mod posit;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use dyadic::Dyadic;
pub use fast::FastRounder;
pub use fixed::FixedSpec;
pub use minifloat::MinifloatSpec;
pub use posit::{
    posit_decode, posit_encode_round, posit_to_real, real_to_posit, DecodedPosit, ExtReal,
    PositBits, PositClass, PositSpec,
};

/// Grammar accepted by [`FormatSpec::from_str`].
pub const FORMAT_GRAMMAR: &str = "posit<n>es<es> | float<n>e<we> | fixed<n>f<nf>";

/// Largest `n` for which [`enumerate_values`] will list every pattern.
pub const MAX_ENUMERATION_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("invalid format: {0}")]
    InvalidSpec(String),
    #[error("cannot parse format `{input}`; expected {FORMAT_GRAMMAR}")]
    Parse { input: String },
    #[error("non-finite input")]
    NonFinite,
    #[error("enumeration too large: {0} bits (limit {MAX_ENUMERATION_BITS})")]
    EnumerationTooLarge(u32),
    #[error("pattern {0:#x} is an infinity or NaN")]
    ExceptionalPattern(u32),
    #[error("pattern is NaR")]
    NaR,
    #[error("pattern {bits:#x} does not fit in {n} bits")]
    PatternOutOfRange { bits: u32, n: u32 },
}

/// A numerical format and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FormatSpec {
    Posit(PositSpec),
    Minifloat(MinifloatSpec),
    Fixed(FixedSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Posit,
    Float,
    Fixed,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Posit => "posit",
            Family::Float => "float",
            Family::Fixed => "fixed",
        })
    }
}

impl FormatSpec {
    pub fn posit(n: u32, es: u32) -> Result<Self, FormatError> {
        PositSpec::new(n, es).map(FormatSpec::Posit)
    }

    pub fn minifloat(n: u32, we: u32) -> Result<Self, FormatError> {
        MinifloatSpec::new(n, we).map(FormatSpec::Minifloat)
    }

    pub fn fixed(n: u32, nf: u32) -> Result<Self, FormatError> {
        FixedSpec::new(n, nf).map(FormatSpec::Fixed)
    }

    pub fn bits(&self) -> u32 {
        match self {
            FormatSpec::Posit(p) => p.n(),
            FormatSpec::Minifloat(m) => m.n(),
            FormatSpec::Fixed(f) => f.n(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            FormatSpec::Posit(_) => Family::Posit,
            FormatSpec::Minifloat(_) => Family::Float,
            FormatSpec::Fixed(_) => Family::Fixed,
        }
    }

    /// The family's second parameter: `es`, `we` or `nf`.
    pub fn param(&self) -> u32 {
        match self {
            FormatSpec::Posit(p) => p.es(),
            FormatSpec::Minifloat(m) => m.we(),
            FormatSpec::Fixed(f) => f.nf(),
        }
    }

    pub fn mask(&self) -> u32 {
        let n = self.bits();
        if n == 32 {
            u32::MAX
        } else {
            (1u32 << n) - 1
        }
    }

    /// Every value of the format is an integer multiple of `2^lsb_exp`.
    pub fn lsb_exp(&self) -> i32 {
        match self {
            FormatSpec::Posit(p) => -p.max_scale(),
            FormatSpec::Minifloat(m) => m.lsb_exp(),
            FormatSpec::Fixed(f) => -(f.nf() as i32),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            FormatSpec::Posit(p) => p.maxpos(),
            FormatSpec::Minifloat(m) => m.max_finite(),
            FormatSpec::Fixed(f) => f.max_value(),
        }
    }

    /// Round an exact binary value into this format.
    pub fn round_dyadic(&self, d: &Dyadic) -> u32 {
        match self {
            FormatSpec::Posit(p) => p.encode(d),
            FormatSpec::Minifloat(m) => m.encode(d),
            FormatSpec::Fixed(f) => f.encode(d),
        }
    }

    /// Bit pattern of the nearest representable value.
    pub fn round(&self, x: f64) -> Result<u32, FormatError> {
        let d = Dyadic::from_f64(x).ok_or(FormatError::NonFinite)?;
        Ok(self.round_dyadic(&d))
    }

    /// Exact value of a pattern; NaR and infinities/NaNs are errors.
    pub fn value(&self, bits: u32) -> Result<f64, FormatError> {
        if bits & !self.mask() != 0 {
            return Err(FormatError::PatternOutOfRange {
                bits,
                n: self.bits(),
            });
        }
        match self {
            FormatSpec::Posit(p) => p.value(bits).ok_or(FormatError::NaR),
            FormatSpec::Minifloat(m) => m.value(bits),
            FormatSpec::Fixed(f) => Ok(f.value(bits)),
        }
    }

    /// Pattern and value of the nearest representable number.
    pub fn quantize(&self, x: f64) -> Result<(u32, f64), FormatError> {
        let bits = self.round(x)?;
        let v = self.value(bits).expect("rounding yields a real pattern");
        Ok((bits, v))
    }

    /// Rounded value of a finite input; non-finite inputs panic.
    pub fn round_value(&self, x: f64) -> f64 {
        match self.quantize(x) {
            Ok((_, v)) => v,
            Err(e) => panic!("cannot round {x}: {e}"),
        }
    }

    /// Split a real pattern into `(negative, m, q)` with value `±m · 2^q`.
    /// Returns `None` for NaR, infinities and NaNs.
    pub fn decompose(&self, bits: u32) -> Option<(bool, u64, i32)> {
        let bits = bits & self.mask();
        match self {
            FormatSpec::Posit(p) => {
                let d = p.decode(bits);
                match d.class {
                    PositClass::NaR => None,
                    PositClass::Zero => Some((false, 0, self.lsb_exp())),
                    PositClass::Normal => Some((
                        d.sign < 0,
                        (1u64 << d.fs) | d.frac,
                        d.scale_factor - d.fs as i32,
                    )),
                }
            }
            FormatSpec::Minifloat(m) => {
                if m.is_exceptional(bits) {
                    return None;
                }
                let wf = m.frac_bits();
                let neg = bits >> (m.n() - 1) == 1;
                let exp_field = ((bits >> wf) & ((1u32 << m.we()) - 1)) as i32;
                let frac = (bits & ((1u32 << wf) - 1)) as u64;
                if exp_field == 0 {
                    Some((neg && frac != 0, frac, m.lsb_exp()))
                } else {
                    Some((neg, (1u64 << wf) | frac, exp_field - m.bias() - wf as i32))
                }
            }
            FormatSpec::Fixed(f) => {
                let c = f.count(bits);
                Some((c < 0, c.unsigned_abs(), -(f.nf() as i32)))
            }
        }
    }

    /// Whether a pattern denotes a real number (not NaR, infinity or NaN).
    pub fn is_real(&self, bits: u32) -> bool {
        match self {
            FormatSpec::Posit(p) => bits != p.nar(),
            FormatSpec::Minifloat(m) => !m.is_exceptional(bits),
            FormatSpec::Fixed(_) => true,
        }
    }
}

impl fmt::Display for FormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatSpec::Posit(p) => p.fmt(f),
            FormatSpec::Minifloat(m) => m.fmt(f),
            FormatSpec::Fixed(x) => x.fmt(f),
        }
    }
}

impl FromStr for FormatSpec {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || FormatError::Parse {
            input: s.to_string(),
        };
        let split = |rest: &str, sep: &str| -> Result<(u32, u32), FormatError> {
            let (a, b) = rest.split_once(sep).ok_or_else(parse_err)?;
            let digits = |t: &str| {
                if t.is_empty() || !t.bytes().all(|c| c.is_ascii_digit()) {
                    Err(parse_err())
                } else {
                    t.parse::<u32>().map_err(|_| parse_err())
                }
            };
            Ok((digits(a)?, digits(b)?))
        };
        if let Some(rest) = s.strip_prefix("posit") {
            let (n, es) = split(rest, "es")?;
            FormatSpec::posit(n, es)
        } else if let Some(rest) = s.strip_prefix("float") {
            let (n, we) = split(rest, "e")?;
            FormatSpec::minifloat(n, we)
        } else if let Some(rest) = s.strip_prefix("fixed") {
            let (n, nf) = split(rest, "f")?;
            FormatSpec::fixed(n, nf)
        } else {
            Err(parse_err())
        }
    }
}

/// Nearest minifloat pattern and its value.
pub fn minifloat_quantize(x: f64, spec: MinifloatSpec) -> Result<(u32, f64), FormatError> {
    FormatSpec::Minifloat(spec).quantize(x)
}

/// Nearest fixed-point pattern and its value.
pub fn fixed_quantize(x: f64, spec: FixedSpec) -> Result<(u32, f64), FormatError> {
    FormatSpec::Fixed(spec).quantize(x)
}

/// Every real-valued pattern of a format, sorted by value.
///
/// Minifloat `+0` and `-0` both appear (value 0); NaR, infinities and NaNs do
/// not. Equal values are ordered by pattern.
pub fn enumerate_values(spec: FormatSpec) -> Result<Vec<(u32, f64)>, FormatError> {
    let n = spec.bits();
    if n > MAX_ENUMERATION_BITS {
        return Err(FormatError::EnumerationTooLarge(n));
    }
    let mut out: Vec<(u32, f64)> = (0..(1u32 << n))
        .filter(|&b| spec.is_real(b))
        .map(|b| (b, spec.value(b).expect("real pattern")))
        .collect();
    out.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite")
            .then(a.0.cmp(&b.0))
    });
    Ok(out)
}
