//! Reference arithmetic written without any of the crate's decoders: values
//! come from reading pattern bits as text, sums are exact big integers, and
//! rounding is a nearest-neighbour search over the full value list.
#![allow(dead_code)]

use std::cmp::Ordering;

use num_bigint::BigInt;

use lowprec_core::FormatSpec;

/// Every exact value below is an integer multiple of `2^-SCALE`.
pub const SCALE: u32 = 200;

/// `num · 2^-SCALE`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Exact(pub BigInt);

impl Exact {
    pub fn zero() -> Self {
        Exact(BigInt::from(0))
    }

    /// `sign · mant · 2^exp`.
    pub fn from_parts(neg: bool, mant: u128, exp: i32) -> Self {
        let shift = exp + SCALE as i32;
        assert!(shift >= 0, "value below oracle resolution");
        let v = BigInt::from(mant) << shift as usize;
        Exact(if neg { -v } else { v })
    }

    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Exact::zero();
        }
        let b = x.to_bits();
        let biased = ((b >> 52) & 0x7ff) as i32;
        let frac = b & ((1u64 << 52) - 1);
        let (mant, exp) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Exact::from_parts(x < 0.0, mant as u128, exp)
    }

    /// Exact for every value with at most 53 significant bits.
    pub fn to_f64(&self) -> f64 {
        let (sign, digits) = self.0.to_u64_digits();
        let mut v = 0.0;
        for (i, &d) in digits.iter().enumerate().rev() {
            v += d as f64 * 2f64.powi(64 * i as i32);
        }
        let v = v * 2f64.powi(-(SCALE as i32));
        if sign == num_bigint::Sign::Minus { -v } else { v }
    }
}

fn bit_string(bits: u32, n: u32) -> Vec<u8> {
    format!("{:0width$b}", bits, width = n as usize).into_bytes()
}

/// Posit value by reading sign, regime run, exponent and fraction off the
/// binary text of the pattern. `None` for NaR.
pub fn posit_value(bits: u32, n: u32, es: u32) -> Option<Exact> {
    if bits == 0 {
        return Some(Exact::zero());
    }
    if bits == 1 << (n - 1) {
        return None;
    }
    let neg = bits >> (n - 1) == 1;
    let mag = if neg { (1u64 << n) - bits as u64 } else { bits as u64 } as u32;
    let s = bit_string(mag, n);
    let body = &s[1..];
    let first = body[0];
    let run = body.iter().take_while(|&&c| c == first).count();
    let k: i32 = if first == b'1' { run as i32 - 1 } else { -(run as i32) };
    let rest: &[u8] = if run < body.len() { &body[run + 1..] } else { &[] };
    let mut e = 0u32;
    for i in 0..es as usize {
        e = e * 2 + if i < rest.len() && rest[i] == b'1' { 1 } else { 0 };
    }
    let frac_bits: &[u8] = if rest.len() > es as usize { &rest[es as usize..] } else { &[] };
    let mut f: u128 = 0;
    for &c in frac_bits {
        f = f * 2 + (c == b'1') as u128;
    }
    let fs = frac_bits.len() as i32;
    let scale = k * (1 << es) + e as i32;
    // (1 + f/2^fs) · 2^scale
    Some(Exact::from_parts(neg, (1u128 << fs) + f, scale - fs))
}

/// IEEE-style value with subnormals; `None` for the all-ones exponent.
pub fn minifloat_value(bits: u32, n: u32, we: u32) -> Option<Exact> {
    let wf = n - 1 - we;
    let neg = bits >> (n - 1) == 1;
    let e = (bits >> wf) & ((1 << we) - 1);
    let f = bits & ((1u32 << wf) - 1);
    let bias = (1i32 << (we - 1)) - 1;
    if e == (1 << we) - 1 {
        return None;
    }
    if e == 0 {
        Some(Exact::from_parts(neg, f as u128, 1 - bias - wf as i32))
    } else {
        Some(Exact::from_parts(neg, ((1u128) << wf) + f as u128, e as i32 - bias - wf as i32))
    }
}

pub fn fixed_value(bits: u32, n: u32, nf: u32) -> Exact {
    let signed = if bits >> (n - 1) == 1 {
        bits as i64 - (1i64 << n)
    } else {
        bits as i64
    };
    Exact::from_parts(signed < 0, signed.unsigned_abs() as u128, -(nf as i32))
}

pub fn value(spec: FormatSpec, bits: u32) -> Option<Exact> {
    match spec {
        FormatSpec::Posit(p) => posit_value(bits, p.n(), p.es()),
        FormatSpec::Minifloat(m) => minifloat_value(bits, m.n(), m.we()),
        FormatSpec::Fixed(f) => Some(fixed_value(bits, f.n(), f.nf())),
    }
}

/// All real patterns with exact values, sorted by value. Minifloat `-0` is
/// dropped so each value appears once.
pub struct Table {
    pub spec: FormatSpec,
    pub entries: Vec<(u32, Exact)>,
    /// pattern -> value
    pub lut: Vec<Option<Exact>>,
    /// `entries` values as f64
    pub floats: Vec<f64>,
    /// smallest nonzero magnitude
    pub tiny: f64,
}

impl Table {
    pub fn new(spec: FormatSpec) -> Self {
        let n = spec.bits();
        let lut: Vec<Option<Exact>> = (0..(1u32 << n)).map(|b| value(spec, b)).collect();
        let mut entries: Vec<(u32, Exact)> = lut
            .iter()
            .enumerate()
            .filter_map(|(b, v)| v.clone().map(|v| (b as u32, v)))
            .filter(|(b, v)| !(v.0 == BigInt::from(0) && *b != 0))
            .collect();
        entries.sort_by(|a, b| a.1.cmp(&b.1));
        let floats: Vec<f64> = entries.iter().map(|(_, v)| v.to_f64()).collect();
        let tiny = floats.iter().map(|v| v.abs()).filter(|&v| v > 0.0).fold(f64::MAX, f64::min);
        Table { spec, entries, lut, floats, tiny }
    }

    /// Nearest pattern, ties to the even pattern, with the posit rule that a
    /// nonzero input never becomes zero.
    pub fn nearest(&self, x: &Exact) -> u32 {
        let zero = BigInt::from(0);
        let idx = self.entries.partition_point(|(_, v)| v < x);
        let pick = if idx == 0 {
            self.entries[0].0
        } else if idx == self.entries.len() {
            self.entries[idx - 1].0
        } else {
            let (lb, lv) = &self.entries[idx - 1];
            let (ub, uv) = &self.entries[idx];
            let dl = &x.0 - &lv.0;
            let du = &uv.0 - &x.0;
            match dl.cmp(&du) {
                Ordering::Less => *lb,
                Ordering::Greater => *ub,
                Ordering::Equal => {
                    if lb & 1 == 0 {
                        *lb
                    } else {
                        *ub
                    }
                }
            }
        };
        if let FormatSpec::Posit(p) = self.spec {
            if pick == 0 && x.0 != zero {
                // ±minpos
                return if x.0 > zero { 1 } else { (1u32 << p.n()) - 1 };
            }
        }
        pick
    }

    pub fn min(&self) -> &Exact {
        &self.entries[0].1
    }

    pub fn max(&self) -> &Exact {
        &self.entries[self.entries.len() - 1].1
    }
}

/// Exact dot product of two pattern vectors.
pub fn exact_dot(table: &Table, w: &[u32], a: &[u32]) -> Exact {
    let mut sum = BigInt::from(0);
    for (&x, &y) in w.iter().zip(a) {
        let vx = table.lut[x as usize].as_ref().expect("real operand");
        let vy = table.lut[y as usize].as_ref().expect("real operand");
        sum += &vx.0 * &vy.0;
    }
    // products are at 2^-2·SCALE; the tests stay far above 2^-SCALE resolution
    let low_mask = (BigInt::from(1) << SCALE as usize) - 1;
    assert_eq!(&sum & &low_mask, BigInt::from(0), "product below oracle resolution");
    Exact(sum >> SCALE as usize)
}
