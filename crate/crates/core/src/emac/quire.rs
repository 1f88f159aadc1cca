use crate::numformats::{Dyadic, FormatSpec, PositSpec};

use super::EmacError;

/// Bit budget of a posit quire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuireWidth {
    /// Total register width `w_q`.
    pub width: u32,
    /// Integer (and carry) bits of the fixed-point view.
    pub m_k: u32,
    /// Fraction bits of the fixed-point view.
    pub n_k: u32,
}

pub(crate) fn ceil_log2(v: usize) -> u32 {
    assert!(v >= 1);
    usize::BITS - (v - 1).leading_zeros()
}

/// `w_q = ⌈log2 N_op⌉ + 2^(es+2)·(n − 2) + 2`, split as `m_k + n_k`.
pub fn quire_width(n: u32, es: u32, n_op: usize) -> Result<QuireWidth, EmacError> {
    if n_op == 0 {
        return Err(EmacError::ZeroCapacity);
    }
    let spec = PositSpec::new(n, es)?;
    Ok(posit_quire_width(spec, n_op))
}

pub(crate) fn posit_quire_width(spec: PositSpec, n_op: usize) -> QuireWidth {
    let n_k = (spec.n() - 2) << (spec.es() + 1);
    let m_k = n_k + 2 + ceil_log2(n_op);
    QuireWidth {
        width: m_k + n_k,
        m_k,
        n_k,
    }
}

/// Width and fraction bits of the exact accumulator for any format.
pub(crate) fn layout(spec: FormatSpec, n_op: usize) -> QuireWidth {
    let carry = ceil_log2(n_op);
    match spec {
        FormatSpec::Posit(p) => posit_quire_width(p, n_op),
        FormatSpec::Minifloat(m) => {
            // products lie in [2^(2·lsb), 2^(2·(emax+1)))
            let span = 2 * (m.emax() + 1 - m.lsb_exp()) as u32;
            let n_k = (-2 * m.lsb_exp()).max(0) as u32;
            let width = span + carry + 1;
            QuireWidth {
                width,
                m_k: width - n_k,
                n_k,
            }
        }
        FormatSpec::Fixed(f) => {
            let n_k = 2 * f.nf();
            let width = 2 * f.n() + carry;
            QuireWidth {
                width,
                m_k: width - n_k,
                n_k,
            }
        }
    }
}

/// One exact product `±sig · 2^lsb_exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Product {
    pub neg: bool,
    pub sig: u64,
    pub lsb_exp: i32,
}

impl Product {
    pub const ZERO: Product = Product {
        neg: false,
        sig: 0,
        lsb_exp: 0,
    };

    /// Exact product of two patterns; `None` if either is NaR/NaN/infinite.
    pub fn of(spec: FormatSpec, w: u32, a: u32) -> Option<Product> {
        let (nw, mw, qw) = spec.decompose(w)?;
        let (na, ma, qa) = spec.decompose(a)?;
        let sig = mw.checked_mul(ma).expect("significands of <= 32-bit formats fit");
        Some(Product {
            neg: nw != na,
            sig,
            lsb_exp: qw + qa,
        })
    }
}

/// The leading-one view of a nonzero quire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extracted {
    pub neg: bool,
    /// Scale factor of the leading one.
    pub scale_factor: i32,
    /// The `width` bits below the leading one.
    pub frac: u64,
    pub width: u32,
    /// Whether any bit below the extracted fraction is set.
    pub sticky: bool,
}

/// A two's-complement fixed-point accumulator sized so that `capacity`
/// products of `spec` values can never overflow it.
///
/// The register is stored in 64-bit limbs with at least one limb of headroom
/// above `width`; after every addition the bits from `width − 1` upwards must
/// all equal the sign, which is how overflow is detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quire {
    spec: FormatSpec,
    width: u32,
    frac_bits: u32,
    capacity: usize,
    count: usize,
    limbs: Vec<u64>,
}

impl Quire {
    pub fn new(spec: FormatSpec, capacity: usize) -> Result<Self, EmacError> {
        if capacity == 0 {
            return Err(EmacError::ZeroCapacity);
        }
        let l = layout(spec, capacity);
        let limbs = vec![0u64; (l.width as usize).div_ceil(64) + 1];
        Ok(Quire {
            spec,
            width: l.width,
            frac_bits: l.n_k,
            capacity,
            count: 0,
            limbs,
        })
    }

    pub fn spec(&self) -> FormatSpec {
        self.spec
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Position of the binary point: bit `frac_bits` has weight 1.
    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn clear(&mut self) {
        self.limbs.iter_mut().for_each(|l| *l = 0);
        self.count = 0;
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }

    fn is_negative(&self) -> bool {
        self.limbs.last().expect("nonempty") >> 63 == 1
    }

    fn bit(&self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        self.limbs[w] >> b & 1 == 1
    }

    /// Whether the stored value fits in `width` signed bits.
    pub fn fits(&self) -> bool {
        let sign = self.is_negative();
        let total = self.limbs.len() as u32 * 64;
        (self.width - 1..total).all(|i| self.bit(i) == sign)
    }

    /// Number of bits needed for `|acc|`; always below `width − 1` while
    /// `count <= capacity`.
    pub fn magnitude_bits(&self) -> u32 {
        let mag = self.magnitude();
        top_bit(&mag).map_or(0, |p| p + 1)
    }

    /// Add one exact product. Fails once `capacity` products have been added.
    pub fn accumulate(&mut self, p: Product) -> Result<(), EmacError> {
        if self.count >= self.capacity {
            return Err(EmacError::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        self.count += 1;
        if p.sig == 0 {
            return Ok(());
        }
        let shift = p.lsb_exp + self.frac_bits as i32;
        let (sig, shift) = if shift < 0 {
            let drop = (-shift) as u32;
            if drop >= 64 || p.sig & ((1u64 << drop) - 1) != 0 {
                return Err(EmacError::BelowQuireResolution);
            }
            (p.sig >> drop, 0u32)
        } else {
            (p.sig, shift as u32)
        };
        if shift as usize + 64 > self.limbs.len() * 64 {
            return Err(EmacError::QuireOverflow);
        }
        let (word, offset) = ((shift / 64) as usize, shift % 64);
        let wide = (sig as u128) << offset;
        let parts = [wide as u64, (wide >> 64) as u64];
        if p.neg {
            sub_at(&mut self.limbs, word, parts);
        } else {
            add_at(&mut self.limbs, word, parts);
        }
        if !self.fits() {
            return Err(EmacError::QuireOverflow);
        }
        Ok(())
    }

    /// Add every product of a quire of the same format and width.
    pub fn merge(&mut self, other: &Quire) -> Result<(), EmacError> {
        if other.spec != self.spec || other.width != self.width {
            return Err(EmacError::Mismatch);
        }
        if self.count + other.count > self.capacity {
            return Err(EmacError::CapacityExceeded {
                capacity: self.capacity,
            });
        }
        let mut carry = false;
        for (a, b) in self.limbs.iter_mut().zip(&other.limbs) {
            let (s1, c1) = a.overflowing_add(*b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *a = s2;
            carry = c1 || c2;
        }
        self.count += other.count;
        if !self.fits() {
            return Err(EmacError::QuireOverflow);
        }
        Ok(())
    }

    fn magnitude(&self) -> Vec<u64> {
        if self.is_negative() {
            negate(&self.limbs)
        } else {
            self.limbs.clone()
        }
    }

    /// Sign, leading-one scale factor and the `frac_width` bits below the
    /// leading one; `None` when the quire holds exactly zero.
    pub fn extract(&self, frac_width: u32) -> Option<Extracted> {
        assert!(frac_width <= 63);
        let neg = self.is_negative();
        let mag = self.magnitude();
        let lead = top_bit(&mag)?;
        let mut frac = 0u64;
        for i in 0..frac_width {
            let pos = lead as i64 - 1 - i as i64;
            frac <<= 1;
            if pos >= 0 && bit_of(&mag, pos as u32) {
                frac |= 1;
            }
        }
        let below = lead as i64 - frac_width as i64;
        let sticky = below > 0 && any_below(&mag, below as u32);
        Some(Extracted {
            neg,
            scale_factor: lead as i32 - self.frac_bits as i32,
            frac,
            width: frac_width,
            sticky,
        })
    }

    /// The exact accumulated value as a rounding input.
    pub fn to_dyadic(&self) -> Dyadic {
        match self.extract(63) {
            None => Dyadic::ZERO,
            Some(x) => Dyadic {
                neg: x.neg,
                sig: (1u64 << 63) | x.frac,
                exp: x.scale_factor,
                sticky: x.sticky,
            },
        }
    }

    /// Round the exact sum once into the quire's format.
    pub fn to_format(&self) -> u32 {
        self.spec.round_dyadic(&self.to_dyadic())
    }

    /// Exact value as `f64` when it fits (tests and diagnostics).
    pub fn to_f64(&self) -> f64 {
        let d = self.to_dyadic();
        let v = d.sig as f64 * 2f64.powi(d.exp - 63);
        if d.neg {
            -v
        } else {
            v
        }
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs
    }
}

fn add_at(limbs: &mut [u64], word: usize, parts: [u64; 2]) {
    let mut carry = 0u64;
    for (i, limb) in limbs.iter_mut().enumerate().skip(word) {
        let addend = match i - word {
            0 => parts[0],
            1 => parts[1],
            _ => 0,
        };
        if addend == 0 && carry == 0 && i > word + 1 {
            break;
        }
        let (s1, c1) = limb.overflowing_add(addend);
        let (s2, c2) = s1.overflowing_add(carry);
        *limb = s2;
        carry = (c1 || c2) as u64;
    }
}

fn sub_at(limbs: &mut [u64], word: usize, parts: [u64; 2]) {
    let mut borrow = 0u64;
    for (i, limb) in limbs.iter_mut().enumerate().skip(word) {
        let sub = match i - word {
            0 => parts[0],
            1 => parts[1],
            _ => 0,
        };
        if sub == 0 && borrow == 0 && i > word + 1 {
            break;
        }
        let (s1, b1) = limb.overflowing_sub(sub);
        let (s2, b2) = s1.overflowing_sub(borrow);
        *limb = s2;
        borrow = (b1 || b2) as u64;
    }
}

fn negate(limbs: &[u64]) -> Vec<u64> {
    let mut out: Vec<u64> = limbs.iter().map(|l| !l).collect();
    add_at(&mut out, 0, [1, 0]);
    out
}

fn top_bit(limbs: &[u64]) -> Option<u32> {
    limbs
        .iter()
        .enumerate()
        .rev()
        .find(|(_, &l)| l != 0)
        .map(|(i, l)| i as u32 * 64 + 63 - l.leading_zeros())
}

fn bit_of(limbs: &[u64], i: u32) -> bool {
    limbs[(i / 64) as usize] >> (i % 64) & 1 == 1
}

fn any_below(limbs: &[u64], end: u32) -> bool {
    let full = (end / 64) as usize;
    if limbs[..full].iter().any(|&l| l != 0) {
        return true;
    }
    let rem = end % 64;
    rem > 0 && limbs[full] & ((1u64 << rem) - 1) != 0
}
