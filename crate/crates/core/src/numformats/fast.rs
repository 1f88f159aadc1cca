use super::FormatSpec;

const EXP_MASK: u64 = 0x7ff << 52;

/// How one binade `[2^e, 2^(e+1))` of f64 inputs rounds.
#[derive(Clone, Copy, Debug)]
enum Entry {
    /// Magnitude `clamp((|x| + m) − m, lo, hi)`, `hi` chosen by sign.
    /// With `m = 2^(q+52)` this rounds to the grid `2^q` with ties to even
    /// multiples, which matches pattern parity; `m = 0` leaves `|x|` to the
    /// clamp, which is how saturating binades are expressed.
    Fast { m: f64, lo: f64, hi_pos: f64, hi_neg: f64 },
    /// No fraction bits: the binade lies between two representable powers
    /// of two `lo <= 2^e` and `hi >= 2^(e+1)`; symmetric in sign.
    Two { lo: f64, hi: f64, mid: f64, tie_hi: bool },
    /// Defer to the exact encoder.
    Slow,
}

/// Value-level rounding that agrees with [`FormatSpec::round_value`] but
/// handles most inputs with two floating-point additions.
#[derive(Clone, Debug)]
pub struct FastRounder {
    spec: FormatSpec,
    table: Vec<Entry>,
    /// `[m, lo, hi_pos, hi_neg]` of each `Fast` entry; `m` is NaN elsewhere
    fast: Box<[[f64; 4]]>,
}

impl FastRounder {
    pub fn new(spec: FormatSpec) -> Self {
        let table: Vec<Entry> = (0..2048)
            .map(|b| match b {
                // zero and f64 subnormals: every non-posit format rounds them to 0
                0 if !matches!(spec, FormatSpec::Posit(_)) => saturate(0.0, 0.0),
                0 | 2047 => Entry::Slow,
                _ => entry(spec, b - 1023),
            })
            .collect();
        let fast = table
            .iter()
            .map(|e| match *e {
                Entry::Fast { m, lo, hi_pos, hi_neg } => [m, lo, hi_pos, hi_neg],
                _ => [f64::NAN; 4],
            })
            .collect();
        FastRounder { spec, table, fast }
    }

    pub fn spec(&self) -> FormatSpec {
        self.spec
    }

    /// Nearest representable value; zero results are `+0.0`. Panics on
    /// non-finite input.
    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        let bits = x.to_bits();
        let idx = ((bits >> 52) & 0x7ff) as usize;
        let [m, lo, hi_pos, hi_neg] = self.fast[idx];
        if !m.is_nan() {
            let hi = if bits >> 63 == 1 { hi_neg } else { hi_pos };
            // adding +0.0 turns a -0.0 result into +0.0
            return ((x.abs() + m) - m).max(lo).min(hi).copysign(x) + 0.0;
        }
        self.round_table(x, idx)
    }

    #[cold]
    fn round_table(&self, x: f64, idx: usize) -> f64 {
        match self.table[idx] {
            Entry::Fast { .. } => unreachable!("handled inline"),
            Entry::Two { lo, hi, mid, tie_hi } => {
                let a = x.abs();
                let r = if a < mid || (a == mid && !tie_hi) { lo } else { hi };
                r.copysign(x)
            }
            Entry::Slow => {
                if x == 0.0 {
                    0.0
                } else {
                    self.spec.round_value(x)
                }
            }
        }
    }

    /// [`Self::round`] over a slice, using table-free arithmetic where the
    /// format allows it so the loop vectorizes.
    pub fn round_slice(&self, xs: &mut [f64]) {
        match self.spec {
            FormatSpec::Minifloat(f) if f.frac_bits() >= 1 => {
                let shift = ((52 - f.frac_bits() as i64) << 52) as u64;
                let min_m = 2f64.powi(f.lsb_exp() + 52).to_bits();
                let max = f.max_finite();
                for x in xs {
                    let a = x.abs();
                    // grid of the binade, floored at the subnormal spacing
                    let m = f64::from_bits(((a.to_bits() & EXP_MASK) + shift).max(min_m));
                    *x = ((a + m) - m).min(max).copysign(*x) + 0.0;
                }
            }
            FormatSpec::Fixed(f) => {
                let m = 2f64.powi(52 - f.nf() as i32);
                let (hi_pos, hi_neg) = (f.max_value(), -f.min_value());
                for x in xs {
                    let hi = if x.is_sign_negative() { hi_neg } else { hi_pos };
                    *x = ((x.abs() + m) - m).min(hi).copysign(*x) + 0.0;
                }
            }
            FormatSpec::Posit(p) => {
                let es = p.es() as i64;
                let ms = p.max_scale() as i64;
                let body = p.n() as i64 - 1 - es;
                let maxpos = p.maxpos();
                const LANES: usize = 16;
                let mut chunks = xs.chunks_exact_mut(LANES);
                for chunk in &mut chunks {
                    let mut out = [0.0; LANES];
                    let mut ok = true;
                    for (o, &x) in out.iter_mut().zip(chunk.iter()) {
                        let a = x.abs();
                        let e = (a.to_bits() >> 52) as i64 - 1023;
                        let k = e >> es;
                        let regime = if k >= 0 { k + 2 } else { 1 - k };
                        let frac = body - regime;
                        // zero passes through the same formula unchanged
                        ok &= (frac >= 1 && e >= -ms && e < ms) || a == 0.0;
                        let q = (e - frac + 52 + 1023).clamp(1, 2046) as u64;
                        let m = f64::from_bits(q << 52);
                        *o = ((a + m) - m).min(maxpos).copysign(x) + 0.0;
                    }
                    if ok {
                        chunk.copy_from_slice(&out);
                    } else {
                        chunk.iter_mut().for_each(|x| *x = self.round(*x));
                    }
                }
                chunks.into_remainder().iter_mut().for_each(|x| *x = self.round(*x));
            }
            _ => xs.iter_mut().for_each(|x| *x = self.round(*x)),
        }
    }
}

/// Every input of the binade maps to `pos` or `neg`.
fn saturate(pos: f64, neg: f64) -> Entry {
    Entry::Fast { m: 0.0, lo: pos.min(-neg), hi_pos: pos, hi_neg: -neg }
}

fn magic(q: i32, pos_max: f64, neg_max: f64) -> Entry {
    Entry::Fast {
        m: 2f64.powi(q + 52),
        lo: 0.0,
        hi_pos: pos_max,
        hi_neg: neg_max,
    }
}

fn representable(spec: FormatSpec, s: i32) -> bool {
    let v = 2f64.powi(s);
    spec.round_value(v) == v
}

/// Entry for a binade holding at most one value, `2^e`. Ties take whatever
/// the exact encoder picks at the midpoint.
fn two(spec: FormatSpec, e: i32) -> Entry {
    let max = spec.max_value();
    let lo = (e - 64..=e)
        .rev()
        .find(|&s| representable(spec, s))
        .map(|s| 2f64.powi(s));
    let hi = (e + 1..=e + 64)
        .find(|&s| representable(spec, s))
        .map_or(max, |s| 2f64.powi(s));
    match lo {
        Some(lo) if lo <= hi => {
            let mid = (lo + hi) / 2.0;
            Entry::Two { lo, hi, mid, tie_hi: spec.round_value(mid) == hi }
        }
        _ => Entry::Slow,
    }
}

fn entry(spec: FormatSpec, e: i32) -> Entry {
    match spec {
        FormatSpec::Minifloat(f) => {
            let wf = f.frac_bits() as i32;
            let max = f.max_finite();
            if e > f.emax() {
                saturate(max, -max)
            } else if e < f.emin() {
                magic(f.lsb_exp(), max, max)
            } else if wf == 0 {
                two(spec, e)
            } else {
                magic(e - wf, max, max)
            }
        }
        FormatSpec::Fixed(f) => {
            let top = f.n() as i32 - 1 - f.nf() as i32;
            if e >= top {
                saturate(f.max_value(), f.min_value())
            } else {
                magic(-(f.nf() as i32), f.max_value(), -f.min_value())
            }
        }
        FormatSpec::Posit(p) => {
            let ms = p.max_scale();
            if e >= ms {
                return saturate(p.maxpos(), -p.maxpos());
            }
            if e < -ms {
                return saturate(p.minpos(), -p.minpos());
            }
            let k = e.div_euclid(1 << p.es());
            let regime_len = if k >= 0 { k + 2 } else { -k + 1 };
            let frac_bits = p.n() as i32 - 1 - regime_len - p.es() as i32;
            if frac_bits >= 1 {
                magic(e - frac_bits, p.maxpos(), p.maxpos())
            } else {
                two(spec, e)
            }
        }
    }
}
