//! Format analysis over trained weights: distortion rates, per-layer
//! delta grids, dynamic-range coverage, and accuracy sweeps.

use std::fmt;
use std::str::FromStr;

use lowprec_core::numformats::enumerate_values;
use lowprec_core::quantize::quantize_weights;
use lowprec_core::{Beta, Family, FormatError, FormatSpec, QuantScheme, SchemeKind};

use crate::data::DatasetSplit;
use crate::network::Network;
use crate::quantized::{evaluate, Calibration, QuantizedNet};
use crate::NnError;

/// `d(R) = (1/n)·Σ (P_i − Quant(P_i))²`; weights-only scales under linear schemes.
pub fn distortion_rate(p: &[f64], spec: FormatSpec, scheme: QuantScheme) -> Result<f64, NnError> {
    if p.is_empty() {
        return Err(NnError::Shape("distortion of an empty tensor".into()));
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(NnError::Shape(format!("non-finite parameter at {i}")));
    }
    let q = quantize_weights(p, spec, scheme)?;
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64)
}

/// A format family with its parameter either fixed or chosen per bit width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyChoice {
    /// Posit with the given `es`, or the best of `es ∈ {0, 1, 2}`.
    Posit(Option<u32>),
    /// Minifloat with the given exponent width, or the best of `{3, 4}`.
    Float(Option<u32>),
    /// Fixed point with the given fraction bits, or the best of `0..n`.
    Fixed(Option<u32>),
}

impl FamilyChoice {
    pub fn family(self) -> Family {
        match self {
            FamilyChoice::Posit(_) => Family::Posit,
            FamilyChoice::Float(_) => Family::Float,
            FamilyChoice::Fixed(_) => Family::Fixed,
        }
    }

    /// Valid specs of this choice at `n` bits.
    pub fn candidates(self, n: u32) -> Vec<FormatSpec> {
        let specs: Vec<Result<FormatSpec, FormatError>> = match self {
            FamilyChoice::Posit(Some(es)) => vec![FormatSpec::posit(n, es)],
            FamilyChoice::Posit(None) => (0..=2).map(|es| FormatSpec::posit(n, es)).collect(),
            FamilyChoice::Float(Some(we)) => vec![FormatSpec::minifloat(n, we)],
            FamilyChoice::Float(None) => (3..=4).map(|we| FormatSpec::minifloat(n, we)).collect(),
            FamilyChoice::Fixed(Some(nf)) => vec![FormatSpec::fixed(n, nf)],
            FamilyChoice::Fixed(None) => (0..n).map(|nf| FormatSpec::fixed(n, nf)).collect(),
        };
        specs.into_iter().filter_map(Result::ok).collect()
    }
}

impl fmt::Display for FamilyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyChoice::Posit(None) => f.write_str("posit"),
            FamilyChoice::Posit(Some(es)) => write!(f, "posit-es{es}"),
            FamilyChoice::Float(None) => f.write_str("float"),
            FamilyChoice::Float(Some(we)) => write!(f, "float-e{we}"),
            FamilyChoice::Fixed(None) => f.write_str("fixed"),
            FamilyChoice::Fixed(Some(nf)) => write!(f, "fixed-f{nf}"),
        }
    }
}

impl FromStr for FamilyChoice {
    type Err = String;

    /// `posit`, `float`, `fixed`, or pinned: `posit-es1`, `float-e4`, `fixed-f4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown format family '{s}' (expected posit[-es<k>], float[-e<k>] or fixed[-f<k>])");
        let num = |t: &str| t.parse::<u32>().map_err(|_| bad());
        match s.split_once('-') {
            None => match s {
                "posit" => Ok(FamilyChoice::Posit(None)),
                "float" => Ok(FamilyChoice::Float(None)),
                "fixed" => Ok(FamilyChoice::Fixed(None)),
                _ => Err(bad()),
            },
            Some(("posit", p)) => Ok(FamilyChoice::Posit(Some(num(p.strip_prefix("es").ok_or_else(bad)?)?))),
            Some(("float", p)) => Ok(FamilyChoice::Float(Some(num(p.strip_prefix('e').ok_or_else(bad)?)?))),
            Some(("fixed", p)) => Ok(FamilyChoice::Fixed(Some(num(p.strip_prefix('f').ok_or_else(bad)?)?))),
            _ => Err(bad()),
        }
    }
}

/// Per bit width, the chosen spec and `d(R)` of each layer plus the pooled
/// all-weights value as the last column.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionGrid {
    pub bit_widths: Vec<u32>,
    pub specs: Vec<FormatSpec>,
    /// `bit_widths.len()` rows of `layers + 1` entries.
    pub rows: Vec<Vec<f64>>,
}

/// Distortion of every layer; a family with a free parameter takes the spec
/// with the lowest pooled distortion at each bit width.
pub fn distortion_grid(
    layers: &[&[f64]],
    choice: FamilyChoice,
    bit_widths: &[u32],
    scheme: QuantScheme,
) -> Result<DistortionGrid, NnError> {
    if layers.is_empty() {
        return Err(NnError::Shape("no layers".into()));
    }
    let pooled: Vec<f64> = layers.iter().flat_map(|l| l.iter().copied()).collect();
    let mut grid = DistortionGrid { bit_widths: bit_widths.to_vec(), specs: vec![], rows: vec![] };
    for &n in bit_widths {
        let mut best: Option<(FormatSpec, f64)> = None;
        for spec in choice.candidates(n) {
            let d = distortion_rate(&pooled, spec, scheme)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((spec, d));
            }
        }
        let (spec, avg) = best.ok_or_else(|| NnError::Config(format!("{choice} has no {n}-bit format")))?;
        let mut row = layers
            .iter()
            .map(|l| distortion_rate(l, spec, scheme))
            .collect::<Result<Vec<_>, _>>()?;
        row.push(avg);
        grid.specs.push(spec);
        grid.rows.push(row);
    }
    Ok(grid)
}

/// `Δ(d(R)) = d_A − d_B` per bit width and layer, plus the all-weights column.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaGrid {
    pub bit_widths: Vec<u32>,
    pub a: DistortionGrid,
    pub b: DistortionGrid,
    pub delta: Vec<Vec<f64>>,
}

pub fn delta_distortion(
    layers: &[&[f64]],
    a: FamilyChoice,
    b: FamilyChoice,
    bit_widths: &[u32],
    scheme: QuantScheme,
) -> Result<DeltaGrid, NnError> {
    let ga = distortion_grid(layers, a, bit_widths, scheme)?;
    let gb = distortion_grid(layers, b, bit_widths, scheme)?;
    let delta = ga
        .rows
        .iter()
        .zip(&gb.rows)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect();
    Ok(DeltaGrid { bit_widths: bit_widths.to_vec(), a: ga, b: gb, delta })
}

/// Percentage of real patterns whose magnitude is at most `beta_max`.
pub fn coverage(spec: FormatSpec, beta_max: f64) -> Result<f64, NnError> {
    coverage_where(spec, |v| v.abs() <= beta_max)
}

/// Percentage of real patterns in `[-beta_max, beta_max)`, the range of a
/// two's-complement register.
pub fn coverage_half_open(spec: FormatSpec, beta_max: f64) -> Result<f64, NnError> {
    coverage_where(spec, |v| -beta_max <= v && v < beta_max)
}

fn coverage_where(spec: FormatSpec, inside: impl Fn(f64) -> bool) -> Result<f64, NnError> {
    let values = enumerate_values(spec)?;
    let count = values.iter().filter(|(_, v)| inside(*v)).count();
    Ok(100.0 * count as f64 / values.len() as f64)
}

/// β used for a linear scheme in a sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaChoice {
    Fixed(Beta),
    /// The β in `{1, 2, 4, 8}` with the best accuracy on the calibration
    /// samples (first of equals).
    Auto,
}

impl FromStr for BetaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(BetaChoice::Auto);
        }
        s.parse::<u32>()
            .ok()
            .and_then(|b| Beta::new(b).ok())
            .map(BetaChoice::Fixed)
            .ok_or_else(|| format!("beta must be one of 1, 2, 4, 8 or auto, got '{s}'"))
    }
}

/// Scheme with β resolved; `auto` is decided on `calib_set`.
pub fn resolve_scheme(
    net: &Network,
    kind: SchemeKind,
    beta: BetaChoice,
    spec: FormatSpec,
    calib: &Calibration,
    calib_set: &DatasetSplit,
) -> Result<QuantScheme, NnError> {
    Ok(match (kind, beta) {
        (SchemeKind::Round, _) => QuantScheme::Round,
        (k, BetaChoice::Fixed(b)) => k.with_beta(b),
        (k, BetaChoice::Auto) => {
            let mut best: Option<(QuantScheme, f64)> = None;
            for b in Beta::ALL {
                let scheme = k.with_beta(b);
                let acc = evaluate(&QuantizedNet::new(net, spec, scheme, calib)?, calib_set)?;
                if best.is_none_or(|(_, a)| acc > a) {
                    best = Some((scheme, acc));
                }
            }
            best.expect("four candidates").0
        }
    })
}

/// One evaluated sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub spec: FormatSpec,
    pub scheme: QuantScheme,
    pub accuracy: f64,
}

/// Accuracy of `net` on `test` for every spec × scheme, in the given order.
pub fn sweep(
    net: &Network,
    specs: &[FormatSpec],
    schemes: &[(SchemeKind, BetaChoice)],
    calib: &Calibration,
    calib_set: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<Vec<SweepCell>, NnError> {
    let mut out = Vec::with_capacity(specs.len() * schemes.len());
    for &spec in specs {
        for &(kind, beta) in schemes {
            let scheme = resolve_scheme(net, kind, beta, spec, calib, calib_set)?;
            let accuracy = evaluate(&QuantizedNet::new(net, spec, scheme, calib)?, test)?;
            out.push(SweepCell { spec, scheme, accuracy });
        }
    }
    Ok(out)
}
