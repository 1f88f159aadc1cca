use lowprec_core::numformats::enumerate_values;
use lowprec_core::quantize::{compute_scales, descale, nearest_power_of_two, quantize_tensor, quantize_weights};
use lowprec_core::{Beta, FormatSpec, LayerStats, QuantScheme};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = FormatSpec> {
    prop_oneof![
        (5u32..=8, 0u32..=2).prop_map(|(n, es)| FormatSpec::posit(n, es).unwrap()),
        (5u32..=8, 3u32..=4).prop_map(|(n, we)| FormatSpec::minifloat(n, we).unwrap()),
        (5u32..=8).prop_flat_map(|n| (Just(n), 0..n)).prop_map(|(n, nf)| FormatSpec::fixed(n, nf).unwrap()),
    ]
}

fn beta_strategy() -> impl Strategy<Value = Beta> {
    prop::sample::select(Beta::ALL.to_vec())
}

/// Distance from `beta` to the next representable value above it.
fn ulp_above(spec: FormatSpec, beta: f64) -> f64 {
    let vals = enumerate_values(spec).unwrap();
    vals.iter()
        .map(|v| v.1)
        .find(|&v| v > beta)
        .map(|v| v - beta)
        .unwrap_or(0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn round_scheme_is_idempotent(spec in spec_strategy(), t in prop::collection::vec(-50.0f64..50.0, 1..64)) {
        let once = quantize_tensor(&t, &[t.len()], spec, 1.0).unwrap().values();
        let twice = quantize_tensor(&once, &[t.len()], spec, 1.0).unwrap().values();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn linear_weights_land_in_beta_range(
        spec in spec_strategy(),
        beta in beta_strategy(),
        shift in any::<bool>(),
        half in prop::collection::vec(-3.0f64..3.0, 1..32),
        lopsided in prop::collection::vec(-3.0f64..3.0, 1..32),
    ) {
        let b = beta.as_f64();
        // the shift variant may round α2 up by a factor of at most √2
        let slack = if shift { std::f64::consts::SQRT_2 } else { 1.0 };
        let scheme = if shift { QuantScheme::LinearShift(beta) } else { QuantScheme::LinearMult(beta) };

        // symmetric weights: α2·max|W| = β exactly
        let mut sym = half.clone();
        sym.extend(half.iter().map(|x| -x));
        // any range straddling zero: α2·max|W| ≤ 2β
        let mut straddle = lopsided.clone();
        straddle.push(0.0);
        for (w, bound) in [(sym, b * slack), (straddle, 2.0 * b * slack)] {
            let stats = LayerStats::from_weights(&w, 1.0);
            prop_assume!(stats.max_weight > stats.min_weight);
            let (_, a2) = scheme.scales(&stats).unwrap();
            let q = quantize_tensor(&w, &[w.len()], spec, a2).unwrap();
            let tol = ulp_above(spec, bound);
            for v in q.values() {
                prop_assert!(v.abs() <= bound + tol, "{} outside ±{}", v, bound);
            }
        }
    }

    #[test]
    fn shift_scales_are_powers_of_two(
        beta in beta_strategy(),
        amax in 1e-3f64..1e3,
        lo in -5.0f64..0.0,
        hi in 0.001f64..5.0,
    ) {
        let stats = LayerStats { max_abs_activation: amax, max_weight: hi, min_weight: lo };
        let (a1, a2) = QuantScheme::LinearShift(beta).scales(&stats).unwrap();
        for a in [a1, a2] {
            prop_assert_eq!(a.log2().fract(), 0.0);
            prop_assert_eq!(2f64.powi(a.log2() as i32), a);
        }
        // within a factor √2 of the exact scale
        let (m1, m2) = compute_scales(&stats, beta).unwrap();
        prop_assert!((a1 / m1).log2().abs() <= 0.5 + 1e-12);
        prop_assert!((a2 / m2).log2().abs() <= 0.5 + 1e-12);
    }

    #[test]
    fn unit_scales_reproduce_round(spec in spec_strategy(), t in prop::collection::vec(-20.0f64..20.0, 1..32)) {
        // β = 1 with Max(A) = 1 gives α1 = 1; α = 1 is the rounding pathway
        let stats = LayerStats { max_abs_activation: 1.0, max_weight: 1.0, min_weight: -1.0 };
        let (a1, a2) = QuantScheme::LinearMult(Beta::new(1).unwrap()).scales(&stats).unwrap();
        prop_assert_eq!((a1, a2), (1.0, 1.0));
        let lin = quantize_tensor(&t, &[t.len()], spec, a1).unwrap();
        let rnd = quantize_tensor(&t, &[t.len()], spec, 1.0).unwrap();
        prop_assert_eq!(lin.bits, rnd.bits);
    }

    #[test]
    fn zero_stays_zero(spec in spec_strategy(), beta in beta_strategy()) {
        let w = [0.0, -0.5, 0.25];
        for scheme in [QuantScheme::Round, QuantScheme::LinearMult(beta), QuantScheme::LinearShift(beta)] {
            prop_assert_eq!(quantize_weights(&w, spec, scheme).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn shift_descale_is_exact(y in -1e6f64..1e6, e1 in -10i32..10, e2 in -10i32..10) {
        let d = descale(y, 2f64.powi(e1), 2f64.powi(e2));
        prop_assert_eq!(d, y * 2f64.powi(-e1 - e2));
    }

    #[test]
    fn nearest_power_of_two_minimises_log_distance(a in 1e-6f64..1e6) {
        let p = nearest_power_of_two(a);
        let d = (a.log2() - p.log2()).abs();
        prop_assert!(d <= 0.5 + 1e-12);
    }
}

#[test]
fn scale_examples() {
    let s = LayerStats { max_abs_activation: 10.0, max_weight: 0.3, min_weight: -0.5 };
    let one = Beta::new(1).unwrap();
    let (a1, a2) = compute_scales(&s, one).unwrap();
    // 2β / (0.3 − (−0.5)) = 2.5
    assert!((a2 - 2.5).abs() < 1e-12);
    assert!((a1 - 0.1).abs() < 1e-15);
    let spec = FormatSpec::posit(8, 1).unwrap();
    let q = quantize_tensor(&[10.0], &[1], spec, a1).unwrap();
    assert_eq!(q.values(), vec![1.0]);
    assert_eq!(nearest_power_of_two(2.5), 2.0);
    assert_eq!(descale(5.0, 0.1, 2.5), 20.0);
    // α1 = 2^-3, α2 = 2^1: y scaled by 2^2
    assert_eq!(descale(3.0, 0.125, 2.0), 12.0);

    let eight = Beta::new(8).unwrap();
    let s8 = LayerStats { max_abs_activation: 8.0, ..s };
    assert_eq!(compute_scales(&s8, eight).unwrap().0, 1.0);
}
