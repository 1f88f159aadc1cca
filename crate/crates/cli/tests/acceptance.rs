//! Acceptance criteria 1–11, one PASS/FAIL/SKIP line each.
//!
//! Trained baselines and sweep results are cached under `results/` at the
//! workspace root, so reruns only re-evaluate. The correctness criteria
//! (1, 2, 3, 11) fail the test; the paper-reproduction criteria are reported
//! as measured. Criterion 7 reads the comparison CSV written by
//! `lowprec train --compare --out results/compare-mnist.csv` and runs it
//! itself only with `LOWPREC_FULL=1`; criterion 10 runs only with
//! `LOWPREC_CIFAR=1` and the CIFAR-10 files present.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use lowprec_cli::experiments::{self, SweepContext};
use lowprec_core::emac::{dot, quire_width, DotEngine, Product, Quire};
use lowprec_core::numformats::enumerate_values;
use lowprec_core::{FormatSpec, QuantScheme, SchemeKind};
use lowprec_nn::analysis::{delta_distortion, resolve_scheme, BetaChoice, FamilyChoice};
use lowprec_nn::io::{self, DatasetKind, SweepRow};
use lowprec_nn::train::{loss_and_gradients, training_loss, Target};
use lowprec_nn::{
    evaluate, Arch, BatchNorm, Calibration, Conv2d, DatasetSplit, Dense, Layer, Network, Pool, QuantizedNet, Tensor,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Skip, detail: detail.into() }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_root() -> PathBuf {
    std::env::var_os(experiments::DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data"))
}

fn cache_dir() -> PathBuf {
    let d = workspace().join("results/acceptance");
    fs::create_dir_all(&d).unwrap();
    d
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn spec(s: &str) -> FormatSpec {
    s.parse().unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = vec![];
    let mut count = 0;
    for n in 5..=16 {
        for es in 0..=2 {
            let s = FormatSpec::posit(n, es).unwrap();
            let start = Instant::now();
            let mask = (1u32 << n) - 1;
            let half = 1i64 << (n - 1);
            let mut prev = f64::NEG_INFINITY;
            let mut ok = true;
            // two's-complement order, NaR (the most negative integer) excluded
            for i in (-half + 1)..half {
                let bits = (i as u32) & mask;
                let v = s.value(bits).unwrap();
                ok &= v > prev && s.round(v).unwrap() == bits;
                prev = v;
            }
            ok &= s.value(half as u32).is_err();
            let t = start.elapsed().as_secs_f64();
            worst = worst.max(t);
            ok &= t < 1.0;
            count += 1;
            if !ok {
                failures.push(s.to_string());
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{count} posit specs (n 5..16, es 0..2): exhaustive round trip and monotone order, slowest {:.3} s (< 1 s){}",
            worst,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(" ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Dot product over exact integers: every value of a format with at most 8
/// bits is an integer multiple of `2^lsb`, so products are integers at
/// `2^(2·lsb)` and the sum is exact in i128. The result is the nearest value
/// by exhaustive search, ties to the even pattern, with the zero result
/// encoded as pattern 0 and posits never rounding a nonzero sum to zero.
struct Oracle {
    scale_bits: i32,
    /// (pattern, value · 2^-lsb) of every real pattern but the negative zero
    table: Vec<(u32, i128)>,
    coeff: Vec<Option<i128>>,
    posit: bool,
}

impl Oracle {
    fn new(s: FormatSpec) -> Oracle {
        let values = enumerate_values(s).unwrap();
        let lsb = values
            .iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|(_, v)| {
                let (m, e) = frexp_int(*v);
                e + m.trailing_zeros() as i32
            })
            .min()
            .unwrap();
        let mut coeff = vec![None; 1 << s.bits()];
        let mut table = vec![];
        for (bits, v) in values {
            let c = (v * 2f64.powi(-lsb)) as i128;
            assert_eq!(c as f64 * 2f64.powi(lsb), v);
            coeff[bits as usize] = Some(c);
            if v != 0.0 || bits == 0 {
                table.push((bits, c));
            }
        }
        Oracle { scale_bits: -lsb, table, coeff, posit: matches!(s, FormatSpec::Posit(_)) }
    }

    fn dot(&self, w: &[u32], a: &[u32]) -> u32 {
        let sum: i128 = w
            .iter()
            .zip(a)
            .map(|(x, y)| self.coeff[*x as usize].unwrap() * self.coeff[*y as usize].unwrap())
            .sum();
        if sum == 0 {
            return 0;
        }
        let mut best: Option<(u32, i128)> = None;
        for &(bits, c) in &self.table {
            if self.posit && c == 0 {
                continue;
            }
            let dist = (sum - (c << self.scale_bits)).abs();
            best = match best {
                None => Some((bits, dist)),
                Some((b, d)) if dist < d || (dist == d && bits % 2 == 0 && b % 2 == 1) => Some((bits, dist)),
                keep => keep,
            };
        }
        best.unwrap().0
    }
}

/// `(m, e)` with `x = m · 2^e`, `m` an odd-or-zero integer shifted left as needed.
fn frexp_int(x: f64) -> (u64, i32) {
    let bits = x.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), exp - 1075)
    }
}

fn criterion_2() -> Outcome {
    const DOTS: usize = 10_000;
    const MAX_LEN: usize = 32;
    let start = Instant::now();
    let mut specs = vec![];
    for n in 5..=8u32 {
        for es in 0..=2 {
            specs.push(FormatSpec::posit(n, es).unwrap());
        }
        for we in 3..=4 {
            specs.push(FormatSpec::minifloat(n, we).unwrap());
        }
        for nf in [0, n / 2, n - 1] {
            specs.push(FormatSpec::fixed(n, nf).unwrap());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = vec![];
    for &s in &specs {
        let oracle = Oracle::new(s);
        let real: Vec<u32> = oracle.coeff.iter().enumerate().filter(|(_, c)| c.is_some()).map(|(b, _)| b as u32).collect();
        let engine = DotEngine::new(s, MAX_LEN).unwrap();
        let mut bad = 0;
        for _ in 0..DOTS {
            let len = rng.random_range(1..=MAX_LEN);
            let w: Vec<u32> = (0..len).map(|_| real[rng.random_range(0..real.len())]).collect();
            let a: Vec<u32> = (0..len).map(|_| real[rng.random_range(0..real.len())]).collect();
            let expect = oracle.dot(&w, &a);
            let staged = dot(s, &w, &a, MAX_LEN).unwrap();
            let (cw, ca) = (engine.coeffs(&w).unwrap(), engine.coeffs(&a).unwrap());
            let fast = engine.dot(cw.as_slice(), ca.as_slice()).unwrap();
            if staged != expect || fast != expect {
                bad += 1;
            }
        }
        if bad > 0 {
            mismatches.push(format!("{s}: {bad}"));
        }
    }
    let t = start.elapsed().as_secs_f64();
    verdict(
        mismatches.is_empty() && t < 60.0,
        format!(
            "{} specs × {DOTS} random dot products (length ≤ {MAX_LEN}), staged and fast paths vs exact integer oracle: {} in {t:.1} s (< 60 s)",
            specs.len(),
            if mismatches.is_empty() { "all equal".to_string() } else { format!("mismatches {}", mismatches.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut problems = vec![];
    let mut cells = 0;
    for n in [5u32, 6, 8, 12, 16, 24, 32] {
        for es in 0..=3u32 {
            if es + 3 > n {
                continue;
            }
            for n_op in [1usize, 2, 3, 16, 100, 784, 1 << 20] {
                let log2 = (n_op as f64).log2().ceil() as u32;
                let expected = log2 + (1 << (es + 2)) * (n - 2) + 2;
                let got = quire_width(n, es, n_op).unwrap().width;
                cells += 1;
                if got != expected {
                    problems.push(format!("({n},{es},{n_op}) {got} != {expected}"));
                }
            }
        }
    }
    let anchor = quire_width(8, 1, 784).unwrap().width;
    if anchor != 60 {
        problems.push(format!("(8,1,784) -> {anchor}"));
    }
    // worst-case accumulations: N_op products of maxpos², all one sign, and
    // a random mix; none may overflow the sized register
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut stress = 0;
    for (n, es) in [(8, 0), (8, 1), (8, 2), (6, 2), (16, 1)] {
        let s = FormatSpec::posit(n, es).unwrap();
        let maxpos_bits = (1u32 << (n - 1)) - 1;
        let minpos_bits = 1u32;
        let neg_max = (1u32 << n) - maxpos_bits;
        for n_op in [1usize, 7, 784, 4096] {
            for round in 0..4 {
                let mut q = Quire::new(s, n_op).unwrap();
                for _ in 0..n_op {
                    let (w, a) = match round {
                        0 => (maxpos_bits, maxpos_bits),
                        1 => (neg_max, maxpos_bits),
                        2 => (minpos_bits, minpos_bits),
                        _ => {
                            let pick = |r: &mut ChaCha8Rng| match r.random_range(0..4) {
                                0 => maxpos_bits,
                                1 => neg_max,
                                _ => r.random_range(1..maxpos_bits),
                            };
                            (pick(&mut rng), pick(&mut rng))
                        }
                    };
                    if let Err(e) = q.accumulate(Product::of(s, w, a).unwrap()) {
                        problems.push(format!("{s} N_op {n_op}: {e}"));
                        break;
                    }
                }
                if !q.fits() {
                    problems.push(format!("{s} N_op {n_op}: register overflow"));
                }
                stress += 1;
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "{cells} (n, es, N_op) widths match the closed form, (8,1,784) -> {anchor} bits; {stress} worst-case accumulations fit{}",
            if problems.is_empty() { String::new() } else { format!("; problems: {}", problems.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- shared data

struct Baseline {
    net: Network,
    train_secs: f64,
    accuracy: f64,
    train: DatasetSplit,
    test: DatasetSplit,
}

/// The exact-trained FC baseline, trained once and cached with its
/// training time.
fn baseline(kind: DatasetKind) -> Option<Baseline> {
    let root = data_root();
    if !kind.available(&root) {
        return None;
    }
    let (train, test) = experiments::load_dataset(&root, kind).unwrap();
    let model = cache_dir().join(format!("{}-fc.cht1", kind.name()));
    let secs = cache_dir().join(format!("{}-fc.secs", kind.name()));
    let cached = model.is_file() && secs.is_file();
    let (net, train_secs) = if cached {
        let t = fs::read_to_string(&secs).unwrap().trim().parse().unwrap();
        (io::load_model(&model).unwrap(), t)
    } else {
        let start = Instant::now();
        let net = experiments::train_model(Arch::Fc, &train, &TrainConfig::baseline(), |l| eprintln!("{l}")).unwrap();
        let t = start.elapsed().as_secs_f64();
        io::save_model(&net, &model).unwrap();
        fs::write(&secs, format!("{t}\n")).unwrap();
        // evaluate what was saved, so cached and fresh runs agree
        (io::load_model(&model).unwrap(), t)
    };
    let accuracy = evaluate(&net, &test).unwrap();
    Some(Baseline { net, train_secs, accuracy, train, test })
}

fn criterion_4(b: Option<&Baseline>) -> Outcome {
    let Some(b) = b else { return skip("MNIST not available") };
    verdict(
        b.accuracy >= 98.2 && b.train_secs <= 600.0,
        format!(
            "MNIST FC exact: {:.2}% (≥ 98.2, paper 98.46), trained in {:.0} s (≤ 600)",
            b.accuracy, b.train_secs
        ),
    )
}

/// Round-scheme sweep of every family at 5–8 bits, resumed from the cache.
fn round_sweep(b: &Baseline, dataset: &str) -> (Vec<SweepRow>, f64) {
    let csv = cache_dir().join(format!("sweep-{dataset}-fc-round.csv"));
    let families = [FamilyChoice::Posit(None), FamilyChoice::Float(None), FamilyChoice::Fixed(None)];
    let plan = experiments::sweep_plan(&families, &[5, 6, 7, 8], &[SchemeKind::Round], BetaChoice::Auto);
    let existing = io::read_sweep_csv(&csv).unwrap();
    let calib_set = b.train.head(lowprec_nn::quantized::CALIBRATION_SAMPLES);
    let calib = Calibration::from_data(&b.net, &calib_set, calib_set.len()).unwrap();
    let ctx = SweepContext {
        net: &b.net,
        dataset,
        arch: "fc",
        calib: &calib,
        calib_set: &calib_set,
        test: &b.test,
    };
    let start = Instant::now();
    let rows = experiments::run_sweep(
        &ctx,
        &plan,
        &existing,
        |rows| experiments::write_csv_atomic(rows, &csv),
        |l| eprintln!("{l}"),
    )
    .unwrap();
    (rows, start.elapsed().as_secs_f64())
}

fn acc(rows: &[SweepRow], format: &str, scheme: &str) -> f64 {
    rows.iter()
        .find(|r| r.format == format && r.scheme == scheme)
        .unwrap_or_else(|| panic!("no row for {format} {scheme}"))
        .accuracy
}

fn best(rows: &[SweepRow], family: &str, n: u32) -> (f64, String) {
    rows.iter()
        .filter(|r| r.format.starts_with(family) && r.n == n && r.scheme == "round")
        .map(|r| (r.accuracy, r.format.clone()))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

fn criterion_5(rows: &[SweepRow], secs: f64) -> Outcome {
    let mut d = String::new();
    let mut ok = true;
    for (fmt, paper, tol) in [("posit8es1", 98.45, 0.5), ("posit5es1", 98.30, 0.5), ("float5e4", 93.91, 3.0)] {
        let a = acc(rows, fmt, "round");
        let good = (a - paper).abs() <= tol;
        ok &= good;
        let _ = write!(d, "{fmt} {a:.2} (paper {paper}±{tol}{}), ", if good { "" } else { " MISS" });
    }
    let (fx, fx_fmt) = best(rows, "fixed", 8);
    let good = (fx - 98.31).abs() <= 0.5;
    ok &= good;
    let _ = write!(d, "best fixed8 {fx_fmt} {fx:.2} (paper 98.31±0.5{}); ", if good { "" } else { " MISS" });
    let mut order = vec![];
    for n in 5..=8 {
        let (p, f, x) = (best(rows, "posit", n).0, best(rows, "float", n).0, best(rows, "fixed", n).0);
        let holds = p >= f && f >= x;
        ok &= holds;
        order.push(format!("{n}b {p:.2}/{f:.2}/{x:.2}{}", if holds { "" } else { " ✗" }));
    }
    let _ = write!(d, "posit ≥ float ≥ fixed: {}; sweep time {secs:.0} s (≤ 900)", order.join(", "));
    verdict(ok && secs <= 900.0, d)
}

fn criterion_6(b: &Baseline, rows: &[SweepRow]) -> Outcome {
    let s = spec("posit5es0");
    let round = acc(rows, "posit5es0", "round");
    let calib_set = b.train.head(lowprec_nn::quantized::CALIBRATION_SAMPLES);
    let calib = Calibration::from_data(&b.net, &calib_set, calib_set.len()).unwrap();
    let scheme = resolve_scheme(&b.net, SchemeKind::LinearShift, BetaChoice::Auto, s, &calib, &calib_set).unwrap();
    let shift = evaluate(&QuantizedNet::new(&b.net, s, scheme, &calib).unwrap(), &b.test).unwrap();
    let beta = scheme.beta().unwrap();
    verdict(
        shift >= 98.0 - 0.7 && round <= 92.0 + 0.7,
        format!(
            "posit5es0 linear-shift (beta {beta}, chosen on calibration samples) {shift:.2}% (≥ 98.0−0.7, paper 98.28) vs round {round:.2}% (≤ 92.0+0.7, paper 91.05)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let csv = workspace().join("results/compare-mnist.csv");
    let formats: Vec<FormatSpec> = experiments::COMPARE_FORMATS.iter().map(|f| spec(f)).collect();
    let seeds: Vec<u64> = (0..10).collect();
    if flag("LOWPREC_FULL") {
        let root = data_root();
        if DatasetKind::Mnist.available(&root) {
            let (train, test) = experiments::load_dataset(&root, DatasetKind::Mnist).unwrap();
            let done = io::read_training_csv(&csv).unwrap_or_default();
            experiments::compare(
                &train,
                &test,
                &formats,
                &seeds,
                &TrainConfig::baseline(),
                &done,
                |rows| experiments::write_csv_atomic(rows, &csv),
                |l| eprintln!("{l}"),
            )
            .unwrap();
        }
    }
    let rows = io::read_training_csv(&csv).unwrap_or_default();
    let means = experiments::mean_by_format(&rows);
    let mean = |f: &str| means.iter().find(|(g, _, n)| g == f && *n == seeds.len()).map(|m| m.1);
    let summary = means.iter().map(|(f, m, n)| format!("{f} {m:.3} ({n} runs)")).collect::<Vec<_>>().join(", ");
    match (mean("posit16es1"), mean("float16e5"), mean("posit32es2"), mean("float32e8")) {
        (Some(p16), Some(f16), Some(p32), Some(f32)) => {
            let gap = p16 - f16;
            verdict(
                gap >= 3.0 && p32 >= 97.5 && f32 >= 97.5,
                format!(
                    "mean over seeds 0..9: posit16 − float16 = {gap:.3} points (≥ 3, paper 96.535 − 90.646); posit32 {p32:.3}, float32 {f32:.3} (≥ 97.5)"
                ),
            )
        }
        _ => skip(format!(
            "comparison incomplete in {} [{}]; run `lowprec train --compare --out results/compare-mnist.csv` or LOWPREC_FULL=1",
            csv.display(),
            if summary.is_empty() { "no runs".into() } else { summary }
        )),
    }
}

fn criterion_8(b: &Baseline) -> Outcome {
    let start = Instant::now();
    let weights = b.net.mac_weights();
    let mut ok = true;
    let mut d = String::new();
    for other in [FamilyChoice::Fixed(None), FamilyChoice::Float(None)] {
        let g = delta_distortion(&weights, FamilyChoice::Posit(None), other, &[5], QuantScheme::Round).unwrap();
        let row = &g.delta[0];
        let neg = row.iter().all(|v| *v < 0.0);
        ok &= neg;
        let _ = write!(
            d,
            "Δ {}−{}: [{}]{}; ",
            g.a.specs[0],
            g.b.specs[0],
            row.iter().map(|v| io::format_number(*v)).collect::<Vec<_>>().join(", "),
            if neg { "" } else { " not all negative" }
        );
    }
    let t = start.elapsed().as_secs_f64();
    let _ = write!(d, "per layer and pooled, 5-bit, {t:.1} s (< 60)");
    verdict(ok && t < 60.0, d)
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let Some(b) = baseline(DatasetKind::Fashion) else { return skip("Fashion-MNIST not available") };
    let calib_set = b.train.head(lowprec_nn::quantized::CALIBRATION_SAMPLES);
    let calib = Calibration::from_data(&b.net, &calib_set, calib_set.len()).unwrap();
    let run = |f: &str| evaluate(&QuantizedNet::new(&b.net, spec(f), QuantScheme::Round, &calib).unwrap(), &b.test).unwrap();
    let (p, f) = (run("posit5es1"), run("float5e4"));
    let wall = start.elapsed().as_secs_f64();
    // a cached model skips training, so count its recorded training time
    let total = if wall < b.train_secs { wall + b.train_secs } else { wall };
    verdict(
        p - f >= 3.0 && total <= 1200.0,
        format!(
            "Fashion FC exact {:.2}% (paper 89.51); posit5es1 {p:.2}% vs float5e4 {f:.2}% (gap {:.2} ≥ 3, paper 88.14 vs 83.00); {total:.0} s (≤ 1200)",
            b.accuracy,
            p - f
        ),
    )
}

fn criterion_10() -> Outcome {
    let root = data_root();
    if !flag("LOWPREC_CIFAR") {
        return skip("CIFAR-10 run is gated; set LOWPREC_CIFAR=1 with the binary batches under <data>/cifar10");
    }
    if !DatasetKind::Cifar10.available(&root) {
        return skip(format!("CIFAR-10 not available under {}", root.join("cifar10").display()));
    }
    let (train, test) = experiments::load_dataset(&root, DatasetKind::Cifar10).unwrap();
    let model = cache_dir().join("cifar10-conv.cht1");
    let net = if model.is_file() {
        io::load_model(&model).unwrap()
    } else {
        let cfg = TrainConfig { lr: 0.01, ..TrainConfig::baseline() };
        let net = experiments::train_model(Arch::CifarConv, &train, &cfg, |l| eprintln!("{l}")).unwrap();
        io::save_model(&net, &model).unwrap();
        io::load_model(&model).unwrap()
    };
    let base = evaluate(&net, &test).unwrap();
    let calib_set = train.head(lowprec_nn::quantized::CALIBRATION_SAMPLES);
    let calib = Calibration::from_data(&net, &calib_set, calib_set.len()).unwrap();
    let run = |s: FormatSpec| evaluate(&QuantizedNet::new(&net, s, QuantScheme::Round, &calib).unwrap(), &test).unwrap();
    let p8 = run(spec("posit8es1"));
    let fixed = FamilyChoice::Fixed(None).candidates(8).into_iter().map(run).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        base >= 78.0 && base - p8 <= 1.5 && fixed < 50.0,
        format!(
            "conv baseline {base:.2}% (≥ 78, paper 81.37); posit8es1 {p8:.2}% (within 1.5, paper 80.40); best fixed8 {fixed:.2}% (< 50, paper 24.27)"
        ),
    )
}

// ---------------------------------------------------------------- 11

fn params(net: &mut Network) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
    net.layers
        .iter_mut()
        .filter_map(|l| match l {
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::BatchNorm(b) => Some((&mut b.gamma, &mut b.beta)),
            _ => None,
        })
        .collect()
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over every parameter and input entry.
fn worst_gradient_error(net: &Network, x: &Tensor, target: Target<'_>) -> (f64, usize) {
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
    let (_, grads, dx) = loss_and_gradients(net, x, target).unwrap();
    let grads: Vec<_> = grads.into_iter().filter(|g| !g.weight.is_empty()).collect();
    let h = 1e-6;
    let mut probe = net.clone();
    let (mut worst, mut checked) = (0.0f64, 0);
    for (li, g) in grads.iter().enumerate() {
        for (which, analytic) in [(0, &g.weight), (1, &g.bias)] {
            for (i, &a) in analytic.iter().enumerate() {
                let nudge = |n: &mut Network, v: f64| {
                    let mut p = params(n);
                    let t = if which == 0 { &mut *p[li].0 } else { &mut *p[li].1 };
                    t[i] += v;
                };
                nudge(&mut probe, h);
                let up = training_loss(&probe, x, target).unwrap();
                nudge(&mut probe, -2.0 * h);
                let down = training_loss(&probe, x, target).unwrap();
                nudge(&mut probe, h);
                worst = worst.max(rel(a, (up - down) / (2.0 * h)));
                checked += 1;
            }
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data[i] += h;
        let up = training_loss(net, &xp, target).unwrap();
        xp.data[i] -= 2.0 * h;
        let down = training_loss(net, &xp, target).unwrap();
        worst = worst.max(rel(dx.data[i], (up - down) / (2.0 * h)));
        checked += 1;
    }
    (worst, checked)
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut randomize = |mut net: Network| {
        for (w, b) in params(&mut net) {
            w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        net
    };
    let fc = randomize(Network::new(vec![
        Layer::Dense(Dense::zeros(6, 5)),
        Layer::ReLU,
        Layer::Dense(Dense::zeros(5, 4)),
        Layer::Softmax,
    ]));
    let conv_max = randomize(Network::new(vec![
        Layer::Conv2d(Conv2d::zeros(2, 3, 3, 1, 1)),
        Layer::BatchNorm(BatchNorm::identity(3)),
        Layer::ReLU,
        Layer::MaxPool(Pool { size: 2, stride: 2 }),
        Layer::Flatten,
        Layer::Dense(Dense::zeros(12, 3)),
        Layer::Softmax,
    ]));
    let conv_avg = randomize(Network::new(vec![
        Layer::Conv2d(Conv2d::zeros(1, 2, 3, 2, 0)),
        Layer::AvgPool(Pool { size: 2, stride: 1 }),
        Layer::Flatten,
        Layer::Dense(Dense::zeros(2, 3)),
        Layer::BatchNorm(BatchNorm::identity(3)),
        Layer::Dense(Dense::zeros(3, 2)),
    ]));
    let mut data = ChaCha8Rng::seed_from_u64(12);
    let mut input = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| data.random_range(-1.0..1.0)).collect(), shape).unwrap()
    };
    let x_fc = input(vec![3, 6]);
    let x_max = input(vec![3, 2, 4, 4]);
    let x_avg = input(vec![4, 1, 5, 5]);
    let t_avg = input(vec![4, 2]);
    let cases = [
        ("dense/relu/softmax-ce", worst_gradient_error(&fc, &x_fc, Target::Labels(&[0, 3, 1]))),
        ("conv/bn/maxpool", worst_gradient_error(&conv_max, &x_max, Target::Labels(&[2, 0, 1]))),
        ("strided conv/avgpool/bn, mse", worst_gradient_error(&conv_avg, &x_avg, Target::Values(&t_avg))),
    ];
    let t = start.elapsed().as_secs_f64();
    let worst = cases.iter().map(|(_, (w, _))| *w).fold(0.0, f64::max);
    let total: usize = cases.iter().map(|(_, (_, c))| c).sum();
    verdict(
        worst <= 1e-4 && t < 10.0,
        format!(
            "{total} gradient entries over {} layer mixes, worst relative error {worst:.2e} (≤ 1e-4), {t:.1} s (< 10)",
            cases.len()
        ),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(u32, Outcome)> = vec![];
    let mut report = |n: u32, o: Outcome| {
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("criterion {n:>2}: {tag}  {}", o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    let mnist = baseline(DatasetKind::Mnist);
    report(4, criterion_4(mnist.as_ref()));
    match &mnist {
        Some(b) => {
            let (rows, secs) = round_sweep(b, "mnist");
            report(5, criterion_5(&rows, secs));
            report(6, criterion_6(b, &rows));
        }
        None => {
            report(5, skip("MNIST not available"));
            report(6, skip("MNIST not available"));
        }
    }
    report(7, criterion_7());
    match &mnist {
        Some(b) => report(8, criterion_8(b)),
        None => report(8, skip("MNIST not available")),
    }
    report(9, criterion_9());
    report(10, criterion_10());
    report(11, criterion_11());

    let mut summary = String::new();
    for (n, o) in &results {
        let _ = writeln!(summary, "criterion {n:>2}: {:?}  {}", o.status, o.detail);
    }
    let _ = fs::write(cache_dir().join("summary.txt"), &summary);
    let broken: Vec<u32> = results
        .iter()
        .filter(|(n, o)| [1, 2, 3, 11].contains(n) && o.status != Status::Pass)
        .map(|(n, _)| *n)
        .collect();
    assert!(broken.is_empty(), "correctness criteria failed: {broken:?}");
}

