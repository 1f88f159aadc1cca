//! The `lowprec` command line: argument parsing, dispatch and the
//! experiment workflows behind each subcommand.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error.

pub mod experiments;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use lowprec_core::numformats::FORMAT_GRAMMAR;
use lowprec_core::{Beta, FormatError, FormatSpec, QuantScheme, SchemeKind};
use lowprec_nn::analysis::{self, BetaChoice, FamilyChoice};
use lowprec_nn::io::{self, CoverageRow, DatasetKind, DistortionRow, IoError, TrainingRow};
use lowprec_nn::quantized::CALIBRATION_SAMPLES;
use lowprec_nn::{evaluate, Arch, Calibration, NnError, Precision, QuantizedNet, TrainConfig};
use thiserror::Error;

use experiments::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Nn(NnError::Config(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lowprec", version, about = "Low-precision training and inference experiments")]
pub struct Cli {
    /// Dataset root [default: $CHEETAH_DATA_DIR, then ./data]
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network, or compare low-precision training runs
    Train(TrainArgs),
    /// Test accuracy of a saved model under one format and scheme
    Infer(InferArgs),
    /// Accuracy over formats × bit widths × schemes
    Sweep(SweepArgs),
    /// Per-layer distortion rates of a saved model's weights
    Distortion(DistortionArgs),
    /// Share of a format's real patterns inside [-beta_max, beta_max]
    Coverage(CoverageArgs),
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).ok_or_else(|| format!("unknown dataset '{s}' (expected mnist, fashion or cifar10)"))
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    Arch::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Arch::ALL.iter().map(|a| a.name()).collect();
        format!("unknown architecture '{s}' (expected one of {})", names.join(", "))
    })
}

/// Any rejected format string is reported together with the grammar.
fn parse_format(s: &str) -> Result<FormatSpec, String> {
    s.parse::<FormatSpec>().map_err(|e| match e {
        FormatError::Parse { .. } => e.to_string(),
        _ => format!("{e}; formats are {FORMAT_GRAMMAR}"),
    })
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    if s == "exact" {
        Ok(Precision::Exact)
    } else {
        parse_format(s).map(Precision::Format)
    }
}

/// Seeds as a list (`0,3,5`), a range (`0-9`) or a mix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("seeds must be a list like 0,1,2 or a range like 0-9, got '{s}'");
    let mut out = vec![];
    for part in s.split(',') {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(Seeds(out))
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long, default_value = "mnist", value_parser = parse_dataset)]
    pub dataset: DatasetKind,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "fc", value_parser = parse_arch)]
    pub arch: Arch,
    /// `exact` or a format such as posit16es1
    #[arg(long, default_value = "exact", value_parser = parse_precision)]
    pub format: Precision,
    /// Learning rate [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    /// Learning-rate factor applied after each epoch [default: 0.9]
    #[arg(long, allow_negative_numbers = true)]
    pub lr_decay: Option<f64>,
    /// L2 penalty on weights [default: 5e-4]
    #[arg(long, allow_negative_numbers = true)]
    pub weight_decay: Option<f64>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to save the trained model
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Train the FC net once per seed and format and report mean accuracy
    #[arg(long)]
    pub compare: bool,
    /// Seeds of the comparison
    #[arg(long, default_value = "0-9", value_parser = parse_seeds)]
    pub seeds: Seeds,
    /// Formats of the comparison
    #[arg(long, value_delimiter = ',', default_value = "posit16es1,float16e5,posit32es2,float32e8", value_parser = parse_format)]
    pub formats: Vec<FormatSpec>,
    /// CSV of comparison runs; completed runs in an existing file are kept
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dry_run: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let b = TrainConfig::baseline();
        TrainConfig {
            precision: self.format,
            lr: self.lr.unwrap_or(b.lr),
            lr_decay: self.lr_decay.unwrap_or(b.lr_decay),
            weight_decay: self.weight_decay.unwrap_or(b.weight_decay),
            epochs: self.epochs.unwrap_or(b.epochs),
            batch_size: self.batch_size.unwrap_or(b.batch_size),
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct QuantArgs {
    /// round, linear-mult or linear-shift
    #[arg(long, default_value = "round")]
    pub quant: SchemeKind,
    /// 1, 2, 4, 8, or auto (best on the calibration samples); ignored by round
    #[arg(long, default_value = "auto")]
    pub beta: BetaChoice,
    /// Training samples used for calibration and for choosing beta
    #[arg(long, default_value_t = CALIBRATION_SAMPLES)]
    pub calib_samples: usize,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// `exact` or a format such as posit8es1
    #[arg(long, default_value = "exact", value_parser = parse_precision)]
    pub format: Precision,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Architecture label written to the CSV
    #[arg(long, default_value = "fc", value_parser = parse_arch)]
    pub arch: Arch,
    /// Families; a bare name takes every parameter, e.g. posit-es1 pins one
    #[arg(long, value_delimiter = ',', default_value = "posit,float,fixed")]
    pub families: Vec<FamilyChoice>,
    #[arg(long, value_delimiter = ',', default_value = "5,6,7,8")]
    pub bits: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "round,linear-mult,linear-shift")]
    pub schemes: Vec<SchemeKind>,
    #[arg(long, default_value = "auto")]
    pub beta: BetaChoice,
    #[arg(long, default_value_t = CALIBRATION_SAMPLES)]
    pub calib_samples: usize,
    /// CSV path; cells already present are not recomputed
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct DistortionArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// Family A of the comparison
    #[arg(long, default_value = "posit")]
    pub a: FamilyChoice,
    /// Family B; when given, Δ = d_A − d_B is printed
    #[arg(long)]
    pub b: Option<FamilyChoice>,
    #[arg(long, value_delimiter = ',', default_value = "5,6,7,8")]
    pub bits: Vec<u32>,
    #[arg(long, default_value = "round")]
    pub quant: SchemeKind,
    /// β of a linear scheme
    #[arg(long, default_value_t = 1)]
    pub beta: u32,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_format)]
    pub format: Vec<FormatSpec>,
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    pub beta_max: f64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dry_run: bool,
}

/// Parse `args` (program name first), run, and return the exit code. The
/// human summary goes to `out`, errors and progress to `err`.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_model(path: &Path) -> Result<lowprec_nn::Network, CliError> {
    Ok(io::load_model(path)?)
}

fn check_bits(bits: &[u32]) -> Result<(), CliError> {
    match bits.iter().find(|&&n| !(2..=32).contains(&n)) {
        Some(n) => Err(usage(format!("bit width {n} outside 2..=32"))),
        None if bits.is_empty() => Err(usage("no bit widths given")),
        None => Ok(()),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let root = data_root(cli.data_dir.as_deref());
    let mut log = |line: &str| {
        let _ = writeln!(err, "{line}");
    };
    match cli.command {
        Command::Train(a) => cmd_train(&root, a, out, &mut log),
        Command::Infer(a) => cmd_infer(&root, a, out, &mut log),
        Command::Sweep(a) => cmd_sweep(&root, a, out, &mut log),
        Command::Distortion(a) => cmd_distortion(a, out),
        Command::Coverage(a) => cmd_coverage(a, out),
    }
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => {
        writeln!($out, $($t)*).map_err(|e| CliError::Data(format!("stdout: {e}")))?
    };
}

fn cmd_train(root: &Path, a: TrainArgs, out: &mut dyn Write, log: &mut dyn FnMut(&str)) -> Result<(), CliError> {
    let cfg = a.config();
    cfg.validate()?;
    if a.compare {
        if a.arch != Arch::Fc {
            return Err(usage("--compare trains the fc architecture only"));
        }
        if a.model.is_some() {
            return Err(usage("--compare does not save models; drop --model"));
        }
    } else if a.format != Precision::Exact && a.arch != Arch::Fc {
        return Err(usage(format!("low-precision training supports the fc architecture only, not {}", a.arch.name())));
    }
    check_available(root, a.data.dataset)?;
    if a.dry_run {
        if a.compare {
            say!(out, "dry run: compare {} formats × {} seeds on {} ({} epochs each)", a.formats.len(), a.seeds.0.len(), a.data.dataset.name(), cfg.epochs);
        } else {
            say!(out, "dry run: train {} on {} under {} for {} epochs", a.arch.name(), a.data.dataset.name(), cfg.precision, cfg.epochs);
        }
        return Ok(());
    }
    let (train, test) = load_dataset(root, a.data.dataset)?;
    if a.compare {
        let done = match &a.out {
            Some(p) => io::read_training_csv(p)?,
            None => vec![],
        };
        let outp = a.out.clone();
        let rows = compare(
            &train,
            &test,
            &a.formats,
            &a.seeds.0,
            &cfg,
            &done,
            |rows| match &outp {
                Some(p) => write_csv_atomic::<TrainingRow>(rows, p),
                None => Ok(()),
            },
            log,
        )?;
        say!(out, "{:<12} {:>6} {:>9}", "format", "runs", "mean acc");
        for (f, mean, n) in mean_by_format(&rows) {
            say!(out, "{f:<12} {n:>6} {mean:>8.3}%");
        }
        return Ok(());
    }
    let net = train_model(a.arch, &train, &cfg, log)?;
    let acc = emulated_accuracy(&net, cfg.precision, &test)?;
    if let Some(p) = &a.model {
        io::save_model(&net, p)?;
    }
    say!(out, "{} {} {}: test accuracy {acc:.2}%", a.data.dataset.name(), a.arch.name(), cfg.precision);
    Ok(())
}

fn cmd_infer(root: &Path, a: InferArgs, out: &mut dyn Write, log: &mut dyn FnMut(&str)) -> Result<(), CliError> {
    if a.quant.calib_samples == 0 {
        return Err(usage("--calib-samples must be positive"));
    }
    check_available(root, a.data.dataset)?;
    let net = load_model(&a.model)?;
    if a.dry_run {
        say!(out, "dry run: {} ({} parameters) on {} under {} {}", a.model.display(), net.param_count(), a.data.dataset.name(), a.format, a.quant.quant);
        return Ok(());
    }
    let (train, test) = load_dataset(root, a.data.dataset)?;
    let (acc, label) = match a.format {
        Precision::Exact => (evaluate(&net, &test)?, "exact".to_string()),
        Precision::Format(spec) => {
            let calib_set = train.head(a.quant.calib_samples);
            let calib = Calibration::from_data(&net, &calib_set, a.quant.calib_samples)?;
            let scheme = analysis::resolve_scheme(&net, a.quant.quant, a.quant.beta, spec, &calib, &calib_set)?;
            log(&format!("scheme {}", scheme_label(scheme)));
            let q = QuantizedNet::new(&net, spec, scheme, &calib)?;
            (evaluate(&q, &test)?, format!("{spec} {}", scheme_label(scheme)))
        }
    };
    say!(out, "{} {label}: accuracy {acc:.2}%", a.data.dataset.name());
    Ok(())
}

fn scheme_label(s: QuantScheme) -> String {
    match s.beta() {
        Some(b) => format!("{} beta {b}", s.kind()),
        None => s.kind().to_string(),
    }
}

fn cmd_sweep(root: &Path, a: SweepArgs, out: &mut dyn Write, log: &mut dyn FnMut(&str)) -> Result<(), CliError> {
    check_bits(&a.bits)?;
    if a.calib_samples == 0 {
        return Err(usage("--calib-samples must be positive"));
    }
    let plan = sweep_plan(&a.families, &a.bits, &a.schemes, a.beta);
    if plan.is_empty() {
        return Err(usage("the sweep has no cells"));
    }
    check_available(root, a.data.dataset)?;
    let net = load_model(&a.model)?;
    let existing = io::read_sweep_csv(&a.out)?;
    if a.dry_run {
        say!(out, "dry run: {} cells on {} ({} rows already in {})", plan.len(), a.data.dataset.name(), existing.len(), a.out.display());
        return Ok(());
    }
    let (train, test) = load_dataset(root, a.data.dataset)?;
    let calib_set = train.head(a.calib_samples);
    let calib = Calibration::from_data(&net, &calib_set, a.calib_samples)?;
    let ctx = SweepContext {
        net: &net,
        dataset: a.data.dataset.name(),
        arch: a.arch.name(),
        calib: &calib,
        calib_set: &calib_set,
        test: &test,
    };
    let rows = run_sweep(&ctx, &plan, &existing, |rows| write_csv_atomic(rows, &a.out), log)?;
    write_csv_atomic(&rows, &a.out)?;
    say!(out, "{:<6} {:>3} {:<13} {:>8}  best format", "family", "n", "scheme", "accuracy");
    for (family, n, scheme, acc, fmt) in best_by_family(&rows) {
        say!(out, "{family:<6} {n:>3} {scheme:<13} {acc:>7.2}%  {fmt}");
    }
    Ok(())
}

fn cmd_distortion(a: DistortionArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_bits(&a.bits)?;
    let beta = Beta::new(a.beta).map_err(|e| usage(e.to_string()))?;
    let scheme = a.quant.with_beta(beta);
    let net = load_model(&a.model)?;
    let weights = net.mac_weights();
    if weights.is_empty() {
        return Err(CliError::Data(format!("{} has no dense or conv layers", a.model.display())));
    }
    if a.dry_run {
        say!(out, "dry run: {} layers × {} bit widths", weights.len(), a.bits.len());
        return Ok(());
    }
    let mut rows = vec![];
    let mut grids = vec![analysis::distortion_grid(&weights, a.a, &a.bits, scheme)?];
    if let Some(b) = a.b {
        grids.push(analysis::distortion_grid(&weights, b, &a.bits, scheme)?);
    }
    let layer_name = |l: usize| if l == weights.len() { "avg".to_string() } else { l.to_string() };
    for g in &grids {
        for ((n, spec), row) in g.bit_widths.iter().zip(&g.specs).zip(&g.rows) {
            for (l, d) in row.iter().enumerate() {
                rows.push(DistortionRow { bit_width: *n, layer: layer_name(l), format: spec.to_string(), d: *d });
            }
        }
    }
    // delta rows are labelled `A-B` with the chosen spec of each side
    if let [ga, gb] = &grids[..] {
        for (i, n) in ga.bit_widths.iter().enumerate() {
            for (l, (x, y)) in ga.rows[i].iter().zip(&gb.rows[i]).enumerate() {
                let format = format!("{}-{}", ga.specs[i], gb.specs[i]);
                rows.push(DistortionRow { bit_width: *n, layer: layer_name(l), format, d: x - y });
            }
        }
    }
    let layers: Vec<String> = (0..weights.len()).map(|l| format!("layer {l}")).chain(["avg".into()]).collect();
    let (title, table): (String, Vec<Vec<f64>>) = match a.b {
        Some(b) => (
            format!("delta d(R) = d({}) - d({b})", a.a),
            grids[0].rows.iter().zip(&grids[1].rows).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect(),
        ),
        None => (format!("d(R) of {}", a.a), grids[0].rows.clone()),
    };
    say!(out, "{title}");
    say!(out, "{:>4}  {}", "n", layers.iter().map(|l| format!("{l:>12}")).collect::<String>());
    for (n, row) in a.bits.iter().zip(&table) {
        say!(out, "{n:>4}  {}", row.iter().map(|d| format!("{:>12}", io::format_number(*d))).collect::<String>());
    }
    if let Some(p) = &a.out {
        write_csv_atomic(&rows, p)?;
    }
    Ok(())
}

fn cmd_coverage(a: CoverageArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.beta_max > 0.0 && a.beta_max.is_finite()) {
        return Err(usage(format!("--beta-max must be positive, got {}", a.beta_max)));
    }
    if let Some(f) = a.format.iter().find(|f| f.bits() > lowprec_core::numformats::MAX_ENUMERATION_BITS) {
        return Err(usage(format!("coverage enumerates every pattern; {f} is too wide")));
    }
    if a.dry_run {
        say!(out, "dry run: coverage of {} formats at beta_max {}", a.format.len(), a.beta_max);
        return Ok(());
    }
    let mut rows = vec![];
    for &spec in &a.format {
        let percent = analysis::coverage(spec, a.beta_max)?;
        let half_open = analysis::coverage_half_open(spec, a.beta_max)?;
        say!(
            out,
            "{spec} beta_max {}: {percent:.1} (half-open [-beta_max, beta_max): {half_open:.2})",
            io::format_number(a.beta_max)
        );
        rows.push(CoverageRow { format: spec.to_string(), beta_max: a.beta_max, percent });
    }
    if let Some(p) = &a.out {
        write_csv_atomic(&rows, p)?;
    }
    Ok(())
}
