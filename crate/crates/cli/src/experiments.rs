//! Workflows shared by the subcommands and the acceptance suite.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lowprec_core::{FormatSpec, SchemeKind};
use lowprec_nn::analysis::{resolve_scheme, BetaChoice, FamilyChoice};
use lowprec_nn::io::{self, CsvRow, DatasetKind, SweepRow, TrainingRow};
use lowprec_nn::train::train_with_report;
use lowprec_nn::{evaluate, Arch, Calibration, DatasetSplit, Emulated, Network, Precision, QuantizedNet, TrainConfig};

use crate::CliError;

/// Environment variable naming the dataset root.
pub const DATA_DIR_ENV: &str = "CHEETAH_DATA_DIR";

/// Formats of the training comparison, in report order.
pub const COMPARE_FORMATS: [&str; 4] = ["posit16es1", "float16e5", "posit32es2", "float32e8"];

/// `flag`, else `$CHEETAH_DATA_DIR`, else `./data`.
pub fn data_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Both splits of a dataset, or a data error naming the missing files.
pub fn load_dataset(root: &Path, kind: DatasetKind) -> Result<(DatasetSplit, DatasetSplit), CliError> {
    check_available(root, kind)?;
    Ok((kind.load(root, true)?, kind.load(root, false)?))
}

pub fn check_available(root: &Path, kind: DatasetKind) -> Result<(), CliError> {
    let missing: Vec<String> = [true, false]
        .iter()
        .flat_map(|&t| kind.files(root, t))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} is not available under {} (missing {}); set --data-dir or {DATA_DIR_ENV}",
            kind.name(),
            root.display(),
            missing.join(", ")
        )))
    }
}

/// Freshly initialised `arch` trained on `train` under `cfg`; `log` receives
/// one line per epoch.
pub fn train_model(
    arch: Arch,
    train: &DatasetSplit,
    cfg: &TrainConfig,
    mut log: impl FnMut(&str),
) -> Result<Network, CliError> {
    if train.sample_shape() != arch.input_shape() {
        return Err(CliError::Data(format!(
            "{} expects samples of shape {:?}, data has {:?}",
            arch.name(),
            arch.input_shape(),
            train.sample_shape()
        )));
    }
    let start = Instant::now();
    let net = arch.build().init(cfg.seed);
    let (net, _) = train_with_report(net, train, cfg, |e, loss| {
        log(&format!(
            "{} seed {} epoch {}/{}: loss {:.4} ({:.0}s)",
            cfg.precision,
            cfg.seed,
            e + 1,
            cfg.epochs,
            loss,
            start.elapsed().as_secs_f64()
        ))
    })?;
    Ok(net)
}

/// Test accuracy of a net trained under `precision`, evaluated under the
/// same emulation.
pub fn emulated_accuracy(net: &Network, precision: Precision, test: &DatasetSplit) -> Result<f64, CliError> {
    Ok(evaluate(&Emulated::new(net, precision), test)?)
}

/// The training comparison: one FC run per format and seed. Runs already in
/// `done` are kept; `on_row` sees every row after it is added, in order.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    train: &DatasetSplit,
    test: &DatasetSplit,
    formats: &[FormatSpec],
    seeds: &[u64],
    base: &TrainConfig,
    done: &[TrainingRow],
    mut on_row: impl FnMut(&[TrainingRow]) -> Result<(), CliError>,
    mut log: impl FnMut(&str),
) -> Result<Vec<TrainingRow>, CliError> {
    let cached: HashMap<(String, u64), f64> =
        done.iter().map(|r| ((r.format.clone(), r.seed), r.accuracy)).collect();
    let mut rows = Vec::with_capacity(formats.len() * seeds.len());
    for &spec in formats {
        for &seed in seeds {
            let format = spec.to_string();
            let accuracy = match cached.get(&(format.clone(), seed)) {
                Some(&a) => a,
                None => {
                    let precision = Precision::Format(spec);
                    let cfg = TrainConfig { precision, seed, ..base.clone() };
                    let net = train_model(Arch::Fc, train, &cfg, &mut log)?;
                    let a = emulated_accuracy(&net, precision, test)?;
                    log(&format!("{format} seed {seed}: {a:.2}%"));
                    a
                }
            };
            rows.push(TrainingRow { format, seed, accuracy });
            on_row(&rows)?;
        }
    }
    Ok(rows)
}

/// Mean accuracy per format, in first-seen order.
pub fn mean_by_format(rows: &[TrainingRow]) -> Vec<(String, f64, usize)> {
    let mut out: Vec<(String, f64, usize)> = vec![];
    for r in rows {
        match out.iter_mut().find(|(f, _, _)| *f == r.format) {
            Some((_, sum, n)) => {
                *sum += r.accuracy;
                *n += 1;
            }
            None => out.push((r.format.clone(), r.accuracy, 1)),
        }
    }
    out.into_iter().map(|(f, s, n)| (f, s / n as f64, n)).collect()
}

/// One cell of a sweep before evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPlanCell {
    pub spec: FormatSpec,
    pub kind: SchemeKind,
    pub beta: BetaChoice,
}

/// Cells in report order: bit width, then family, then family parameter,
/// then scheme.
pub fn sweep_plan(
    families: &[FamilyChoice],
    bits: &[u32],
    schemes: &[SchemeKind],
    beta: BetaChoice,
) -> Vec<SweepPlanCell> {
    let mut plan = vec![];
    for &n in bits {
        for fam in families {
            for spec in fam.candidates(n) {
                for &kind in schemes {
                    plan.push(SweepPlanCell { spec, kind, beta });
                }
            }
        }
    }
    plan
}

/// Whether `row` already holds the result of `cell`. A fixed β must match;
/// any recorded β satisfies `auto`.
fn satisfies(row: &SweepRow, dataset: &str, arch: &str, cell: &SweepPlanCell) -> bool {
    row.dataset == dataset
        && row.arch == arch
        && row.format == cell.spec.to_string()
        && row.scheme == cell.kind.name()
        && match (cell.kind, cell.beta) {
            (SchemeKind::Round, _) | (_, BetaChoice::Auto) => true,
            (_, BetaChoice::Fixed(b)) => row.beta == Some(b.get()),
        }
}

/// Everything a sweep evaluates against.
pub struct SweepContext<'a> {
    pub net: &'a Network,
    pub dataset: &'a str,
    pub arch: &'a str,
    pub calib: &'a Calibration,
    /// Samples deciding `auto` β.
    pub calib_set: &'a DatasetSplit,
    pub test: &'a DatasetSplit,
}

/// Evaluate `plan`, reusing rows of `existing` that already cover a cell.
/// Rows come back in plan order followed by unrelated existing rows;
/// `on_row` runs after every newly evaluated cell.
pub fn run_sweep(
    ctx: &SweepContext<'_>,
    plan: &[SweepPlanCell],
    existing: &[SweepRow],
    mut on_row: impl FnMut(&[SweepRow]) -> Result<(), CliError>,
    mut log: impl FnMut(&str),
) -> Result<Vec<SweepRow>, CliError> {
    let mut used = vec![false; existing.len()];
    let mut rows: Vec<SweepRow> = Vec::with_capacity(plan.len());
    let extras = |used: &[bool]| -> Vec<SweepRow> {
        existing
            .iter()
            .zip(used)
            .filter(|(_, &u)| !u)
            .map(|(r, _)| r.clone())
            .collect()
    };
    for (i, cell) in plan.iter().enumerate() {
        if let Some(j) = (0..existing.len()).find(|&j| !used[j] && satisfies(&existing[j], ctx.dataset, ctx.arch, cell)) {
            used[j] = true;
            rows.push(existing[j].clone());
            continue;
        }
        let start = Instant::now();
        let scheme = resolve_scheme(ctx.net, cell.kind, cell.beta, cell.spec, ctx.calib, ctx.calib_set)?;
        let accuracy = evaluate(&QuantizedNet::new(ctx.net, cell.spec, scheme, ctx.calib)?, ctx.test)?;
        log(&format!(
            "[{}/{}] {} {} beta {}: {accuracy:.2}% ({:.1}s)",
            i + 1,
            plan.len(),
            cell.spec,
            cell.kind,
            scheme.beta().map_or("-".into(), |b| b.to_string()),
            start.elapsed().as_secs_f64()
        ));
        rows.push(SweepRow {
            dataset: ctx.dataset.to_string(),
            arch: ctx.arch.to_string(),
            format: cell.spec.to_string(),
            n: cell.spec.bits(),
            es_we_nf: cell.spec.param(),
            scheme: cell.kind.name().to_string(),
            beta: scheme.beta().map(|b| b.get()),
            accuracy,
        });
        let mut snapshot = rows.clone();
        snapshot.extend(extras(&used));
        on_row(&snapshot)?;
    }
    rows.extend(extras(&used));
    Ok(rows)
}

/// Best accuracy per (family, bit width, scheme), the "respective best"
/// over each family's parameter.
pub fn best_by_family(rows: &[SweepRow]) -> Vec<(String, u32, String, f64, String)> {
    let mut out: Vec<(String, u32, String, f64, String)> = vec![];
    for r in rows {
        let family = family_name(&r.format).unwrap_or("other").to_string();
        match out
            .iter_mut()
            .find(|(f, n, s, _, _)| *f == family && *n == r.n && *s == r.scheme)
        {
            Some(best) if r.accuracy > best.3 => {
                best.3 = r.accuracy;
                best.4 = r.format.clone();
            }
            Some(_) => {}
            None => out.push((family, r.n, r.scheme.clone(), r.accuracy, r.format.clone())),
        }
    }
    out
}

fn family_name(format: &str) -> Option<&'static str> {
    ["posit", "float", "fixed"].into_iter().find(|f| format.starts_with(f))
}

/// Write `rows` to `path` through a temporary file, so an interrupted run
/// leaves either the old or the new file.
pub fn write_csv_atomic<R: CsvRow>(rows: &[R], path: &Path) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    io::write_csv(rows, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}
