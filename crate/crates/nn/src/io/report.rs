use std::path::Path;

use super::IoError;

/// `v` with 6 significant digits, `.` as the decimal separator, trailing
/// zeros dropped; scientific notation outside `[1e-5, 1e6)`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.5e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..6).contains(&exp) {
        let s = format!("{v:.*}", (5 - exp) as usize);
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mant))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One line of a fixed-schema report.
pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub arch: String,
    pub format: String,
    pub n: u32,
    pub es_we_nf: u32,
    pub scheme: String,
    /// `None` under rounding quantization.
    pub beta: Option<u32>,
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] =
        &["dataset", "arch", "format", "n", "es_we_nf", "scheme", "beta", "accuracy"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.arch.clone(),
            self.format.clone(),
            self.n.to_string(),
            self.es_we_nf.to_string(),
            self.scheme.clone(),
            self.beta.map_or("-".into(), |b| b.to_string()),
            format_number(self.accuracy),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistortionRow {
    pub bit_width: u32,
    /// Layer index, or `avg` for the all-weights column.
    pub layer: String,
    pub format: String,
    pub d: f64,
}

impl CsvRow for DistortionRow {
    const HEADER: &'static [&'static str] = &["bit_width", "layer", "format", "d"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.bit_width.to_string(),
            self.layer.clone(),
            self.format.clone(),
            format_number(self.d),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub format: String,
    pub beta_max: f64,
    pub percent: f64,
}

impl CsvRow for CoverageRow {
    const HEADER: &'static [&'static str] = &["format", "beta_max", "percent"];

    fn fields(&self) -> Vec<String> {
        vec![self.format.clone(), format_number(self.beta_max), format_number(self.percent)]
    }
}

/// Final test accuracy of one low-precision training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRow {
    pub format: String,
    pub seed: u64,
    pub accuracy: f64,
}

impl CsvRow for TrainingRow {
    const HEADER: &'static [&'static str] = &["format", "seed", "accuracy"];

    fn fields(&self) -> Vec<String> {
        vec![self.format.clone(), self.seed.to_string(), format_number(self.accuracy)]
    }
}

/// Header plus one record per row, in the given order.
pub fn write_csv<R: CsvRow>(rows: &[R], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(R::HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(super::file_err(path))?;
    Ok(())
}

/// Rows of an existing sweep CSV. A missing file is an empty sweep; a
/// truncated last record (interrupted write) is dropped.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, IoError> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SweepRow::HEADER {
        return Err(IoError::Csv(format!("{}: not a sweep CSV (header {header:?})", path.display())));
    }
    let mut rows = vec![];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != SweepRow::HEADER.len() {
            break;
        }
        let bad = |what: &str| IoError::Csv(format!("{}: bad {what} in {:?}", path.display(), rec));
        let num = |i: usize| rec[i].parse::<u32>().map_err(|_| bad(SweepRow::HEADER[i]));
        rows.push(SweepRow {
            dataset: rec[0].to_string(),
            arch: rec[1].to_string(),
            format: rec[2].to_string(),
            n: num(3)?,
            es_we_nf: num(4)?,
            scheme: rec[5].to_string(),
            beta: if &rec[6] == "-" { None } else { Some(num(6)?) },
            accuracy: rec[7].parse().map_err(|_| bad("accuracy"))?,
        });
    }
    Ok(rows)
}

/// Rows of an existing training CSV, with the same tolerance as
/// [`read_sweep_csv`].
pub fn read_training_csv(path: &Path) -> Result<Vec<TrainingRow>, IoError> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TrainingRow::HEADER {
        return Err(IoError::Csv(format!("{}: not a training CSV (header {header:?})", path.display())));
    }
    let mut rows = vec![];
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != TrainingRow::HEADER.len() {
            break;
        }
        let bad = || IoError::Csv(format!("{}: bad record {:?}", path.display(), rec));
        rows.push(TrainingRow {
            format: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad())?,
            accuracy: rec[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
