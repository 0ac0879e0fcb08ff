use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use walkdir::WalkDir;

use crate::data::csv_error;
use crate::error::{Error, Result};

/// Outcome of one (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_id: String,
    pub seed: u64,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub loss: String,
    pub k: f64,
    pub teacher: String,
    /// Accuracy on the clean test labels.
    pub test_acc: f64,
    /// Seconds; excluded from [`ResultRow::same_outcome`].
    pub wall_time: f64,
}

const RESULT_HEADER: [&str; 9] = [
    "config_id",
    "seed",
    "noise_kind",
    "noise_rate",
    "loss",
    "k",
    "teacher",
    "test_acc",
    "wall_time",
];

impl ResultRow {
    /// Row label used when aggregating: the loss alone, or the loss plus
    /// the relation term and its teacher.
    pub fn method(&self) -> String {
        if self.teacher == "none" || self.k == 0.0 {
            self.loss.clone()
        } else if self.teacher == "pretrained" {
            format!("{}+rmd", self.loss)
        } else {
            format!("{}+rmd({})", self.loss, self.teacher)
        }
    }

    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &ResultRow) -> bool {
        ResultRow {
            wall_time: 0.0,
            ..self.clone()
        } == ResultRow {
            wall_time: 0.0,
            ..other.clone()
        }
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.config_id.cmp(&b.config_id).then(a.seed.cmp(&b.seed)));
}

pub fn write_results<W: io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(RESULT_HEADER)?;
        for r in rows {
            w.write_record([
                r.config_id.clone(),
                r.seed.to_string(),
                r.noise_kind.clone(),
                format!("{:?}", r.noise_rate),
                r.loss.clone(),
                format!("{:?}", r.k),
                r.teacher.clone(),
                format!("{:?}", r.test_acc),
                format!("{:?}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::InvalidArgument(format!("writing results: {e}")))
}

pub fn save_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(rows, io::BufWriter::new(file))
}

pub fn parse_results<R: io::Read>(input: R, path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(RESULT_HEADER) {
        return Err(Error::Ingestion {
            line: 1,
            message: format!("{} is not a results file", path.display()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != RESULT_HEADER.len() {
            return Err(Error::Ingestion {
                line,
                message: format!("expected {} fields, found {}", RESULT_HEADER.len(), rec.len()),
            });
        }
        let bad = |j: usize| Error::Ingestion {
            line,
            message: format!("bad {} `{}`", RESULT_HEADER[j], &rec[j]),
        };
        let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad(j));
        rows.push(ResultRow {
            config_id: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad(1))?,
            noise_kind: rec[2].to_string(),
            noise_rate: num(3)?,
            loss: rec[4].to_string(),
            k: num(5)?,
            teacher: rec[6].to_string(),
            test_acc: num(7)?,
            wall_time: num(8)?,
        });
    }
    Ok(rows)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_results(file, path)
}

/// Every `results.csv` under `dir`, concatenated and sorted.
pub fn collect_results(dir: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let dir = dir.as_ref();
    let mut rows = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && entry.file_name() == "results.csv" {
            rows.extend(load_results(entry.path())?);
        }
    }
    sort_rows(&mut rows);
    rows.dedup_by(|a, b| a.same_outcome(b));
    Ok(rows)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One K of a sweep, aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn write_sweep<W: io::Write>(table: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(["k", "mean", "std", "n"])?;
        for r in table {
            w.write_record([
                format!("{:?}", r.k),
                format!("{:?}", r.mean),
                format!("{:?}", r.std),
                r.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::InvalidArgument(format!("writing sweep table: {e}")))
}

pub fn parse_sweep<R: io::Read>(input: R, path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = || Error::Ingestion {
            line: i + 2,
            message: "malformed sweep row".into(),
        };
        if rec.len() != 4 {
            return Err(bad());
        }
        out.push(SweepRow {
            k: rec[0].parse().map_err(|_| bad())?,
            mean: rec[1].parse().map_err(|_| bad())?,
            std: rec[2].parse().map_err(|_| bad())?,
            n: rec[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// One cell of the method × noise grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCell {
    pub method: String,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Groups rows by (method, noise kind, noise rate).
pub fn aggregate(rows: &[ResultRow]) -> Vec<ReportCell> {
    let mut groups: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method(), r.noise_kind.clone(), r.noise_rate.to_bits()))
            .or_default()
            .push(r.test_acc);
    }
    let mut cells: Vec<ReportCell> = groups
        .into_iter()
        .map(|((method, noise_kind, rate), accs)| {
            let (mean, std) = mean_std(&accs);
            ReportCell {
                method,
                noise_kind,
                noise_rate: f64::from_bits(rate),
                mean,
                std,
                n: accs.len(),
            }
        })
        .collect();
    cells.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.noise_kind.cmp(&b.noise_kind))
            .then(a.noise_rate.total_cmp(&b.noise_rate))
    });
    cells
}

pub fn write_report<W: io::Write>(cells: &[ReportCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(["method", "noise_kind", "noise_rate", "mean", "std", "n"])?;
        for c in cells {
            w.write_record([
                c.method.clone(),
                c.noise_kind.clone(),
                format!("{:?}", c.noise_rate),
                format!("{:?}", c.mean),
                format!("{:?}", c.std),
                c.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::InvalidArgument(format!("writing report: {e}")))
}

/// Plain-text grid: one line per method, one column per (noise kind, rate),
/// entries `mean ± std` in percent.
pub fn render_grid(cells: &[ReportCell]) -> String {
    let mut columns: Vec<(String, u64)> = cells
        .iter()
        .map(|c| (c.noise_kind.clone(), c.noise_rate.to_bits()))
        .collect();
    columns.sort_by(|a, b| a.0.cmp(&b.0).then(f64::from_bits(a.1).total_cmp(&f64::from_bits(b.1))));
    columns.dedup();
    let mut methods: Vec<&str> = cells.iter().map(|c| c.method.as_str()).collect();
    methods.dedup();

    let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:width$}", "method");
    for (kind, rate) in &columns {
        let _ = write!(s, " | {:>15}", format!("{kind} {}", f64::from_bits(*rate)));
    }
    s.push('\n');
    for m in methods {
        let _ = write!(s, "{m:width$}");
        for (kind, rate) in &columns {
            let cell = cells
                .iter()
                .find(|c| c.method == m && &c.noise_kind == kind && c.noise_rate.to_bits() == *rate);
            let text = cell.map_or("-".to_string(), |c| {
                format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.std)
            });
            let _ = write!(s, " | {text:>15}");
        }
        s.push('\n');
    }
    s
}
