use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Mat;

/// How to read a labeled CSV: feature columns followed by an integer label.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    /// Class count; inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
    /// `Some(true)`/`Some(false)` force header handling; `None` sniffs the first line.
    pub header: Option<bool>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| csv_error(path, e))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if first {
            first = false;
            let skip = match schema.header {
                Some(h) => h,
                None => record.iter().any(|f| f.parse::<f64>().is_err()),
            };
            if skip {
                continue;
            }
        }
        if record.len() < 2 {
            return Err(Error::Ingestion {
                line,
                message: "need at least one feature column and a label column".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Ingestion {
                    line,
                    message: format!("ragged row: {} fields, expected {w}", record.len()),
                })
            }
            _ => {}
        }
        let n = record.len();
        let mut features = Vec::with_capacity(n - 1);
        for (j, field) in record.iter().take(n - 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                line,
                message: format!("column {}: `{field}` is not a number", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingestion {
                    line,
                    message: format!("column {}: non-finite value", j + 1),
                });
            }
            features.push(v);
        }
        let raw = &record[n - 1];
        let label: usize = raw.parse().map_err(|_| Error::Ingestion {
            line,
            message: format!("label `{raw}` is not a non-negative integer"),
        })?;
        if let Some(c) = schema.num_classes {
            if label >= c {
                return Err(Error::Ingestion {
                    line,
                    message: format!("label {label} out of range for {c} classes"),
                });
            }
        }
        rows.push(features);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::Ingestion {
            line: 1,
            message: format!("{} contains no data rows", path.display()),
        });
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(Mat::from_rows(&rows)?, labels, num_classes)
}

/// Writes features and clean labels in the format [`load_csv`] reads, with a header.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (row, y) in ds.features().row_iter().zip(ds.clean_labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Ingestion {
            line: line.unwrap_or(0),
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows_two_classes() {
        let f = write("0.5,1.0,0\n1.5,-2.0,1\n3.0,0.25,0\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.features().row(1), &[1.5, -2.0]);
    }

    #[test]
    fn header_is_detected() {
        let f = write("a,b,label\n0.5,1.0,0\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn empty_file_fails() {
        let f = write("");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn label_out_of_schema_range() {
        let f = write("1.0,2.0,1\n1.0,2.0,7\n");
        let schema = CsvSchema {
            num_classes: Some(5),
            header: None,
        };
        match load_csv(f.path(), &schema) {
            Err(Error::Ingestion { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("out of range"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_and_garbage_rows_name_the_line() {
        let f = write("1.0,2.0,1\n1.0,0\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::Ingestion { line: 2, .. })
        ));
        let f = write("1.0,2.0,1\n1.0,2.0,1\nx,2.0,0\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::Ingestion { line: 3, .. })
        ));
    }

    #[test]
    fn save_then_load_roundtrips() {
        let ds = super::super::make_blobs(20, 3, 2, 0.4, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, &CsvSchema::default()).unwrap();
        assert_eq!(back, ds);
    }
}
