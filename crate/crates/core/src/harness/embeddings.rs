use std::path::Path;

use crate::data::{csv_error, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{Mat, MlpParams};

/// Encoder outputs for a dataset together with its label bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub reps: Mat,
    pub clean_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub corrupted: Vec<bool>,
}

pub fn embedding_table(encoder: &MlpParams, ds: &Dataset) -> Result<EmbeddingTable> {
    Ok(EmbeddingTable {
        reps: encoder.apply(ds.features())?,
        clean_labels: ds.clean_labels().to_vec(),
        noisy_labels: ds.noisy_labels().to_vec(),
        corrupted: ds.corruption_mask().to_vec(),
    })
}

/// CSV columns `r0..r{D-1}, clean_label, noisy_label, corrupted` (0/1).
pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let d = table.reps.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("r{j}")).collect();
    header.extend(["clean_label", "noisy_label", "corrupted"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, row) in table.reps.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(table.clean_labels[i].to_string());
        rec.push(table.noisy_labels[i].to_string());
        rec.push(u8::from(table.corrupted[i]).to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let width = rdr.headers().map_err(|e| csv_error(path, e))?.len();
    if width < 4 {
        return Err(Error::Ingestion {
            line: 1,
            message: "embedding file needs representation and label columns".into(),
        });
    }
    let d = width - 3;
    let mut data = Vec::new();
    let (mut clean, mut noisy, mut corrupted) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::Ingestion {
            line,
            message: format!("bad {what}"),
        };
        for field in rec.iter().take(d) {
            data.push(field.parse::<f64>().map_err(|_| bad("representation value"))?);
        }
        clean.push(rec[d].parse().map_err(|_| bad("clean label"))?);
        noisy.push(rec[d + 1].parse().map_err(|_| bad("noisy label"))?);
        corrupted.push(match &rec[d + 2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("corruption flag")),
        });
    }
    Ok(EmbeddingTable {
        reps: Mat::from_vec(clean.len(), d, data)?,
        clean_labels: clean,
        noisy_labels: noisy,
        corrupted,
    })
}

/// Writes the encoder's representation of every sample in `ds` to `path`.
pub fn dump_embeddings(encoder: &MlpParams, ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_embeddings(&embedding_table(encoder, ds)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_transition, inject_noise, make_blobs, NoiseKind, NoiseSpec};
    use crate::numerics::{Activation, RngStream};

    #[test]
    fn dump_round_trips_and_keeps_mask() {
        let ds = make_blobs(30, 3, 2, 0.4, 1).unwrap();
        let t = build_transition(&NoiseSpec::new(NoiseKind::Symmetric, 0.5), 3).unwrap();
        let ds = inject_noise(&ds, &t, &RngStream::new(2)).unwrap();
        let enc = MlpParams::init(&[2, 4, 3], Activation::Tanh, &mut RngStream::new(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        dump_embeddings(&enc, &ds, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 31);
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, embedding_table(&enc, &ds).unwrap());
        assert_eq!(back.corrupted, ds.corruption_mask());

        let again = dir.path().join("emb2.csv");
        dump_embeddings(&enc, &ds, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn io_errors_name_the_path() {
        let ds = make_blobs(4, 2, 2, 0.4, 1).unwrap();
        let enc = MlpParams::identity(2);
        let err = dump_embeddings(&enc, &ds, "/nonexistent-dir/e.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/e.csv"), "{err}");
    }
}
