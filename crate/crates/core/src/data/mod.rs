//! Labeled datasets, synthetic blobs, CSV ingestion, label-noise injection and
//! the stochastic views used for self-supervised pretraining.

mod augment;
mod csv_io;
mod noise;

pub use augment::{augment_views, AugSpec, Augmentation, AugmentationRegistry, CropFlip, JitterMask, ViewPair};
pub(crate) use csv_io::csv_error;
pub use csv_io::{load_csv, save_csv, CsvSchema};
pub use noise::{build_transition, inject_noise, NoiseKind, NoiseSpec, TransitionMatrix};

use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};

/// Features with clean labels, possibly corrupted labels, and the mask of
/// positions where the two disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Mat,
    clean_labels: Vec<usize>,
    noisy_labels: Vec<usize>,
    corruption_mask: Vec<bool>,
    num_classes: usize,
}

impl Dataset {
    /// A clean dataset: noisy labels equal the clean ones.
    pub fn new(features: Mat, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("feature matrix has non-finite entries".into()));
        }
        check_labels(&labels, num_classes)?;
        let n = labels.len();
        Ok(Self {
            features,
            noisy_labels: labels.clone(),
            clean_labels: labels,
            corruption_mask: vec![false; n],
            num_classes,
        })
    }

    /// Replaces the noisy labels and recomputes the corruption mask.
    pub fn with_noisy_labels(&self, noisy: Vec<usize>) -> Result<Self> {
        if noisy.len() != self.len() {
            return Err(Error::dim("noisy label vector has the wrong length"));
        }
        check_labels(&noisy, self.num_classes)?;
        let corruption_mask = noisy.iter().zip(&self.clean_labels).map(|(a, b)| a != b).collect();
        Ok(Self {
            features: self.features.clone(),
            clean_labels: self.clean_labels.clone(),
            noisy_labels: noisy,
            corruption_mask,
            num_classes: self.num_classes,
        })
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn corruption_mask(&self) -> &[bool] {
        &self.corruption_mask
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn corrupted_count(&self) -> usize {
        self.corruption_mask.iter().filter(|&&m| m).count()
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} at index {i} is outside [0, {num_classes})"
        )));
    }
    Ok(())
}

/// Center of class `k` among `classes` blobs in `dim` dimensions.
///
/// Centers sit on a circle in the first two coordinates with neighbouring
/// centers exactly one unit apart, so `spread` reads in units of center spacing.
pub fn blob_center(k: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    if dim == 1 || classes < 2 {
        c[0] = k as f64;
        return c;
    }
    let step = std::f64::consts::TAU / classes as f64;
    let radius = 0.5 / (std::f64::consts::PI / classes as f64).sin();
    let theta = step * k as f64;
    c[0] = radius * theta.cos();
    c[1] = radius * theta.sin();
    c
}

/// Class-balanced isotropic Gaussian clusters around [`blob_center`]s.
pub fn make_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::config(
            "dataset.n",
            format!("need at least one sample per class (n={n}, classes={classes})"),
        ));
    }
    if dim == 0 {
        return Err(Error::config("dataset.dim", "dimension must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config(
            "dataset.spread",
            format!("must be positive, got {spread}"),
        ));
    }
    let rng = RngStream::new(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|k| blob_center(k, classes, dim)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.child("order").shuffle(&mut labels);

    let mut noise = rng.child("points");
    let mut features = Mat::zeros(n, dim);
    for (i, &y) in labels.iter().enumerate() {
        for (v, c) in features.row_mut(i).iter_mut().zip(&centers[y]) {
            *v = c + spread * noise.normal();
        }
    }
    Dataset::new(features, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced() {
        let ds = make_blobs(100, 4, 3, 0.3, 9).unwrap();
        assert_eq!(ds.len(), 100);
        let mut counts = [0usize; 4];
        for &y in ds.clean_labels() {
            counts[y] += 1;
        }
        assert_eq!(counts, [25; 4]);
        assert_eq!(ds.clean_labels(), ds.noisy_labels());
        assert!(ds.corruption_mask().iter().all(|m| !m));

        let odd = make_blobs(10, 4, 2, 0.3, 9).unwrap();
        let mut counts = [0usize; 4];
        for &y in odd.clean_labels() {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
    }

    #[test]
    fn vanishing_spread_collapses_to_centers() {
        let ds = make_blobs(40, 4, 2, 1e-300, 1).unwrap();
        for (row, &y) in ds.features().row_iter().zip(ds.clean_labels()) {
            for (v, c) in row.iter().zip(blob_center(y, 4, 2)) {
                assert!((v - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blobs_deterministic() {
        assert_eq!(
            make_blobs(50, 3, 2, 0.5, 3).unwrap(),
            make_blobs(50, 3, 2, 0.5, 3).unwrap()
        );
        assert_ne!(
            make_blobs(50, 3, 2, 0.5, 3).unwrap(),
            make_blobs(50, 3, 2, 0.5, 4).unwrap()
        );
    }

    #[test]
    fn neighbouring_centers_are_unit_apart() {
        for classes in [2, 4, 7] {
            let a = blob_center(0, classes, 2);
            let b = blob_center(1, classes, 2);
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_samples_is_config_error() {
        assert!(matches!(make_blobs(3, 4, 2, 0.1, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn mask_tracks_label_disagreement() {
        let ds = make_blobs(8, 2, 1, 0.1, 0).unwrap();
        let flipped: Vec<usize> = ds.clean_labels().iter().map(|&y| 1 - y).collect();
        let noisy = ds.with_noisy_labels(flipped).unwrap();
        assert_eq!(noisy.corrupted_count(), 8);
        assert!(ds.with_noisy_labels(vec![5; 8]).is_err());
    }
}
