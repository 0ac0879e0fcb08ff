use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    Pairflip,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::Pairflip => "pairflip",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            "pairflip" | "pair" | "flip" => Ok(NoiseKind::Pairflip),
            other => Err(Error::config("noise.kind", format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Source → target pairs for asymmetric noise.
    pub class_map: Option<Vec<(usize, usize)>>,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            class_map: None,
        }
    }

    pub fn none() -> Self {
        Self::new(NoiseKind::Symmetric, 0.0)
    }

    pub fn asymmetric(rate: f64, class_map: Vec<(usize, usize)>) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            class_map: Some(class_map),
        }
    }

    /// CIFAR-10: truck→automobile, bird→airplane, deer→horse, cat↔dog.
    pub fn cifar10_asymmetric(rate: f64) -> Self {
        Self::asymmetric(rate, vec![(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)])
    }

    /// CIFAR-100: 20 consecutive blocks of 5 classes, each class flipped to
    /// the next one inside its block.
    pub fn cifar100_asymmetric(rate: f64) -> Self {
        Self::asymmetric(rate, block_rotation(100, 5))
    }

    /// Named asymmetric presets: `cifar10`, `cifar100`.
    pub fn preset(name: &str, rate: f64) -> Result<Self> {
        match name {
            "cifar10" => Ok(Self::cifar10_asymmetric(rate)),
            "cifar100" => Ok(Self::cifar100_asymmetric(rate)),
            other => Err(Error::config("noise.preset", format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config("noise.rate", format!("{} is outside [0, 1]", self.rate)));
        }
        if let Some(map) = &self.class_map {
            let mut targets = std::collections::HashSet::new();
            let mut sources = std::collections::HashSet::new();
            for &(s, t) in map {
                if s >= classes || t >= classes {
                    return Err(Error::config(
                        "noise.class_map",
                        format!("pair {s}→{t} references a class outside [0, {classes})"),
                    ));
                }
                if s == t {
                    return Err(Error::config("noise.class_map", format!("class {s} maps to itself")));
                }
                if !sources.insert(s) {
                    return Err(Error::config("noise.class_map", format!("class {s} listed twice")));
                }
                if !targets.insert(t) {
                    return Err(Error::config("noise.class_map", format!("target {t} used twice")));
                }
            }
        }
        Ok(())
    }
}

fn block_rotation(classes: usize, block: usize) -> Vec<(usize, usize)> {
    (0..classes)
        .map(|i| (i, (i / block) * block + (i % block + 1) % block))
        .collect()
}

/// Row-stochastic label corruption kernel: row `i` is the distribution of the
/// observed label given clean class `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: Mat,
}

impl TransitionMatrix {
    pub fn classes(&self) -> usize {
        self.probs.rows()
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }
}

pub fn build_transition(spec: &NoiseSpec, classes: usize) -> Result<TransitionMatrix> {
    if classes < 2 {
        return Err(Error::config("dataset.classes", "noise needs at least two classes"));
    }
    spec.validate(classes)?;
    let r = spec.rate;
    let mut p = Mat::identity(classes);
    match spec.kind {
        NoiseKind::Symmetric => {
            let off = r / (classes - 1) as f64;
            for i in 0..classes {
                for j in 0..classes {
                    p[(i, j)] = if i == j { 1.0 - r } else { off };
                }
            }
        }
        NoiseKind::Asymmetric => {
            let map = spec
                .class_map
                .as_ref()
                .ok_or_else(|| Error::config("noise.class_map", "asymmetric noise needs a class map or preset"))?;
            for &(s, t) in map {
                p[(s, s)] = 1.0 - r;
                p[(s, t)] = r;
            }
        }
        NoiseKind::Pairflip => {
            for i in 0..classes {
                p[(i, i)] = 1.0 - r;
                p[(i, (i + 1) % classes)] += r;
            }
        }
    }
    Ok(TransitionMatrix { probs: p })
}

/// Draws each observed label from the transition row of its clean class.
///
/// Sample `i` uses its own substream `rng.child_index(i)`, so the result does
/// not depend on how the work is split across threads.
pub fn inject_noise(ds: &Dataset, t: &TransitionMatrix, rng: &RngStream) -> Result<Dataset> {
    if t.classes() != ds.num_classes() {
        return Err(Error::dim(format!(
            "transition matrix is {}x{} but dataset has {} classes",
            t.classes(),
            t.classes(),
            ds.num_classes()
        )));
    }
    let noisy: Vec<usize> = ds
        .clean_labels()
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = t.row(y);
            if row[y] == 1.0 {
                return y;
            }
            let u = rng.child_index(i as u64).uniform();
            sample_categorical(row, u)
        })
        .collect();
    ds.with_noisy_labels(noisy)
}

fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `acc` just under 1; fall back to the last class with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
