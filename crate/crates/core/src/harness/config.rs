//! Flat `key = value` experiment configuration with dotted sections.
//!
//! ```text
//! # comment
//! id = blobs_sym40
//! noise.kind = symmetric
//! noise.rate = 0.4
//! rmd.k = 0.1
//! seeds = 0,1,2
//! ```

use std::collections::HashSet;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::numerics::Activation;
use crate::optim::OptimConfig;
use crate::relation::MatchNorm;
use crate::ssl::{SslArch, SslConfig};
use crate::trainer::{TeacherMode, TrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    /// Fixed data seed; when absent the data is redrawn for every run seed.
    pub seed: Option<u64>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub num_classes: Option<usize>,
    pub header: Option<bool>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Blobs,
            n_train: 5000,
            n_test: 1000,
            classes: 4,
            dim: 2,
            spread: 0.35,
            seed: None,
            train: None,
            test: None,
            num_classes: None,
            header: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// `None` disables label noise.
    pub kind: Option<NoiseKind>,
    pub rate: f64,
    pub preset: Option<String>,
    pub class_map: Option<Vec<(usize, usize)>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: Some(NoiseKind::Symmetric),
            rate: 0.4,
            preset: None,
            class_map: None,
        }
    }
}

impl NoiseConfig {
    pub fn kind_name(&self) -> &'static str {
        self.kind.map_or("none", NoiseKind::name)
    }

    pub fn spec(&self) -> Result<NoiseSpec> {
        let Some(kind) = self.kind else {
            return Ok(NoiseSpec::none());
        };
        if kind != NoiseKind::Asymmetric {
            return Ok(NoiseSpec::new(kind, self.rate));
        }
        match (&self.class_map, &self.preset) {
            (Some(map), _) => Ok(NoiseSpec::asymmetric(self.rate, map.clone())),
            (None, Some(p)) => NoiseSpec::preset(p, self.rate),
            (None, None) => Err(Error::config(
                "noise.class_map",
                "asymmetric noise needs noise.class_map or noise.preset",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    /// Task training settings; its `seed` is replaced by each run seed.
    pub train: TrainSpec,
    pub optim: OptimConfig,
    /// Teacher pretraining settings; `arch.rep_width` follows `model.rep_width`.
    pub ssl: SslConfig,
    pub teacher_checkpoint: Option<PathBuf>,
    /// K used for the strong-weight arm of the ablation.
    pub ablate_strong_k: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            id: "experiment".into(),
            dataset: DatasetConfig::default(),
            noise: NoiseConfig::default(),
            train: TrainSpec::default(),
            optim: OptimConfig::default(),
            ssl: SslConfig::default(),
            teacher_checkpoint: None,
            ablate_strong_k: 5.0,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_class_map(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (s, t) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(key, format!("expected source:target, got `{pair}`")))?;
            Ok((parse(key, s.trim())?, parse(key, t.trim())?))
        })
        .collect()
}

fn parse_activation(key: &str, value: &str) -> Result<Activation> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("unknown activation `{value}`")))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Ingestion {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, format!("duplicate key on line {}", i + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative data and checkpoint paths are resolved
    /// against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.dataset.train);
        resolve(&mut cfg.dataset.test);
        resolve(&mut cfg.teacher_checkpoint);
        if cfg.id == "experiment" {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                cfg.id = stem.to_string();
            }
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dataset;
        let p = &mut self.train.loss_params;
        match key {
            "id" => {
                if value.is_empty() || value.contains([',', '/', '\\']) {
                    return Err(Error::config(key, "must be nonempty without commas or slashes"));
                }
                self.id = value.to_string();
            }
            "dataset.kind" => {
                d.kind = match value {
                    "blobs" => DatasetKind::Blobs,
                    "csv" => DatasetKind::Csv,
                    _ => return Err(Error::config(key, format!("unknown dataset kind `{value}`"))),
                }
            }
            "dataset.n_train" => d.n_train = parse(key, value)?,
            "dataset.n_test" => d.n_test = parse(key, value)?,
            "dataset.classes" => d.classes = parse(key, value)?,
            "dataset.dim" => d.dim = parse(key, value)?,
            "dataset.spread" => d.spread = parse(key, value)?,
            "dataset.seed" => d.seed = Some(parse(key, value)?),
            "dataset.train" => d.train = Some(PathBuf::from(value)),
            "dataset.test" => d.test = Some(PathBuf::from(value)),
            "dataset.num_classes" => d.num_classes = Some(parse(key, value)?),
            "dataset.header" => d.header = Some(parse_bool(key, value)?),

            "noise.kind" => {
                self.noise.kind = match value {
                    "none" => None,
                    other => Some(
                        other
                            .parse()
                            .map_err(|_| Error::config(key, format!("unknown noise kind `{other}`")))?,
                    ),
                }
            }
            "noise.rate" => self.noise.rate = parse(key, value)?,
            "noise.preset" => self.noise.preset = Some(value.to_string()),
            "noise.class_map" => self.noise.class_map = Some(parse_class_map(key, value)?),

            "loss.name" => self.train.loss = value.to_string(),
            "loss.gce_q" => p.gce_q = parse(key, value)?,
            "loss.sce_a" => p.sce_a = parse(key, value)?,
            "loss.sce_b" => p.sce_b = parse(key, value)?,
            "loss.sce_log_zero" => p.sce_log_zero = parse(key, value)?,
            "loss.agce_a" => p.agce_a = parse(key, value)?,
            "loss.agce_q" => p.agce_q = parse(key, value)?,
            "loss.ael_a" => p.ael_a = parse(key, value)?,
            "loss.active_weight" => p.active_weight = parse(key, value)?,
            "loss.passive_weight" => p.passive_weight = parse(key, value)?,

            "rmd.k" => self.train.k = parse(key, value)?,
            "rmd.alpha" => self.train.weights.alpha = parse(key, value)?,
            "rmd.beta" => self.train.weights.beta = parse(key, value)?,
            "rmd.norm" => {
                self.train.norm = value
                    .parse::<MatchNorm>()
                    .map_err(|_| Error::config(key, format!("unknown norm `{value}`")))?
            }

            "model.hidden" => self.train.arch.hidden = parse_list(key, value)?,
            "model.rep_width" => self.train.arch.rep_width = parse(key, value)?,
            "model.activation" => self.train.arch.activation = parse_activation(key, value)?,

            "optim.lr0" => self.optim.lr0 = parse(key, value)?,
            "optim.momentum" => self.optim.momentum = parse(key, value)?,
            "optim.weight_decay" => self.optim.weight_decay = parse(key, value)?,
            "optim.decay_factor" => self.optim.decay_factor = parse(key, value)?,
            "optim.decay_start_epoch" => self.optim.decay_start_epoch = parse(key, value)?,
            "optim.decay_every" => self.optim.decay_every = parse(key, value)?,
            "optim.epochs" => self.optim.epochs = parse(key, value)?,
            "optim.batch_size" => self.optim.batch_size = parse(key, value)?,

            "ssl.lr" => self.ssl.lr = parse(key, value)?,
            "ssl.momentum" => self.ssl.momentum = parse(key, value)?,
            "ssl.weight_decay" => self.ssl.weight_decay = parse(key, value)?,
            "ssl.batch_size" => self.ssl.batch_size = parse(key, value)?,
            "ssl.epochs" => self.ssl.epochs = parse(key, value)?,
            "ssl.stop_gradient" => self.ssl.stop_gradient = parse_bool(key, value)?,
            "ssl.hidden" => self.ssl.arch.encoder_hidden = parse_list(key, value)?,
            "ssl.predictor_hidden" => self.ssl.arch.predictor_hidden = parse(key, value)?,
            "ssl.activation" => self.ssl.arch.activation = parse_activation(key, value)?,
            "ssl.aug" => self.ssl.aug.tag = value.to_string(),
            "ssl.sigma" => self.ssl.aug.sigma = parse(key, value)?,
            "ssl.mask" => self.ssl.aug.mask = parse(key, value)?,
            "ssl.pad" => self.ssl.aug.pad = parse(key, value)?,
            "ssl.image" => {
                let dims: Vec<usize> = parse_list(key, value)?;
                let [c, h, w] = dims[..] else {
                    return Err(Error::config(key, "expected channels,height,width"));
                };
                self.ssl.aug.image = Some((c, h, w));
            }

            "teacher" => {
                self.train.teacher = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("unknown teacher mode `{value}`")))?
            }
            "teacher.checkpoint" => self.teacher_checkpoint = Some(PathBuf::from(value)),
            "ablate.strong_k" => self.ablate_strong_k = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Checks every setting that can be checked before data is loaded.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Blobs => {
                if d.classes < 2 {
                    return Err(Error::config("dataset.classes", "need at least two classes"));
                }
                if d.n_train < d.classes {
                    return Err(Error::config("dataset.n_train", "need at least one sample per class"));
                }
                if d.n_test == 0 {
                    return Err(Error::config("dataset.n_test", "must be positive"));
                }
                if d.dim == 0 {
                    return Err(Error::config("dataset.dim", "must be positive"));
                }
                if !(d.spread > 0.0 && d.spread.is_finite()) {
                    return Err(Error::config("dataset.spread", "must be positive"));
                }
                self.noise.spec()?.validate(d.classes)?;
            }
            DatasetKind::Csv => {
                for (key, p) in [("dataset.train", &d.train), ("dataset.test", &d.test)] {
                    match p {
                        None => return Err(Error::config(key, "required for csv datasets")),
                        Some(p) if !p.is_file() => {
                            return Err(Error::config(key, format!("{} does not exist", p.display())))
                        }
                        _ => {}
                    }
                }
                let spec = self.noise.spec()?;
                if let Some(c) = d.num_classes {
                    spec.validate(c)?;
                }
            }
        }
        self.train.validate()?;
        self.optim.validate()?;
        if !(self.ablate_strong_k >= 0.0) {
            return Err(Error::config("ablate.strong_k", "must be non-negative"));
        }
        if self.train.teacher != TeacherMode::None && self.train.arch.rep_width < 2 {
            return Err(Error::config(
                "model.rep_width",
                "relation losses need at least two features",
            ));
        }
        match &self.teacher_checkpoint {
            Some(p) if !p.is_file() => {
                return Err(Error::config(
                    "teacher.checkpoint",
                    format!("{} does not exist", p.display()),
                ))
            }
            Some(_) => {}
            None => {
                if self.train.teacher == TeacherMode::Pretrained {
                    self.ssl_config(0).validate()?;
                }
            }
        }
        Ok(())
    }

    /// Task training spec for one run seed.
    pub fn train_spec(&self, seed: u64) -> TrainSpec {
        TrainSpec {
            seed,
            ..self.train.clone()
        }
    }

    /// Pretraining settings for one run seed, with the teacher width tied to
    /// the student's representation width.
    pub fn ssl_config(&self, seed: u64) -> SslConfig {
        SslConfig {
            seed,
            arch: SslArch {
                rep_width: self.train.arch.rep_width,
                ..self.ssl.arch.clone()
            },
            ..self.ssl.clone()
        }
    }

    /// Canonical text form; [`Self::parse`] reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let d = &self.dataset;
        kv("id", self.id.clone());
        kv(
            "dataset.kind",
            match d.kind {
                DatasetKind::Blobs => "blobs",
                DatasetKind::Csv => "csv",
            }
            .into(),
        );
        kv("dataset.n_train", d.n_train.to_string());
        kv("dataset.n_test", d.n_test.to_string());
        kv("dataset.classes", d.classes.to_string());
        kv("dataset.dim", d.dim.to_string());
        kv("dataset.spread", format!("{:?}", d.spread));
        if let Some(v) = d.seed {
            kv("dataset.seed", v.to_string());
        }
        if let Some(p) = &d.train {
            kv("dataset.train", p.display().to_string());
        }
        if let Some(p) = &d.test {
            kv("dataset.test", p.display().to_string());
        }
        if let Some(v) = d.num_classes {
            kv("dataset.num_classes", v.to_string());
        }
        if let Some(v) = d.header {
            kv("dataset.header", v.to_string());
        }

        kv("noise.kind", self.noise.kind_name().into());
        kv("noise.rate", format!("{:?}", self.noise.rate));
        if let Some(p) = &self.noise.preset {
            kv("noise.preset", p.clone());
        }
        if let Some(m) = &self.noise.class_map {
            kv(
                "noise.class_map",
                m.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(","),
            );
        }

        let p = &self.train.loss_params;
        kv("loss.name", self.train.loss.clone());
        kv("loss.gce_q", format!("{:?}", p.gce_q));
        kv("loss.sce_a", format!("{:?}", p.sce_a));
        kv("loss.sce_b", format!("{:?}", p.sce_b));
        kv("loss.sce_log_zero", format!("{:?}", p.sce_log_zero));
        kv("loss.agce_a", format!("{:?}", p.agce_a));
        kv("loss.agce_q", format!("{:?}", p.agce_q));
        kv("loss.ael_a", format!("{:?}", p.ael_a));
        kv("loss.active_weight", format!("{:?}", p.active_weight));
        kv("loss.passive_weight", format!("{:?}", p.passive_weight));

        kv("rmd.k", format!("{:?}", self.train.k));
        kv("rmd.alpha", format!("{:?}", self.train.weights.alpha));
        kv("rmd.beta", format!("{:?}", self.train.weights.beta));
        kv("rmd.norm", self.train.norm.to_string());

        kv("model.hidden", join(&self.train.arch.hidden));
        kv("model.rep_width", self.train.arch.rep_width.to_string());
        kv("model.activation", self.train.arch.activation.to_string());

        let o = &self.optim;
        kv("optim.lr0", format!("{:?}", o.lr0));
        kv("optim.momentum", format!("{:?}", o.momentum));
        kv("optim.weight_decay", format!("{:?}", o.weight_decay));
        kv("optim.decay_factor", format!("{:?}", o.decay_factor));
        kv("optim.decay_start_epoch", o.decay_start_epoch.to_string());
        kv("optim.decay_every", o.decay_every.to_string());
        kv("optim.epochs", o.epochs.to_string());
        kv("optim.batch_size", o.batch_size.to_string());

        let q = &self.ssl;
        kv("ssl.lr", format!("{:?}", q.lr));
        kv("ssl.momentum", format!("{:?}", q.momentum));
        kv("ssl.weight_decay", format!("{:?}", q.weight_decay));
        kv("ssl.batch_size", q.batch_size.to_string());
        kv("ssl.epochs", q.epochs.to_string());
        kv("ssl.stop_gradient", q.stop_gradient.to_string());
        kv("ssl.hidden", join(&q.arch.encoder_hidden));
        kv("ssl.predictor_hidden", q.arch.predictor_hidden.to_string());
        kv("ssl.activation", q.arch.activation.to_string());
        kv("ssl.aug", q.aug.tag.clone());
        kv("ssl.sigma", format!("{:?}", q.aug.sigma));
        kv("ssl.mask", format!("{:?}", q.aug.mask));
        kv("ssl.pad", q.aug.pad.to_string());
        if let Some((c, h, w)) = q.aug.image {
            kv("ssl.image", format!("{c},{h},{w}"));
        }

        kv("teacher", self.train.teacher.to_string());
        if let Some(p) = &self.teacher_checkpoint {
            kv("teacher.checkpoint", p.display().to_string());
        }
        kv("ablate.strong_k", format!("{:?}", self.ablate_strong_k));
        kv("seeds", join(&self.seeds));
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# header\nid = run1\nnoise.kind = pairflip  # trailing\nnoise.rate=0.2\nrmd.k = 0.5\nseeds = 3, 4\nmodel.hidden = 16,8\n",
        )
        .unwrap();
        assert_eq!(cfg.id, "run1");
        assert_eq!(cfg.noise.kind, Some(NoiseKind::Pairflip));
        assert_eq!(cfg.noise.rate, 0.2);
        assert_eq!(cfg.train.k, 0.5);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.train.arch.hidden, vec![16, 8]);
        cfg.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let key_of = |text: &str| match ExperimentConfig::parse(text).unwrap_err() {
            Error::Config { key, .. } => key,
            other => panic!("unexpected {other}"),
        };
        assert_eq!(key_of("rmd.k = lots"), "rmd.k");
        assert_eq!(key_of("bogus.key = 1"), "bogus.key");
        assert_eq!(key_of("seeds = 1\nseeds = 2"), "seeds");
        assert!(matches!(
            ExperimentConfig::parse("no equals sign"),
            Err(Error::Ingestion { line: 1, .. })
        ));

        let validate_key = |text: &str| match ExperimentConfig::parse(text).unwrap().validate().unwrap_err() {
            Error::Config { key, .. } => key,
            other => panic!("unexpected {other}"),
        };
        assert_eq!(validate_key("seeds = "), "seeds");
        assert_eq!(validate_key("loss.name = focal"), "loss.name");
        assert_eq!(validate_key("noise.kind = asymmetric"), "noise.class_map");
        assert_eq!(validate_key("noise.rate = 1.5"), "noise.rate");
        assert_eq!(validate_key("dataset.kind = csv"), "dataset.train");
        assert_eq!(
            validate_key("teacher.checkpoint = /nonexistent/t.ckpt"),
            "teacher.checkpoint"
        );
        assert_eq!(validate_key("optim.lr0 = 0"), "optim.lr0");
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("noise.kind", "asymmetric"),
            ("noise.class_map", "0:1,2:3"),
            ("dataset.seed", "7"),
            ("ssl.image", "3,8,8"),
            ("teacher", "random"),
            ("rmd.norm", "mse"),
            ("optim.lr0", "0.1"),
        ] {
            cfg.set(k, v).unwrap();
        }
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn noise_spec_from_config() {
        let mut n = NoiseConfig {
            kind: None,
            ..NoiseConfig::default()
        };
        assert_eq!(n.spec().unwrap(), NoiseSpec::none());
        n.kind = Some(NoiseKind::Asymmetric);
        n.preset = Some("cifar10".into());
        assert_eq!(n.spec().unwrap(), NoiseSpec::cifar10_asymmetric(0.4));
    }
}
