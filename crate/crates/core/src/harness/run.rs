use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::accuracy;
use super::config::{DatasetKind, ExperimentConfig};
use super::results::{mean_std, save_results, sort_rows, write_sweep, ResultRow, SweepRow};
use crate::checkpoint::Checkpoint;
use crate::data::{build_transition, inject_noise, load_csv, make_blobs, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{MlpParams, RngStream};
use crate::ssl::{pretrain_rm, SslModel};
use crate::trainer::{predict, train_task, TaskModel, TeacherMode, TrainHistory};

/// Data for one run seed: training set with injected noise, clean test set.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Draws or loads the datasets for `seed` and corrupts the training labels.
/// The test set never passes through noise injection.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let d = &cfg.dataset;
    let (train, test) = match d.kind {
        DatasetKind::Blobs => {
            let data_rng = RngStream::new(d.seed.unwrap_or(seed));
            let train = make_blobs(d.n_train, d.classes, d.dim, d.spread, data_rng.child("train").seed())?;
            let test = make_blobs(d.n_test, d.classes, d.dim, d.spread, data_rng.child("test").seed())?;
            (train, test)
        }
        DatasetKind::Csv => {
            let (Some(train_path), Some(test_path)) = (&d.train, &d.test) else {
                return Err(Error::config("dataset.train", "csv datasets need train and test paths"));
            };
            let train = load_csv(
                train_path,
                &CsvSchema {
                    num_classes: d.num_classes,
                    header: d.header,
                },
            )?;
            let test = load_csv(
                test_path,
                &CsvSchema {
                    num_classes: Some(train.num_classes()),
                    header: d.header,
                },
            )?;
            if test.dim() != train.dim() {
                return Err(Error::config(
                    "dataset.test",
                    "test features differ in width from training features",
                ));
            }
            (train, test)
        }
    };
    let transition = build_transition(&cfg.noise.spec()?, train.num_classes())?;
    let train = inject_noise(&train, &transition, &RngStream::new(seed).child("noise"))?;
    Ok(SeedData { train, test })
}

/// Frozen reference encoder for the relation term.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub mode: TeacherMode,
    pub encoder: Option<MlpParams>,
    /// Present when the teacher was pretrained in this process.
    pub predictor: Option<MlpParams>,
}

impl Teacher {
    pub fn none() -> Self {
        Self {
            mode: TeacherMode::None,
            encoder: None,
            predictor: None,
        }
    }

    pub fn checkpoint(&self) -> Result<Option<Checkpoint>> {
        let Some(enc) = &self.encoder else {
            return Ok(None);
        };
        let mut ck = Checkpoint::new().with("encoder", enc.clone())?;
        if let Some(p) = &self.predictor {
            ck.insert("predictor", p.clone())?;
        }
        Ok(Some(ck))
    }
}

/// Builds the teacher for `mode`: nothing, a randomly initialised encoder,
/// or a pretrained one (loaded from `teacher.checkpoint` when configured,
/// otherwise pretrained on the training features without their labels).
pub fn build_teacher(cfg: &ExperimentConfig, mode: TeacherMode, seed: u64, train: &Dataset) -> Result<Teacher> {
    let ssl = cfg.ssl_config(seed);
    match mode {
        TeacherMode::None => Ok(Teacher::none()),
        TeacherMode::RandomFrozen => {
            let rng = RngStream::new(seed).child("teacher_init");
            let model = SslModel::init(train.dim(), &ssl.arch, &rng)?;
            Ok(Teacher {
                mode,
                encoder: Some(model.encoder),
                predictor: None,
            })
        }
        TeacherMode::Pretrained => match &cfg.teacher_checkpoint {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                Ok(Teacher {
                    mode,
                    encoder: Some(ck.require("encoder")?.clone()),
                    predictor: ck.get("predictor").cloned(),
                })
            }
            None => {
                let model = pretrain_rm(train.features(), &ssl)?;
                Ok(Teacher {
                    mode,
                    encoder: Some(model.encoder),
                    predictor: Some(model.predictor),
                })
            }
        },
    }
}

/// Clean-label accuracy of `model` on `test`.
pub fn evaluate(model: &TaskModel, test: &Dataset) -> Result<f64> {
    accuracy(&predict(model, test.features())?, test.clean_labels())
}

fn run_dir(cfg: &ExperimentConfig, config_id: &str, seed: u64) -> PathBuf {
    cfg.output_dir.join(config_id).join(format!("seed_{seed}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn student_checkpoint(model: &TaskModel) -> Result<Checkpoint> {
    let head = MlpParams::from_layers(vec![model.head.clone()], Vec::new())?;
    Checkpoint::new()
        .with("encoder", model.encoder.clone())?
        .with("head", head)
}

/// Trains one student with relation weight `k` against `teacher` and writes
/// its history and checkpoints under `output_dir/<config_id>/seed_<seed>/`.
pub fn run_one(
    cfg: &ExperimentConfig,
    config_id: &str,
    seed: u64,
    data: &SeedData,
    teacher: &Teacher,
    k: f64,
) -> Result<(ResultRow, TaskModel, TrainHistory)> {
    let start = Instant::now();
    let mut spec = cfg.train_spec(seed);
    spec.k = k;
    spec.teacher = teacher.mode;
    let (model, history) = train_task(
        &data.train,
        Some(&data.test),
        &spec,
        &cfg.optim,
        teacher.encoder.as_ref(),
    )?;
    let test_acc = evaluate(&model, &data.test)?;

    let dir = run_dir(cfg, config_id, seed);
    create_dir(&dir)?;
    history.save(dir.join("history.csv"))?;
    student_checkpoint(&model)?.save(dir.join("student.ckpt"))?;
    if let Some(ck) = teacher.checkpoint()? {
        ck.save(dir.join("teacher.ckpt"))?;
    }

    let row = ResultRow {
        config_id: config_id.to_string(),
        seed,
        noise_kind: cfg.noise.kind_name().to_string(),
        noise_rate: if cfg.noise.kind.is_some() { cfg.noise.rate } else { 0.0 },
        loss: spec.loss.clone(),
        k: spec.effective_k(),
        teacher: teacher.mode.name().to_string(),
        test_acc,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((row, model, history))
}

fn run_label(config_id: &str, seed: u64) -> String {
    format!("{config_id} seed {seed}")
}

/// Teacher needed for a run at weight `k`; none when the relation term is off.
fn teacher_for(cfg: &ExperimentConfig, mode: TeacherMode, k: f64, seed: u64, train: &Dataset) -> Result<Teacher> {
    if k == 0.0 {
        Ok(Teacher::none())
    } else {
        build_teacher(cfg, mode, seed, train)
    }
}

/// Runs every configured seed in parallel and writes
/// `output_dir/<id>/results.csv`, sorted by seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let go = || {
                let data = load_data(cfg, seed)?;
                let teacher = teacher_for(cfg, cfg.train.teacher, cfg.train.effective_k(), seed, &data.train)?;
                run_one(cfg, &cfg.id, seed, &data, &teacher, cfg.train.k).map(|(row, _, _)| row)
            };
            go().map_err(|e| e.in_run(run_label(&cfg.id, seed)))
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    let dir = cfg.output_dir.join(&cfg.id);
    create_dir(&dir)?;
    save_results(&rows, dir.join("results.csv"))?;
    Ok(rows)
}

/// Pretrains (or loads) the teacher for every seed and saves it as
/// `output_dir/<id>/seed_<s>/teacher.ckpt`. Returns the checkpoint paths.
pub fn pretrain_teachers(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let go = || {
                let data = load_data(cfg, seed)?;
                let teacher = build_teacher(cfg, TeacherMode::Pretrained, seed, &data.train)?;
                let dir = run_dir(cfg, &cfg.id, seed);
                create_dir(&dir)?;
                let path = dir.join("teacher.ckpt");
                if let Some(ck) = teacher.checkpoint()? {
                    ck.save(&path)?;
                }
                Ok(path)
            };
            go().map_err(|e: Error| e.in_run(run_label(&cfg.id, seed)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    /// One row per K, ascending.
    pub table: Vec<SweepRow>,
}

/// Runs every (seed, K) cell. Data and teacher are prepared once per seed and
/// shared by its cells. Writes `sweep.csv` and `results.csv` under
/// `output_dir/<id>/sweep/`.
pub fn sweep_k(cfg: &ExperimentConfig, k_values: &[f64]) -> Result<SweepOutcome> {
    cfg.validate()?;
    if k_values.is_empty() {
        return Err(Error::config("k", "at least one K value is required"));
    }
    let mut ks: Vec<f64> = Vec::new();
    for &k in k_values {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::config(
                "k",
                format!("K must be finite and non-negative, got {k}"),
            ));
        }
        if ks.contains(&k) {
            log::warn!("duplicate K value {k} ignored");
        } else {
            ks.push(k);
        }
    }
    ks.sort_by(f64::total_cmp);
    let needs_teacher = cfg.train.teacher != TeacherMode::None && ks.iter().any(|&k| k != 0.0);

    let prepared = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let go = || {
                let data = load_data(cfg, seed)?;
                let teacher = if needs_teacher {
                    build_teacher(cfg, cfg.train.teacher, seed, &data.train)?
                } else {
                    Teacher::none()
                };
                Ok((seed, data, teacher))
            };
            go().map_err(|e: Error| e.in_run(run_label(&cfg.id, seed)))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|i| (0..ks.len()).map(move |j| (i, j)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(i, j)| {
            let (seed, data, teacher) = &prepared[i];
            let k = ks[j];
            let id = format!("{}_k{k}", cfg.id);
            let none = Teacher::none();
            let teacher = if k == 0.0 { &none } else { teacher };
            run_one(cfg, &id, *seed, data, teacher, k)
                .map(|(row, _, _)| (j, row))
                .map_err(|e| e.in_run(run_label(&id, *seed)))
        })
        .collect::<Result<Vec<_>>>()?;

    let table: Vec<SweepRow> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let accs: Vec<f64> = results
                .iter()
                .filter(|(jj, _)| *jj == j)
                .map(|(_, r)| r.test_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            SweepRow {
                k,
                mean,
                std,
                n: accs.len(),
            }
        })
        .collect();
    let mut rows: Vec<ResultRow> = results.into_iter().map(|(_, r)| r).collect();
    sort_rows(&mut rows);

    let dir = cfg.output_dir.join(&cfg.id).join("sweep");
    create_dir(&dir)?;
    let sweep_path = dir.join("sweep.csv");
    let file = std::fs::File::create(&sweep_path).map_err(|e| Error::io(&sweep_path, e))?;
    write_sweep(&table, std::io::BufWriter::new(file))?;
    save_results(&rows, dir.join("results.csv"))?;
    Ok(SweepOutcome { rows, table })
}

/// One arm of the teacher ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub name: String,
    pub teacher: TeacherMode,
    pub k: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub rows: Vec<ResultRow>,
    pub arms: Vec<AblationArm>,
}

impl AblationOutcome {
    pub fn arm(&self, name: &str) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Arm names in reporting order.
pub const ABLATION_ARMS: [&str; 4] = ["base", "rgrl_random", "rgrl_rm", "rgrl_random_strong"];

fn write_ablation(arms: &[AblationArm], path: &Path) -> Result<()> {
    let mut s = String::from("arm,teacher,k,mean_acc,std_acc,n\n");
    for a in arms {
        s.push_str(&format!(
            "{},{},{},{:?},{:?},{}\n",
            a.name,
            a.teacher.name(),
            a.k,
            a.mean,
            a.std,
            a.n
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Compares the base loss alone, the relation term with a random frozen
/// teacher (at `rmd.k` and at `ablate.strong_k`), and the relation term with
/// the pretrained teacher, on identical data for every seed. Writes
/// `ablation.csv` and `results.csv` under `output_dir/<id>/ablation/`.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationOutcome> {
    cfg.validate()?;
    let k = cfg.train.k;
    let arms: [(&str, TeacherMode, f64); 4] = [
        (ABLATION_ARMS[0], TeacherMode::None, 0.0),
        (ABLATION_ARMS[1], TeacherMode::RandomFrozen, k),
        (ABLATION_ARMS[2], TeacherMode::Pretrained, k),
        (ABLATION_ARMS[3], TeacherMode::RandomFrozen, cfg.ablate_strong_k),
    ];

    let prepared = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let go = || {
                let data = load_data(cfg, seed)?;
                let random = build_teacher(cfg, TeacherMode::RandomFrozen, seed, &data.train)?;
                let pretrained = if k == 0.0 {
                    Teacher::none()
                } else {
                    build_teacher(cfg, TeacherMode::Pretrained, seed, &data.train)?
                };
                Ok((seed, data, random, pretrained))
            };
            go().map_err(|e: Error| e.in_run(run_label(&cfg.id, seed)))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|i| (0..arms.len()).map(move |a| (i, a)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(i, a)| {
            let (seed, data, random, pretrained) = &prepared[i];
            let (name, mode, arm_k) = arms[a];
            let none = Teacher::none();
            let teacher = match mode {
                _ if arm_k == 0.0 => &none,
                TeacherMode::None => &none,
                TeacherMode::RandomFrozen => random,
                TeacherMode::Pretrained => pretrained,
            };
            let id = format!("{}_{name}", cfg.id);
            run_one(cfg, &id, *seed, data, teacher, arm_k)
                .map(|(row, _, _)| (a, row))
                .map_err(|e| e.in_run(run_label(&id, *seed)))
        })
        .collect::<Result<Vec<_>>>()?;

    let arm_summaries = arms
        .iter()
        .enumerate()
        .map(|(a, &(name, mode, arm_k))| {
            let accs: Vec<f64> = results
                .iter()
                .filter(|(i, _)| *i == a)
                .map(|(_, r)| r.test_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            AblationArm {
                name: name.to_string(),
                teacher: if arm_k == 0.0 { TeacherMode::None } else { mode },
                k: arm_k,
                mean,
                std,
                n: accs.len(),
            }
        })
        .collect::<Vec<_>>();
    let mut rows: Vec<ResultRow> = results.into_iter().map(|(_, r)| r).collect();
    sort_rows(&mut rows);

    let dir = cfg.output_dir.join(&cfg.id).join("ablation");
    create_dir(&dir)?;
    write_ablation(&arm_summaries, &dir.join("ablation.csv"))?;
    save_results(&rows, dir.join("results.csv"))?;
    Ok(AblationOutcome {
        rows,
        arms: arm_summaries,
    })
}
