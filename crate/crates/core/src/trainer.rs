//! The task channel: a classifier trained on noisy labels with the objective
//! `L = L_base + K · L_rmd`, where the relation term pulls the student's
//! penultimate representations towards a frozen teacher's relation graph.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{ClassificationLoss, LossOut, LossRegistry, RobustParams};
use crate::numerics::{mlp_backward, mlp_forward, Activation, Dense, Mat, MlpParams, RngStream};
use crate::optim::{step_lr, OptimConfig, Sgd};
use crate::relation::{rmdnet_loss_with, MatchNorm, RepBatch, RmdOut, RmdWeights};

/// Student network: an MLP encoder followed by a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub encoder: MlpParams,
    pub head: Dense,
}

impl TaskModel {
    pub fn new(encoder: MlpParams, head: Dense) -> Result<Self> {
        if head.input_width() != encoder.output_width() {
            return Err(Error::dim(format!(
                "head expects {} inputs, encoder produces {}",
                head.input_width(),
                encoder.output_width()
            )));
        }
        Ok(Self { encoder, head })
    }

    pub fn init(input_width: usize, classes: usize, arch: &TaskArch, rng: &RngStream) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(&arch.hidden);
        widths.push(arch.rep_width);
        let encoder = MlpParams::init(&widths, arch.activation, &mut rng.child("encoder"))?;
        let head = Dense::init(arch.rep_width, classes, Activation::Identity, &mut rng.child("head"));
        Self::new(encoder, head)
    }

    pub fn rep_width(&self) -> usize {
        self.encoder.output_width()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_width()
    }

    /// Penultimate representations.
    pub fn reps(&self, x: &Mat) -> Result<Mat> {
        self.encoder.apply(x)
    }

    pub fn logits(&self, x: &Mat) -> Result<Mat> {
        self.head.forward(&self.encoder.apply(x)?)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.push(self.head.weight.as_slice());
        t.push(&self.head.bias);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.push(self.head.weight.as_mut_slice());
        t.push(&mut self.head.bias);
        t
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::dim(format!(
                "flat vector has {} values, model has {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Row-wise argmax; ties go to the smallest class id.
pub fn argmax_rows(logits: &Mat) -> Vec<usize> {
    logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &TaskModel, x: &Mat) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.logits(x)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskArch {
    pub hidden: Vec<usize>,
    pub rep_width: usize,
    pub activation: Activation,
}

impl Default for TaskArch {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            rep_width: 64,
            activation: Activation::Tanh,
        }
    }
}

/// Where the relational channel's teacher comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TeacherMode {
    /// Encoder produced by self-supervised pretraining (or loaded from a checkpoint).
    #[default]
    Pretrained,
    /// Randomly initialized encoder that is never trained.
    RandomFrozen,
    None,
}

impl TeacherMode {
    pub fn name(self) -> &'static str {
        match self {
            TeacherMode::Pretrained => "pretrained",
            TeacherMode::RandomFrozen => "random",
            TeacherMode::None => "none",
        }
    }
}

impl fmt::Display for TeacherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TeacherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" | "rm" => Ok(TeacherMode::Pretrained),
            "random" | "random_frozen" => Ok(TeacherMode::RandomFrozen),
            "none" => Ok(TeacherMode::None),
            other => Err(Error::config("teacher", format!("unknown teacher mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub loss: String,
    pub loss_params: RobustParams,
    pub k: f64,
    pub weights: RmdWeights,
    pub norm: MatchNorm,
    pub teacher: TeacherMode,
    pub arch: TaskArch,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            loss: "ce".into(),
            loss_params: RobustParams::default(),
            k: 1.0,
            weights: RmdWeights::default(),
            norm: MatchNorm::Frobenius,
            teacher: TeacherMode::Pretrained,
            arch: TaskArch::default(),
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::config("rmd.k", "must be a finite non-negative number"));
        }
        if !(self.weights.alpha >= 0.0 && self.weights.beta >= 0.0) {
            return Err(Error::config("rmd.alpha", "alpha and beta must be non-negative"));
        }
        if self.arch.rep_width == 0 {
            return Err(Error::config("model.rep_width", "must be positive"));
        }
        self.loss_params.validate()?;
        LossRegistry::default().build(&self.loss, &self.loss_params)?;
        Ok(())
    }

    /// `K` actually applied: zero without a teacher.
    pub fn effective_k(&self) -> f64 {
        if self.teacher == TeacherMode::None {
            0.0
        } else {
            self.k
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalOut {
    pub value: f64,
    pub grad_logits: Mat,
    /// `K · ∂L_rmd/∂reps`, absent when the relation term is off.
    pub grad_reps: Option<Mat>,
}

/// `base + K · rmd`. With `K = 0` or no relation term the result is the base
/// loss itself.
pub fn total_loss(base: &LossOut, rmd: Option<&RmdOut>, k: f64) -> Result<TotalOut> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("K must be non-negative, got {k}")));
    }
    match rmd {
        Some(r) if k != 0.0 => Ok(TotalOut {
            value: base.value + k * r.value,
            grad_logits: base.grad_logits.clone(),
            grad_reps: Some(r.grad_student.scale(k)),
        }),
        _ => Ok(TotalOut {
            value: base.value,
            grad_logits: base.grad_logits.clone(),
            grad_reps: None,
        }),
    }
}

/// Loss terms and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub base: f64,
    /// `None` when the relation term was skipped.
    pub rmd: Option<f64>,
    pub total: f64,
    pub grads: TaskModel,
}

/// Settings of the batch objective that do not change during training.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub loss: &'a dyn ClassificationLoss,
    pub k: f64,
    pub weights: RmdWeights,
    pub norm: MatchNorm,
}

/// Evaluates the total objective on one batch and backpropagates it into the
/// student. The teacher only contributes constant representations.
pub fn task_objective(
    model: &TaskModel,
    teacher: Option<&MlpParams>,
    x: &Mat,
    labels: &[usize],
    obj: &ObjectiveSpec<'_>,
) -> Result<BatchObjective> {
    let (reps, enc_cache) = mlp_forward(&model.encoder, x)?;
    let logits = model.head.forward(&reps)?;
    let base = obj.loss.evaluate(&logits, labels)?;

    let rmd = match teacher {
        Some(t) if obj.k != 0.0 && x.rows() >= 2 => {
            let teacher_reps = t.apply(x)?;
            Some(rmdnet_loss_with(
                &RepBatch(teacher_reps),
                &RepBatch(reps.clone()),
                obj.weights,
                obj.norm,
            )?)
        }
        _ => None,
    };
    let total = total_loss(&base, rmd.as_ref(), obj.k)?;

    let (head_grads, mut grad_reps) = model.head.backward(&reps, &total.grad_logits)?;
    if let Some(g) = &total.grad_reps {
        grad_reps.add_scaled(g, 1.0)?;
    }
    let (enc_grads, _) = mlp_backward(&model.encoder, &enc_cache, &grad_reps)?;
    Ok(BatchObjective {
        base: base.value,
        rmd: rmd.map(|r| r.value),
        total: total.value,
        grads: TaskModel {
            encoder: enc_grads,
            head: head_grads,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub base_loss: f64,
    pub rmd_loss: f64,
    pub total_loss: f64,
    /// Accuracy against the noisy training labels.
    pub train_acc: f64,
    /// Accuracy against clean test labels, when a test set was supplied.
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

const HISTORY_HEADER: [&str; 6] = ["epoch", "base_loss", "rmd_loss", "total_loss", "train_acc", "test_acc"];

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let res: csv::Result<()> = (|| {
            w.write_record(HISTORY_HEADER)?;
            for r in &self.records {
                w.write_record([
                    r.epoch.to_string(),
                    format!("{:?}", r.base_loss),
                    format!("{:?}", r.rmd_loss),
                    format!("{:?}", r.total_loss),
                    format!("{:?}", r.train_acc),
                    r.test_acc.map(|v| format!("{v:?}")).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::InvalidArgument(format!("writing history: {e}")))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(io::BufWriter::new(file))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Ingestion {
                line,
                message: e.to_string(),
            })?;
            if row.len() != HISTORY_HEADER.len() {
                return Err(Error::Ingestion {
                    line,
                    message: format!("expected {} fields, found {}", HISTORY_HEADER.len(), row.len()),
                });
            }
            let num = |j: usize| -> Result<f64> {
                row[j].parse().map_err(|_| Error::Ingestion {
                    line,
                    message: format!("bad {} value `{}`", HISTORY_HEADER[j], &row[j]),
                })
            };
            records.push(EpochRecord {
                epoch: row[0].parse().map_err(|_| Error::Ingestion {
                    line,
                    message: format!("bad epoch `{}`", &row[0]),
                })?,
                base_loss: num(1)?,
                rmd_loss: num(2)?,
                total_loss: num(3)?,
                train_acc: num(4)?,
                test_acc: if row[5].is_empty() { None } else { Some(num(5)?) },
            });
        }
        Ok(Self { records })
    }
}

fn fraction_correct(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains a fresh student on `train`'s noisy labels. `test`, when given, is
/// scored against its clean labels after every epoch. The teacher is read
/// but never modified.
pub fn train_task(
    train: &Dataset,
    test: Option<&Dataset>,
    spec: &TrainSpec,
    optim: &OptimConfig,
    teacher: Option<&MlpParams>,
) -> Result<(TaskModel, TrainHistory)> {
    spec.validate()?;
    optim.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let rng = RngStream::new(spec.seed);
    let model = TaskModel::init(train.dim(), train.num_classes(), &spec.arch, &rng.child("student_init"))?;
    train_task_from(model, train, test, spec, optim, teacher)
}

/// As [`train_task`], starting from a given student.
pub fn train_task_from(
    mut model: TaskModel,
    train: &Dataset,
    test: Option<&Dataset>,
    spec: &TrainSpec,
    optim: &OptimConfig,
    teacher: Option<&MlpParams>,
) -> Result<(TaskModel, TrainHistory)> {
    let k = if teacher.is_some() { spec.effective_k() } else { 0.0 };
    let teacher = teacher.filter(|_| k != 0.0);
    if let Some(t) = teacher {
        if t.input_width() != train.dim() {
            return Err(Error::config(
                "teacher",
                format!("teacher reads {} features, data has {}", t.input_width(), train.dim()),
            ));
        }
        if t.output_width() != model.rep_width() {
            return Err(Error::config(
                "model.rep_width",
                format!(
                    "student representation width {} must equal the teacher's {}",
                    model.rep_width(),
                    t.output_width()
                ),
            ));
        }
    }
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(Error::dim("test features differ in width from training features"));
        }
    }
    let loss = LossRegistry::default().build(&spec.loss, &spec.loss_params)?;
    let obj = ObjectiveSpec {
        loss: loss.as_ref(),
        k,
        weights: spec.weights,
        norm: spec.norm,
    };

    let n = train.len();
    let mut order_rng = RngStream::new(spec.seed).child("batches");
    let mut opt = Sgd::for_tensors(&model.tensors(), optim.sgd());
    let mut history = TrainHistory::default();
    for epoch in 0..optim.epochs {
        let lr = step_lr(epoch, optim);
        let order = order_rng.permutation(n);
        let (mut base_sum, mut rmd_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for (batch, idx) in order.chunks(optim.batch_size).enumerate() {
            let x = train.features().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.noisy_labels()[i]).collect();
            let out = task_objective(&model, teacher, &x, &y, &obj)?;
            if !out.total.is_finite() {
                return Err(Error::NumericAbort {
                    epoch,
                    batch,
                    message: format!("non-finite loss {}", out.total),
                });
            }
            let b = idx.len() as f64;
            base_sum += out.base * b;
            rmd_sum += out.rmd.unwrap_or(0.0) * b;
            total_sum += out.total * b;
            opt.step_tensors(model.tensors_mut(), out.grads.tensors(), lr)?;
            if !model.is_finite() {
                return Err(Error::NumericAbort {
                    epoch,
                    batch,
                    message: "parameters became non-finite".into(),
                });
            }
        }
        let train_acc = fraction_correct(&predict(&model, train.features())?, train.noisy_labels());
        let test_acc = match test {
            Some(t) => Some(fraction_correct(&predict(&model, t.features())?, t.clean_labels())),
            None => None,
        };
        let nf = n as f64;
        history.records.push(EpochRecord {
            epoch,
            base_loss: base_sum / nf,
            rmd_loss: rmd_sum / nf,
            total_loss: total_sum / nf,
            train_acc,
            test_acc,
        });
        log::debug!(
            "epoch {epoch}: total {:.5} train_acc {train_acc:.4} test_acc {test_acc:?}",
            total_sum / nf
        );
    }
    Ok((model, history))
}
