//! Label-free pretraining of the teacher encoder with a SimSiam objective:
//! two augmented views, a shared encoder `f`, a predictor `m`, and the
//! symmetric negative cosine between `m(f(v))` and a detached `f(v′)`.

use crate::data::{augment_views, AugSpec, AugmentationRegistry, ViewPair};
use crate::error::{Error, Result};
use crate::numerics::{
    dot, l2_normalize_rows, mlp_backward, mlp_forward, norm2, Activation, Mat, MlpParams, RngStream, EPS,
};
use crate::optim::{cosine_lr, Sgd, SgdConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SslModel {
    pub encoder: MlpParams,
    pub predictor: MlpParams,
}

impl SslModel {
    pub fn new(encoder: MlpParams, predictor: MlpParams) -> Result<Self> {
        let w = encoder.output_width();
        if predictor.input_width() != w || predictor.output_width() != w {
            return Err(Error::dim(format!(
                "predictor must map {w} -> {w}, got {} -> {}",
                predictor.input_width(),
                predictor.output_width()
            )));
        }
        Ok(Self { encoder, predictor })
    }

    pub fn init(input_width: usize, arch: &SslArch, rng: &RngStream) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(&arch.encoder_hidden);
        widths.push(arch.rep_width);
        let encoder = MlpParams::init(&widths, arch.activation, &mut rng.child("encoder"))?;
        let predictor = MlpParams::init(
            &[arch.rep_width, arch.predictor_hidden, arch.rep_width],
            arch.activation,
            &mut rng.child("predictor"),
        )?;
        Self::new(encoder, predictor)
    }

    pub fn rep_width(&self) -> usize {
        self.encoder.output_width()
    }
}

/// Network widths for the pretraining model.
#[derive(Debug, Clone, PartialEq)]
pub struct SslArch {
    pub encoder_hidden: Vec<usize>,
    pub rep_width: usize,
    pub predictor_hidden: usize,
    pub activation: Activation,
}

impl Default for SslArch {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![128],
            rep_width: 64,
            predictor_hidden: 32,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub aug: AugSpec,
    pub arch: SslArch,
    /// Detach the target branch. Disabling it is a diagnostic for collapse.
    pub stop_gradient: bool,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 50,
            aug: AugSpec::default(),
            arch: SslArch::default(),
            stop_gradient: true,
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("ssl.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("ssl.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("ssl.weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("ssl.batch_size", "must be positive"));
        }
        if self.arch.rep_width < 2 {
            return Err(Error::config("ssl.rep_width", "needs at least two features"));
        }
        AugmentationRegistry::default().build(&self.aug)?;
        Ok(())
    }
}

/// `−(q/‖q‖)·(y/‖y‖)` and its gradient with respect to `q`.
pub fn neg_cosine(q: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let nq = norm2(q).max(EPS);
    let ny = norm2(y).max(EPS);
    let c = dot(q, y) / (nq * ny);
    let grad = q
        .iter()
        .zip(y)
        .map(|(&qi, &yi)| -(yi / ny - c * qi / nq) / nq)
        .collect();
    (-c, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslGrads {
    pub encoder: MlpParams,
    pub predictor: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSiamOut {
    pub value: f64,
    pub grads: SslGrads,
    /// Gradient arriving at the targets `(y, y′)`. Exactly zero when the
    /// targets are detached.
    pub target_grads: (Mat, Mat),
}

/// Symmetric SimSiam loss with detached targets.
pub fn simsiam_loss(model: &SslModel, views: &ViewPair) -> Result<SimSiamOut> {
    simsiam_core(model, None, views, true)
}

/// As [`simsiam_loss`]; `stop_gradient = false` lets gradient reach the targets.
pub fn simsiam_loss_with(model: &SslModel, views: &ViewPair, stop_gradient: bool) -> Result<SimSiamOut> {
    simsiam_core(model, None, views, stop_gradient)
}

/// Detached-target loss where the targets come from a separate copy of the
/// encoder. Gradients are reported for `model` only.
pub fn simsiam_loss_split(model: &SslModel, target_encoder: &MlpParams, views: &ViewPair) -> Result<SimSiamOut> {
    simsiam_core(model, Some(target_encoder), views, true)
}

fn simsiam_core(
    model: &SslModel,
    target_encoder: Option<&MlpParams>,
    views: &ViewPair,
    stop_gradient: bool,
) -> Result<SimSiamOut> {
    if views.v.shape() != views.v_prime.shape() {
        return Err(Error::dim("the two views differ in shape"));
    }
    let b = views.v.rows();
    if b == 0 {
        return Err(Error::dim("empty batch"));
    }
    let (z1, enc_cache1) = mlp_forward(&model.encoder, &views.v)?;
    let (z2, enc_cache2) = mlp_forward(&model.encoder, &views.v_prime)?;
    let (q1, pred_cache1) = mlp_forward(&model.predictor, &z1)?;
    let (q2, pred_cache2) = mlp_forward(&model.predictor, &z2)?;
    let (y1, y2) = match target_encoder {
        Some(t) => (t.apply(&views.v)?, t.apply(&views.v_prime)?),
        None => (z1.clone(), z2.clone()),
    };

    let w = model.rep_width();
    let scale = 0.5 / b as f64;
    let mut gq1 = Mat::zeros(b, w);
    let mut gq2 = Mat::zeros(b, w);
    let mut gy1 = Mat::zeros(b, w);
    let mut gy2 = Mat::zeros(b, w);
    let mut total = 0.0;
    for i in 0..b {
        let (c1, g1) = neg_cosine(q1.row(i), y2.row(i));
        let (c2, g2) = neg_cosine(q2.row(i), y1.row(i));
        total += 0.5 * (c1 + c2);
        for (dst, g) in gq1.row_mut(i).iter_mut().zip(&g1) {
            *dst = scale * g;
        }
        for (dst, g) in gq2.row_mut(i).iter_mut().zip(&g2) {
            *dst = scale * g;
        }
        if !stop_gradient {
            // The cosine is symmetric, so its gradient in y has the same form.
            let (_, h1) = neg_cosine(y2.row(i), q1.row(i));
            let (_, h2) = neg_cosine(y1.row(i), q2.row(i));
            for (dst, g) in gy2.row_mut(i).iter_mut().zip(&h1) {
                *dst = scale * g;
            }
            for (dst, g) in gy1.row_mut(i).iter_mut().zip(&h2) {
                *dst = scale * g;
            }
        }
    }

    let (mut pred_grads, mut dz1) = mlp_backward(&model.predictor, &pred_cache1, &gq1)?;
    let (pred_grads2, mut dz2) = mlp_backward(&model.predictor, &pred_cache2, &gq2)?;
    pred_grads.add_scaled(&pred_grads2, 1.0)?;
    if !stop_gradient {
        dz1.add_scaled(&gy1, 1.0)?;
        dz2.add_scaled(&gy2, 1.0)?;
    }
    let (mut enc_grads, _) = mlp_backward(&model.encoder, &enc_cache1, &dz1)?;
    let (enc_grads2, _) = mlp_backward(&model.encoder, &enc_cache2, &dz2)?;
    enc_grads.add_scaled(&enc_grads2, 1.0)?;

    Ok(SimSiamOut {
        value: total / b as f64,
        grads: SslGrads {
            encoder: enc_grads,
            predictor: pred_grads,
        },
        target_grads: (gy1, gy2),
    })
}

/// Trains encoder and predictor on unlabeled features with SGD, momentum,
/// weight decay and a per-step cosine learning rate.
pub fn pretrain_rm(features: &Mat, cfg: &SslConfig) -> Result<SslModel> {
    cfg.validate()?;
    let rng = RngStream::new(cfg.seed);
    let model = SslModel::init(features.cols(), &cfg.arch, &rng.child("init"))?;
    pretrain_from(model, features, cfg)
}

/// Continues pretraining from an existing model.
pub fn pretrain_from(mut model: SslModel, features: &Mat, cfg: &SslConfig) -> Result<SslModel> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("pretraining needs a nonempty dataset".into()));
    }
    if features.cols() != model.encoder.input_width() {
        return Err(Error::dim("feature width does not match the encoder"));
    }
    let aug = AugmentationRegistry::default().build(&cfg.aug)?;
    let rng = RngStream::new(cfg.seed);
    let mut order_rng = rng.child("order");
    let mut aug_rng = rng.child("augment");
    let sgd = SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut enc_opt = Sgd::new(&model.encoder, sgd);
    let mut pred_opt = Sgd::new(&model.predictor, sgd);

    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = order_rng.permutation(n);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = features.select_rows(idx);
            let views = ViewPair {
                v: aug.apply(&x, &mut aug_rng)?,
                v_prime: aug.apply(&x, &mut aug_rng)?,
            };
            let out = simsiam_core(&model, None, &views, cfg.stop_gradient)?;
            if !out.value.is_finite() {
                return Err(Error::NumericAbort {
                    epoch,
                    batch,
                    message: format!("non-finite SimSiam loss {}", out.value),
                });
            }
            let lr = cosine_lr(cfg.lr, step, total_steps);
            enc_opt.step(&mut model.encoder, &out.grads.encoder, lr)?;
            pred_opt.step(&mut model.predictor, &out.grads.predictor, lr)?;
            if !model.encoder.is_finite() || !model.predictor.is_finite() {
                return Err(Error::NumericAbort {
                    epoch,
                    batch,
                    message: "parameters became non-finite".into(),
                });
            }
            step += 1;
        }
    }
    Ok(model)
}

/// Mean over coordinates of the per-coordinate standard deviation of the
/// L2-normalized embeddings. Near zero when the embeddings have collapsed.
pub fn embedding_std(reps: &Mat) -> f64 {
    let (n, d) = reps.shape();
    if n == 0 || d == 0 {
        return 0.0;
    }
    let z = l2_normalize_rows(reps, EPS);
    let mut total = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (z[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        total += var.sqrt();
    }
    total / d as f64
}

/// Collapse threshold `0.1/√d` for [`embedding_std`] of width `d` embeddings.
pub fn collapse_threshold(width: usize) -> f64 {
    0.1 / (width as f64).sqrt()
}

/// Convenience wrapper drawing a view pair with the configured augmentation.
pub fn draw_views(x: &Mat, aug: &AugSpec, rng: &mut RngStream) -> Result<ViewPair> {
    augment_views(x, aug, rng)
}
