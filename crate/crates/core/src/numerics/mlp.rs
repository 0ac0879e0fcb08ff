use std::fmt;
use std::str::FromStr;

use super::{matmul, matmul_nt, matmul_tn, Mat, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Affine layer `y = x Wᵀ + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Mat::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights (He-uniform for ReLU layers), zero bias.
    pub fn init(input: usize, output: usize, act: Activation, rng: &mut RngStream) -> Self {
        let bound = match act {
            Activation::Relu => (6.0 / input as f64).sqrt(),
            _ => (6.0 / (input + output) as f64).sqrt(),
        };
        let mut weight = Mat::zeros(output, input);
        for w in weight.as_mut_slice() {
            *w = (2.0 * rng.uniform() - 1.0) * bound;
        }
        Self {
            weight,
            bias: vec![0.0; output],
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let mut z = matmul_nt(x, &self.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Returns `(grad_layer, grad_input)` for `grad_out` at this layer's output.
    pub fn backward(&self, input: &Mat, grad_out: &Mat) -> Result<(Dense, Mat)> {
        let weight = matmul_tn(grad_out, input)?;
        let mut bias = vec![0.0; self.output_width()];
        for row in grad_out.row_iter() {
            for (b, g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let grad_input = matmul(grad_out, &self.weight)?;
        Ok((Dense { weight, bias }, grad_input))
    }
}

/// A stack of dense layers. Every layer but the last is followed by its
/// activation; the last layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
    activations: Vec<Activation>,
}

/// Per-layer inputs recorded by [`mlp_forward`]; `inputs[l]` feeds layer `l`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
}

impl MlpCache {
    /// The last hidden activation (the input of the final layer).
    pub fn last_hidden(&self) -> &Mat {
        self.inputs.last().expect("cache holds at least the network input")
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::dim("an MLP needs at least one layer"));
        }
        if activations.len() != layers.len() - 1 {
            return Err(Error::dim(format!(
                "{} layers need {} hidden activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_width() {
                return Err(Error::dim(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layers[i - 1].output_width() != l.input_width() {
                return Err(Error::dim(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    layers[i - 1].output_width(),
                    l.input_width()
                )));
            }
        }
        Ok(Self { layers, activations })
    }

    /// Randomly initialized network with the given widths
    /// (`widths[0]` is the input width, `widths.last()` the output width).
    pub fn init(widths: &[usize], activation: Activation, rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::dim(format!("invalid MLP widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 < n { activation } else { Activation::Identity };
                Dense::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers, vec![activation; n - 1])
    }

    /// Single linear layer computing the identity map.
    pub fn identity(width: usize) -> Self {
        let layer = Dense {
            weight: Mat::identity(width),
            bias: vec![0.0; width],
        };
        Self {
            layers: vec![layer],
            activations: Vec::new(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_width(), l.output_width()))
                .collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_width)
    }

    /// All widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Dense::output_width));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in a fixed order: each layer's weight then bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites all parameters from a flat vector laid out like [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "flat vector has {} values, network has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    /// `self += s * other`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &MlpParams, s: f64) -> Result<()> {
        if self.widths() != other.widths() {
            return Err(Error::dim("add_scaled: network shapes differ"));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Forward pass without keeping the cache.
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        mlp_forward(self, x).map(|(y, _)| y)
    }
}

pub fn mlp_forward(params: &MlpParams, x: &Mat) -> Result<(Mat, MlpCache)> {
    if x.cols() != params.input_width() {
        return Err(Error::dim(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            params.input_width()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut h = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = layer.forward(&h)?;
        if let Some(&act) = params.activations.get(i) {
            for v in z.as_mut_slice() {
                *v = act.apply(*v);
            }
        }
        inputs.push(std::mem::replace(&mut h, z));
    }
    Ok((h, MlpCache { inputs }))
}

pub fn mlp_backward(params: &MlpParams, cache: &MlpCache, grad_out: &Mat) -> Result<(MlpParams, Mat)> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::dim("cache does not belong to this network"));
    }
    let batch = cache.inputs[0].rows();
    if grad_out.shape() != (batch, params.output_width()) {
        return Err(Error::dim(format!(
            "grad_out is {:?}, expected {:?}",
            grad_out.shape(),
            (batch, params.output_width())
        )));
    }
    let mut grads: Vec<Dense> = Vec::with_capacity(params.layers.len());
    let mut g = grad_out.clone();
    for l in (0..params.layers.len()).rev() {
        let (gl, mut gin) = params.layers[l].backward(&cache.inputs[l], &g)?;
        grads.push(gl);
        if l > 0 {
            let act = params.activations[l - 1];
            for (gv, &a) in gin.as_mut_slice().iter_mut().zip(cache.inputs[l].as_slice()) {
                *gv *= act.derivative_from_output(a);
            }
        }
        g = gin;
    }
    grads.reverse();
    Ok((
        MlpParams {
            layers: grads,
            activations: params.activations.clone(),
        },
        g,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_grad, GradCheck};

    #[test]
    fn zero_network_gives_zero_output() {
        let p = MlpParams::from_layers(vec![Dense::zeros(3, 2)], vec![]).unwrap();
        let x = Mat::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let y = p.apply(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_is_identity() {
        let p = MlpParams::identity(3);
        let x = Mat::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(p.apply(&x).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = RngStream::new(1);
        let p = MlpParams::init(&[2, 4, 3], Activation::Tanh, &mut rng).unwrap();
        let x = Mat::from_rows(&[[0.3, -0.1], [1.0, 2.0]]).unwrap();
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let (g, gin) = mlp_backward(&p, &cache, &Mat::zeros(2, 3)).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gin.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_adjoint_picks_weight_row() {
        let mut rng = RngStream::new(2);
        let p = MlpParams::init(&[3, 2], Activation::Tanh, &mut rng).unwrap();
        let x = Mat::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let g = Mat::from_rows(&[[0.0, 1.0]]).unwrap();
        let (_, gin) = mlp_backward(&p, &cache, &g).unwrap();
        assert_eq!(gin.row(0), p.layers()[0].weight.row(1));
    }

    #[test]
    fn random_2_4_3_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        let p = MlpParams::init(&[2, 4, 3], Activation::Tanh, &mut rng).unwrap();
        let x = Mat::from_rows(&[[0.4, -0.7], [1.2, 0.1], [-0.3, 0.9]]).unwrap();
        let upstream = Mat::from_rows(&[[1.0, -0.5, 0.2], [0.3, 0.3, -1.0], [0.0, 2.0, 0.5]]).unwrap();
        let scalar = |q: &MlpParams, x: &Mat| -> f64 {
            let y = q.apply(x).unwrap();
            crate::numerics::dot(y.as_slice(), upstream.as_slice())
        };
        let (_, cache) = mlp_forward(&p, &x).unwrap();
        let (g, gin) = mlp_backward(&p, &cache, &upstream).unwrap();

        let num = fd_grad(|w| scalar(&p.with_flat(w).unwrap(), &x), &p.to_flat(), 1e-5).unwrap();
        GradCheck::default().assert_close(&g.to_flat(), &num).unwrap();

        let num_x = fd_grad(
            |v| scalar(&p, &Mat::from_vec(3, 2, v.to_vec()).unwrap()),
            x.as_slice(),
            1e-5,
        )
        .unwrap();
        GradCheck::default().assert_close(gin.as_slice(), &num_x).unwrap();
    }

    #[test]
    fn rejects_wrong_input_width() {
        let p = MlpParams::identity(3);
        assert!(mlp_forward(&p, &Mat::zeros(1, 2)).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = RngStream::new(4);
        let p = MlpParams::init(&[3, 5, 2], Activation::Relu, &mut rng).unwrap();
        let q = p.zeros_like().with_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }
}
