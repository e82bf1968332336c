//! Feed-forward networks of dense and stride-1 "same" convolution layers.
//!
//! Every layer is a linear map `h = W a` on homogeneous inputs (bias in the
//! last column of `W`) followed by an elementwise activation. Activations of
//! a minibatch are stored channel-major: a `C × (m·|T|)` matrix whose column
//! `n·|T| + t` holds sample `n` at spatial location `t = y·width + x`. Dense
//! layers are the `|T| = 1`, radius-0 special case.
//!
//! `LayerCache::dh` holds gradients of the *mean* minibatch loss, so
//! `dW = dh · aᵀ` and the per-sample gradient of sample `n` is `m · dh[:, n]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "none" | "linear" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `½‖z − y‖²` per sample.
    Mse,
    /// Binary cross entropy on `sigmoid(z)`, summed over outputs.
    BceWithSigmoid,
    /// Cross entropy of `softmax(z)` against a target distribution.
    SoftmaxCe,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::BceWithSigmoid => "bce_with_sigmoid",
            LossKind::SoftmaxCe => "softmax_ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mse" => Ok(LossKind::Mse),
            "bce_with_sigmoid" | "bce" => Ok(LossKind::BceWithSigmoid),
            "softmax_ce" | "ce" => Ok(LossKind::SoftmaxCe),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

impl LossKind {
    /// Mean per-sample loss and its gradient w.r.t. the outputs.
    /// `z` and `y` are `k × m` (one column per sample).
    pub fn value_and_grad(self, z: &Mat, y: &Mat) -> Result<(f64, Mat)> {
        if z.shape() != y.shape() {
            return Err(Error::shape(
                "loss",
                format!("outputs {:?} vs targets {:?}", z.shape(), y.shape()),
            ));
        }
        let (k, m) = (z.rows(), z.cols());
        let inv_m = 1.0 / m as f64;
        let mut grad = Mat::zeros(&[k, m]);
        let mut total = 0.0;
        match self {
            LossKind::Mse => {
                for ((g, &zi), &yi) in grad.data_mut().iter_mut().zip(z.data()).zip(y.data()) {
                    let d = zi - yi;
                    total += 0.5 * d * d;
                    *g = d * inv_m;
                }
            }
            LossKind::BceWithSigmoid => {
                for ((g, &zi), &yi) in grad.data_mut().iter_mut().zip(z.data()).zip(y.data()) {
                    let softplus = zi.max(0.0) + (-zi.abs()).exp().ln_1p();
                    total += softplus - yi * zi;
                    *g = (sigmoid(zi) - yi) * inv_m;
                }
            }
            LossKind::SoftmaxCe => {
                for n in 0..m {
                    let col = z.col(n);
                    let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let lse = max + col.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                    for i in 0..k {
                        let yi = y[(i, n)];
                        total -= yi * (col[i] - lse);
                        grad[(i, n)] = ((col[i] - lse).exp() - yi) * inv_m;
                    }
                }
            }
        }
        let loss = total * inv_m;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss {loss}")));
        }
        Ok((loss, grad))
    }

    /// Draws targets from the model's predictive distribution given outputs
    /// `z` (`k × m`); returns a `k × m` matrix.
    pub fn sample_targets(self, z: &Mat, rng: &mut impl Rng) -> Mat {
        let (k, m) = (z.rows(), z.cols());
        match self {
            LossKind::Mse => {
                let mut out = z.clone();
                for v in out.data_mut() {
                    let noise: f64 = StandardNormal.sample(rng);
                    *v += noise;
                }
                out
            }
            LossKind::BceWithSigmoid => {
                let mut out = z.clone();
                for v in out.data_mut() {
                    *v = if rng.random::<f64>() < sigmoid(*v) { 1.0 } else { 0.0 };
                }
                out
            }
            LossKind::SoftmaxCe => {
                let mut out = Mat::zeros(&[k, m]);
                for n in 0..m {
                    let col = z.col(n);
                    let max = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let w: Vec<f64> = col.iter().map(|&v| (v - max).exp()).collect();
                    let total: f64 = w.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = k - 1;
                    for (i, &wi) in w.iter().enumerate() {
                        if u < wi {
                            pick = i;
                            break;
                        }
                        u -= wi;
                    }
                    out[(pick, n)] = 1.0;
                }
                out
            }
        }
    }
}

/// Stride-1 convolution with padding equal to the filter radius, so input and
/// output share the same `height × width` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub radius: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvLayerSpec {
    /// `|Δ| = (2R + 1)²`.
    pub fn offsets(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    /// `|T|`.
    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    /// `J|Δ| + 1`.
    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.offsets() + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense(DenseLayerSpec),
    Conv(ConvLayerSpec),
}

impl LayerSpec {
    /// Dense layers as 1×1 convolutions without neighbours.
    pub fn geometry(&self) -> ConvLayerSpec {
        match *self {
            LayerSpec::Conv(c) => c,
            LayerSpec::Dense(d) => ConvLayerSpec {
                in_channels: d.in_dim,
                out_channels: d.out_dim,
                radius: 0,
                height: 1,
                width: 1,
            },
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv(_))
    }

    pub fn spatial(&self) -> usize {
        self.geometry().spatial()
    }

    pub fn patch_dim(&self) -> usize {
        self.geometry().patch_dim()
    }

    pub fn out_channels(&self) -> usize {
        self.geometry().out_channels
    }

    pub fn in_features(&self) -> usize {
        let g = self.geometry();
        g.in_channels * g.spatial()
    }

    pub fn out_features(&self) -> usize {
        let g = self.geometry();
        g.out_channels * g.spatial()
    }

    /// `(rows, cols)` of the layer's parameter matrix `W`.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.out_channels(), self.patch_dim())
    }

    fn validate(&self) -> Result<()> {
        let g = self.geometry();
        if g.in_channels == 0 || g.out_channels == 0 || g.height == 0 || g.width == 0 {
            return Err(Error::InvalidArgument(format!("degenerate layer {self:?}")));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense(d) => write!(f, "dense:{}:{}", d.in_dim, d.out_dim),
            LayerSpec::Conv(c) => write!(
                f,
                "conv:{}:{}:{}:{}x{}",
                c.in_channels, c.out_channels, c.radius, c.height, c.width
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub activation: Activation,
}

/// Per-layer quantities of one forward-backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    /// Homogeneous patch matrix, `(J|Δ| + 1) × (m·|T|)`; last row all ones.
    pub a: Mat,
    /// Pre-activations, `I × (m·|T|)`.
    pub h: Mat,
    /// Gradient of the mean loss w.r.t. `h`.
    pub dh: Mat,
    /// Gradient of the mean loss w.r.t. `W`.
    pub dw: Mat,
}

impl LayerCache {
    pub fn batch_size(&self, spatial: usize) -> usize {
        self.h.cols() / spatial
    }
}

#[derive(Clone, Debug)]
pub struct ForwardBackward {
    pub loss: f64,
    pub caches: Vec<LayerCache>,
    /// Network outputs, `k × m`.
    pub outputs: Mat,
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    loss: LossKind,
    params: Vec<Mat>,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(layers: Vec<Layer>, loss: LossKind, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            l.spec.validate()?;
        }
        for w in layers.windows(2) {
            let (prev, next) = (w[0].spec, w[1].spec);
            if prev.out_features() != next.in_features() {
                return Err(Error::InvalidArgument(format!(
                    "layer {prev} produces {} features but {next} expects {}",
                    prev.out_features(),
                    next.in_features()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|l| {
                let g = l.spec.geometry();
                let fan_in = (g.in_channels * g.offsets()) as f64;
                let fan_out = (g.out_channels * g.offsets()) as f64;
                let bound = (6.0 / (fan_in + fan_out)).sqrt();
                let (rows, cols) = l.spec.weight_shape();
                Mat::from_fn(rows, cols, |_, j| {
                    if j + 1 == cols {
                        0.0
                    } else {
                        rng.random_range(-bound..=bound)
                    }
                })
            })
            .collect();
        Ok(Network { layers, loss, params })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Mat>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("set_params", "parameter shapes differ"));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_features()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.out_features()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Forward pass only; returns the outputs (`k × m`).
    pub fn predict(&self, inputs: &Mat) -> Result<Mat> {
        let m = self.check_inputs(inputs)?;
        let mut x = features_to_channels(&inputs.transpose(), self.layers[0].spec.spatial(), m);
        for (l, layer) in self.layers.iter().enumerate() {
            let a = extract_patches(&x, &layer.spec.geometry())?;
            let h = self.params[l].matmul(&a)?;
            x = self.to_next_input(l, &h.map(|v| layer.activation.apply(v)), m);
        }
        Ok(x)
    }

    /// Homogeneous patch matrices of every layer for a forward pass.
    pub fn forward_patches(&self, inputs: &Mat) -> Result<Vec<Mat>> {
        let m = self.check_inputs(inputs)?;
        let mut x = features_to_channels(&inputs.transpose(), self.layers[0].spec.spatial(), m);
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let a = extract_patches(&x, &layer.spec.geometry())?;
            let h = self.params[l].matmul(&a)?;
            x = self.to_next_input(l, &h.map(|v| layer.activation.apply(v)), m);
            out.push(a);
        }
        Ok(out)
    }

    /// Mean loss over a batch without gradients.
    pub fn loss(&self, inputs: &Mat, targets: &Mat) -> Result<f64> {
        let z = self.predict(inputs)?;
        Ok(self.loss.value_and_grad(&z, &targets.transpose())?.0)
    }

    /// Forward and backward pass over a minibatch (`inputs: m × d`, `targets: m × k`).
    pub fn forward_backward(&self, inputs: &Mat, targets: &Mat) -> Result<ForwardBackward> {
        self.forward_backward_with(inputs, |_| Ok(targets.transpose()))
    }

    /// Like [`Network::forward_backward`] but the targets are produced from the
    /// network outputs, e.g. sampled from the predictive distribution.
    pub fn forward_backward_with(
        &self,
        inputs: &Mat,
        targets: impl FnOnce(&Mat) -> Result<Mat>,
    ) -> Result<ForwardBackward> {
        let m = self.check_inputs(inputs)?;
        let x0 = features_to_channels(&inputs.transpose(), self.layers[0].spec.spatial(), m);
        let (mut partial, outputs) = self.forward_from(0, Seed::Input(x0), m)?;
        let y = targets(&outputs)?;
        let loss = self.backward(&mut partial, &outputs, &y, 0, m)?;
        let caches = partial
            .into_iter()
            .map(|p| LayerCache { a: p.a, h: p.h, dh: p.dh, dw: p.dw })
            .collect();
        Ok(ForwardBackward { loss, caches, outputs })
    }

    /// Loss and `∂loss/∂h` when layer `layer`'s pre-activation field is set to `h`
    /// (`I × (m·|T|)`), with everything downstream evaluated normally.
    pub fn downstream_from_preactivation(
        &self,
        layer: usize,
        h: &Mat,
        targets: &Mat,
    ) -> Result<(f64, Mat)> {
        let spatial = self.layers[layer].spec.spatial();
        if h.rows() != self.layers[layer].spec.out_channels() || h.cols() % spatial != 0 {
            return Err(Error::shape("downstream_from_preactivation", format!("{:?}", h.shape())));
        }
        let m = h.cols() / spatial;
        let (mut partial, outputs) = self.forward_from(layer, Seed::PreActivation(h.clone()), m)?;
        let loss = self.backward(&mut partial, &outputs, &targets.transpose(), layer, m)?;
        Ok((loss, partial.swap_remove(0).dh))
    }

    fn check_inputs(&self, inputs: &Mat) -> Result<usize> {
        if inputs.cols() != self.input_dim() || inputs.rows() == 0 {
            return Err(Error::shape(
                "network input",
                format!("expected m × {}, got {:?}", self.input_dim(), inputs.shape()),
            ));
        }
        Ok(inputs.rows())
    }

    fn to_next_input(&self, l: usize, z: &Mat, m: usize) -> Mat {
        let here = self.layers[l].spec.spatial();
        match self.layers.get(l + 1) {
            Some(next) if next.spec.spatial() != here => {
                features_to_channels(&channels_to_features(z, here, m), next.spec.spatial(), m)
            }
            Some(_) => z.clone(),
            None => channels_to_features(z, here, m),
        }
    }

    fn forward_from(&self, start: usize, seed: Seed, m: usize) -> Result<(Vec<Partial>, Mat)> {
        let mut out = Vec::with_capacity(self.layers.len() - start);
        let mut x = None;
        let mut seed = Some(seed);
        for l in start..self.layers.len() {
            let layer = &self.layers[l];
            let (a, h) = match seed.take() {
                Some(Seed::PreActivation(h)) => (Mat::zeros(&[0, 0]), h),
                Some(Seed::Input(x0)) => {
                    let a = extract_patches(&x0, &layer.spec.geometry())?;
                    let h = self.params[l].matmul(&a)?;
                    (a, h)
                }
                None => {
                    let a = extract_patches(x.as_ref().expect("previous layer"), &layer.spec.geometry())?;
                    let h = self.params[l].matmul(&a)?;
                    (a, h)
                }
            };
            let z = h.map(|v| layer.activation.apply(v));
            x = Some(self.to_next_input(l, &z, m));
            out.push(Partial { a, h, dh: Mat::zeros(&[0, 0]), dw: Mat::zeros(&[0, 0]) });
        }
        Ok((out, x.expect("at least one layer")))
    }

    fn backward(&self, partial: &mut [Partial], outputs: &Mat, y: &Mat, start: usize, m: usize) -> Result<f64> {
        let (loss, dz_out) = self.loss.value_and_grad(outputs, y)?;
        let last = self.layers.len() - 1;
        let mut dz = features_to_channels(&dz_out, self.layers[last].spec.spatial(), m);
        for l in (start..=last).rev() {
            let layer = &self.layers[l];
            let p = &mut partial[l - start];
            let mut dh = dz;
            for (g, &hv) in dh.data_mut().iter_mut().zip(p.h.data()) {
                *g *= layer.activation.derivative(hv);
            }
            if p.a.len() > 0 {
                p.dw = dh.matmul_t(&p.a)?;
            }
            if l > start {
                let dx = input_gradient(&self.params[l], &dh, &layer.spec.geometry())?;
                let prev = &self.layers[l - 1];
                dz = if prev.spec.spatial() != layer.spec.spatial() {
                    features_to_channels(
                        &channels_to_features(&dx, layer.spec.spatial(), m),
                        prev.spec.spatial(),
                        m,
                    )
                } else {
                    dx
                };
            } else {
                dz = Mat::zeros(&[0, 0]);
            }
            p.dh = dh;
        }
        Ok(loss)
    }
}

enum Seed {
    Input(Mat),
    PreActivation(Mat),
}

struct Partial {
    a: Mat,
    h: Mat,
    dh: Mat,
    dw: Mat,
}

/// `(C·|T|) × m` feature columns to the `C × (m·|T|)` channel layout.
pub fn features_to_channels(x: &Mat, spatial: usize, m: usize) -> Mat {
    let channels = x.rows() / spatial;
    if spatial == 1 {
        return x.clone();
    }
    let mut out = Mat::zeros(&[channels, m * spatial]);
    for c in 0..channels {
        for t in 0..spatial {
            let src = x.row(c * spatial + t);
            for n in 0..m {
                out[(c, n * spatial + t)] = src[n];
            }
        }
    }
    out
}

/// Inverse of [`features_to_channels`].
pub fn channels_to_features(z: &Mat, spatial: usize, m: usize) -> Mat {
    if spatial == 1 {
        return z.clone();
    }
    let channels = z.rows();
    let mut out = Mat::zeros(&[channels * spatial, m]);
    for c in 0..channels {
        let src = z.row(c);
        for t in 0..spatial {
            let dst = out.row_mut(c * spatial + t);
            for n in 0..m {
                dst[n] = src[n * spatial + t];
            }
        }
    }
    out
}

/// im2col: column `n·|T| + t` is the homogeneous patch vector `a_t` of sample
/// `n`, row `j·|Δ| + δ` holds input channel `j` at offset `δ` (row-major over
/// `dy, dx ∈ [−R, R]`); offsets falling into the padding read as zero.
pub fn extract_patches(x: &Mat, spec: &ConvLayerSpec) -> Result<Mat> {
    let spatial = spec.spatial();
    if x.rows() != spec.in_channels || x.cols() % spatial != 0 || x.cols() == 0 {
        return Err(Error::shape(
            "extract_patches",
            format!("input {:?} for {} channels on {}x{}", x.shape(), spec.in_channels, spec.height, spec.width),
        ));
    }
    let m = x.cols() / spatial;
    let cols = x.cols();
    let offsets = spec.offsets();
    let rows = spec.patch_dim();
    let mut out = Mat::zeros(&[rows, cols]);
    if spec.radius == 0 {
        out.data_mut()[..x.len()].copy_from_slice(x.data());
    } else {
        let r = spec.radius as isize;
        let (hgt, wid) = (spec.height as isize, spec.width as isize);
        for j in 0..spec.in_channels {
            let src = x.row(j);
            for (d, (dy, dx)) in (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).enumerate() {
                let dst = out.row_mut(j * offsets + d);
                for n in 0..m {
                    let base = n * spatial;
                    for y in 0..hgt {
                        let sy = y + dy;
                        if sy < 0 || sy >= hgt {
                            continue;
                        }
                        for xx in 0..wid {
                            let sx = xx + dx;
                            if sx < 0 || sx >= wid {
                                continue;
                            }
                            dst[base + (y * wid + xx) as usize] = src[base + (sy * wid + sx) as usize];
                        }
                    }
                }
            }
        }
    }
    out.row_mut(rows - 1).iter_mut().for_each(|v| *v = 1.0);
    Ok(out)
}

/// `h = W · patches`.
pub fn conv_forward(params: &Mat, patches: &Mat) -> Result<Mat> {
    params.matmul(patches)
}

/// Gradients of a linear layer given upstream `dh`: `dW = dh · patchesᵀ` and
/// the transposed convolution of `dh` back onto the input grid.
pub fn conv_backward(params: &Mat, patches: &Mat, dh: &Mat, spec: &ConvLayerSpec) -> Result<(Mat, Mat)> {
    if patches.cols() != dh.cols() || params.cols() != patches.rows() {
        return Err(Error::shape(
            "conv_backward",
            format!("params {:?}, patches {:?}, dh {:?}", params.shape(), patches.shape(), dh.shape()),
        ));
    }
    Ok((dh.matmul_t(patches)?, input_gradient(params, dh, spec)?))
}

fn input_gradient(params: &Mat, dh: &Mat, spec: &ConvLayerSpec) -> Result<Mat> {
    let dpatch = params.t_matmul(dh)?;
    let spatial = spec.spatial();
    let cols = dh.cols();
    let m = cols / spatial;
    if spec.radius == 0 {
        let rows = spec.in_channels;
        return Mat::from_matrix(rows, cols, dpatch.data()[..rows * cols].to_vec());
    }
    let offsets = spec.offsets();
    let r = spec.radius as isize;
    let (hgt, wid) = (spec.height as isize, spec.width as isize);
    let mut dx = Mat::zeros(&[spec.in_channels, cols]);
    for j in 0..spec.in_channels {
        let dst = dx.row_mut(j);
        for (d, (dy, dxo)) in (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).enumerate() {
            let src = dpatch.row(j * offsets + d);
            for n in 0..m {
                let base = n * spatial;
                for y in 0..hgt {
                    let sy = y + dy;
                    if sy < 0 || sy >= hgt {
                        continue;
                    }
                    for xx in 0..wid {
                        let sx = xx + dxo;
                        if sx < 0 || sx >= wid {
                            continue;
                        }
                        dst[base + (sy * wid + sx) as usize] += src[base + (y * wid + xx) as usize];
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Mean over the `|T|` spatial columns of each sample: `R × (m·|T|)` to `R × m`.
pub fn spatial_average(values: &Mat, spatial: usize) -> Result<Mat> {
    if spatial == 0 || values.cols() % spatial != 0 {
        return Err(Error::shape("spatial_average", format!("{:?} / {spatial}", values.shape())));
    }
    let m = values.cols() / spatial;
    let inv = 1.0 / spatial as f64;
    Ok(Mat::from_fn(values.rows(), m, |i, n| {
        values.row(i)[n * spatial..(n + 1) * spatial].iter().sum::<f64>() * inv
    }))
}

/// Row means over all columns, i.e. the minibatch average of spatial averages.
pub fn column_mean(values: &Mat) -> Vec<f64> {
    let inv = 1.0 / values.cols() as f64;
    (0..values.rows()).map(|i| values.row(i).iter().sum::<f64>() * inv).collect()
}
