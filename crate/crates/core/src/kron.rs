//! Kronecker structure of a layer's gradient and Hessian.
//!
//! For one data-point, `vec(dW) = Σ_t a_t ⊗ dh_t` and the Hessian w.r.t.
//! `vec(W)` is `Σ_{t,t'} (a_t a_{t'}ᵀ) ⊗ ∂²f/∂h_t∂h_{t'}`. The finite-difference
//! routines here are the ground truth those identities are checked against;
//! optimizers never call them.

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::Mat;

/// `Σ_t kron(a_t, dh_t)` for a single data-point, where `patches` is
/// `(J|Δ|+1) × |T|` and `dh` is `I × |T|`.
pub fn gradient_kron_sum(patches: &Mat, dh: &Mat) -> Result<Vec<f64>> {
    if patches.cols() != dh.cols() {
        return Err(Error::shape(
            "gradient_kron_sum",
            format!("patches {:?} vs dh {:?}", patches.shape(), dh.shape()),
        ));
    }
    let (p, i) = (patches.rows(), dh.rows());
    let mut out = vec![0.0; p * i];
    for t in 0..patches.cols() {
        let a_t = patches.col(t);
        let dh_t = dh.col(t);
        let term = Mat::kron(&Mat::column(a_t), &Mat::column(dh_t));
        for (o, v) in out.iter_mut().zip(term.data()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Minibatch estimate `(1/m) Σ_n Σ_t a_t(n) a_t(n)ᵀ`.
pub fn estimate_a(patches: &Mat, batch_size: usize) -> Result<Mat> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("estimate_a: empty batch".into()));
    }
    let mut a = patches.matmul_t(patches)?;
    a.scale_mut(1.0 / batch_size as f64);
    Ok(a.symmetrize())
}

/// The `|T|²` factor pairs of the exact layer Hessian, indexed `t·|T| + t'`.
#[derive(Clone, Debug)]
pub struct KronHessianTerms {
    spatial: usize,
    a_terms: Vec<Mat>,
    g_terms: Vec<Mat>,
}

impl KronHessianTerms {
    pub fn new(spatial: usize, a_terms: Vec<Mat>, g_terms: Vec<Mat>) -> Result<Self> {
        let n = spatial * spatial;
        if a_terms.len() != n || g_terms.len() != n || n == 0 {
            return Err(Error::shape(
                "KronHessianTerms",
                format!("need {n} terms, got {} A and {} G", a_terms.len(), g_terms.len()),
            ));
        }
        let (ash, gsh) = (a_terms[0].shape().to_vec(), g_terms[0].shape().to_vec());
        if a_terms.iter().any(|a| a.shape() != ash.as_slice()) || g_terms.iter().any(|g| g.shape() != gsh.as_slice()) {
            return Err(Error::shape("KronHessianTerms", "inconsistent block sizes"));
        }
        Ok(KronHessianTerms { spatial, a_terms, g_terms })
    }

    /// `A_{t,t'} = a_t a_{t'}ᵀ` from a single data-point's patch matrix.
    pub fn a_terms_from_patches(patches: &Mat) -> Vec<Mat> {
        let spatial = patches.cols();
        let cols: Vec<Vec<f64>> = (0..spatial).map(|t| patches.col(t)).collect();
        let mut out = Vec::with_capacity(spatial * spatial);
        for t in 0..spatial {
            for u in 0..spatial {
                out.push(Mat::outer(&cols[t], &cols[u]));
            }
        }
        out
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn a(&self, t: usize, u: usize) -> &Mat {
        &self.a_terms[t * self.spatial + u]
    }

    pub fn g(&self, t: usize, u: usize) -> &Mat {
        &self.g_terms[t * self.spatial + u]
    }

    /// Single-Kronecker approximation `(Σ_t A_tt) ⊗ ((1/|T|) Σ_t G_tt)`.
    pub fn single_kron_approximation(&self) -> Mat {
        let mut a_sum = Mat::zeros(self.a(0, 0).shape());
        let mut g_mean = Mat::zeros(self.g(0, 0).shape());
        for t in 0..self.spatial {
            a_sum.axpy_mut(1.0, self.a(t, t)).expect("uniform shapes");
            g_mean.axpy_mut(1.0 / self.spatial as f64, self.g(t, t)).expect("uniform shapes");
        }
        Mat::kron(&a_sum, &g_mean)
    }
}

/// `Σ_{t,t'} kron(A_{t,t'}, G_{t,t'})`.
pub fn assemble_hessian(terms: &KronHessianTerms) -> Mat {
    let mut out: Option<Mat> = None;
    for (a, g) in terms.a_terms.iter().zip(&terms.g_terms) {
        let k = Mat::kron(a, g);
        match out.as_mut() {
            Some(acc) => acc.axpy_mut(1.0, &k).expect("uniform shapes"),
            None => out = Some(k),
        }
    }
    out.expect("at least one term")
}

/// `kron(mean(us), mean(vs))`.
pub fn kron_of_averages(us: &[Mat], vs: &[Mat]) -> Result<Mat> {
    if us.is_empty() || us.len() != vs.len() {
        return Err(Error::InvalidArgument(format!(
            "kron_of_averages needs equal non-empty lists, got {} and {}",
            us.len(),
            vs.len()
        )));
    }
    let mean = |xs: &[Mat]| -> Result<Mat> {
        let mut acc = Mat::zeros(xs[0].shape());
        for x in xs {
            acc.axpy_mut(1.0 / xs.len() as f64, x)?;
        }
        Ok(acc)
    };
    Ok(Mat::kron(&mean(us)?, &mean(vs)?))
}

fn check_step(step: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} out of range")));
    }
    Ok(())
}

fn single_point(inputs: &Mat, targets: &Mat) -> Result<()> {
    if inputs.rows() != 1 || targets.rows() != 1 {
        return Err(Error::InvalidArgument("oracle expects a single data-point".into()));
    }
    Ok(())
}

/// Hessian of the loss w.r.t. `vec(W_layer)` by central differences of the
/// analytic gradient, symmetrized.
pub fn brute_force_hessian_w(
    net: &Network,
    layer: usize,
    inputs: &Mat,
    targets: &Mat,
    step: f64,
) -> Result<Mat> {
    check_step(step)?;
    single_point(inputs, targets)?;
    let (rows, cols) = net.layers()[layer].spec.weight_shape();
    let dim = rows * cols;
    let mut probe = net.clone();
    let mut hess = Mat::zeros(&[dim, dim]);
    for c in 0..cols {
        for i in 0..rows {
            let k = c * rows + i;
            let base = net.params()[layer][(i, c)];
            probe.params_mut()[layer][(i, c)] = base + step;
            let plus = probe.forward_backward(inputs, targets)?.caches.swap_remove(layer).dw.vec();
            probe.params_mut()[layer][(i, c)] = base - step;
            let minus = probe.forward_backward(inputs, targets)?.caches.swap_remove(layer).dw.vec();
            probe.params_mut()[layer][(i, c)] = base;
            for r in 0..dim {
                hess[(r, k)] = (plus.data()[r] - minus.data()[r]) / (2.0 * step);
            }
        }
    }
    if !hess.all_finite() {
        return Err(Error::NonFinite("brute_force_hessian_w".into()));
    }
    Ok(hess.symmetrize())
}

/// Full cross-Hessian of the downstream loss w.r.t. the layer's
/// pre-activation field, as `|T|²` blocks `G_{t,t'}` indexed `t·|T| + t'`.
pub fn brute_force_g_terms(
    net: &Network,
    layer: usize,
    inputs: &Mat,
    targets: &Mat,
    step: f64,
) -> Result<Vec<Mat>> {
    check_step(step)?;
    single_point(inputs, targets)?;
    let h = net.forward_backward(inputs, targets)?.caches.swap_remove(layer).h;
    let (out_ch, spatial) = (h.rows(), h.cols());
    let mut blocks = vec![Mat::zeros(&[out_ch, out_ch]); spatial * spatial];
    let mut probe = h.clone();
    for u in 0..spatial {
        for j in 0..out_ch {
            let base = h[(j, u)];
            probe[(j, u)] = base + step;
            let plus = net.downstream_from_preactivation(layer, &probe, targets)?.1;
            probe[(j, u)] = base - step;
            let minus = net.downstream_from_preactivation(layer, &probe, targets)?.1;
            probe[(j, u)] = base;
            for t in 0..spatial {
                let block = &mut blocks[t * spatial + u];
                for i in 0..out_ch {
                    block[(i, j)] = (plus[(i, t)] - minus[(i, t)]) / (2.0 * step);
                }
            }
        }
    }
    if blocks.iter().any(|b| !b.all_finite()) {
        return Err(Error::NonFinite("brute_force_g_terms".into()));
    }
    Ok(blocks)
}

/// The single block `G_{t,t'}`.
pub fn brute_force_g(
    net: &Network,
    layer: usize,
    inputs: &Mat,
    targets: &Mat,
    t: usize,
    t_prime: usize,
    step: f64,
) -> Result<Mat> {
    check_step(step)?;
    single_point(inputs, targets)?;
    let h = net.forward_backward(inputs, targets)?.caches.swap_remove(layer).h;
    if t >= h.cols() || t_prime >= h.cols() {
        return Err(Error::InvalidArgument(format!("location out of range for |T| = {}", h.cols())));
    }
    let out_ch = h.rows();
    let mut block = Mat::zeros(&[out_ch, out_ch]);
    let mut probe = h.clone();
    for j in 0..out_ch {
        let base = h[(j, t_prime)];
        probe[(j, t_prime)] = base + step;
        let plus = net.downstream_from_preactivation(layer, &probe, targets)?.1;
        probe[(j, t_prime)] = base - step;
        let minus = net.downstream_from_preactivation(layer, &probe, targets)?.1;
        probe[(j, t_prime)] = base;
        for i in 0..out_ch {
            block[(i, j)] = (plus[(i, t)] - minus[(i, t)]) / (2.0 * step);
        }
    }
    if !block.all_finite() {
        return Err(Error::NonFinite("brute_force_g".into()));
    }
    Ok(block)
}

/// Exact `A` terms from the forward pass paired with finite-difference `G` terms.
pub fn hessian_terms(
    net: &Network,
    layer: usize,
    inputs: &Mat,
    targets: &Mat,
    step: f64,
) -> Result<KronHessianTerms> {
    let cache = net.forward_backward(inputs, targets)?.caches.swap_remove(layer);
    let spatial = cache.h.cols();
    let a_terms = KronHessianTerms::a_terms_from_patches(&cache.a);
    let g_terms = brute_force_g_terms(net, layer, inputs, targets, step)?;
    KronHessianTerms::new(spatial, a_terms, g_terms)
}
