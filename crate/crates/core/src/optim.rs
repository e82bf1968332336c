//! Optimizers sharing the [`Optimizer`] step interface: K-BFGS / K-BFGS(L)
//! (with the convergence-analysis variant), KFAC, Adam and SGD with momentum.
//!
//! Every layer update has the form `W ← W − α (p + γ W)` where `p` is the
//! preconditioned direction and `γ` the weight decay.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curvature::{
    damping_split, dp_dlm, dpi_dlm, hessian_action_pair, mean_patch, BfgsInverse, CurvaturePair, DampingParams,
    InverseOperator, LbfgsStore, UpdateOutcome, CURVATURE_EPS,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kron::estimate_a;
use crate::nn::{ForwardBackward, Network};
use crate::tensor::norm;
use crate::Mat;

/// Samples per chunk when streaming a dataset for warm-start statistics.
pub const WARM_START_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `initial · factor^⌊epoch / every⌋`.
    StepDecay { initial: f64, every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant(a) => a,
            LrSchedule::StepDecay { initial, every, factor } => initial * factor.powi((epoch / every.max(1)) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant(a) => a > 0.0,
            LrSchedule::StepDecay { initial, every, factor } => initial > 0.0 && every > 0 && factor > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid learning-rate schedule {self}")))
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant(a) => write!(f, "constant:{a}"),
            LrSchedule::StepDecay { initial, every, factor } => write!(f, "step:{initial}:{every}:{factor}"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad schedule '{s}' (constant:<lr> or step:<lr>:<epochs>:<factor>)"));
        let parts: Vec<&str> = s.split(':').collect();
        let sched = match parts.as_slice() {
            ["constant", a] => LrSchedule::Constant(a.parse().map_err(|_| bad())?),
            ["step", a, e, g] => LrSchedule::StepDecay {
                initial: a.parse().map_err(|_| bad())?,
                every: e.parse().map_err(|_| bad())?,
                factor: g.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Minibatch loss before the step.
    pub loss: f64,
    /// Whether curvature state was refreshed this step.
    pub curvature_updated: bool,
}

pub trait Optimizer {
    fn name(&self) -> &'static str;

    /// Dataset-wide statistics computed once before training.
    fn warm_start(&mut self, _net: &Network, _data: &Dataset) -> Result<()> {
        Ok(())
    }

    /// Iteration `k` (1-based) with learning rate `lr`.
    fn step(&mut self, net: &mut Network, inputs: &Mat, targets: &Mat, k: usize, lr: f64) -> Result<StepInfo>;

    /// Curvature updates skipped by the zero-curvature guard so far.
    fn skipped_updates(&self) -> usize {
        0
    }
}

fn apply_direction(w: &mut Mat, dir: &Mat, lr: f64, weight_decay: f64, layer: usize) -> Result<()> {
    if !dir.all_finite() {
        return Err(Error::Diverged(format!("non-finite direction in layer {layer}")));
    }
    if weight_decay != 0.0 {
        w.scale_mut(1.0 - lr * weight_decay);
    }
    w.axpy_mut(-lr, dir)
}

fn check_loss(fb: &ForwardBackward) -> Result<()> {
    if fb.loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("loss {}", fb.loss)))
    }
}

/// `H_G · Ŵ · H_A`, i.e. `unvec((H_A ⊗ H_G) vec(Ŵ))`.
pub fn kronecker_direction(h_g: &GInverse, w_hat: &Mat, h_a: &Mat) -> Result<Mat> {
    h_g.apply(w_hat)?.matmul(h_a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HgMode {
    DenseBfgs,
    Lbfgs { capacity: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HessianActionMode {
    /// `A s` from the current minibatch's patches.
    Minibatched,
    /// `A s` from an exponential moving average of minibatch `A` estimates.
    MovingAverage { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KbfgsVariant {
    Practical,
    /// Powell damping toward `μ₂⁻¹ I`, exact `H_A` from the current
    /// minibatch, and no gradient momentum. Requires L-BFGS for `H_G`.
    Convergence,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KbfgsConfig {
    /// Overall damping `λ`.
    pub lambda: f64,
    /// Curvature update frequency `T`.
    pub update_freq: usize,
    pub beta: f64,
    pub mu1: f64,
    pub hg_mode: HgMode,
    pub hessian_action: HessianActionMode,
    pub weight_decay: f64,
    pub variant: KbfgsVariant,
}

impl Default for KbfgsConfig {
    fn default() -> Self {
        KbfgsConfig {
            lambda: 0.3,
            update_freq: 1,
            beta: 0.9,
            mu1: 0.2,
            hg_mode: HgMode::DenseBfgs,
            hessian_action: HessianActionMode::Minibatched,
            weight_decay: 0.0,
            variant: KbfgsVariant::Practical,
        }
    }
}

impl KbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("K-BFGS: {msg}")));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if self.update_freq == 0 {
            return bad("update frequency must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1)");
        }
        if !(self.mu1 > 0.0 && self.mu1 < 1.0) {
            return bad("mu1 must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if let HgMode::Lbfgs { capacity: 0 } = self.hg_mode {
            return bad("L-BFGS capacity must be positive");
        }
        if let HessianActionMode::MovingAverage { beta } = self.hessian_action {
            if !(0.0..1.0).contains(&beta) {
                return bad("moving-average beta must lie in [0, 1)");
            }
        }
        if self.variant == KbfgsVariant::Convergence && self.hg_mode == HgMode::DenseBfgs {
            return bad("the convergence variant needs L-BFGS for H_G");
        }
        Ok(())
    }
}

/// Output-side inverse factor.
#[derive(Clone, Debug)]
pub enum GInverse {
    Dense(BfgsInverse<f64>),
    Lbfgs(LbfgsStore<f64>),
}

impl GInverse {
    pub fn apply(&self, rhs: &Mat) -> Result<Mat> {
        match self {
            GInverse::Dense(h) => h.apply(rhs),
            GInverse::Lbfgs(s) => s.apply(rhs),
        }
    }

    pub fn update(&mut self, pair: CurvaturePair<f64>) -> Result<UpdateOutcome> {
        match self {
            GInverse::Dense(h) => h.update(&pair),
            GInverse::Lbfgs(s) => s.push(pair),
        }
    }

    pub fn materialize(&self) -> Mat {
        match self {
            GInverse::Dense(h) => h.matrix().clone(),
            GInverse::Lbfgs(s) => s.materialize(),
        }
    }
}

impl InverseOperator<f64> for GInverse {
    fn dim(&self) -> usize {
        match self {
            GInverse::Dense(h) => h.dim(),
            GInverse::Lbfgs(s) => s.dim(),
        }
    }

    fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            GInverse::Dense(h) => h.apply_vec(v),
            GInverse::Lbfgs(s) => s.apply_vec(v),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KbfgsLayerState {
    pub h_a: BfgsInverse<f64>,
    pub h_g: GInverse,
    pub s_g: Vec<f64>,
    pub y_g: Vec<f64>,
    pub momentum: Mat,
    pub lambda_a: f64,
    pub lambda_g: f64,
    /// Moving-average `A` (moving-average Hessian-action mode only).
    pub a_ema: Option<Mat>,
}

#[derive(Clone, Debug)]
pub struct Kbfgs {
    config: KbfgsConfig,
    layers: Vec<KbfgsLayerState>,
    skipped: usize,
    curvature_updates: usize,
}

impl Kbfgs {
    /// Fresh state with `H_A = λ_A⁻¹ I`; [`Optimizer::warm_start`] replaces it
    /// with `(A + λ_A I)⁻¹`.
    pub fn new(config: KbfgsConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        let layers = net
            .layers()
            .iter()
            .zip(net.params())
            .map(|(layer, w)| {
                let (lambda_a, lambda_g) = damping_split(config.lambda, layer.spec.is_conv(), layer.spec.spatial());
                let (rows, cols) = (w.rows(), w.cols());
                let h_g = match config.hg_mode {
                    HgMode::DenseBfgs => GInverse::Dense(BfgsInverse::scaled_identity(rows, 1.0 / lambda_g)),
                    HgMode::Lbfgs { capacity } => GInverse::Lbfgs(LbfgsStore::new(rows, capacity, 1.0 / lambda_g)?),
                };
                let a_ema = match config.hessian_action {
                    HessianActionMode::MovingAverage { .. } => Some(Mat::zeros(&[cols, cols])),
                    HessianActionMode::Minibatched => None,
                };
                Ok(KbfgsLayerState {
                    h_a: BfgsInverse::scaled_identity(cols, 1.0 / lambda_a),
                    h_g,
                    s_g: vec![0.0; rows],
                    y_g: vec![0.0; rows],
                    momentum: Mat::zeros(&[rows, cols]),
                    lambda_a,
                    lambda_g,
                    a_ema,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Kbfgs { config, layers, skipped: 0, curvature_updates: 0 })
    }

    pub fn config(&self) -> &KbfgsConfig {
        &self.config
    }

    pub fn layer_states(&self) -> &[KbfgsLayerState] {
        &self.layers
    }

    pub fn layer_states_mut(&mut self) -> &mut [KbfgsLayerState] {
        &mut self.layers
    }

    pub fn curvature_updates(&self) -> usize {
        self.curvature_updates
    }

    fn curvature_update(&mut self, net: &Network, first: &ForwardBackward, second: &ForwardBackward) -> Result<()> {
        let convergence = self.config.variant == KbfgsVariant::Convergence;
        let beta = self.config.beta;
        for (l, state) in self.layers.iter_mut().enumerate() {
            let spec = net.layers()[l].spec;
            let spatial = spec.spatial();
            let (c0, c1) = (&first.caches[l], &second.caches[l]);
            let m = c0.batch_size(spatial);

            // input side
            if convergence {
                let mut a = estimate_a(&c0.a, m)?;
                a.add_diag_mut(state.lambda_a);
                state.h_a = BfgsInverse::new(a.inverse_spd()?.symmetrize())?;
            } else {
                let a_hat = mean_patch(&c0.a);
                let pair = match (&mut state.a_ema, self.config.hessian_action) {
                    (Some(a_ema), HessianActionMode::MovingAverage { beta: ema }) => {
                        let a_batch = estimate_a(&c0.a, m)?;
                        a_ema.scale_mut(ema);
                        a_ema.axpy_mut(1.0 - ema, &a_batch)?;
                        let s = state.h_a.apply_vec(&a_hat);
                        let mut y = a_ema.matvec(&s)?;
                        crate::tensor::axpy(state.lambda_a, &s, &mut y);
                        CurvaturePair::new(s, y)?
                    }
                    _ => hessian_action_pair(&state.h_a, &c0.a, &a_hat, m, state.lambda_a)?,
                };
                if state.h_a.update(&pair)?.is_skipped() {
                    self.skipped += 1;
                }
            }

            // output side
            let cols = (m * spatial) as f64;
            for i in 0..state.s_g.len() {
                let dh_sum: f64 = c1.h.row(i).iter().zip(c0.h.row(i)).map(|(p, q)| p - q).sum();
                let dg_sum: f64 = c1.dh.row(i).iter().zip(c0.dh.row(i)).map(|(p, q)| p - q).sum();
                // dh holds the mean-loss gradient, so per-sample averages carry a factor m
                state.s_g[i] = beta * state.s_g[i] + (1.0 - beta) * dh_sum / cols;
                state.y_g[i] = beta * state.y_g[i] + (1.0 - beta) * dg_sum * m as f64 / cols;
            }
            if norm(&state.y_g) < CURVATURE_EPS {
                self.skipped += 1;
                continue;
            }
            let params = DampingParams::new(self.config.mu1, state.lambda_g)?;
            let pair = if convergence {
                dpi_dlm(&state.s_g, &state.y_g, &params)?
            } else {
                dp_dlm(&state.s_g, &state.y_g, &state.h_g, &params)?
            };
            if state.h_g.update(pair)?.is_skipped() {
                self.skipped += 1;
            }
        }
        self.curvature_updates += 1;
        Ok(())
    }
}

impl Optimizer for Kbfgs {
    fn name(&self) -> &'static str {
        match (self.config.variant, self.config.hg_mode) {
            (KbfgsVariant::Convergence, _) => "kbfgsl-convergence",
            (_, HgMode::DenseBfgs) => "kbfgs",
            (_, HgMode::Lbfgs { .. }) => "kbfgsl",
        }
    }

    /// `A_l` over the whole dataset, `H_A = (A_l + λ_A I)⁻¹`.
    fn warm_start(&mut self, net: &Network, data: &Dataset) -> Result<()> {
        let a = dataset_a(net, data)?;
        for (state, mut a_l) in self.layers.iter_mut().zip(a) {
            if let Some(ema) = &mut state.a_ema {
                *ema = a_l.clone();
            }
            a_l.add_diag_mut(state.lambda_a);
            state.h_a = BfgsInverse::new(a_l.inverse_spd()?.symmetrize())?;
        }
        Ok(())
    }

    fn step(&mut self, net: &mut Network, inputs: &Mat, targets: &Mat, k: usize, lr: f64) -> Result<StepInfo> {
        let first = net.forward_backward(inputs, targets)?;
        check_loss(&first)?;
        let convergence = self.config.variant == KbfgsVariant::Convergence;
        for (l, state) in self.layers.iter_mut().enumerate() {
            let grad = &first.caches[l].dw;
            let dir = if convergence {
                kronecker_direction(&state.h_g, grad, state.h_a.matrix())?
            } else {
                state.momentum.scale_mut(self.config.beta);
                state.momentum.axpy_mut(1.0, grad)?;
                kronecker_direction(&state.h_g, &state.momentum, state.h_a.matrix())?
            };
            apply_direction(&mut net.params_mut()[l], &dir, lr, self.config.weight_decay, l)?;
        }
        let update = k % self.config.update_freq == 0;
        if update {
            let second = net.forward_backward(inputs, targets)?;
            check_loss(&second)?;
            self.curvature_update(net, &first, &second)?;
        }
        Ok(StepInfo { loss: first.loss, curvature_updated: update })
    }

    fn skipped_updates(&self) -> usize {
        self.skipped
    }
}

/// Dataset-wide `A_l = (1/N) Σ_n Σ_t a_t(n) a_t(n)ᵀ` for every layer.
pub fn dataset_a(net: &Network, data: &Dataset) -> Result<Vec<Mat>> {
    let mut sums: Vec<Mat> = net.params().iter().map(|w| Mat::zeros(&[w.cols(), w.cols()])).collect();
    for (x, _) in data.chunks(WARM_START_CHUNK) {
        for (sum, a) in sums.iter_mut().zip(net.forward_patches(&x)?) {
            let m = a.cols() as f64;
            sum.axpy_mut(m, &estimate_a(&a, a.cols())?)?;
        }
    }
    let n = data.len() as f64;
    Ok(sums.into_iter().map(|s| s.scale(1.0 / n).symmetrize()).collect())
}

/// `π = √(tr(Ω ⊗ I_Γ) / tr(I_Ω ⊗ Γ)) = √(tr Ω · dim Γ / (dim Ω · tr Γ))`.
pub fn kfac_pi(omega: &Mat, gamma: &Mat) -> f64 {
    let num = omega.trace() * gamma.rows() as f64;
    let den = omega.rows() as f64 * gamma.trace();
    (num / den).sqrt()
}

/// `(H_Ω, H_Γ) = ((Ω + π√λ I)⁻¹, (Γ + √λ/π I)⁻¹)`.
pub fn kfac_inverses(omega: &Mat, gamma: &Mat, lambda: f64) -> Result<(Mat, Mat)> {
    let pi = kfac_pi(omega, gamma);
    let pi = if pi.is_finite() && pi > 0.0 { pi } else { 1.0 };
    let root = lambda.sqrt();
    let mut o = omega.clone();
    o.add_diag_mut(pi * root);
    let mut g = gamma.clone();
    g.add_diag_mut(root / pi);
    Ok((o.inverse_spd()?.symmetrize(), g.inverse_spd()?.symmetrize()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfacConfig {
    pub lambda: f64,
    /// Statistics refresh frequency `T₁`.
    pub stat_freq: usize,
    /// Inverse refresh frequency `T₂`.
    pub inv_freq: usize,
    pub beta: f64,
    pub weight_decay: f64,
    /// Seed for sampling targets from the predictive distribution.
    pub seed: u64,
}

impl Default for KfacConfig {
    fn default() -> Self {
        KfacConfig { lambda: 10.0, stat_freq: 1, inv_freq: 20, beta: 0.9, weight_decay: 0.0, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct KfacLayerState {
    pub omega: Mat,
    pub gamma: Mat,
    pub h_omega: Mat,
    pub h_gamma: Mat,
    pub momentum: Mat,
}

#[derive(Clone, Debug)]
pub struct Kfac {
    config: KfacConfig,
    layers: Vec<KfacLayerState>,
    rng: ChaCha8Rng,
}

impl Kfac {
    pub fn new(config: KfacConfig, net: &Network) -> Result<Self> {
        if !(config.lambda > 0.0) || config.stat_freq == 0 || config.inv_freq == 0 || !(0.0..1.0).contains(&config.beta) {
            return Err(Error::InvalidArgument(format!("invalid KFAC configuration {config:?}")));
        }
        let root = config.lambda.sqrt();
        let layers = net
            .params()
            .iter()
            .map(|w| KfacLayerState {
                omega: Mat::zeros(&[w.cols(), w.cols()]),
                gamma: Mat::zeros(&[w.rows(), w.rows()]),
                h_omega: Mat::eye(w.cols()).scale(1.0 / root),
                h_gamma: Mat::eye(w.rows()).scale(1.0 / root),
                momentum: Mat::zeros(&[w.rows(), w.cols()]),
            })
            .collect();
        Ok(Kfac { config, layers, rng: ChaCha8Rng::seed_from_u64(config.seed) })
    }

    pub fn layer_states(&self) -> &[KfacLayerState] {
        &self.layers
    }

    pub fn layer_states_mut(&mut self) -> &mut [KfacLayerState] {
        &mut self.layers
    }

    /// Per-layer `(Ω, Γ)` estimates from one pass with sampled targets:
    /// `Ω = (1/m) Σ a aᵀ`, `Γ = (1/m) Σ_n (1/|T|) Σ_t 𝒟h 𝒟hᵀ`.
    fn sampled_statistics(&mut self, net: &Network, inputs: &Mat) -> Result<Vec<(Mat, Mat)>> {
        let loss = net.loss_kind();
        let rng = &mut self.rng;
        let fb = net.forward_backward_with(inputs, |z| Ok(loss.sample_targets(z, rng)))?;
        check_loss(&fb)?;
        net.layers()
            .iter()
            .zip(&fb.caches)
            .map(|(layer, c)| {
                let m = c.batch_size(layer.spec.spatial());
                let omega = estimate_a(&c.a, m)?;
                // per-sample gradients are m·dh
                let mut gamma = c.dh.matmul_t(&c.dh)?;
                gamma.scale_mut(m as f64 / layer.spec.spatial() as f64);
                Ok((omega, gamma.symmetrize()))
            })
            .collect()
    }

    /// Recomputes `H_Ω`, `H_Γ` from the current statistics.
    pub fn refresh_inverses(&mut self) -> Result<()> {
        for s in &mut self.layers {
            let (ho, hg) = kfac_inverses(&s.omega, &s.gamma, self.config.lambda)?;
            s.h_omega = ho;
            s.h_gamma = hg;
        }
        Ok(())
    }
}

impl Optimizer for Kfac {
    fn name(&self) -> &'static str {
        "kfac"
    }

    fn warm_start(&mut self, net: &Network, data: &Dataset) -> Result<()> {
        let n = data.len() as f64;
        let mut sums: Vec<(Mat, Mat)> =
            self.layers.iter().map(|s| (Mat::zeros(s.omega.shape()), Mat::zeros(s.gamma.shape()))).collect();
        for (x, _) in data.chunks(WARM_START_CHUNK) {
            let w = x.rows() as f64 / n;
            for ((so, sg), (o, g)) in sums.iter_mut().zip(self.sampled_statistics(net, &x)?) {
                so.axpy_mut(w, &o)?;
                sg.axpy_mut(w, &g)?;
            }
        }
        for (s, (o, g)) in self.layers.iter_mut().zip(sums) {
            s.omega = o;
            s.gamma = g;
        }
        self.refresh_inverses()
    }

    fn step(&mut self, net: &mut Network, inputs: &Mat, targets: &Mat, k: usize, lr: f64) -> Result<StepInfo> {
        let fb = net.forward_backward(inputs, targets)?;
        check_loss(&fb)?;
        for (l, s) in self.layers.iter_mut().enumerate() {
            s.momentum.scale_mut(self.config.beta);
            s.momentum.axpy_mut(1.0, &fb.caches[l].dw)?;
            let dir = s.h_gamma.matmul(&s.momentum)?.matmul(&s.h_omega)?;
            apply_direction(&mut net.params_mut()[l], &dir, lr, self.config.weight_decay, l)?;
        }
        let stats = k % self.config.stat_freq == 0;
        if stats {
            let beta = self.config.beta;
            let fresh = self.sampled_statistics(net, inputs)?;
            for (s, (o, g)) in self.layers.iter_mut().zip(fresh) {
                s.omega.scale_mut(beta);
                s.omega.axpy_mut(1.0 - beta, &o)?;
                s.gamma.scale_mut(beta);
                s.gamma.axpy_mut(1.0 - beta, &g)?;
            }
        }
        if k % self.config.inv_freq == 0 {
            self.refresh_inverses()?;
        }
        Ok(StepInfo { loss: fb.loss, curvature_updated: stats })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// `ε`, tuned as the damping hyperparameter.
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Mat]) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || !(config.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam configuration {config:?}")));
        }
        let zeros: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.shape())).collect();
        Ok(Adam { config, m: zeros.clone(), v: zeros })
    }

    /// Bias-corrected Adam update of `params` given `grads`.
    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat], k: usize, lr: f64) -> Result<()> {
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let c1 = 1.0 - beta1.powi(k as i32);
        let c2 = 1.0 - beta2.powi(k as i32);
        for (l, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            let mut dir = Mat::zeros(g.shape());
            for (((mi, vi), &gi), di) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()).zip(dir.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *di = (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
            apply_direction(w, &dir, lr, weight_decay, l)?;
        }
        Ok(())
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, net: &mut Network, inputs: &Mat, targets: &Mat, k: usize, lr: f64) -> Result<StepInfo> {
        let fb = net.forward_backward(inputs, targets)?;
        check_loss(&fb)?;
        let grads: Vec<Mat> = fb.caches.into_iter().map(|c| c.dw).collect();
        self.update(net.params_mut(), &grads, k, lr)?;
        Ok(StepInfo { loss: fb.loss, curvature_updated: false })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdmConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdmConfig {
    fn default() -> Self {
        SgdmConfig { momentum: 0.9, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Sgdm {
    config: SgdmConfig,
    velocity: Vec<Mat>,
}

impl Sgdm {
    pub fn new(config: SgdmConfig, params: &[Mat]) -> Result<Self> {
        if !(0.0..1.0).contains(&config.momentum) || !(config.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid SGD-m configuration {config:?}")));
        }
        Ok(Sgdm { config, velocity: params.iter().map(|p| Mat::zeros(p.shape())).collect() })
    }

    pub fn velocity(&self) -> &[Mat] {
        &self.velocity
    }

    /// `ĝ ← βĝ + g`, `W ← W − α(ĝ + γW)`.
    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64) -> Result<()> {
        for (l, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            let v = &mut self.velocity[l];
            v.scale_mut(self.config.momentum);
            v.axpy_mut(1.0, g)?;
            apply_direction(w, v, lr, self.config.weight_decay, l)?;
        }
        Ok(())
    }
}

impl Optimizer for Sgdm {
    fn name(&self) -> &'static str {
        "sgdm"
    }

    fn step(&mut self, net: &mut Network, inputs: &Mat, targets: &Mat, _k: usize, lr: f64) -> Result<StepInfo> {
        let fb = net.forward_backward(inputs, targets)?;
        check_loss(&fb)?;
        let grads: Vec<Mat> = fb.caches.into_iter().map(|c| c.dw).collect();
        self.update(net.params_mut(), &grads, lr)?;
        Ok(StepInfo { loss: fb.loss, curvature_updated: false })
    }
}
