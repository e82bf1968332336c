//! Randomized property suites behind `kronqn verify`: Kronecker structure of
//! gradients and Hessians, damping guarantees, and spectral bounds.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvature::{dp_dlm, dpi_dlm, lemma_bounds, BfgsInverse, DampingParams, LbfgsStore};
use crate::data::{synthetic_dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::kron::{assemble_hessian, brute_force_hessian_w, gradient_kron_sum, hessian_terms};
use crate::nn::{Activation, ConvLayerSpec, DenseLayerSpec, Layer, LayerSpec, LossKind, Network};
use crate::optim::{HgMode, Kbfgs, KbfgsConfig, KbfgsVariant, Optimizer};
use crate::tensor::dot;
use crate::Mat;

pub const DEFAULT_SEED: u64 = 20_200_611;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Structure,
    Damping,
    Bounds,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structure" => Ok(Suite::Structure),
            "damping" => Ok(Suite::Damping),
            "bounds" => Ok(Suite::Bounds),
            "all" => Ok(Suite::All),
            _ => Err(Error::InvalidArgument(format!("unknown suite '{s}' (structure, damping, bounds, all)"))),
        }
    }
}

/// One property: worst measured violation over all cases against a tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<44} cases={:<5} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    if matches!(suite, Suite::Structure | Suite::All) {
        checks.push(gradient_structure(&mut rng, 50)?);
        checks.push(hessian_structure(&mut rng, 10)?);
    }
    if matches!(suite, Suite::Damping | Suite::All) {
        checks.extend(powell_guarantees(&mut rng, 1000)?);
        checks.extend(damped_ratio_checks(&mut rng, 1000)?);
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        checks.extend(bfgs_norm_checks(&mut rng, 200)?);
        checks.push(lbfgs_spectrum_check(&mut rng, 10)?);
        checks.extend(convergence_variant_sandwich(&mut rng)?);
    }
    Ok(Report { checks })
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let r = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut a = r.t_matmul(&r).expect("square").symmetrize();
    a.add_diag_mut(rng.random_range(0.01..1.0));
    a
}

fn conv_layer(j: usize, i: usize, r: usize, h: usize, w: usize, activation: Activation) -> Layer {
    Layer {
        spec: LayerSpec::Conv(ConvLayerSpec { in_channels: j, out_channels: i, radius: r, height: h, width: w }),
        activation,
    }
}

fn dense_layer(i: usize, o: usize, activation: Activation) -> Layer {
    Layer { spec: LayerSpec::Dense(DenseLayerSpec { in_dim: i, out_dim: o }), activation }
}

/// `Σ_t a_t ⊗ 𝒟h_t` against backprop `vec(𝒟W)` on random conv layers.
fn gradient_structure(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (j, i, r) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(0..=1));
        let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let layers = vec![conv_layer(j, i, r, h, w, Activation::Tanh), dense_layer(i * h * w, 2, Activation::Identity)];
        let net = Network::new(layers, LossKind::Mse, rng.random())?;
        let x = Mat::from_fn(1, net.input_dim(), |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
        let fb = net.forward_backward(&x, &y)?;
        let c = &fb.caches[0];
        let sum = Mat::column(gradient_kron_sum(&c.a, &c.dh)?);
        worst = worst.max(sum.rel_err(&c.dw.vec()));
    }
    Ok(Check { name: "gradient = sum of Kronecker products", cases, worst, tolerance: 1e-12 })
}

/// Exact Kronecker-sum Hessian against finite differences of the loss.
fn hessian_structure(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let (j, i) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let act = if case % 2 == 0 { Activation::Sigmoid } else { Activation::Tanh };
        let layers = vec![conv_layer(j, i, 1, h, w, act), dense_layer(i * h * w, 2, Activation::Identity)];
        let net = Network::new(layers, LossKind::Mse, rng.random())?;
        let x = Mat::from_fn(1, net.input_dim(), |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
        let exact = assemble_hessian(&hessian_terms(&net, 0, &x, &y, 1e-5)?);
        let fd = brute_force_hessian_w(&net, 0, &x, &y, 1e-5)?;
        worst = worst.max(exact.rel_err(&fd));
    }
    Ok(Check { name: "Hessian = sum of Kronecker products", cases, worst, tolerance: 1e-4 })
}

/// `s̃ᵀy ≥ μ₁ yᵀHy` and `s̃ᵀỹ ≥ μ₂‖s̃‖²` after Powell + LM damping.
fn powell_guarantees(rng: &mut ChaCha8Rng, cases: usize) -> Result<Vec<Check>> {
    let (mut w1, mut w2): (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..cases {
        let n = rng.random_range(1..=8);
        let h = BfgsInverse::new(rand_spd(rng, n))?;
        let (ss, ys) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
        let s = rand_vec(rng, n, ss);
        let y = rand_vec(rng, n, ys);
        let params = DampingParams::new(rng.random_range(0.01..0.99), rng.random_range(1e-3..10.0))?;
        let out = dp_dlm(&s, &y, &h, &params)?;
        let hy = h.matrix().matvec(&y)?;
        w1 = w1.max(params.mu1 * dot(&y, &hy) - dot(&out.s, &y));
        w2 = w2.max(params.mu2 * dot(&out.s, &out.s) - out.sy());
    }
    Ok(vec![
        Check { name: "Powell: s~'y >= mu1 y'Hy", cases, worst: w1, tolerance: 1e-9 },
        Check { name: "LM: s~'y~ >= mu2 |s~|^2", cases, worst: w2, tolerance: 1e-9 },
    ])
}

/// `s̃ᵀs̃ / s̃ᵀỹ ≤ 1/μ₂` and `ỹᵀỹ / s̃ᵀỹ ≤ 1/μ₃` after identity-Powell damping.
fn damped_ratio_checks(rng: &mut ChaCha8Rng, cases: usize) -> Result<Vec<Check>> {
    let (mut w1, mut w2): (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..cases {
        let n = rng.random_range(1..=8);
        let (ss, ys) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
        let s = rand_vec(rng, n, ss);
        let y = rand_vec(rng, n, ys);
        let params = DampingParams::new(rng.random_range(0.01..0.99), rng.random_range(1e-3..10.0))?;
        let out = dpi_dlm(&s, &y, &params)?;
        let sy = out.sy();
        w1 = w1.max(dot(&out.s, &out.s) / sy - 1.0 / params.mu2);
        w2 = w2.max(dot(&out.y, &out.y) / sy - 1.0 / params.mu3());
    }
    Ok(vec![
        Check { name: "ratio s~'s~/s~'y~ <= 1/mu2", cases, worst: w1, tolerance: 1e-9 },
        Check { name: "ratio y~'y~/s~'y~ <= 1/mu3", cases, worst: w2, tolerance: 1e-9 },
    ])
}

fn spectral_norm(m: &Mat) -> Result<f64> {
    let e = m.sym_eig()?;
    Ok(e.max().abs().max(e.min().abs()))
}

/// One BFGS update with a damped pair: `‖B⁺‖ ≤ ‖B‖ + 1/μ₃` and
/// `‖H⁺‖ ≤ (1 + 1/√(μ₂μ₃))²‖H‖ + 1/μ₂`.
fn bfgs_norm_checks(rng: &mut ChaCha8Rng, cases: usize) -> Result<Vec<Check>> {
    let (mut wb, mut wh): (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let h0 = rand_spd(rng, n);
        let params = DampingParams::new(rng.random_range(0.05..0.95), rng.random_range(0.05..5.0))?;
        let pair = dpi_dlm(&rand_vec(rng, n, 1.0), &rand_vec(rng, n, 1.0), &params)?;
        let mut h = BfgsInverse::new(h0.clone())?;
        if h.update(&pair)?.is_skipped() {
            continue;
        }
        let (b0, b1) = (h0.inverse_spd()?, h.matrix().inverse_spd()?);
        let mu_hat = (1.0 + 1.0 / (params.mu2 * params.mu3()).sqrt()).powi(2);
        wb = wb.max(spectral_norm(&b1)? - spectral_norm(&b0)? - 1.0 / params.mu3());
        wh = wh.max(spectral_norm(h.matrix())? - mu_hat * spectral_norm(&h0)? - 1.0 / params.mu2);
    }
    Ok(vec![
        Check { name: "BFGS |B+| <= |B| + 1/mu3", cases, worst: wb, tolerance: 1e-6 },
        Check { name: "BFGS |H+| <= mu^|H| + 1/mu2", cases, worst: wh, tolerance: 1e-6 },
    ])
}

/// Eigenvalues of an L-BFGS inverse from `p` damped pairs lie in the
/// closed-form interval, relative to its endpoints.
fn lbfgs_spectrum_check(rng: &mut ChaCha8Rng, trials_per_p: usize) -> Result<Check> {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for p in 1..=10 {
        for _ in 0..trials_per_p {
            let n = rng.random_range(2..=6);
            let (mu1, lambda_g) = (rng.random_range(0.05..0.95), rng.random_range(0.05..5.0));
            let params = DampingParams::new(mu1, lambda_g)?;
            let mut store = LbfgsStore::new(n, p, 1.0 / lambda_g)?;
            let mut pushed = 0;
            while pushed < p {
                let pair = dpi_dlm(&rand_vec(rng, n, 1.0), &rand_vec(rng, n, 1.0), &params)?;
                if !store.push(pair)?.is_skipped() {
                    pushed += 1;
                }
            }
            let (lo, hi) = lemma_bounds(mu1, lambda_g, lambda_g, p);
            let eig = store.materialize().sym_eig()?;
            worst = worst.max((lo - eig.min()) / lo).max((eig.max() - hi) / hi);
            cases += 1;
        }
    }
    Ok(Check { name: "L-BFGS spectrum within [k_low, k_high]", cases, worst, tolerance: 1e-9 })
}

/// Runs the convergence-analysis variant on inputs bounded by `φ` and checks
/// `H_A`, `H_G` and their Kronecker product against the closed-form bounds
/// after every step.
fn convergence_variant_sandwich(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let phi = 0.8;
    let data = synthetic_dataset(SyntheticKind::BoundedRegression, 48, &[8, 2], rng.random(), phi)?;
    let layers = vec![
        conv_layer(2, 2, 1, 2, 2, Activation::Tanh),
        dense_layer(8, 3, Activation::Tanh),
        dense_layer(3, 2, Activation::Identity),
    ];
    let mut net = Network::new(layers, LossKind::Mse, rng.random())?;
    let capacity = 4;
    let config = KbfgsConfig {
        lambda: 0.5,
        hg_mode: HgMode::Lbfgs { capacity },
        variant: KbfgsVariant::Convergence,
        ..Default::default()
    };
    let mut opt = Kbfgs::new(config, &net)?;
    opt.warm_start(&net, &data)?;
    let (mut wa, mut wg, mut wk) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let steps = 15;
    for k in 1..=steps {
        let idx: Vec<usize> = (0..16).map(|_| rng.random_range(0..data.len())).collect();
        let (x, y) = data.gather(&idx);
        opt.step(&mut net, &x, &y, k, 0.05)?;
        for (l, state) in opt.layer_states().iter().enumerate() {
            let g = net.layers()[l].spec.geometry();
            // layer inputs after the first are tanh outputs, bounded by 1
            let phi_l: f64 = if l == 0 { phi } else { 1.0 };
            let a_max = ((g.in_channels * g.offsets()) as f64 * phi_l * phi_l + 1.0) * g.spatial() as f64;
            let (a_lo, a_hi) = (1.0 / (a_max + state.lambda_a), 1.0 / state.lambda_a);
            let ea = state.h_a.matrix().sym_eig()?;
            wa = wa.max((a_lo - ea.min()) / a_lo).max((ea.max() - a_hi) / a_hi);

            let h_g = state.h_g.materialize();
            let p = match &state.h_g {
                crate::optim::GInverse::Lbfgs(s) => s.len(),
                crate::optim::GInverse::Dense(_) => unreachable!("convergence variant uses L-BFGS"),
            };
            let (g_lo, g_hi) = lemma_bounds(config.mu1, state.lambda_g, state.lambda_g, p);
            let eg = h_g.sym_eig()?;
            wg = wg.max((g_lo - eg.min()) / g_lo).max((eg.max() - g_hi) / g_hi);

            let block = Mat::kron(state.h_a.matrix(), &h_g).symmetrize();
            let eb = block.sym_eig()?;
            let (lo, hi) = (a_lo * g_lo, a_hi * g_hi);
            wk = wk.max((lo - eb.min()) / lo).max((eb.max() - hi) / hi);
        }
    }
    let cases = steps * 3;
    Ok(vec![
        Check { name: "H_A within input-bound sandwich", cases, worst: wa, tolerance: 1e-9 },
        Check { name: "H_G within L-BFGS bounds during training", cases, worst: wg, tolerance: 1e-9 },
        Check { name: "H_A (x) H_G within product bounds", cases, worst: wk, tolerance: 1e-9 },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn damping_and_bounds_suites_pass() {
        for suite in [Suite::Damping, Suite::Bounds] {
            let report = run(suite, DEFAULT_SEED).unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn suite_names_parse() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("nope".parse::<Suite>().is_err());
    }
}
