//! Quasi-Newton inverse updates and the safeguards that keep them positive
//! definite.
//!
//! * [`BfgsInverse`]: dense inverse-BFGS matrix.
//! * [`LbfgsStore`]: limited-memory inverse in compact form, applied to whole
//!   matrices at once.
//! * [`dp_dlm`] / [`dpi_dlm`]: Powell damping toward `H y` (or `y / μ₂`)
//!   followed by Levenberg-Marquardt damping `ỹ = y + μ₂ s̃`.
//! * [`hessian_action_pair`]: `(s, y)` pairs for the input-side factor from
//!   the implicit product `A s`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axpy, dot, norm, Tensor};

/// Relative curvature below which an update is skipped.
pub const CURVATURE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CurvaturePair<T> {
    pub s: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> CurvaturePair<T> {
    pub fn new(s: Vec<T>, y: Vec<T>) -> Result<Self> {
        if s.len() != y.len() {
            return Err(Error::shape("CurvaturePair", format!("{} vs {}", s.len(), y.len())));
        }
        if s.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curvature pair".into()));
        }
        Ok(CurvaturePair { s, y })
    }

    pub fn sy(&self) -> T {
        dot(&self.s, &self.y)
    }

    /// `sᵀy > ε‖s‖‖y‖`.
    pub fn has_curvature(&self) -> bool {
        let sy = self.sy();
        sy.is_finite() && sy > T::lit(CURVATURE_EPS) * norm(&self.s) * norm(&self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    /// `sᵀy` not sufficiently positive.
    NoCurvature,
    /// `‖y‖` numerically zero.
    ZeroY,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Accepted,
    Skipped(SkipReason),
}

impl UpdateOutcome {
    pub fn is_skipped(self) -> bool {
        matches!(self, UpdateOutcome::Skipped(_))
    }
}

/// Something that can multiply by an SPD inverse-curvature matrix.
pub trait InverseOperator<T: Scalar> {
    fn dim(&self) -> usize;
    fn apply_vec(&self, v: &[T]) -> Vec<T>;
}

/// Dense inverse-Hessian approximation updated by the BFGS formula
/// `H⁺ = (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`, `ρ = 1 / yᵀs`.
#[derive(Clone, Debug)]
pub struct BfgsInverse<T> {
    h: Tensor<T>,
}

impl<T: Scalar> BfgsInverse<T> {
    pub fn new(h: Tensor<T>) -> Result<Self> {
        if !h.is_matrix() || h.rows() != h.cols() {
            return Err(Error::shape("BfgsInverse", format!("{:?}", h.shape())));
        }
        let tol = T::lit(1e-10) * h.max_abs().max(T::one());
        let asym = h.asymmetry();
        if asym > tol {
            return Err(Error::NotSymmetric { asymmetry: asym.to_f64_lossy(), tolerance: tol.to_f64_lossy() });
        }
        Ok(BfgsInverse { h })
    }

    pub fn scaled_identity(n: usize, gamma: T) -> Self {
        BfgsInverse { h: Tensor::eye(n).scale(gamma) }
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.h
    }

    /// Applies the BFGS update, or skips it when `sᵀy ≤ 1e-12‖s‖‖y‖`.
    pub fn update(&mut self, pair: &CurvaturePair<T>) -> Result<UpdateOutcome> {
        let n = self.h.rows();
        if pair.s.len() != n {
            return Err(Error::shape("bfgs_update", format!("pair of length {} for {n}x{n}", pair.s.len())));
        }
        if norm(&pair.y) < T::lit(CURVATURE_EPS) {
            return Ok(UpdateOutcome::Skipped(SkipReason::ZeroY));
        }
        if !pair.has_curvature() {
            return Ok(UpdateOutcome::Skipped(SkipReason::NoCurvature));
        }
        let (s, y) = (&pair.s, &pair.y);
        let rho = T::one() / pair.sy();
        // H⁺ = H − ρ(s hyᵀ + hy sᵀ) + (ρ² yᵀHy + ρ) s sᵀ, with hy = H y.
        let hy = self.h.matvec(y)?;
        let yhy = dot(y, &hy);
        let coef = rho * rho * yhy + rho;
        let data = self.h.data_mut();
        for i in 0..n {
            let row = &mut data[i * n..(i + 1) * n];
            let (si, hyi) = (s[i], hy[i]);
            for j in 0..n {
                row[j] += coef * si * s[j] - rho * (si * hy[j] + hyi * s[j]);
            }
        }
        // restore exact symmetry lost to rounding
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = (data[i * n + j] + data[j * n + i]) * T::lit(0.5);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
        Ok(UpdateOutcome::Accepted)
    }

    pub fn apply(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.h.matmul(rhs)
    }
}

impl<T: Scalar> InverseOperator<T> for BfgsInverse<T> {
    fn dim(&self) -> usize {
        self.h.rows()
    }

    fn apply_vec(&self, v: &[T]) -> Vec<T> {
        self.h.matvec(v).expect("dimension checked by caller")
    }
}

/// L-BFGS inverse `H = γ₀ I + [S  γ₀Y] M [Sᵀ; γ₀Yᵀ]` in compact form, with
/// FIFO eviction at `capacity`. Every stored pair has `sᵀy > 0`.
#[derive(Clone, Debug)]
pub struct LbfgsStore<T> {
    dim: usize,
    capacity: usize,
    gamma0: T,
    pairs: VecDeque<CurvaturePair<T>>,
    // p × n, row i = s_i / y_i
    s_rows: Tensor<T>,
    y_rows: Tensor<T>,
    // SᵀY (p × p) and YᵀY
    sty: Tensor<T>,
    yty: Tensor<T>,
}

impl<T: Scalar> LbfgsStore<T> {
    pub fn new(dim: usize, capacity: usize, gamma0: T) -> Result<Self> {
        if capacity == 0 || !(gamma0 > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "L-BFGS needs capacity ≥ 1 and gamma0 > 0 (got {capacity}, {gamma0})"
            )));
        }
        Ok(LbfgsStore {
            dim,
            capacity,
            gamma0,
            pairs: VecDeque::with_capacity(capacity),
            s_rows: Tensor::zeros(&[0, dim]),
            y_rows: Tensor::zeros(&[0, dim]),
            sty: Tensor::zeros(&[0, 0]),
            yty: Tensor::zeros(&[0, 0]),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn gamma0(&self) -> T {
        self.gamma0
    }

    pub fn pairs(&self) -> impl Iterator<Item = &CurvaturePair<T>> {
        self.pairs.iter()
    }

    /// Stores a pair (evicting the oldest at capacity), or skips it when it
    /// carries no positive curvature.
    pub fn push(&mut self, pair: CurvaturePair<T>) -> Result<UpdateOutcome> {
        if pair.s.len() != self.dim {
            return Err(Error::shape("lbfgs push", format!("pair of length {} for dim {}", pair.s.len(), self.dim)));
        }
        if norm(&pair.y) < T::lit(CURVATURE_EPS) {
            return Ok(UpdateOutcome::Skipped(SkipReason::ZeroY));
        }
        if !pair.has_curvature() {
            return Ok(UpdateOutcome::Skipped(SkipReason::NoCurvature));
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(pair);
        self.rebuild();
        Ok(UpdateOutcome::Accepted)
    }

    fn rebuild(&mut self) {
        let p = self.pairs.len();
        let mut s_data = Vec::with_capacity(p * self.dim);
        let mut y_data = Vec::with_capacity(p * self.dim);
        for pair in &self.pairs {
            s_data.extend_from_slice(&pair.s);
            y_data.extend_from_slice(&pair.y);
        }
        self.s_rows = Tensor::from_matrix(p, self.dim, s_data).expect("sized");
        self.y_rows = Tensor::from_matrix(p, self.dim, y_data).expect("sized");
        self.sty = self.s_rows.matmul_t(&self.y_rows).expect("conformable");
        self.yty = self.y_rows.matmul_t(&self.y_rows).expect("conformable");
    }

    /// `H · rhs` for an `n × c` right-hand side.
    pub fn apply(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if rhs.rows() != self.dim {
            return Err(Error::shape("lbfgs_apply", format!("rhs {:?} for dim {}", rhs.shape(), self.dim)));
        }
        let g = self.gamma0;
        let mut out = rhs.scale(g);
        let p = self.pairs.len();
        if p == 0 {
            return Ok(out);
        }
        let c = rhs.cols();
        let st_rhs = self.s_rows.matmul(rhs)?; // p × c
        let yt_rhs = self.y_rows.matmul(rhs)?; // p × c

        // u = R⁻¹ Sᵀ rhs, R upper triangular with R_ij = s_iᵀ y_j (i ≤ j)
        let mut u = st_rhs.clone();
        for i in (0..p).rev() {
            for k in (i + 1)..p {
                let r_ik = self.sty[(i, k)];
                let (head, tail) = u.data_mut().split_at_mut(k * c);
                axpy(-r_ik, &tail[..c], &mut head[i * c..(i + 1) * c]);
            }
            let d = self.sty[(i, i)];
            u.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }

        // w = (D + γ YᵀY) u − γ Yᵀ rhs
        let mut w = self.yty.matmul(&u)?;
        w.scale_mut(g);
        for i in 0..p {
            let d = self.sty[(i, i)];
            let (ui, yi) = (u.row(i).to_vec(), yt_rhs.row(i).to_vec());
            let wi = w.row_mut(i);
            for j in 0..c {
                wi[j] += d * ui[j] - g * yi[j];
            }
        }

        // top = R⁻ᵀ w (forward substitution with the lower-triangular Rᵀ)
        let mut top = w;
        for i in 0..p {
            for k in 0..i {
                let r_ki = self.sty[(k, i)];
                let (head, tail) = top.data_mut().split_at_mut(i * c);
                axpy(-r_ki, &head[k * c..(k + 1) * c], &mut tail[..c]);
            }
            let d = self.sty[(i, i)];
            top.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }

        // H rhs = γ rhs + S top − γ Y u
        let s_part = self.s_rows.t_matmul(&top)?;
        let y_part = self.y_rows.t_matmul(&u)?;
        out.axpy_mut(T::one(), &s_part)?;
        out.axpy_mut(-g, &y_part)?;
        Ok(out)
    }

    /// Dense `n × n` matrix of the current inverse.
    pub fn materialize(&self) -> Tensor<T> {
        self.apply(&Tensor::eye(self.dim)).expect("square").symmetrize()
    }
}

impl<T: Scalar> InverseOperator<T> for LbfgsStore<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_vec(&self, v: &[T]) -> Vec<T> {
        self.apply(&Tensor::column(v.to_vec())).expect("dimension checked by caller").into_data()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingParams<T> {
    /// Powell threshold, `0 < μ₁ < 1`.
    pub mu1: T,
    /// Levenberg-Marquardt term `μ₂ > 0` (set to `λ_G`).
    pub mu2: T,
}

impl<T: Scalar> DampingParams<T> {
    pub fn new(mu1: T, mu2: T) -> Result<Self> {
        if !(mu1 > T::zero() && mu1 < T::one()) || !(mu2 > T::zero()) {
            return Err(Error::InvalidArgument(format!("damping needs 0 < μ₁ < 1 and μ₂ > 0, got {mu1}, {mu2}")));
        }
        Ok(DampingParams { mu1, mu2 })
    }

    /// `μ₃ = μ₁ / (μ₂ (1 + 2μ₁))`, the constant with `ỹᵀỹ / s̃ᵀỹ ≤ 1/μ₃`
    /// after [`dpi_dlm`].
    pub fn mu3(&self) -> T {
        self.mu1 / (self.mu2 * (T::one() + T::lit(2.0) * self.mu1))
    }
}

fn powell_then_lm<T: Scalar>(s: &[T], y: &[T], hy: &[T], params: &DampingParams<T>) -> Result<CurvaturePair<T>> {
    let yhy = dot(y, hy);
    if !yhy.is_finite() {
        return Err(Error::NonFinite(format!("yᵀHy = {yhy}")));
    }
    if !(yhy > T::zero()) {
        return Err(Error::InvalidArgument(format!("yᵀHy = {yhy} is not positive")));
    }
    let sy = dot(s, y);
    let theta = if sy < params.mu1 * yhy {
        (T::one() - params.mu1) * yhy / (yhy - sy)
    } else {
        T::one()
    };
    let s_tilde: Vec<T> = s.iter().zip(hy).map(|(&si, &hi)| theta * si + (T::one() - theta) * hi).collect();
    let y_tilde: Vec<T> = y.iter().zip(&s_tilde).map(|(&yi, &si)| yi + params.mu2 * si).collect();
    CurvaturePair::new(s_tilde, y_tilde)
}

/// Powell damping on `H` followed by LM damping; guarantees
/// `s̃ᵀy ≥ μ₁ yᵀHy` and `s̃ᵀỹ ≥ μ₂‖s̃‖²`.
pub fn dp_dlm<T: Scalar>(s: &[T], y: &[T], h: &impl InverseOperator<T>, params: &DampingParams<T>) -> Result<CurvaturePair<T>> {
    if s.len() != y.len() || s.len() != h.dim() {
        return Err(Error::shape("dp_dlm", format!("s {}, y {}, H {}", s.len(), y.len(), h.dim())));
    }
    let hy = h.apply_vec(y);
    powell_then_lm(s, y, &hy, params)
}

/// [`dp_dlm`] with `H` replaced by `μ₂⁻¹ I`.
pub fn dpi_dlm<T: Scalar>(s: &[T], y: &[T], params: &DampingParams<T>) -> Result<CurvaturePair<T>> {
    if s.len() != y.len() {
        return Err(Error::shape("dpi_dlm", format!("s {} vs y {}", s.len(), y.len())));
    }
    if norm(y) == T::zero() {
        return Err(Error::InvalidArgument("dpi_dlm: y is zero".into()));
    }
    let hy: Vec<T> = y.iter().map(|&v| v / params.mu2).collect();
    powell_then_lm(s, y, &hy, params)
}

/// `A s` with `A = (1/m) Σ_n Σ_t a_t(n) a_t(n)ᵀ`, evaluated as
/// `patches · (patchesᵀ s) / m` without forming `A`.
pub fn hessian_action<T: Scalar>(patches: &Tensor<T>, s: &[T], batch_size: usize) -> Result<Vec<T>> {
    let coeffs = patches.t_matvec(s)?;
    let mut out = patches.matvec(&coeffs)?;
    let inv = T::one() / T::lit(batch_size as f64);
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Mean over all columns (samples × locations) of the patch matrix.
pub fn mean_patch<T: Scalar>(patches: &Tensor<T>) -> Vec<T> {
    let inv = T::one() / T::lit(patches.cols() as f64);
    (0..patches.rows()).map(|i| patches.row(i).iter().copied().sum::<T>() * inv).collect()
}

/// `s_A = H_A â`, `y_A = A s_A + λ_A s_A` with `A s_A` from the current
/// minibatch's patches.
pub fn hessian_action_pair<T: Scalar>(
    h_a: &BfgsInverse<T>,
    patches: &Tensor<T>,
    a_hat: &[T],
    batch_size: usize,
    lambda_a: T,
) -> Result<CurvaturePair<T>> {
    let s = h_a.apply_vec(a_hat);
    if norm(&s) == T::zero() {
        return Err(Error::InvalidArgument("hessian_action_pair: s_A is zero".into()));
    }
    let mut y = hessian_action(patches, &s, batch_size)?;
    axpy(lambda_a, &s, &mut y);
    CurvaturePair::new(s, y)
}

/// Splits the overall damping `λ` into `(λ_A, λ_G)` with `λ_A λ_G = λ`:
/// `(√|T| √λ, √λ / √|T|)` for convolutions, `(√λ, √λ)` for dense layers.
pub fn damping_split<T: Scalar>(lambda: T, is_conv: bool, spatial: usize) -> (T, T) {
    let root = lambda.sqrt();
    if is_conv {
        let t = T::lit(spatial as f64).sqrt();
        (t * root, root / t)
    } else {
        (root, root)
    }
}

/// Spectral bounds `[κ̲_G, κ̄_G]` of an L-BFGS inverse built from `p`
/// [`dpi_dlm`]-damped pairs starting from `λ_G⁻¹ I`.
pub fn lemma_bounds<T: Scalar>(mu1: T, mu2: T, lambda_g: T, p: usize) -> (T, T) {
    let one = T::one();
    let mu3 = mu1 / (mu2 * (one + T::lit(2.0) * mu1));
    let pf = T::lit(p as f64);
    let low = one / (lambda_g + pf / mu3);
    let mu_hat = (one + one / (mu2 * mu3).sqrt()).powi(2);
    let mu_hat_p = mu_hat.powi(p as i32);
    let high = mu_hat_p / lambda_g + (mu_hat_p - one) / (mu_hat - one) / mu2;
    (low, high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type M = Tensor<f64>;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> M {
        let r = M::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = r.t_matmul(&r).unwrap().symmetrize();
        a.add_diag_mut(0.1);
        a
    }

    #[test]
    fn bfgs_fixed_point() {
        let mut h = BfgsInverse::scaled_identity(3, 1.0);
        let e1 = vec![1.0, 0.0, 0.0];
        let out = h.update(&CurvaturePair::new(e1.clone(), e1).unwrap()).unwrap();
        assert_eq!(out, UpdateOutcome::Accepted);
        assert!(h.matrix().rel_err(&M::eye(3)) < 1e-15);
    }

    #[test]
    fn bfgs_secant_and_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = 6;
            let mut h = BfgsInverse::new(rand_spd(&mut rng, n)).unwrap();
            let s = rand_vec(&mut rng, n);
            let y = rand_vec(&mut rng, n);
            let params = DampingParams::new(0.2, 0.5).unwrap();
            let pair = dp_dlm(&s, &y, &h, &params).unwrap();
            assert!(!h.update(&pair).unwrap().is_skipped());
            let hy = h.apply_vec(&pair.y);
            let err = norm(&hy.iter().zip(&pair.s).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&pair.s);
            assert!(err <= 1e-10);
            assert!(h.matrix().sym_eig().unwrap().min() > 0.0);
        }
    }

    #[test]
    fn bfgs_skips_without_curvature() {
        let mut h = BfgsInverse::scaled_identity(2, 1.0);
        let pair = CurvaturePair::new(vec![1.0, 0.0], vec![-1.0, 0.0]).unwrap();
        assert_eq!(h.update(&pair).unwrap(), UpdateOutcome::Skipped(SkipReason::NoCurvature));
        let zero = CurvaturePair::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(h.update(&zero).unwrap(), UpdateOutcome::Skipped(SkipReason::ZeroY));
        assert_eq!(h.matrix(), &M::eye(2));
    }

    #[test]
    fn lbfgs_empty_is_scaled_identity() {
        let store = LbfgsStore::new(3, 5, 0.5).unwrap();
        let rhs = M::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(store.apply(&rhs).unwrap(), rhs.scale(0.5));
    }

    #[test]
    fn lbfgs_single_pair_matches_dense_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let s = rand_vec(&mut rng, n);
        let mut y = rand_vec(&mut rng, n);
        axpy(1.0, &s, &mut y);
        let pair = CurvaturePair::new(s, y).unwrap();
        assert!(pair.sy() > 0.0);
        let mut store = LbfgsStore::new(n, 3, 0.7).unwrap();
        store.push(pair.clone()).unwrap();
        let mut dense = BfgsInverse::scaled_identity(n, 0.7);
        dense.update(&pair).unwrap();
        let v = rand_vec(&mut rng, n);
        let a = store.apply_vec(&v);
        let b = dense.apply_vec(&v);
        let err = norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>()) / norm(&b);
        assert!(err <= 1e-12);
    }

    #[test]
    fn lbfgs_evicts_fifo() {
        let mut store = LbfgsStore::new(2, 2, 1.0).unwrap();
        for k in 1..=3 {
            let s = vec![k as f64, 1.0];
            store.push(CurvaturePair::new(s.clone(), s).unwrap()).unwrap();
        }
        assert_eq!(store.len(), 2);
        assert_eq!(store.pairs().next().unwrap().s[0], 2.0);
    }

    #[test]
    fn dp_dlm_branches() {
        let params = DampingParams::new(0.2f64, 1.0).unwrap();
        let h = BfgsInverse::scaled_identity(2, 1.0);
        // no damping: sᵀy ≥ μ₁ yᵀHy
        let out = dp_dlm(&[1.0, 0.0], &[1.0, 0.0], &h, &params).unwrap();
        assert_eq!(out.s, vec![1.0, 0.0]);
        assert_eq!(out.y, vec![2.0, 0.0]);
        // θ₁ = 0.8 / 2 = 0.4, s̃ = 0.4 s + 0.6 y
        let out = dp_dlm(&[1.0, 0.0], &[-1.0, 0.0], &h, &params).unwrap();
        assert!((out.s[0] + 0.2).abs() < 1e-15);
        assert!((out.y[0] + 1.2).abs() < 1e-15);
        assert!((out.sy() - 0.24).abs() < 1e-15);
    }

    #[test]
    fn dpi_dlm_aligned_and_mu3() {
        let params = DampingParams::new(0.2f64, 1.0).unwrap();
        assert!((params.mu3() - 1.0 / 7.0).abs() < 1e-15);
        let y = vec![0.5, -2.0];
        let s: Vec<f64> = y.iter().map(|v| v / params.mu2).collect();
        let out = dpi_dlm(&s, &y, &params).unwrap();
        assert_eq!(out.s, s);
        assert!(dpi_dlm(&s, &[0.0, 0.0], &params).is_err());
    }

    #[test]
    fn hessian_action_matches_explicit_a() {
        let patches = M::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let as_ = hessian_action(&patches, &[1.0, 1.0], 1).unwrap();
        assert_eq!(as_, vec![1.0, 4.0]);
        let h_a = BfgsInverse::scaled_identity(2, 1.0);
        let pair = hessian_action_pair(&h_a, &patches, &[1.0, 1.0], 1, 0.5).unwrap();
        assert_eq!(pair.y, vec![1.5, 4.5]);
    }

    #[test]
    fn damping_split_examples() {
        assert_eq!(damping_split(4.0, true, 9), (6.0, 2.0 / 3.0));
        assert_eq!(damping_split(4.0, false, 1), (2.0, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let lambda: f64 = rng.random_range(1e-3..1e3);
            let t = rng.random_range(1..100);
            let (a, g) = damping_split(lambda, true, t);
            assert!((a * g - lambda).abs() <= 1e-12 * lambda);
        }
    }

    #[test]
    fn spectral_bound_examples() {
        let (lo, hi) = lemma_bounds(0.2f64, 1.0, 1.0, 1);
        let mu_hat = (1.0 + 7.0f64.sqrt()).powi(2);
        assert!((lo - 0.125).abs() < 1e-15);
        assert!((hi - (mu_hat + 1.0)).abs() < 1e-12);
        assert!((mu_hat - 13.2915).abs() < 1e-4);
        let (lo, hi) = lemma_bounds(0.2, 2.0, 0.5, 0);
        assert_eq!((lo, hi), (2.0, 2.0));
    }

    #[test]
    fn generic_over_f32() {
        let mut h = BfgsInverse::<f32>::scaled_identity(2, 1.0);
        let pair = CurvaturePair::new(vec![1.0f32, 0.5], vec![0.8, 0.9]).unwrap();
        assert!(!h.update(&pair).unwrap().is_skipped());
        let hy = h.apply_vec(&pair.y);
        assert!((hy[0] - 1.0).abs() < 1e-5 && (hy[1] - 0.5).abs() < 1e-5);
    }
}
