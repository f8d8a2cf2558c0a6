//! Dense spectral primitives: SVD with a deterministic sign convention, the
//! trace and spectral norms, the barrier pair `(b, b*)`, the smoothed trace
//! norm `F_ε`, first and second derivatives of singular-value spectral
//! functions, and the local rank-increase certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, kron, sign_normalize};

/// Default relative threshold for reading a rank off singular values.
pub const DEFAULT_TAU_RANK: f64 = 1e-6;

/// Economy singular value decomposition `W = U Diag(s) Vᵀ`, `k = min(p, q)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
    pub numerical_rank: usize,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Leading `r` left/right singular vectors.
    pub fn leading(&self, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.u.columns(0, r).into_owned(), self.v.columns(0, r).into_owned())
    }

    /// Rank at relative threshold `tau` with an additional absolute floor.
    pub fn rank_with_floor(&self, tau: f64, floor: f64) -> usize {
        let s1 = self.s.first().copied().unwrap_or(0.0);
        let cut = (tau * s1).max(floor);
        self.s.iter().filter(|&&x| x > cut).count()
    }
}

/// Count of singular values strictly above `tau · s₁`.
pub fn numerical_rank(s: &[f64], tau: f64) -> usize {
    let s1 = s.first().copied().unwrap_or(0.0);
    if s1 <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > tau * s1).count()
}

pub fn full_svd(w: &DMatrix<f64>) -> Result<SvdTriple> {
    full_svd_tau(w, DEFAULT_TAU_RANK)
}

pub fn full_svd_tau(w: &DMatrix<f64>, tau: f64) -> Result<SvdTriple> {
    ensure_finite(w, "matrix")?;
    let (p, q) = w.shape();
    let k = p.min(q);
    if k == 0 {
        return Ok(SvdTriple { u: DMatrix::zeros(p, 0), s: vec![], v: DMatrix::zeros(q, 0), numerical_rank: 0 });
    }
    let (u_raw, sv, v_raw) = thin_svd(w)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(p, k);
    let mut v = DMatrix::zeros(q, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol: Vec<f64> = u_raw.column(src).iter().copied().collect();
        let mut vcol: Vec<f64> = v_raw.column(src).iter().copied().collect();
        let sign = sign_normalize(&mut ucol);
        if sign < 0.0 {
            vcol.iter_mut().for_each(|x| *x = -*x);
        }
        u.column_mut(dst).copy_from_slice(&ucol);
        v.column_mut(dst).copy_from_slice(&vcol);
        s.push(sv[src].max(0.0));
    }
    let numerical_rank = numerical_rank(&s, tau);
    Ok(SvdTriple { u, s, v, numerical_rank })
}

/// SVD with square orthogonal factors: `U` is p×p, `V` is q×q and `s` has
/// `min(p, q)` entries; the missing singular values are implicitly zero.
#[derive(Debug, Clone)]
pub struct CompleteSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn complete_svd(w: &DMatrix<f64>) -> Result<CompleteSvd> {
    let t = full_svd(w)?;
    Ok(CompleteSvd {
        u: linalg::hstack(&t.u, &linalg::orthonormal_completion(&t.u)),
        v: linalg::hstack(&t.v, &linalg::orthonormal_completion(&t.v)),
        s: t.s,
    })
}

pub fn singular_values(w: &DMatrix<f64>) -> Vec<f64> {
    if w.is_empty() {
        return vec![];
    }
    let m = to_faer(w);
    // NaN input is the only failure mode; surface it as NaN values
    let mut s = m.singular_values().unwrap_or_else(|_| vec![f64::NAN; w.nrows().min(w.ncols())]);
    s.iter_mut().for_each(|x| *x = x.max(0.0));
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn to_faer(w: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)])
}

// nalgebra's bidiagonal SVD occasionally returns factors that do not
// reconstruct rank-deficient inputs, so the decomposition goes through faer.
fn thin_svd(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = to_faer(w).thin_svd().map_err(|e| Error::invalid(format!("svd failed: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    Ok((
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        (0..s.nrows()).map(|i| s[i]).collect(),
        DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    ))
}

/// Sum of singular values.
pub fn trace_norm(w: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(w, "matrix")?;
    Ok(singular_values(w).iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(w: &DMatrix<f64>) -> f64 {
    singular_values(w).first().copied().unwrap_or(0.0)
}

/// `tr WᵀV − ‖W‖_*·‖V‖₂`, which is never positive (trace/spectral duality).
pub fn dual_norm_check(w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if w.shape() != v.shape() {
        return Err(Error::invalid("dual_norm_check: shape mismatch"));
    }
    Ok(w.dot(v) - trace_norm(w)? * spectral_norm(v))
}

/// `b(v) = (1+v) log(1+v) + (1−v) log(1−v)` on `[−1, 1]`, `+∞` outside,
/// with `0·log 0 = 0` at the boundary.
pub fn barrier_primal(v: f64) -> f64 {
    let a = v.abs();
    if a > 1.0 || v.is_nan() {
        return f64::INFINITY;
    }
    if a == 1.0 {
        return 2.0 * std::f64::consts::LN_2;
    }
    (1.0 + v) * v.ln_1p() + (1.0 - v) * (-v).ln_1p()
}

/// `log cosh t` without overflow or cancellation.
pub(crate) fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        let sh = (0.5 * a).sinh();
        (2.0 * sh * sh).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `log(sinh(d) / d)`.
fn ln_sinhc(d: f64) -> f64 {
    let a = d.abs();
    if a < 1e-4 {
        a * a / 6.0
    } else if a < 20.0 {
        (a.sinh() / a).ln()
    } else {
        a - std::f64::consts::LN_2 - a.ln() + (-(-2.0 * a).exp()).ln_1p()
    }
}

/// Smoothing scale of the barrier pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    epsilon: f64,
}

impl BarrierSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("barrier epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `b*(v) = ε log(1 + e^{v/ε}) + ε log(1 + e^{−v/ε}) − 2ε log 2`,
    /// evaluated as `2ε log cosh(v / 2ε)`.
    pub fn dual(&self, v: f64) -> f64 {
        2.0 * self.epsilon * ln_cosh(v / (2.0 * self.epsilon))
    }
}

pub fn barrier_dual(v: f64, eps: f64) -> Result<f64> {
    Ok(BarrierSpec::new(eps)?.dual(v))
}

/// `F_ε(W) = Σ_i b*(s_i(W))`.
pub fn smoothed_trace_norm(w: &DMatrix<f64>, eps: f64) -> Result<f64> {
    let barrier = BarrierSpec::new(eps)?;
    ensure_finite(w, "matrix")?;
    Ok(spectral_value(w, &barrier))
}

/// An even scalar function `f` with `f(0) = f'(0) = 0`, lifted to matrices as
/// `Σ_i f(s_i(W))`.
pub trait SpectralFunction {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
    fn second_derivative(&self, s: f64) -> f64;

    /// `(f'(a) − f'(b)) / (a − b)`, replaced by `f''(a)` when the two
    /// arguments coalesce.
    fn divided_difference(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() < 1e-12 * a.abs().max(b.abs()).max(1.0) {
            self.second_derivative(0.5 * (a + b))
        } else {
            (self.derivative(a) - self.derivative(b)) / (a - b)
        }
    }

    /// `(f'(a) + f'(b)) / (a + b)` for `a, b ≥ 0`, with limit `f''(0)`.
    fn sum_quotient(&self, a: f64, b: f64) -> f64 {
        if (a + b).abs() < 1e-12 {
            self.second_derivative(0.5 * (a + b))
        } else {
            (self.derivative(a) + self.derivative(b)) / (a + b)
        }
    }
}

/// `f(s) = s²/2`, whose spectral lift is `½‖W‖_F²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquare;

impl SpectralFunction for HalfSquare {
    fn value(&self, s: f64) -> f64 {
        0.5 * s * s
    }
    fn derivative(&self, s: f64) -> f64 {
        s
    }
    fn second_derivative(&self, _s: f64) -> f64 {
        1.0
    }
}

impl SpectralFunction for BarrierSpec {
    fn value(&self, s: f64) -> f64 {
        self.dual(s)
    }

    fn derivative(&self, s: f64) -> f64 {
        (s / (2.0 * self.epsilon)).tanh()
    }

    fn second_derivative(&self, s: f64) -> f64 {
        let x = s / (2.0 * self.epsilon);
        (-2.0 * ln_cosh(x)).exp() / (2.0 * self.epsilon)
    }

    // tanh x − tanh y = sinh(x − y) / (cosh x cosh y), evaluated in logs so
    // neither saturation nor near-coalescence loses precision.
    fn divided_difference(&self, a: f64, b: f64) -> f64 {
        let h = 2.0 * self.epsilon;
        let (x, y) = (a / h, b / h);
        (ln_sinhc(x - y) - ln_cosh(x) - ln_cosh(y)).exp() / h
    }

    fn sum_quotient(&self, a: f64, b: f64) -> f64 {
        let h = 2.0 * self.epsilon;
        let (x, y) = (a / h, b / h);
        (ln_sinhc(x + y) - ln_cosh(x) - ln_cosh(y)).exp() / h
    }
}

pub fn spectral_value<F: SpectralFunction + ?Sized>(w: &DMatrix<f64>, f: &F) -> f64 {
    singular_values(w).iter().map(|&s| f.value(s)).sum()
}

/// `∇ Σ f(s_i(W)) = U Diag(f'(s_i)) Vᵀ`.
pub fn spectral_gradient<F: SpectralFunction + ?Sized>(w: &DMatrix<f64>, f: &F) -> Result<DMatrix<f64>> {
    let t = full_svd(w)?;
    Ok(gradient_from_svd(&t, f))
}

pub(crate) fn gradient_from_svd<F: SpectralFunction + ?Sized>(t: &SvdTriple, f: &F) -> DMatrix<f64> {
    let mut us = t.u.clone();
    for (j, &s) in t.s.iter().enumerate() {
        us.column_mut(j).scale_mut(f.derivative(s));
    }
    us * t.v.transpose()
}

/// Second-order coefficients of a spectral function in the rotated basis
/// `D̃ = Uᵀ Δ V` of a complete SVD. Entry `(i, j)` of `diag` multiplies
/// `D̃_ij²`; `cross[(i, j)]` (for `i < j < k`) multiplies `D̃_ij · D̃_ji`.
struct RotatedHessian {
    diag: DMatrix<f64>,
    cross: DMatrix<f64>,
}

fn rotated_hessian<F: SpectralFunction + ?Sized>(s: &[f64], p: usize, q: usize, f: &F) -> RotatedHessian {
    let k = s.len();
    let mut diag = DMatrix::zeros(p, q);
    let mut cross = DMatrix::zeros(k, k);
    for i in 0..p {
        for j in 0..q {
            diag[(i, j)] = if i < k && j < k {
                if i == j {
                    f.second_derivative(s[i])
                } else {
                    0.5 * (f.divided_difference(s[i], s[j]) + f.sum_quotient(s[i], s[j]))
                }
            } else {
                // one index lies in the zero completion
                f.divided_difference(s[i.min(j)], 0.0)
            };
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            cross[(i, j)] = f.divided_difference(s[i], s[j]) - f.sum_quotient(s[i], s[j]);
        }
    }
    RotatedHessian { diag, cross }
}

/// Hessian quadratic form `⟨Δ, ∇²F(W) Δ⟩` of `F(W) = Σ f(s_i(W))`.
///
/// With `D̃ = Uᵀ Δ V` from a complete SVD and singular values completed by
/// zeros, pairs of distinct indices contribute through both the divided
/// difference `(f'(s_i) − f'(s_j))/(s_i − s_j)` and the sum quotient
/// `(f'(s_i) + f'(s_j))/(s_i + s_j)`; the two coincide on pairs touching the
/// zero completion.
pub fn spectral_hessian_quadratic<F: SpectralFunction + ?Sized>(
    w: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    f: &F,
) -> Result<f64> {
    if w.shape() != delta.shape() {
        return Err(Error::invalid("spectral_hessian_quadratic: shape mismatch"));
    }
    ensure_finite(delta, "direction")?;
    let c = complete_svd(w)?;
    let (p, q) = w.shape();
    let d = c.u.transpose() * delta * &c.v;
    let h = rotated_hessian(&c.s, p, q, f);
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..q {
            total += h.diag[(i, j)] * d[(i, j)] * d[(i, j)];
        }
    }
    for i in 0..c.s.len() {
        for j in (i + 1)..c.s.len() {
            total += h.cross[(i, j)] * d[(i, j)] * d[(j, i)];
        }
    }
    Ok(total)
}

/// The full `pq × pq` Hessian of `Σ f(s_i(W))` acting on `vec(Δ)`.
pub fn spectral_hessian<F: SpectralFunction + ?Sized>(w: &DMatrix<f64>, f: &F) -> Result<DMatrix<f64>> {
    let c = complete_svd(w)?;
    Ok(hessian_from_complete(&c, w.nrows(), w.ncols(), f))
}

pub(crate) fn hessian_from_complete<F: SpectralFunction + ?Sized>(
    c: &CompleteSvd,
    p: usize,
    q: usize,
    f: &F,
) -> DMatrix<f64> {
    let h = rotated_hessian(&c.s, p, q, f);
    let n = p * q;
    let idx = |i: usize, j: usize| i + j * p;
    let mut rot = DMatrix::zeros(n, n);
    for i in 0..p {
        for j in 0..q {
            rot[(idx(i, j), idx(i, j))] = h.diag[(i, j)];
        }
    }
    for i in 0..c.s.len() {
        for j in (i + 1)..c.s.len() {
            let half = 0.5 * h.cross[(i, j)];
            rot[(idx(i, j), idx(j, i))] = half;
            rot[(idx(j, i), idx(i, j))] = half;
        }
    }
    // vec(UᵀΔV) = (V ⊗ U)ᵀ vec(Δ)
    let k = kron(&c.v, &c.u);
    let out = &k * rot * k.transpose();
    linalg::symmetrize(&out)
}

/// Sufficient condition for `rank(W + Δ) > rank(W)`:
/// `(4 / s_r) ‖Δ‖₂² < ‖(I − UUᵀ) Δ (I − VVᵀ)‖₂`.
///
/// `false` does not certify that the rank is preserved.
pub fn rank_increase_certificate(w: &DMatrix<f64>, delta: &DMatrix<f64>, tau: f64) -> Result<bool> {
    if w.shape() != delta.shape() {
        return Err(Error::invalid("rank_increase_certificate: shape mismatch"));
    }
    ensure_finite(delta, "direction")?;
    let t = full_svd_tau(w, tau)?;
    let (p, q) = w.shape();
    let r = t.numerical_rank;
    if r >= p.min(q) {
        return Err(Error::invalid("rank_increase_certificate: W has full rank"));
    }
    if r == 0 {
        return Err(Error::invalid("rank_increase_certificate: W has no positive singular value"));
    }
    let s_r = t.s[r - 1];
    let (u, v) = t.leading(r);
    let pu = DMatrix::identity(p, p) - &u * u.transpose();
    let pv = DMatrix::identity(q, q) - &v * v.transpose();
    let lhs = 4.0 / s_r * spectral_norm(delta).powi(2);
    let rhs = spectral_norm(&(pu * delta * pv));
    Ok(lhs < rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, q, |_, _| rng.sample(StandardNormal))
    }

    // Independent route: singular values as square roots of eig(WᵀW).
    fn eigen_singular_values(w: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = (w.transpose() * w)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&x| x.max(0.0).sqrt())
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn svd_of_zero_and_diagonal() {
        let t = full_svd(&DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(t.s, vec![0.0, 0.0]);
        assert_eq!(t.numerical_rank, 0);
        let t = full_svd(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]))).unwrap();
        assert!((t.s[0] - 4.0).abs() < 1e-14 && (t.s[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn svd_invariants_and_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (p, q) in [(4, 3), (3, 4), (5, 5), (1, 3)] {
            let w = randn(&mut rng, p, q);
            let t = full_svd(&w).unwrap();
            let k = p.min(q);
            assert!((t.u.transpose() * &t.u - DMatrix::<f64>::identity(k, k)).amax() < 1e-10);
            assert!((t.v.transpose() * &t.v - DMatrix::<f64>::identity(k, k)).amax() < 1e-10);
            assert!(t.s.windows(2).all(|w| w[0] >= w[1]));
            assert!((t.reconstruct() - &w).norm() <= 1e-10 * w.norm().max(1.0));
            let oracle = if p >= q { eigen_singular_values(&w) } else { eigen_singular_values(&w.transpose()) };
            for (a, b) in t.s.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!((trace_norm(&w).unwrap() - oracle.iter().sum::<f64>()).abs() < 1e-9);
        }
    }

    #[test]
    fn svd_reconstructs_rank_deficient_products() {
        // low-rank products and Gram matrices tripped the nalgebra SVD
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..6000 {
            let (p, q) = (rng.random_range(1..8), rng.random_range(1..8));
            let r = rng.random_range(0..=p.min(q));
            let a = randn(&mut rng, p, r);
            let w = if t % 2 == 0 { &a * randn(&mut rng, r, q) } else { &a * a.transpose() };
            let s = full_svd(&w).unwrap();
            assert!((s.reconstruct() - &w).norm() <= 1e-13 * w.norm().max(1.0), "{w}");
        }
    }

    #[test]
    fn svd_sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = randn(&mut rng, 4, 3);
        let a = full_svd(&w).unwrap();
        let b = full_svd(&w.clone()).unwrap();
        assert_eq!(a.u, b.u);
        for j in 0..3 {
            let col = a.u.column(j);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = f64::NAN;
        assert!(matches!(full_svd(&w), Err(Error::InvalidInput(_))));
        assert!(trace_norm(&w).is_err());
    }

    #[test]
    fn trace_norm_examples() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((trace_norm(&d).unwrap() - 7.0).abs() < 1e-14);
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        assert!((trace_norm(&(&u * v.transpose())).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(trace_norm(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn dual_norm_equality_case_and_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = randn(&mut rng, 4, 4);
        let t = full_svd(&w).unwrap();
        let v = &t.u * t.v.transpose();
        assert!(dual_norm_check(&w, &v).unwrap().abs() < 1e-12);
        assert_eq!(dual_norm_check(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).unwrap(), 0.0);
        for _ in 0..200 {
            let w = randn(&mut rng, 3, 4);
            let v = randn(&mut rng, 3, 4);
            assert!(dual_norm_check(&w, &v).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn barrier_primal_values() {
        assert_eq!(barrier_primal(0.0), 0.0);
        assert!((barrier_primal(1.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((barrier_primal(-1.0) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(barrier_primal(1.5), f64::INFINITY);
        // mpmath, 50 digits
        let reference = 0.261_624_071_882_273_918_258_403_612_467_f64;
        assert!((barrier_primal(0.5) - reference).abs() < 1e-14);
        assert_eq!(barrier_primal(0.3), barrier_primal(-0.3));
    }

    #[test]
    fn barrier_dual_values() {
        assert_eq!(barrier_dual(0.0, 0.3).unwrap(), 0.0);
        assert!(barrier_dual(1.0, 0.0).is_err());
        assert!(barrier_dual(1.0, -1.0).is_err());
        // mpmath reference for b*(0.7; 0.3)
        let reference = 0.339_643_868_173_474_908_327_412_711_919_f64;
        assert!((barrier_dual(0.7, 0.3).unwrap() - reference).abs() < 1e-15);
        for eps in [1.0, 1e-3] {
            // b*(v) → |v| − 2ε log 2 for v ≫ ε
            let v = 20.0 * eps;
            let gap = barrier_dual(v, eps).unwrap() - (v - 2.0 * eps * std::f64::consts::LN_2);
            assert!(gap.abs() <= 1e-7 * eps, "{gap}");
        }
        for i in 0..=2000 {
            let v = -10.0 + 0.01 * i as f64;
            let b = barrier_dual(v, 1.0).unwrap();
            assert!((b - v.abs()).abs() <= 2.0 * std::f64::consts::LN_2 + 1e-12);
            assert_eq!(b, barrier_dual(-v, 1.0).unwrap());
        }
        // stable far into saturation
        let b = barrier_dual(1.0, 1e-6).unwrap();
        assert!(b.is_finite() && (b - (1.0 - 2e-6 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let f = BarrierSpec::new(0.2).unwrap();
        for &s in &[0.0, 0.05, 0.3, 1.1, 4.0] {
            let h = 1e-5;
            let d1 = (f.value(s + h) - f.value(s - h)) / (2.0 * h);
            assert!((d1 - f.derivative(s)).abs() < 1e-8);
            let d2 = (f.derivative(s + h) - f.derivative(s - h)) / (2.0 * h);
            assert!((d2 - f.second_derivative(s)).abs() < 1e-7);
        }
        // stable divided differences agree with the naive quotient away from coalescence
        for &(a, b) in &[(0.3, 0.1), (2.0, 0.0), (1.0, 0.9)] {
            let naive = (f.derivative(a) - f.derivative(b)) / (a - b);
            assert!((f.divided_difference(a, b) - naive).abs() < 1e-12);
            let naive = (f.derivative(a) + f.derivative(b)) / (a + b);
            assert!((f.sum_quotient(a, b) - naive).abs() < 1e-12);
        }
        assert!((f.divided_difference(0.7, 0.7) - f.second_derivative(0.7)).abs() < 1e-14);
        assert!((f.sum_quotient(0.0, 0.0) - f.second_derivative(0.0)).abs() < 1e-14);
    }

    #[test]
    fn smoothed_trace_norm_bound_and_zero() {
        assert_eq!(smoothed_trace_norm(&DMatrix::zeros(4, 4), 1e-3).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let w = randn(&mut rng, 4, 4);
            let gap = (smoothed_trace_norm(&w, 1e-3).unwrap() - trace_norm(&w).unwrap()).abs();
            // the bound is attained as s/ε → ∞, allow rounding
            assert!(gap <= 2e-3 * std::f64::consts::LN_2 * 4.0 + 1e-12);
        }
    }

    #[test]
    fn frobenius_case_of_gradient_and_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = randn(&mut rng, 4, 3);
        let g = spectral_gradient(&w, &HalfSquare).unwrap();
        assert!((g - &w).amax() < 1e-12);
        let d = randn(&mut rng, 4, 3);
        let hq = spectral_hessian_quadratic(&w, &d, &HalfSquare).unwrap();
        assert!((hq - d.norm_squared()).abs() < 1e-10);
        assert_eq!(spectral_hessian_quadratic(&w, &DMatrix::zeros(4, 3), &HalfSquare).unwrap(), 0.0);
        let h = spectral_hessian(&w, &HalfSquare).unwrap();
        assert!((h - DMatrix::<f64>::identity(12, 12)).amax() < 1e-12);
    }

    #[test]
    fn hessian_matrix_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = BarrierSpec::new(0.3).unwrap();
        for (p, q) in [(4, 4), (3, 5), (5, 2)] {
            let w = randn(&mut rng, p, q);
            let d = randn(&mut rng, p, q);
            let h = spectral_hessian(&w, &f).unwrap();
            let dv = linalg::vec(&d);
            let via_matrix = dv.dot(&(&h * &dv));
            let via_form = spectral_hessian_quadratic(&w, &d, &f).unwrap();
            assert!((via_matrix - via_form).abs() < 1e-10 * via_form.abs().max(1.0));
        }
    }

    #[test]
    fn certificate_edge_cases() {
        let mut w = DMatrix::zeros(4, 4);
        w[(0, 0)] = 3.0;
        w[(1, 1)] = 1.0;
        assert!(!rank_increase_certificate(&w, &DMatrix::zeros(4, 4), DEFAULT_TAU_RANK).unwrap());
        // aligned with the top singular pair: the projected block vanishes
        let mut d = DMatrix::zeros(4, 4);
        d[(0, 0)] = 0.2;
        assert!(!rank_increase_certificate(&w, &d, DEFAULT_TAU_RANK).unwrap());
        let full = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            rank_increase_certificate(&full, &DMatrix::zeros(3, 3), DEFAULT_TAU_RANK),
            Err(Error::InvalidInput(_))
        ));
        let mut d = DMatrix::zeros(4, 4);
        d[(3, 3)] = 1e-3;
        assert!(rank_increase_certificate(&w, &d, DEFAULT_TAU_RANK).unwrap());
    }
}
