//! Rank-consistency diagnostics.
//!
//! For a rank-`r` truth `W = U Diag(s) Vᵀ` and population second moment
//! `Σ_mm`, the trace-norm estimator is rank consistent when `‖Λ‖₂ < 1` and
//! can only be rank consistent when `‖Λ‖₂ ≤ 1`, where
//!
//! ```text
//! vec(Λ) = (Kᵀ Σ⁻¹ K)⁻¹ Kᵀ Σ⁻¹ vec(U Vᵀ),   K = V⊥ ⊗ U⊥.
//! ```
//!
//! Λ depends on the chosen complement bases; `‖Λ‖₂` does not. All reports use
//! the deterministic bases of [`orthogonal_complement`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::problem::{DesignEmbedding, EmpiricalMoments};
use crate::solver::{smoothed_solve, SolverConfig};
use crate::spectral;

/// Relative threshold below which `U⊥ᵀ Δ V⊥` counts as zero.
pub const BLOCK_ZERO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    #[serde(with = "rows")]
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    #[serde(with = "rows")]
    pub v: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_mm: DMatrix<f64>,
    /// `(Σ_xx, Σ_yy)` when `Σ_mm = Σ_yy ⊗ Σ_xx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<KroneckerFactors>,
    pub sigma_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KroneckerFactors {
    #[serde(with = "rows")]
    pub sigma_xx: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_yy: DMatrix<f64>,
}

fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    (u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

impl GroundTruthModel {
    pub fn new(
        u: DMatrix<f64>,
        s: Vec<f64>,
        v: DMatrix<f64>,
        sigma_mm: DMatrix<f64>,
        sigma_noise: f64,
    ) -> Result<Self> {
        let (p, r) = u.shape();
        let q = v.nrows();
        if v.ncols() != r || s.len() != r {
            return Err(Error::invalid("U, s, V have inconsistent ranks"));
        }
        if r == 0 || r >= p.min(q) {
            return Err(Error::invalid(format!("rank must satisfy 0 < r < min(p, q), got r = {r}")));
        }
        if s.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("singular values must be positive and finite"));
        }
        if orthonormality_defect(&u) > 1e-8 || orthonormality_defect(&v) > 1e-8 {
            return Err(Error::invalid("U and V must have orthonormal columns"));
        }
        if sigma_mm.shape() != (p * q, p * q) {
            return Err(Error::invalid("sigma_mm must be pq × pq"));
        }
        linalg::ensure_finite(&sigma_mm, "sigma_mm")?;
        if !(sigma_noise >= 0.0) {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        Ok(Self { u, s, v, sigma_mm: linalg::symmetrize(&sigma_mm), factors: None, sigma_noise })
    }

    pub fn from_factors(
        u: DMatrix<f64>,
        s: Vec<f64>,
        v: DMatrix<f64>,
        sigma_xx: DMatrix<f64>,
        sigma_yy: DMatrix<f64>,
        sigma_noise: f64,
    ) -> Result<Self> {
        if sigma_xx.nrows() != u.nrows() || sigma_yy.nrows() != v.nrows() {
            return Err(Error::invalid("factor sizes do not match U, V"));
        }
        let sigma_mm = linalg::kron(&sigma_yy, &sigma_xx);
        let mut m = Self::new(u, s, v, sigma_mm, sigma_noise)?;
        m.factors = Some(KroneckerFactors { sigma_xx, sigma_yy });
        Ok(m)
    }

    pub fn p(&self) -> usize {
        self.u.nrows()
    }

    pub fn q(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn w(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    pub fn complements(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (linalg::orthonormal_completion(&self.u), linalg::orthonormal_completion(&self.v))
    }

    /// Population `Σ_mz = Σ_mm vec(W)` as a p×q matrix.
    pub fn population_q(&self) -> DMatrix<f64> {
        linalg::unvec(&(&self.sigma_mm * linalg::vec(&self.w())), self.p(), self.q())
    }

    pub fn population_moments(&self) -> Result<EmpiricalMoments> {
        EmpiricalMoments::new(self.sigma_mm.clone(), self.population_q(), usize::MAX)
    }
}

/// Orthonormal `U⊥` with `[U, U⊥]` orthogonal; `r = 0` gives the identity.
pub fn orthogonal_complement(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if u.ncols() > u.nrows() {
        return Err(Error::invalid("U has more columns than rows"));
    }
    if u.ncols() > 0 && orthonormality_defect(u) > 1e-8 {
        return Err(Error::invalid("U must have orthonormal columns"));
    }
    Ok(linalg::orthonormal_completion(u))
}

/// Λ, the constrained minimizer Δ, and the saddle-system residual.
#[derive(Debug, Clone)]
pub struct LambdaSolution {
    pub lambda: DMatrix<f64>,
    /// Minimizer of `½ vec(Δ)ᵀΣvec(Δ) + tr(UᵀΔV)` subject to `U⊥ᵀΔV⊥ = 0`.
    pub delta: DMatrix<f64>,
    /// `‖A x − b‖₂` for the saddle system.
    pub residual: f64,
}

fn ensure_invertible(sigma: &DMatrix<f64>, what: &str) -> Result<()> {
    let ev = linalg::sym_eigenvalues(sigma);
    let (lo, hi) = (ev[0], *ev.last().unwrap());
    if !(lo > 1e-12 * hi.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid(format!("{what} is not positive definite (min eigenvalue {lo:e})")));
    }
    Ok(())
}

/// Solves
///
/// ```text
/// [ Σ   K ] [vec Δ]   [−vec(UVᵀ)]
/// [ Kᵀ  0 ] [  μ  ] = [    0    ]
/// ```
///
/// by pivoted LU; the multiplier is `μ = −vec(Λ)`.
pub fn lambda_matrix(model: &GroundTruthModel) -> Result<LambdaSolution> {
    ensure_invertible(&model.sigma_mm, "sigma_mm")?;
    let (up, vp) = model.complements();
    let (p, q) = (model.p(), model.q());
    let k = linalg::kron(&vp, &up);
    let (d, c) = (p * q, k.ncols());
    let mut a = DMatrix::zeros(d + c, d + c);
    a.view_mut((0, 0), (d, d)).copy_from(&model.sigma_mm);
    a.view_mut((0, d), (d, c)).copy_from(&k);
    a.view_mut((d, 0), (c, d)).copy_from(&k.transpose());
    let mut b = DVector::zeros(d + c);
    let uv = linalg::vec(&(&model.u * model.v.transpose()));
    b.rows_mut(0, d).copy_from(&(-&uv));
    let x = a
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::invalid("saddle system is singular"))?;
    let residual = (&a * &x - &b).norm();
    let delta = linalg::unvec(&x.rows(0, d).into_owned(), p, q);
    let lambda = linalg::unvec(&(-x.rows(d, c).into_owned()), p - model.rank(), q - model.rank());
    Ok(LambdaSolution { lambda, delta, residual })
}

/// Explicit formula `(KᵀΣ⁻¹K)⁻¹ KᵀΣ⁻¹ vec(UVᵀ)` for given complement bases.
pub fn lambda_matrix_explicit(
    sigma_mm: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    u_perp: &DMatrix<f64>,
    v_perp: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let inv = linalg::spd_inverse(sigma_mm).ok_or_else(|| Error::invalid("sigma_mm is not positive definite"))?;
    let k = linalg::kron(v_perp, u_perp);
    let kt_inv = k.transpose() * inv;
    let lhs = &kt_inv * &k;
    let rhs = kt_inv * linalg::vec(&(u * v.transpose()));
    let x = linalg::spd_solve_vec(&lhs, &rhs).ok_or_else(|| Error::invalid("KᵀΣ⁻¹K is singular"))?;
    Ok(linalg::unvec(&x, u_perp.ncols(), v_perp.ncols()))
}

/// The two closed forms of Λ for `Σ_mm = Σ_yy ⊗ Σ_xx`:
/// the inverse-weighted form and the partitioned form
/// `(U⊥ᵀΣ_xxU)(UᵀΣ_xxU)⁻¹ (VᵀΣ_yyV)⁻¹(VᵀΣ_yyV⊥)`.
pub fn lambda_matrix_factored_forms(
    sigma_xx: &DMatrix<f64>,
    sigma_yy: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    u_perp: &DMatrix<f64>,
    v_perp: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !linalg::all_finite(sigma_xx) || !linalg::all_finite(sigma_yy) {
        return Err(Error::invalid("non-finite covariance"));
    }
    let not_pd = || Error::invalid("sigma_xx and sigma_yy must be positive definite");
    let ix = linalg::spd_inverse(sigma_xx).ok_or_else(not_pd)?;
    let iy = linalg::spd_inverse(sigma_yy).ok_or_else(not_pd)?;
    let left = linalg::spd_solve(&(u_perp.transpose() * &ix * u_perp), &(u_perp.transpose() * &ix * u)).ok_or_else(not_pd)?;
    let right_t = linalg::spd_solve(&(v_perp.transpose() * &iy * v_perp), &(v_perp.transpose() * &iy * v)).ok_or_else(not_pd)?;
    let inverse_form = left * right_t.transpose();

    let a = linalg::spd_solve(&(u.transpose() * sigma_xx * u), &(u.transpose() * sigma_xx * u_perp)).ok_or_else(not_pd)?;
    let b = linalg::spd_solve(&(v.transpose() * sigma_yy * v), &(v.transpose() * sigma_yy * v_perp)).ok_or_else(not_pd)?;
    let partitioned = a.transpose() * b;
    Ok((inverse_form, partitioned))
}

/// Λ for a Kronecker-structured second moment.
pub fn lambda_matrix_factored(
    sigma_xx: &DMatrix<f64>,
    sigma_yy: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    u_perp: &DMatrix<f64>,
    v_perp: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (a, b) = lambda_matrix_factored_forms(sigma_xx, sigma_yy, u, v, u_perp, v_perp)?;
    let gap = (&a - &b).norm();
    if gap > 1e-8 * (1.0 + a.norm()) {
        log::warn!("factored Λ forms disagree by {gap:e}; inputs are badly conditioned");
    }
    Ok(a)
}

/// Λ when covariates are restricted to `vec(M) = H x`, with
/// `sigma_reduced = HᵀΣ_mmH` invertible and a pseudo-inverse on the
/// leading factor.
pub fn lambda_matrix_design(
    embedding: &DesignEmbedding,
    sigma_reduced: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    u_perp: &DMatrix<f64>,
    v_perp: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let h = &embedding.h;
    let s = h.ncols();
    if sigma_reduced.shape() != (s, s) {
        return Err(Error::invalid("sigma_reduced must be s × s"));
    }
    if u.nrows() != embedding.p || v.nrows() != embedding.q {
        return Err(Error::invalid("singular vectors do not match the embedding shape"));
    }
    ensure_invertible(sigma_reduced, "sigma_reduced")?;
    let k = linalg::kron(v_perp, u_perp);
    let kh = k.transpose() * h;
    let m = linalg::spd_solve(sigma_reduced, &h.transpose()).ok_or_else(|| Error::invalid("sigma_reduced is singular"))?;
    let khm = &kh * m;
    let lead = &khm * &k;
    let rhs = khm * linalg::vec(&(u * v.transpose()));
    // lead is rank deficient whenever the design leaves directions unpenalized
    let t = spectral::full_svd(&lead)?;
    let tol = 1e-10 * t.s.first().copied().unwrap_or(0.0);
    let mut coef = t.u.transpose() * rhs;
    for (c, &s) in coef.iter_mut().zip(&t.s) {
        *c = if s > tol { *c / s } else { 0.0 };
    }
    Ok(linalg::unvec(&(&t.v * coef), u_perp.ncols(), v_perp.ncols()))
}

/// `max_{i ∉ J} ‖Σ_{x_i x_J} Σ_{x_J x_J}⁻¹ η_J‖` with `η_j = w_j / ‖w_j‖`.
pub fn group_lasso_lambda_norm(
    sigma_xx: &DMatrix<f64>,
    group_sizes: &[usize],
    w_truth: &DVector<f64>,
    active: &[usize],
) -> Result<f64> {
    let total: usize = group_sizes.iter().sum();
    if sigma_xx.shape() != (total, total) || w_truth.len() != total {
        return Err(Error::invalid("sigma_xx and w_truth must match the group sizes"));
    }
    if active.is_empty() {
        return Err(Error::invalid("active group set is empty"));
    }
    let mut offsets = vec![0usize];
    for d in group_sizes {
        offsets.push(offsets.last().unwrap() + d);
    }
    let block = |j: usize| offsets[j]..offsets[j + 1];
    for j in 0..group_sizes.len() {
        let nrm = w_truth.rows(offsets[j], group_sizes[j]).norm();
        let is_active = active.contains(&j);
        if is_active && nrm == 0.0 {
            return Err(Error::invalid(format!("active group {j} has a zero loading")));
        }
        if !is_active && nrm != 0.0 {
            return Err(Error::invalid(format!("inactive group {j} has a nonzero loading")));
        }
    }
    let jidx: Vec<usize> = active.iter().flat_map(|&j| block(j)).collect();
    let mut eta = DVector::zeros(jidx.len());
    let mut pos = 0;
    for &j in active {
        let wj = w_truth.rows(offsets[j], group_sizes[j]);
        eta.rows_mut(pos, group_sizes[j]).copy_from(&(wj / wj.norm()));
        pos += group_sizes[j];
    }
    let sjj = sigma_xx.select_rows(&jidx).select_columns(&jidx);
    let x = linalg::spd_solve_vec(&sjj, &eta).ok_or_else(|| Error::invalid("active covariance block is singular"))?;
    let mut best = 0.0f64;
    for i in (0..group_sizes.len()).filter(|i| !active.contains(i)) {
        let rows: Vec<usize> = block(i).collect();
        let sij = sigma_xx.select_rows(&rows).select_columns(&jidx);
        best = best.max((sij * &x).norm());
    }
    Ok(best)
}

/// Minimizer of
///
/// ```text
/// ½ vec(Δ)ᵀ Σ vec(Δ) + tr(UᵀΔV) + ‖U⊥ᵀ Δ V⊥‖_*
/// ```
///
/// in closed form when `‖Λ‖₂ ≤ 1`, numerically otherwise.
pub fn limiting_delta(model: &GroundTruthModel) -> Result<DMatrix<f64>> {
    let sol = lambda_matrix(model)?;
    if spectral::spectral_norm(&sol.lambda) <= 1.0 {
        Ok(sol.delta)
    } else {
        limiting_delta_numerical(model, &SolverConfig::default())
    }
}

/// Numerical minimizer of the limiting objective, for any `‖Λ‖₂`.
///
/// In the rotated coordinates `D = [U U⊥]ᵀ Δ [V V⊥]` only the block
/// `Y = D₂₂` carries the trace norm; the remaining entries enter a quadratic
/// and are eliminated exactly, leaving a standard trace-norm problem in `Y`
/// with λ = 1.
pub fn limiting_delta_numerical(model: &GroundTruthModel, config: &SolverConfig) -> Result<DMatrix<f64>> {
    let (reduced, parts) = reduced_limiting_problem(model)?;
    let y = match smoothed_solve(&reduced, 1.0, config, None) {
        Ok(r) => r.w,
        Err(Error::NonConverged { best: Some(b), gap, .. }) => {
            log::warn!("limiting correction solve stopped early (gap {gap:e})");
            b.w
        }
        Err(e) => return Err(e),
    };
    Ok(parts.assemble(&y))
}

struct ReducedParts {
    rot: DMatrix<f64>,
    block: Vec<usize>,
    free: Vec<usize>,
    a_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    p: usize,
    q: usize,
}

impl ReducedParts {
    fn assemble(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let yv = linalg::vec(y);
        let x = -self.a_chol.solve(&(&self.c + &self.b * &yv));
        let mut d = DVector::zeros(self.p * self.q);
        for (k, &i) in self.free.iter().enumerate() {
            d[i] = x[k];
        }
        for (k, &i) in self.block.iter().enumerate() {
            d[i] = yv[k];
        }
        linalg::unvec(&(&self.rot * d), self.p, self.q)
    }
}

fn reduced_limiting_problem(model: &GroundTruthModel) -> Result<(EmpiricalMoments, ReducedParts)> {
    ensure_invertible(&model.sigma_mm, "sigma_mm")?;
    let (p, q, r) = (model.p(), model.q(), model.rank());
    let (up, vp) = model.complements();
    let rl = linalg::hstack(&model.u, &up);
    let rr = linalg::hstack(&model.v, &vp);
    let rot = linalg::kron(&rr, &rl);
    let sig = rot.transpose() * &model.sigma_mm * &rot;
    // vec(UVᵀ) in rotated coordinates is the identity on the leading r×r block
    let mut lin = DMatrix::zeros(p, q);
    for i in 0..r {
        lin[(i, i)] = 1.0;
    }
    let lin = linalg::vec(&lin);
    let (mut block, mut free) = (Vec::new(), Vec::new());
    for j in 0..q {
        for i in 0..p {
            if i >= r && j >= r {
                block.push(i + j * p);
            } else {
                free.push(i + j * p);
            }
        }
    }
    let a = sig.select_rows(&free).select_columns(&free);
    let b = sig.select_rows(&free).select_columns(&block);
    let cblk = sig.select_rows(&block).select_columns(&block);
    let c = DVector::from_iterator(free.len(), free.iter().map(|&i| lin[i]));
    let a_chol = a.cholesky().ok_or_else(|| Error::invalid("sigma_mm is not positive definite"))?;
    let schur = linalg::symmetrize(&(&cblk - b.transpose() * a_chol.solve(&b)));
    let q_red = linalg::unvec(&(b.transpose() * a_chol.solve(&c)), p - r, q - r);
    let moments = EmpiricalMoments::new(schur, q_red, usize::MAX)?;
    Ok((moments, ReducedParts { rot, block, free, a_chol, b, c, p, q }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Λ in the deterministic complement bases.
    #[serde(with = "rows")]
    pub lambda: DMatrix<f64>,
    pub lambda_norm: f64,
    pub weak_ok: bool,
    pub strict_ok: bool,
    /// `‖Λ‖₂` within the margin of 1, where neither condition decides.
    pub boundary: bool,
    pub margin: f64,
    #[serde(with = "rows")]
    pub delta: DMatrix<f64>,
    pub saddle_residual: f64,
}

pub const DEFAULT_MARGIN: f64 = 1e-8;

pub fn check_conditions(model: &GroundTruthModel, margin: f64) -> Result<ConsistencyReport> {
    if !(margin >= 0.0) {
        return Err(Error::invalid("margin must be nonnegative"));
    }
    let sol = lambda_matrix(model)?;
    let lambda_norm = spectral::spectral_norm(&sol.lambda);
    let delta = if lambda_norm <= 1.0 { sol.delta.clone() } else { limiting_delta_numerical(model, &SolverConfig::default())? };
    let strict_ok = lambda_norm < 1.0 - margin;
    let weak_ok = lambda_norm <= 1.0 + margin;
    Ok(ConsistencyReport {
        lambda: sol.lambda,
        lambda_norm,
        weak_ok,
        strict_ok,
        boundary: weak_ok && !strict_ok,
        margin,
        delta,
        saddle_residual: sol.residual,
    })
}

/// `‖U⊥ᵀ Δ V⊥‖₂`.
pub fn complement_block_norm(model: &GroundTruthModel, delta: &DMatrix<f64>) -> f64 {
    let (up, vp) = model.complements();
    spectral::spectral_norm(&(up.transpose() * delta * vp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{embed_design, DesignKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, q, |_, _| rng.sample(StandardNormal))
    }

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let g = randn(rng, d, d);
        g.transpose() * g / d as f64 + DMatrix::identity(d, d) * 0.2
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, p: usize, r: usize) -> DMatrix<f64> {
        randn(rng, p, r).qr().q().columns(0, r).into_owned()
    }

    fn random_model(rng: &mut ChaCha8Rng, p: usize, q: usize, r: usize) -> GroundTruthModel {
        let u = random_orthonormal(rng, p, r);
        let v = random_orthonormal(rng, q, r);
        let s = (0..r).map(|i| 1.0 + i as f64).collect();
        GroundTruthModel::new(u, s, v, random_pd(rng, p * q), 1.0).unwrap()
    }

    #[test]
    fn complement_examples() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = orthogonal_complement(&e1).unwrap();
        assert!((c - DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).norm() <= 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_orthonormal(&mut rng, 4, 2);
        let c = orthogonal_complement(&u).unwrap();
        assert!((u.transpose() * &c).norm() <= 1e-12);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).norm() <= 1e-12);
        assert_eq!(orthogonal_complement(&DMatrix::zeros(3, 0)).unwrap(), DMatrix::identity(3, 3));
        assert!(orthogonal_complement(&(u * 2.0)).is_err());
    }

    #[test]
    fn scaled_identity_gives_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = random_model(&mut rng, 4, 3, 1);
        m.sigma_mm = DMatrix::identity(12, 12) * 2.5;
        let sol = lambda_matrix(&m).unwrap();
        assert!(sol.lambda.norm() <= 1e-12);
        let delta = limiting_delta(&m).unwrap();
        assert!((&delta + &m.u * m.v.transpose() / 2.5).norm() <= 1e-12);
        let rep = check_conditions(&m, DEFAULT_MARGIN).unwrap();
        assert!(rep.weak_ok && rep.strict_ok && !rep.boundary);
        assert!(rep.lambda_norm <= 1e-12);
    }

    #[test]
    fn saddle_solution_matches_explicit_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let m = random_model(&mut rng, 4, 3, 1);
            let sol = lambda_matrix(&m).unwrap();
            let (up, vp) = m.complements();
            let explicit = lambda_matrix_explicit(&m.sigma_mm, &m.u, &m.v, &up, &vp).unwrap();
            assert!((&sol.lambda - &explicit).norm() <= 1e-10 * (1.0 + explicit.norm()));
            assert!(sol.residual <= 1e-10 * (1.0 + spectral::spectral_norm(&m.sigma_mm)));
            // constrained Δ closed form
            let rhs = linalg::vec(&(&m.u * m.v.transpose() - &up * &sol.lambda * vp.transpose()));
            let d = -linalg::spd_solve_vec(&m.sigma_mm, &rhs).unwrap();
            assert!((linalg::vec(&sol.delta) - d).norm() <= 1e-10);
            assert!((up.transpose() * &sol.delta * &vp).norm() <= 1e-10);
        }
    }

    #[test]
    fn factored_forms_agree_with_general_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, q, r) = (4, 3, 1);
        let u = random_orthonormal(&mut rng, p, r);
        let v = random_orthonormal(&mut rng, q, r);
        let (sxx, syy) = (random_pd(&mut rng, p), random_pd(&mut rng, q));
        let m = GroundTruthModel::from_factors(u.clone(), vec![1.0], v.clone(), sxx.clone(), syy.clone(), 1.0).unwrap();
        let (up, vp) = m.complements();
        let (a, b) = lambda_matrix_factored_forms(&sxx, &syy, &u, &v, &up, &vp).unwrap();
        assert!((&a - &b).norm() <= 1e-10 * (1.0 + a.norm()));
        let general = lambda_matrix(&m).unwrap().lambda;
        assert!((&a - &general).norm() <= 1e-10 * (1.0 + a.norm()));
        let id = lambda_matrix_factored(&DMatrix::identity(p, p), &DMatrix::identity(q, q), &u, &v, &up, &vp).unwrap();
        assert!(id.norm() <= 1e-14);
        assert!(lambda_matrix_factored(&(-sxx), &syy, &u, &v, &up, &vp).is_err());
    }

    #[test]
    fn norm_is_basis_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 4, 4, 2);
        let (up, vp) = m.complements();
        let base = lambda_matrix_explicit(&m.sigma_mm, &m.u, &m.v, &up, &vp).unwrap();
        let ru = random_orthonormal(&mut rng, 2, 2);
        let rv = random_orthonormal(&mut rng, 2, 2);
        let rotated = lambda_matrix_explicit(&m.sigma_mm, &m.u, &m.v, &(&up * &ru), &(&vp * &rv)).unwrap();
        assert!((spectral::spectral_norm(&base) - spectral::spectral_norm(&rotated)).abs() <= 1e-10);
        assert!((ru.transpose() * &base * &rv - rotated).norm() <= 1e-10);
    }

    #[test]
    fn design_route_reduces_to_general_for_full_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 3, 3, 1);
        let (up, vp) = m.complements();
        let emb = DesignEmbedding::full(3, 3);
        let d = lambda_matrix_design(&emb, &m.sigma_mm, &m.u, &m.v, &up, &vp).unwrap();
        let g = lambda_matrix(&m).unwrap().lambda;
        assert!((d - g).norm() <= 1e-12 * 100.0);
    }

    fn group_instance(
        rng: &mut ChaCha8Rng,
        sizes: &[usize],
        active: &[usize],
        sxx: &DMatrix<f64>,
    ) -> (DesignEmbedding, DVector<f64>, f64) {
        let kind = if sizes.iter().all(|&d| d == 1) { DesignKind::Lasso } else { DesignKind::GroupLasso };
        let emb = embed_design(kind, sizes).unwrap();
        let total: usize = sizes.iter().sum();
        let mut w = DVector::zeros(total);
        let mut off = 0;
        for (j, &d) in sizes.iter().enumerate() {
            if active.contains(&j) {
                for t in 0..d {
                    w[off + t] = rng.sample::<f64, _>(StandardNormal) + 0.5f64.copysign(rng.random::<f64>() - 0.5);
                }
            }
            off += d;
        }
        let wm = linalg::unvec(&(&emb.h * &w), emb.p, emb.q);
        let svd = spectral::full_svd(&wm).unwrap();
        let r = active.len();
        let (u, v) = svd.leading(r);
        let up = linalg::orthonormal_completion(&u);
        let vp = linalg::orthonormal_completion(&v);
        let lam = lambda_matrix_design(&emb, sxx, &u, &v, &up, &vp).unwrap();
        (emb, w, spectral::spectral_norm(&lam))
    }

    #[test]
    fn group_lasso_closed_form_matches_design_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sizes = [2, 1, 3, 2];
        let active = [0, 2];
        let sxx = random_pd(&mut rng, 8);
        let (_, w, design_norm) = group_instance(&mut rng, &sizes, &active, &sxx);
        let closed = group_lasso_lambda_norm(&sxx, &sizes, &w, &active).unwrap();
        assert!((closed - design_norm).abs() <= 1e-10 * (1.0 + closed), "{closed} vs {design_norm}");

        let mut block = sxx.clone();
        for i in 0..8 {
            for j in 0..8 {
                let gi = if i < 2 { 0 } else if i < 3 { 1 } else if i < 6 { 2 } else { 3 };
                let gj = if j < 2 { 0 } else if j < 3 { 1 } else if j < 6 { 2 } else { 3 };
                if gi != gj {
                    block[(i, j)] = 0.0;
                }
            }
        }
        assert_eq!(group_lasso_lambda_norm(&block, &sizes, &w, &active).unwrap(), 0.0);
        assert!(group_lasso_lambda_norm(&sxx, &sizes, &w, &[0]).is_err());
    }

    #[test]
    fn lasso_case_is_the_irrepresentable_quantity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sizes = [1; 5];
        let active = [1, 3];
        let sxx = random_pd(&mut rng, 5);
        let (_, w, design_norm) = group_instance(&mut rng, &sizes, &active, &sxx);
        // direct evaluation: max_i |Σ_iJ Σ_JJ⁻¹ sign(w_J)|
        let j = [1usize, 3];
        let sjj = DMatrix::from_fn(2, 2, |a, b| sxx[(j[a], j[b])]);
        let sign = DVector::from_fn(2, |a, _| w[j[a]].signum());
        let x = sjj.lu().solve(&sign).unwrap();
        let direct = [0usize, 2, 4]
            .iter()
            .map(|&i| (sxx[(i, 1)] * x[0] + sxx[(i, 3)] * x[1]).abs())
            .fold(0.0, f64::max);
        let closed = group_lasso_lambda_norm(&sxx, &sizes, &w, &active).unwrap();
        assert!((closed - direct).abs() <= 1e-12);
        assert!((closed - design_norm).abs() <= 1e-10);
        let (_, _, ident) = group_instance(&mut rng, &sizes, &active, &DMatrix::identity(5, 5));
        assert!(ident <= 1e-12);
    }

    #[test]
    fn reduced_problem_linear_term_is_minus_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_model(&mut rng, 4, 3, 1);
        let (reduced, _) = reduced_limiting_problem(&m).unwrap();
        let lam = lambda_matrix(&m).unwrap().lambda;
        assert!((&reduced.sigma_mz + &lam).norm() <= 1e-10 * (1.0 + lam.norm()));
    }

    #[test]
    fn limiting_delta_closed_form_matches_numerical_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut checked = 0;
        while checked < 3 {
            let m = random_model(&mut rng, 3, 3, 1);
            let sol = lambda_matrix(&m).unwrap();
            if spectral::spectral_norm(&sol.lambda) > 0.95 {
                continue;
            }
            let num = limiting_delta_numerical(&m, &SolverConfig::default()).unwrap();
            assert!((&num - &sol.delta).norm() <= 1e-6, "{}", (&num - &sol.delta).norm());
            checked += 1;
        }
    }

    #[test]
    fn report_serializes_lambda_row_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 3, 4, 1);
        let rep = check_conditions(&m, DEFAULT_MARGIN).unwrap();
        let js = serde_json::to_value(&rep).unwrap();
        let rows = js["lambda"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].as_array().unwrap().len(), 3);
        assert_eq!(rows[1][0].as_f64().unwrap(), rep.lambda[(1, 0)]);
        let back: GroundTruthModel = serde_json::from_value(serde_json::to_value(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn boundary_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 3, 3, 1);
        let rep = check_conditions(&m, DEFAULT_MARGIN).unwrap();
        let margin = (rep.lambda_norm - 1.0).abs() + 1e-3;
        let wide = check_conditions(&m, margin).unwrap();
        assert!(wide.weak_ok && !wide.strict_ok && wide.boundary);
        assert!(check_conditions(&m, -1.0).is_err());
    }

    #[test]
    fn invalid_models_rejected() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let full = DMatrix::identity(2, 2);
        assert!(GroundTruthModel::new(full.clone(), vec![1.0, 1.0], full, DMatrix::identity(4, 4), 1.0).is_err());
        assert!(GroundTruthModel::new(u.clone(), vec![-1.0], u.clone(), DMatrix::identity(4, 4), 1.0).is_err());
        let m = GroundTruthModel::new(u.clone(), vec![1.0], u, DMatrix::zeros(4, 4), 1.0).unwrap();
        assert!(lambda_matrix(&m).is_err());
    }
}
