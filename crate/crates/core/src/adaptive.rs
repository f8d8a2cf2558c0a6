//! Adaptive estimator with penalty `λ ‖A W B‖_*`.
//!
//! `A = U_LS Diag(s)^{−γ} U_LSᵀ` and `B = V_LS Diag(s)^{−γ} V_LSᵀ` come from the
//! full SVD of the least-squares pilot, with the singular-value vector padded
//! to length p (resp. q) by `n^{−1/2}`. Computed singular values below
//! `n^{−1/2}` are floored to `n^{−1/2}` so that A and B stay well conditioned.
//!
//! The weighted problem is solved exactly by the change of variables
//! `W̃ = A W B`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::problem::EmpiricalMoments;
use crate::par::Execution;
use crate::solver::{path_on_grid, smoothed_solve, PathResult, SolveResult, SolverConfig};
use crate::spectral;

/// `vec(Ŵ_LS) = Σ̂_mm⁻¹ vec(Σ̂_mz)`.
pub fn least_squares_estimate(moments: &EmpiricalMoments) -> Result<DMatrix<f64>> {
    let x = linalg::spd_solve_vec(&moments.sigma_mm, &linalg::vec(&moments.sigma_mz))
        .ok_or_else(|| Error::invalid("least squares requires an invertible second moment"))?;
    Ok(linalg::unvec(&x, moments.p, moments.q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveWeights {
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    pub gamma: f64,
    pub n: usize,
}

impl AdaptiveWeights {
    pub fn identity(p: usize, q: usize) -> Self {
        Self { a: DMatrix::identity(p, p), b: DMatrix::identity(q, q), gamma: 0.0, n: 1 }
    }
}

fn weighted_basis(basis: &DMatrix<f64>, s: &[f64], floor: f64, gamma: f64) -> DMatrix<f64> {
    let d = basis.ncols();
    let mut scaled = basis.clone();
    for j in 0..d {
        let sj = s.get(j).copied().unwrap_or(floor).max(floor);
        scaled.column_mut(j).scale_mut(sj.powf(-gamma));
    }
    linalg::symmetrize(&(scaled * basis.transpose()))
}

pub fn adaptive_weights(w_ls: &DMatrix<f64>, gamma: f64, n: usize) -> Result<AdaptiveWeights> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let full = spectral::complete_svd(w_ls)?;
    let floor = (n as f64).powf(-0.5);
    let a = weighted_basis(&full.u, &full.s, floor, gamma);
    let b = weighted_basis(&full.v, &full.s, floor, gamma);
    Ok(AdaptiveWeights { a, b, gamma, n })
}

fn inverses(weights: &AdaptiveWeights) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ai = linalg::spd_inverse(&weights.a).ok_or_else(|| Error::invalid("A is not positive definite"))?;
    let bi = linalg::spd_inverse(&weights.b).ok_or_else(|| Error::invalid("B is not positive definite"))?;
    Ok((ai, bi))
}

/// Moments of the transformed problem in `W̃ = A W B`:
/// `Σ̃ = (B⁻¹⊗A⁻¹) Σ (B⁻¹⊗A⁻¹)`, `Q̃ = A⁻¹ Q B⁻¹`.
pub fn transformed_moments(moments: &EmpiricalMoments, weights: &AdaptiveWeights) -> Result<EmpiricalMoments> {
    if weights.a.nrows() != moments.p || weights.b.nrows() != moments.q {
        return Err(Error::invalid("weight sizes do not match the problem"));
    }
    let (ai, bi) = inverses(weights)?;
    let t = linalg::kron(&bi, &ai);
    let sigma = linalg::symmetrize(&(&t * &moments.sigma_mm * &t));
    let q = &ai * &moments.sigma_mz * &bi;
    EmpiricalMoments::new(sigma, q, moments.n)
}

/// Minimizes `½ vec(W)ᵀΣvec(W) − tr(WᵀQ) + λ ‖A W B‖_*`.
///
/// The returned `trace`, gap and certificate refer to the transformed problem;
/// `w` and `svd` are those of W. `estimated_rank` is read on W̃, where the
/// solver's rank floor applies; A and B are invertible so the ranks agree.
pub fn adaptive_solve(
    moments: &EmpiricalMoments,
    lambda: f64,
    weights: &AdaptiveWeights,
    config: &SolverConfig,
) -> Result<SolveResult> {
    let tm = transformed_moments(moments, weights)?;
    let (ai, bi) = inverses(weights)?;
    let back = |mut r: SolveResult| -> Result<SolveResult> {
        r.w = &ai * &r.w * &bi;
        r.svd = spectral::full_svd_tau(&r.w, config.tau_rank)?;
        Ok(r)
    };
    match smoothed_solve(&tm, lambda, config, None) {
        Ok(r) => back(r),
        Err(Error::NonConverged { iterations, gap, best }) => Err(Error::NonConverged {
            iterations,
            gap,
            best: match best {
                Some(b) => Some(Box::new(back(*b)?)),
                None => None,
            },
        }),
        Err(e) => Err(e),
    }
}

/// Regularization path of the weighted problem on `grid`, warm-started in
/// the transformed variables and mapped back to W.
pub fn adaptive_path(
    moments: &EmpiricalMoments,
    grid: &[f64],
    weights: &AdaptiveWeights,
    config: &SolverConfig,
) -> Result<PathResult> {
    let tm = transformed_moments(moments, weights)?;
    let (ai, bi) = inverses(weights)?;
    let mut path = path_on_grid(&tm, grid, true, Execution::Sequential, config)?;
    for pt in &mut path.points {
        if let Some(r) = pt.result.as_mut() {
            r.w = &ai * &r.w * &bi;
            r.svd = spectral::full_svd_tau(&r.w, config.tau_rank)?;
        }
    }
    Ok(path)
}

/// `‖A W B‖_*`.
pub fn weighted_trace_norm(w: &DMatrix<f64>, weights: &AdaptiveWeights) -> Result<f64> {
    spectral::trace_norm(&(&weights.a * w * &weights.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{assemble_moments, kkt_residual, quadratic_part, Observation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, q, |_, _| rng.sample(StandardNormal))
    }

    fn noisy_moments(rng: &mut ChaCha8Rng, w: &DMatrix<f64>, n: usize, noise: f64) -> EmpiricalMoments {
        let obs: Vec<Observation> = (0..n)
            .map(|_| {
                let m = randn(rng, w.nrows(), w.ncols());
                let z = m.dot(w) + noise * rng.sample::<f64, _>(StandardNormal);
                Observation::dense(m, z)
            })
            .collect();
        assemble_moments(&obs).unwrap()
    }

    #[test]
    fn least_squares_identity_and_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = randn(&mut rng, 3, 2);
        assert_eq!(least_squares_estimate(&EmpiricalMoments::identity(q.clone())).unwrap(), q);
        let w = randn(&mut rng, 3, 4);
        let mo = noisy_moments(&mut rng, &w, 17, 0.0);
        assert!((least_squares_estimate(&mo).unwrap() - w).norm() <= 1e-8);
        let sing = EmpiricalMoments::new(DMatrix::zeros(6, 6), DMatrix::zeros(3, 2), 1).unwrap();
        assert!(least_squares_estimate(&sing).is_err());
    }

    #[test]
    fn weights_from_zero_and_flat_pilots() {
        let n = 400;
        let w = adaptive_weights(&DMatrix::zeros(3, 2), 0.5, n).unwrap();
        let expect = (n as f64).powf(0.25);
        assert!((&w.a - DMatrix::identity(3, 3) * expect).norm() <= 1e-12);
        assert!((&w.b - DMatrix::identity(2, 2) * expect).norm() <= 1e-12);

        let flat = DMatrix::identity(3, 3) * 2.0;
        let w = adaptive_weights(&flat, 1.0, n).unwrap();
        for ev in linalg::sym_eigenvalues(&w.a) {
            assert!((ev - 0.5).abs() <= 1e-12);
        }
        assert!(adaptive_weights(&flat, 0.0, n).is_err());
        assert!(adaptive_weights(&flat, 1.5, n).is_err());
    }

    #[test]
    fn weights_direct_algebra_for_square_pilot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w_ls = randn(&mut rng, 3, 3) * 3.0;
        let svd = spectral::full_svd(&w_ls).unwrap();
        let wts = adaptive_weights(&w_ls, 1.0, 10_000).unwrap();
        // A W B = U Diag(1/s) Vᵀ
        let got = &wts.a * &w_ls * &wts.b;
        let mut expect = svd.u.clone();
        for (j, s) in svd.s.iter().enumerate() {
            expect.column_mut(j).scale_mut(1.0 / s);
        }
        let expect = expect * svd.v.transpose();
        assert!((got - expect).norm() <= 1e-10);
        assert!(linalg::min_eigenvalue(&wts.a) > 0.0 && linalg::min_eigenvalue(&wts.b) > 0.0);
    }

    #[test]
    fn rectangular_rank_deficient_pilot_is_floored() {
        let w_ls = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1e-9, 0.0, 0.0]);
        let wts = adaptive_weights(&w_ls, 1.0, 100).unwrap();
        let ev = linalg::sym_eigenvalues(&wts.a);
        assert!((ev[0] - 1.0).abs() <= 1e-12);
        assert!((ev[2] - 10.0).abs() <= 1e-12);
        let ev = linalg::sym_eigenvalues(&wts.b);
        assert!((ev[1] - 10.0).abs() <= 1e-12);
    }

    #[test]
    fn identity_weights_reproduce_plain_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = randn(&mut rng, 3, 3);
        let mo = noisy_moments(&mut rng, &w, 60, 0.5);
        let cfg = SolverConfig::default();
        let plain = smoothed_solve(&mo, 0.4, &cfg, None).unwrap();
        let ad = adaptive_solve(&mo, 0.4, &AdaptiveWeights::identity(3, 3), &cfg).unwrap();
        assert!((plain.w - ad.w).norm() <= 1e-10);
        assert_eq!(plain.estimated_rank, ad.estimated_rank);
    }

    #[test]
    fn change_of_variables_is_exact_and_kkt_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = randn(&mut rng, 3, 4);
        let mo = noisy_moments(&mut rng, &w, 80, 0.3);
        let pilot = least_squares_estimate(&mo).unwrap();
        let wts = adaptive_weights(&pilot, 0.5, 80).unwrap();
        let r = adaptive_solve(&mo, 0.05, &wts, &SolverConfig::default()).unwrap();
        let tm = transformed_moments(&mo, &wts).unwrap();
        let wt = &wts.a * &r.w * &wts.b;
        let original = quadratic_part(&r.w, &mo) + 0.05 * weighted_trace_norm(&r.w, &wts).unwrap();
        let transformed = quadratic_part(&wt, &tm) + 0.05 * spectral::trace_norm(&wt).unwrap();
        assert!((original - transformed).abs() <= 1e-10 * original.abs().max(1.0));
        assert!(kkt_residual(&wt, &tm, 0.05, 1e-6).unwrap().optimal);
        assert_eq!(r.svd.s.len(), 3);
    }
}
