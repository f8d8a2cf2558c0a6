//! Observations, their sufficient statistics, objectives and optimality
//! checks, and the design embeddings that recover the Lasso and group Lasso.

pub mod io;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CompensatedSum};
use crate::par::{self, Execution};
use crate::spectral::{self, DEFAULT_TAU_RANK};

/// Covariate matrix of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariate {
    Dense(DMatrix<f64>),
    /// `M = x yᵀ`.
    Factored { x: DVector<f64>, y: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub covariate: Covariate,
    pub z: f64,
}

impl Observation {
    pub fn dense(m: DMatrix<f64>, z: f64) -> Self {
        Self { covariate: Covariate::Dense(m), z }
    }

    pub fn factored(x: DVector<f64>, y: DVector<f64>, z: f64) -> Self {
        Self { covariate: Covariate::Factored { x, y }, z }
    }

    pub fn dims(&self) -> (usize, usize) {
        match &self.covariate {
            Covariate::Dense(m) => m.shape(),
            Covariate::Factored { x, y } => (x.len(), y.len()),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.covariate {
            Covariate::Dense(m) => m.clone(),
            Covariate::Factored { x, y } => x * y.transpose(),
        }
    }

    /// `vec(M)`; for factored covariates this is `y ⊗ x`.
    pub fn vec_m(&self) -> DVector<f64> {
        match &self.covariate {
            Covariate::Dense(m) => linalg::vec(m),
            Covariate::Factored { x, y } => {
                let p = x.len();
                DVector::from_fn(p * y.len(), |k, _| x[k % p] * y[k / p])
            }
        }
    }

    /// `tr(Wᵀ M)`.
    pub fn predict(&self, w: &DMatrix<f64>) -> f64 {
        match &self.covariate {
            Covariate::Dense(m) => w.dot(m),
            Covariate::Factored { x, y } => (x.transpose() * w * y)[(0, 0)],
        }
    }

    fn is_finite(&self) -> bool {
        self.z.is_finite()
            && match &self.covariate {
                Covariate::Dense(m) => linalg::all_finite(m),
                Covariate::Factored { x, y } => x.iter().chain(y.iter()).all(|v| v.is_finite()),
            }
    }
}

/// Sufficient statistics `(Σ̂_mm, Σ̂_Mz)` of a matrix regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    /// `(1/n) Σ vec(M_i) vec(M_i)ᵀ`, `pq × pq`.
    pub sigma_mm: DMatrix<f64>,
    /// `(1/n) Σ z_i M_i`, `p × q`.
    pub sigma_mz: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

impl EmpiricalMoments {
    pub fn new(sigma_mm: DMatrix<f64>, sigma_mz: DMatrix<f64>, n: usize) -> Result<Self> {
        let (p, q) = sigma_mz.shape();
        if sigma_mm.shape() != (p * q, p * q) {
            return Err(Error::invalid(format!(
                "sigma_mm is {:?}, expected {}x{}",
                sigma_mm.shape(),
                p * q,
                p * q
            )));
        }
        linalg::ensure_finite(&sigma_mm, "sigma_mm")?;
        linalg::ensure_finite(&sigma_mz, "sigma_mz")?;
        let scale = sigma_mm.amax().max(1.0);
        if linalg::asymmetry(&sigma_mm) > 1e-12 * scale {
            return Err(Error::invalid("sigma_mm is not symmetric"));
        }
        Ok(Self { sigma_mm, sigma_mz, n, p, q })
    }

    /// Moments with `Σ̂_mm = I`.
    pub fn identity(sigma_mz: DMatrix<f64>) -> Self {
        let (p, q) = sigma_mz.shape();
        Self { sigma_mm: DMatrix::identity(p * q, p * q), sigma_mz, n: 0, p, q }
    }

    pub fn dim(&self) -> usize {
        self.p * self.q
    }
}

const SHARD: usize = 512;

/// Averages `vec(M_i) vec(M_i)ᵀ` and `z_i M_i` with compensated summation.
///
/// Shards of fixed size are accumulated independently and merged in order,
/// so the result does not depend on the execution mode.
pub fn assemble_moments(observations: &[Observation]) -> Result<EmpiricalMoments> {
    assemble_moments_with(observations, Execution::default())
}

pub fn assemble_moments_with(observations: &[Observation], exec: Execution) -> Result<EmpiricalMoments> {
    let first = observations.first().ok_or_else(|| Error::invalid("no observations"))?;
    let (p, q) = first.dims();
    if p == 0 || q == 0 {
        return Err(Error::invalid("empty covariate matrix"));
    }
    for (i, o) in observations.iter().enumerate() {
        if o.dims() != (p, q) {
            return Err(Error::invalid(format!("observation {i} is {:?}, expected {p}x{q}", o.dims())));
        }
        if !o.is_finite() {
            return Err(Error::invalid(format!("observation {i} has non-finite entries")));
        }
    }
    let d = p * q;
    let shards = observations.len().div_ceil(SHARD);
    let partials = par::map_indexed(shards, exec, |s| {
        let chunk = &observations[s * SHARD..((s + 1) * SHARD).min(observations.len())];
        let mut mm = CompensatedSum::zeros(d * d);
        let mut mz = CompensatedSum::zeros(d);
        for o in chunk {
            let m = o.vec_m();
            for j in 0..d {
                let mj = m[j];
                if mj == 0.0 {
                    continue;
                }
                for i in 0..=j {
                    mm.add(i + j * d, m[i] * mj);
                }
                mz.add(j, o.z * mj);
            }
        }
        (mm, mz)
    });
    let mut iter = partials.into_iter();
    let (mut mm, mut mz) = iter.next().expect("at least one shard");
    for (a, b) in iter {
        mm.merge(&a);
        mz.merge(&b);
    }
    let n = observations.len();
    let inv_n = 1.0 / n as f64;
    let upper = mm.values();
    let mut sigma = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            let v = upper[i + j * d] * inv_n;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    let q_vec = DVector::from_vec(mz.values()) * inv_n;
    Ok(EmpiricalMoments { sigma_mm: sigma, sigma_mz: linalg::unvec(&q_vec, p, q), n, p, q })
}

/// Objective values at a candidate `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// `½ vec(W)ᵀ Σ̂_mm vec(W) − tr(Wᵀ Σ̂_Mz) + λ‖W‖_*`
    pub moment_form: f64,
    /// `(1/2n) Σ (z_i − tr(Wᵀ M_i))² + λ‖W‖_*` when raw data is supplied.
    pub residual_form: Option<f64>,
    /// `(1/2n) Σ z_i²`, the constant separating the two forms.
    pub offset: Option<f64>,
}

pub fn quadratic_part(w: &DMatrix<f64>, moments: &EmpiricalMoments) -> f64 {
    let wv = linalg::vec(w);
    0.5 * wv.dot(&(&moments.sigma_mm * &wv)) - w.dot(&moments.sigma_mz)
}

pub fn objective_value(
    w: &DMatrix<f64>,
    moments: &EmpiricalMoments,
    lambda: f64,
    raw: Option<&[Observation]>,
) -> Result<ObjectiveValue> {
    if w.shape() != (moments.p, moments.q) {
        return Err(Error::invalid("objective_value: W shape does not match moments"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let penalty = lambda * spectral::trace_norm(w)?;
    let moment_form = quadratic_part(w, moments) + penalty;
    let (residual_form, offset) = match raw {
        Some(obs) if !obs.is_empty() => {
            let n = obs.len() as f64;
            let mut rss = 0.0;
            let mut zz = 0.0;
            for o in obs {
                if o.dims() != (moments.p, moments.q) {
                    return Err(Error::invalid("objective_value: observation shape mismatch"));
                }
                let r = o.z - o.predict(w);
                rss += r * r;
                zz += o.z * o.z;
            }
            (Some(rss / (2.0 * n) + penalty), Some(zz / (2.0 * n)))
        }
        _ => (None, None),
    };
    Ok(ObjectiveValue { moment_form, residual_form, offset })
}

/// Optimality report for the trace-norm problem at a candidate `W`.
///
/// With `G = Σ̂_mm W − Σ̂_Mz` and `W = U Diag(s) Vᵀ` truncated at the numerical
/// rank, optimality means `G + λ U Vᵀ + N = 0` where `N = −(I − UUᵀ) G (I − VVᵀ)`
/// satisfies `‖N‖₂ ≤ λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub rank: usize,
    /// `‖G + λ U Vᵀ + N‖_F`.
    pub alignment_residual: f64,
    /// `‖N‖₂ − λ`; nonpositive at an optimum.
    pub dual_excess: f64,
    /// `‖Uᵀ G (I − VVᵀ)‖_F + ‖(I − UUᵀ) G V‖_F`; zero when `W` and `G` share
    /// singular vectors.
    pub cross_block_residual: f64,
    pub optimal: bool,
}

pub fn kkt_residual(w: &DMatrix<f64>, moments: &EmpiricalMoments, lambda: f64, tol: f64) -> Result<KktReport> {
    kkt_residual_tau(w, moments, lambda, tol, DEFAULT_TAU_RANK)
}

pub fn kkt_residual_tau(
    w: &DMatrix<f64>,
    moments: &EmpiricalMoments,
    lambda: f64,
    tol: f64,
    tau: f64,
) -> Result<KktReport> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("kkt_residual: lambda must be positive"));
    }
    let (p, q) = (moments.p, moments.q);
    if w.shape() != (p, q) {
        return Err(Error::invalid("kkt_residual: W shape does not match moments"));
    }
    let g = linalg::unvec(&(&moments.sigma_mm * linalg::vec(w)), p, q) - &moments.sigma_mz;
    let t = spectral::full_svd_tau(w, tau)?;
    let r = t.numerical_rank;
    let (u, v) = t.leading(r);
    let pu = DMatrix::identity(p, p) - &u * u.transpose();
    let pv = DMatrix::identity(q, q) - &v * v.transpose();
    let outer = &pu * &g * &pv;
    let n = -&outer;
    let alignment_residual = (&g + (&u * v.transpose()) * lambda + &n).norm();
    let dual_excess = spectral::spectral_norm(&n) - lambda;
    let cross_block_residual = (u.transpose() * &g * &pv).norm() + (&pu * &g * &v).norm();
    let scale = moments.sigma_mz.norm().max(1.0);
    let optimal = alignment_residual <= tol * scale && dual_excess <= tol * lambda;
    Ok(KktReport { rank: r, alignment_residual, dual_excess, cross_block_residual, optimal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Full,
    Lasso,
    GroupLasso,
    Custom,
}

/// `vec(M) = H x` for an `s`-dimensional implicit parameter `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEmbedding {
    pub h: DMatrix<f64>,
    pub group_sizes: Vec<usize>,
    pub kind: DesignKind,
    pub p: usize,
    pub q: usize,
}

impl DesignEmbedding {
    pub fn full(p: usize, q: usize) -> Self {
        Self { h: DMatrix::identity(p * q, p * q), group_sizes: vec![1; p * q], kind: DesignKind::Full, p, q }
    }

    pub fn custom(h: DMatrix<f64>, p: usize, q: usize) -> Result<Self> {
        if h.nrows() != p * q {
            return Err(Error::invalid("design matrix must have p*q rows"));
        }
        let s = h.ncols();
        Ok(Self { h, group_sizes: vec![1; s], kind: DesignKind::Custom, p, q })
    }

    pub fn n_params(&self) -> usize {
        self.h.ncols()
    }

    /// Covariate `M` with `vec(M) = H x`.
    pub fn covariate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        linalg::unvec(&(&self.h * x), self.p, self.q)
    }

    /// `Hᵀ Σ H`.
    pub fn reduce(&self, sigma_mm: &DMatrix<f64>) -> DMatrix<f64> {
        self.h.transpose() * sigma_mm * &self.h
    }

    /// Row offset of each group in the `p` dimension.
    pub fn group_offsets(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .scan(0usize, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect()
    }
}

/// Selection design placing parameters on the (block-)diagonal.
///
/// Lasso with `m` features: `M = Diag(x)` (`m × m`). Group Lasso with block
/// sizes `d_1..d_m`: `M` is `(Σ d_j) × m` with `x_j` filling rows of block
/// `j` in column `j`.
pub fn embed_design(kind: DesignKind, group_sizes: &[usize]) -> Result<DesignEmbedding> {
    if group_sizes.is_empty() || group_sizes.contains(&0) {
        return Err(Error::invalid("group sizes must be positive"));
    }
    match kind {
        DesignKind::Lasso => {
            if group_sizes.iter().any(|&d| d != 1) {
                return Err(Error::invalid("lasso design takes unit group sizes"));
            }
            let m = group_sizes.len();
            let mut h = DMatrix::zeros(m * m, m);
            for i in 0..m {
                h[(i + i * m, i)] = 1.0;
            }
            Ok(DesignEmbedding { h, group_sizes: group_sizes.to_vec(), kind, p: m, q: m })
        }
        DesignKind::GroupLasso => {
            let m = group_sizes.len();
            let p: usize = group_sizes.iter().sum();
            let mut h = DMatrix::zeros(p * m, p);
            let mut offset = 0;
            for (j, &d) in group_sizes.iter().enumerate() {
                for t in 0..d {
                    h[(offset + t + j * p, offset + t)] = 1.0;
                }
                offset += d;
            }
            Ok(DesignEmbedding { h, group_sizes: group_sizes.to_vec(), kind, p, q: m })
        }
        DesignKind::Full | DesignKind::Custom => {
            Err(Error::invalid("embed_design builds lasso or group_lasso designs only"))
        }
    }
}
