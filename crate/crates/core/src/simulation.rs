//! Seeded synthetic problems: Gaussian-factor low-rank truths, random
//! Kronecker designs, i.i.d. and collaborative (grid without replacement)
//! sampling, Gaussian responses.
//!
//! Every random draw comes from a ChaCha8 stream keyed by [`derive_seed`], so
//! a `(spec, seed)` pair determines its output bit for bit on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consistency::GroundTruthModel;
use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::problem::Observation;
use crate::spectral;

const TRUTH_STREAM: u64 = 0;
const DESIGN_X_STREAM: u64 = 1;
const DESIGN_Y_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// Minimum gap between consecutive true singular values (and to zero)
/// before a ground truth is resampled.
pub const SINGULAR_GAP_MIN: f64 = 1e-6;

/// SplitMix64 finalizer of `base` and `index`; used to derive independent
/// streams for replicates and model components.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingMode {
    Iid,
    Collaborative { n_x: usize, n_y: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignSpec {
    Identity,
    RandomPd {
        condition_target: f64,
    },
    Explicit {
        #[serde(with = "rows")]
        sigma_xx: DMatrix<f64>,
        #[serde(with = "rows")]
        sigma_yy: DMatrix<f64>,
    },
}

/// Covariance for one side of the design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignKind {
    Identity,
    RandomPd { condition_target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub n: usize,
    pub sigma_noise: f64,
    pub mode: SamplingMode,
    pub design: DesignSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            p: 4,
            q: 4,
            r: 2,
            n: 1000,
            sigma_noise: 1.0,
            mode: SamplingMode::Iid,
            design: DesignSpec::Identity,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r >= self.p.min(self.q) {
            return Err(Error::invalid(format!(
                "rank must satisfy 0 < r < min(p, q); got p={}, q={}, r={}",
                self.p, self.q, self.r
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::invalid("sigma_noise must be finite and nonnegative"));
        }
        if let SamplingMode::Collaborative { n_x, n_y } = self.mode {
            if n_x == 0 || n_y == 0 || self.n > n_x.saturating_mul(n_y) {
                return Err(Error::invalid(format!("collaborative sampling needs n ≤ n_x·n_y ({} > {n_x}·{n_y})", self.n)));
            }
        }
        match &self.design {
            DesignSpec::RandomPd { condition_target } if !(*condition_target >= 1.0) => {
                Err(Error::invalid("condition_target must be at least 1"))
            }
            DesignSpec::Explicit { sigma_xx, sigma_yy } => {
                if sigma_xx.shape() != (self.p, self.p) || sigma_yy.shape() != (self.q, self.q) {
                    return Err(Error::invalid("explicit design has the wrong shape"));
                }
                if linalg::spd_inverse(sigma_xx).is_none() || linalg::spd_inverse(sigma_yy).is_none() {
                    return Err(Error::invalid("explicit design covariances must be positive definite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `(Σ_xx, Σ_yy)` for this spec.
    pub fn covariances(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.validate()?;
        Ok(match &self.design {
            DesignSpec::Identity => (DMatrix::identity(self.p, self.p), DMatrix::identity(self.q, self.q)),
            DesignSpec::RandomPd { condition_target } => {
                let kind = DesignKind::RandomPd { condition_target: *condition_target };
                (
                    make_design(self.p, kind, derive_seed(self.seed, DESIGN_X_STREAM))?,
                    make_design(self.q, kind, derive_seed(self.seed, DESIGN_Y_STREAM))?,
                )
            }
            DesignSpec::Explicit { sigma_xx, sigma_yy } => (sigma_xx.clone(), sigma_yy.clone()),
        })
    }
}

/// Identity, or `GᵀG + δI` with δ chosen so that the condition number is
/// exactly `condition_target`, rescaled to trace `dim`.
pub fn make_design(dim: usize, kind: DesignKind, seed: u64) -> Result<DMatrix<f64>> {
    match kind {
        DesignKind::Identity => Ok(DMatrix::identity(dim, dim)),
        DesignKind::RandomPd { condition_target: kappa } => {
            if !(kappa >= 1.0) {
                return Err(Error::invalid("condition_target must be at least 1"));
            }
            if kappa == 1.0 || dim == 1 {
                return Ok(DMatrix::identity(dim, dim));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = linalg::symmetrize(&(g.transpose() * g));
            let ev = linalg::sym_eigenvalues(&s);
            let (lo, hi) = (ev[0], ev[dim - 1]);
            let delta = (hi - kappa * lo) / (kappa - 1.0);
            let m = s + DMatrix::identity(dim, dim) * delta;
            let scale = dim as f64 / m.trace();
            Ok(linalg::symmetrize(&(m * scale)))
        }
    }
}

/// `W = G₁ G₂ᵀ` with standard normal factors, resampled until its singular
/// values are separated by [`SINGULAR_GAP_MIN`]; population moments from the
/// spec's design.
pub fn generate_ground_truth(spec: &SyntheticSpec) -> Result<GroundTruthModel> {
    spec.validate()?;
    let (sxx, syy) = spec.covariances()?;
    let mut rng = rng_for(spec.seed, TRUTH_STREAM);
    loop {
        let g1 = DMatrix::from_fn(spec.p, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g2 = DMatrix::from_fn(spec.q, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = g1 * g2.transpose();
        let svd = spectral::full_svd(&w)?;
        let s = &svd.s[..spec.r];
        let separated = s.windows(2).all(|p| p[0] - p[1] >= SINGULAR_GAP_MIN) && s[spec.r - 1] >= SINGULAR_GAP_MIN;
        if !separated {
            log::debug!("resampling ground truth with near-degenerate singular values {s:?}");
            continue;
        }
        let (u, v) = svd.leading(spec.r);
        return GroundTruthModel::from_factors(u, s.to_vec(), v, sxx, syy, spec.sigma_noise);
    }
}

fn sqrt_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::invalid("design covariance is not positive definite"))
}

fn model_factors(model: &GroundTruthModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let f = model
        .factors
        .as_ref()
        .ok_or_else(|| Error::invalid("sampling requires a Kronecker-factored model"))?;
    Ok((sqrt_factor(&f.sigma_xx)?, sqrt_factor(&f.sigma_yy)?))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, chol: &DMatrix<f64>) -> DVector<f64> {
    let g = DVector::from_fn(chol.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * g
}

/// `M_i = x_i y_iᵀ` with independent Gaussian rows and columns,
/// `z_i = x_iᵀ W y_i + σ ε_i`.
pub fn sample_iid(spec: &SyntheticSpec, model: &GroundTruthModel) -> Result<Vec<Observation>> {
    spec.validate()?;
    let (lx, ly) = model_factors(model)?;
    let w = model.w();
    let sigma = model.sigma_noise;
    let mut rng = rng_for(spec.seed, SAMPLE_STREAM);
    Ok((0..spec.n)
        .map(|_| {
            let x = gaussian_vec(&mut rng, &lx);
            let y = gaussian_vec(&mut rng, &ly);
            let noise: f64 = rng.sample(StandardNormal);
            let z = (x.transpose() * &w * &y)[(0, 0)] + sigma * noise;
            Observation::factored(x, y, z)
        })
        .collect())
}

/// Grid cells `(i, j)` drawn uniformly without replacement.
pub fn collaborative_pairs(n: usize, n_x: usize, n_y: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let total = n_x
        .checked_mul(n_y)
        .ok_or_else(|| Error::invalid("grid too large"))?;
    if n > total {
        return Err(Error::invalid(format!("cannot draw {n} distinct cells from a {n_x}×{n_y} grid")));
    }
    Ok(rand::seq::index::sample(rng, total, n)
        .into_iter()
        .map(|k| (k % n_x, k / n_x))
        .collect())
}

/// Draws `n_x` row features and `n_y` column features, then observes `n`
/// distinct (row, column) pairs.
pub fn sample_collaborative(spec: &SyntheticSpec, model: &GroundTruthModel) -> Result<Vec<Observation>> {
    spec.validate()?;
    let SamplingMode::Collaborative { n_x, n_y } = spec.mode else {
        return Err(Error::invalid("spec is not in collaborative mode"));
    };
    let (lx, ly) = model_factors(model)?;
    let w = model.w();
    let mut rng = rng_for(spec.seed, SAMPLE_STREAM);
    let xs: Vec<DVector<f64>> = (0..n_x).map(|_| gaussian_vec(&mut rng, &lx)).collect();
    let ys: Vec<DVector<f64>> = (0..n_y).map(|_| gaussian_vec(&mut rng, &ly)).collect();
    let pairs = collaborative_pairs(spec.n, n_x, n_y, &mut rng)?;
    Ok(pairs
        .into_iter()
        .map(|(i, j)| {
            let noise: f64 = rng.sample(StandardNormal);
            let z = (xs[i].transpose() * &w * &ys[j])[(0, 0)] + model.sigma_noise * noise;
            Observation::factored(xs[i].clone(), ys[j].clone(), z)
        })
        .collect())
}

/// Samples according to `spec.mode`.
pub fn sample(spec: &SyntheticSpec, model: &GroundTruthModel) -> Result<Vec<Observation>> {
    match spec.mode {
        SamplingMode::Iid => sample_iid(spec, model),
        SamplingMode::Collaborative { .. } => sample_collaborative(spec, model),
    }
}
