//! Monte Carlo replication harness.
//!
//! A replication experiment fixes one ground-truth model, draws fresh
//! datasets from derived seeds, solves a regularization path on a common λ
//! grid, and aggregates per-λ correct-rank frequencies and mean estimation
//! errors. The scatter experiment does the same for many random designs and
//! relates the best correct-rank error to `‖Λ‖₂`.
//!
//! Results are merged by replicate index, so reports do not depend on the
//! execution mode or the number of worker threads.

pub mod output;
pub mod plot;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::adaptive::{adaptive_path, adaptive_weights, least_squares_estimate, transformed_moments};
use crate::consistency::{lambda_matrix, GroundTruthModel};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::problem::assemble_moments_with;
use crate::simulation::{self, derive_seed, DesignSpec, SyntheticSpec};
use crate::solver::{lambda_interval, log_grid, path_on_grid, PathResult, SolverConfig};
use crate::spectral;

/// Offset separating replicate data streams from model streams.
const REPLICATE_STREAM: u64 = 1 << 20;

/// Abort when more than this fraction of replicates fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Plain,
    Adaptive { gamma: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Plain => "plain".into(),
            Method::Adaptive { gamma } => format!("adaptive(gamma={gamma})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GridSpec {
    /// Log-uniform between the endpoints of the population problem.
    Auto { count: usize, eps_rel: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { count: 40, eps_rel: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub spec: SyntheticSpec,
    pub method: Method,
    pub grid: GridSpec,
    pub n_replicates: usize,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            method: Method::Plain,
            grid: GridSpec::default(),
            n_replicates: 50,
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.solver.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::invalid("n_replicates must be at least 1"));
        }
        if let Method::Adaptive { gamma } = self.method {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(Error::invalid("adaptive gamma must lie in (0, 1]"));
            }
        }
        match &self.grid {
            GridSpec::Auto { count, eps_rel } => {
                if *count < 2 || !(*eps_rel > 0.0 && *eps_rel < 1.0) {
                    return Err(Error::invalid("grid needs count ≥ 2 and eps_rel in (0, 1)"));
                }
            }
            GridSpec::Explicit { values } => {
                if values.len() < 2 || values.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                    return Err(Error::invalid("explicit grid needs at least two positive values"));
                }
            }
        }
        Ok(())
    }
}

/// Descending λ grid for `config` on `model`. Automatic grids come from the
/// population problem; for the adaptive method the population problem is
/// weighted with A and B built from the true W at the configured n.
pub fn resolve_grid(config: &ExperimentConfig, model: &GroundTruthModel) -> Result<Vec<f64>> {
    match &config.grid {
        GridSpec::Explicit { values } => {
            let mut v = values.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            Ok(v)
        }
        GridSpec::Auto { count, eps_rel } => {
            let mut moments = model.population_moments()?;
            if let Method::Adaptive { gamma } = config.method {
                let weights = adaptive_weights(&model.w(), gamma, config.spec.n)?;
                moments = transformed_moments(&moments, &weights)?;
            }
            let iv = lambda_interval(&moments, *eps_rel)?;
            Ok(log_grid(iv.lambda_min, iv.lambda_max, *count))
        }
    }
}

/// Dataset spec of replicate `index`: same model, independent sampling stream.
pub fn replicate_spec(spec: &SyntheticSpec, index: usize) -> SyntheticSpec {
    SyntheticSpec { seed: derive_seed(spec.seed, REPLICATE_STREAM + index as u64), ..spec.clone() }
}

/// Solves the configured path on one dataset drawn from `spec`.
pub fn solve_dataset(
    spec: &SyntheticSpec,
    model: &GroundTruthModel,
    method: Method,
    grid: &[f64],
    solver: &SolverConfig,
) -> Result<PathResult> {
    let obs = simulation::sample(spec, model)?;
    let moments = assemble_moments_with(&obs, Execution::Sequential)?;
    match method {
        Method::Plain => path_on_grid(&moments, grid, true, Execution::Sequential, solver),
        Method::Adaptive { gamma } => {
            let pilot = least_squares_estimate(&moments)?;
            let weights = adaptive_weights(&pilot, gamma, spec.n)?;
            adaptive_path(&moments, grid, &weights, solver)
        }
    }
}

/// Per-λ rank and error of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub ranks: Vec<usize>,
    pub errors: Vec<f64>,
    /// Points that kept a non-converged best iterate.
    pub inexact: usize,
}

fn outcome(path: &PathResult, truth: &DMatrix<f64>) -> Result<ReplicateOutcome> {
    let mut ranks = Vec::with_capacity(path.points.len());
    let mut errors = Vec::with_capacity(path.points.len());
    for pt in &path.points {
        match &pt.result {
            Some(r) => {
                if let Some(msg) = &pt.error {
                    log::debug!("path point λ={} kept its best iterate: {msg}", pt.lambda);
                }
                ranks.push(r.estimated_rank);
                errors.push((&r.w - truth).norm());
            }
            None => {
                let msg = pt.error.clone().unwrap_or_default();
                return Err(Error::Aborted(format!("path point λ={} failed: {msg}", pt.lambda)));
            }
        }
    }
    Ok(ReplicateOutcome { ranks, errors, inexact: path.failures() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub config: ExperimentConfig,
    pub true_rank: usize,
    pub lambda_norm: f64,
    pub lambdas: Vec<f64>,
    /// Estimate of `P(rank(Ŵ) = r)` at each λ.
    pub correct_rank_frequency: Vec<f64>,
    /// Mean of `‖Ŵ − W‖_F` over completed replicates.
    pub mean_rmse: Vec<f64>,
    /// `log₁₀` of `mean_rmse`.
    pub log10_mean_rmse: Vec<f64>,
    pub n_completed: usize,
    /// Path points, over completed replicates, that stalled above the gap
    /// target and contribute their best iterate.
    pub inexact_points: usize,
    /// `(replicate index, message)` of excluded replicates.
    pub failures: Vec<(usize, String)>,
}

/// A maximal run of consecutive grid points meeting a frequency threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyInterval {
    pub start: usize,
    pub end: usize,
    pub lambda_high: f64,
    pub lambda_low: f64,
    pub log10_center: f64,
}

impl ReplicationReport {
    /// Longest run of grid points with frequency ≥ `threshold`
    /// (earliest on ties).
    pub fn high_frequency_interval(&self, threshold: f64) -> Option<FrequencyInterval> {
        let mut best: Option<(usize, usize)> = None;
        let mut i = 0;
        let f = &self.correct_rank_frequency;
        while i < f.len() {
            if f[i] >= threshold {
                let start = i;
                while i + 1 < f.len() && f[i + 1] >= threshold {
                    i += 1;
                }
                if best.is_none_or(|(s, e)| i - start > e - s) {
                    best = Some((start, i));
                }
            }
            i += 1;
        }
        best.map(|(start, end)| {
            let (hi, lo) = (self.lambdas[start], self.lambdas[end]);
            FrequencyInterval {
                start,
                end,
                lambda_high: hi,
                lambda_low: lo,
                log10_center: 0.5 * (hi.log10() + lo.log10()),
            }
        })
    }

    pub fn best_rmse(&self) -> f64 {
        self.mean_rmse.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Grid indices with frequency ≥ `threshold` and mean error within
    /// `factor` times the path-best mean error.
    pub fn tradeoff_indices(&self, threshold: f64, factor: f64) -> Vec<usize> {
        let best = self.best_rmse();
        (0..self.lambdas.len())
            .filter(|&i| self.correct_rank_frequency[i] >= threshold && self.mean_rmse[i] <= factor * best)
            .collect()
    }
}

/// Runs `config.n_replicates` independent datasets on one model.
pub fn run_replications(config: &ExperimentConfig, execution: Execution) -> Result<ReplicationReport> {
    config.validate()?;
    let model = simulation::generate_ground_truth(&config.spec)?;
    let lambda_norm = spectral::spectral_norm(&lambda_matrix(&model)?.lambda);
    let grid = resolve_grid(config, &model)?;
    let truth = model.w();
    let results = par::map_indexed(config.n_replicates, execution, |i| {
        let spec = replicate_spec(&config.spec, i);
        solve_dataset(&spec, &model, config.method, &grid, &config.solver).and_then(|p| outcome(&p, &truth))
    });

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                log::warn!("replicate {i} excluded: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_replicates as f64 {
        return Err(Error::Aborted(format!(
            "{} of {} replicates failed; first: {}",
            failures.len(),
            config.n_replicates,
            failures[0].1
        )));
    }
    let g = grid.len();
    let m = ok.len() as f64;
    let mut freq = vec![0.0; g];
    let mut err = vec![0.0; g];
    for o in &ok {
        for k in 0..g {
            if o.ranks[k] == model.rank() {
                freq[k] += 1.0;
            }
            err[k] += o.errors[k];
        }
    }
    freq.iter_mut().for_each(|f| *f /= m);
    err.iter_mut().for_each(|e| *e /= m);
    Ok(ReplicationReport {
        config: config.clone(),
        true_rank: model.rank(),
        lambda_norm,
        lambdas: grid,
        correct_rank_frequency: freq,
        log10_mean_rmse: err.iter().map(|e| e.log10()).collect(),
        mean_rmse: err,
        n_completed: ok.len(),
        inexact_points: ok.iter().map(|o| o.inexact).sum(),
        failures,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterConfig {
    pub n_designs: usize,
    /// Dimensions, n, noise and sampling mode; the design and seed are
    /// replaced per design.
    pub template: SyntheticSpec,
    pub base_seed: u64,
    /// Condition targets are log-uniform on this range.
    pub condition_range: (f64, f64),
    pub grid_count: usize,
    pub grid_eps_rel: f64,
    pub solver: SolverConfig,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            n_designs: 100,
            template: SyntheticSpec::default(),
            base_seed: 0,
            condition_range: (1.0, 1e3),
            grid_count: 40,
            grid_eps_rel: 1e-4,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub design: usize,
    pub seed: u64,
    pub condition_target: f64,
    pub lambda_norm: f64,
    pub log10_lambda_norm: f64,
    /// Smallest `‖Ŵ − W‖_F` over path points with the true rank, or over
    /// the whole path when no point has it (see `correct_rank_found`).
    pub best_error: f64,
    pub lambda_at_best: f64,
    pub correct_rank_found: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterReport {
    pub config: ScatterConfig,
    pub rows: Vec<ScatterRow>,
    /// Path points that stalled above the gap target, summed over designs.
    pub inexact_points: usize,
    pub failures: Vec<(usize, String)>,
}

/// Spec of scatter design `index`.
pub fn scatter_design_spec(config: &ScatterConfig, index: usize) -> (SyntheticSpec, f64) {
    let seed = derive_seed(config.base_seed, index as u64);
    let mut rng = simulation::rng_for(seed, u64::MAX);
    let (lo, hi) = config.condition_range;
    let kappa = if hi > lo { 10f64.powf(rng.random_range(lo.log10()..hi.log10())) } else { lo };
    let spec = SyntheticSpec { seed, design: DesignSpec::RandomPd { condition_target: kappa }, ..config.template.clone() };
    (spec, kappa)
}

fn scatter_row(config: &ScatterConfig, index: usize) -> Result<(ScatterRow, usize)> {
    let (spec, kappa) = scatter_design_spec(config, index);
    let model = simulation::generate_ground_truth(&spec)?;
    let lambda_norm = spectral::spectral_norm(&lambda_matrix(&model)?.lambda);
    let exp = ExperimentConfig {
        spec: spec.clone(),
        method: Method::Plain,
        grid: GridSpec::Auto { count: config.grid_count, eps_rel: config.grid_eps_rel },
        n_replicates: 1,
        solver: config.solver.clone(),
    };
    let grid = resolve_grid(&exp, &model)?;
    let path = solve_dataset(&replicate_spec(&spec, 0), &model, Method::Plain, &grid, &config.solver)?;
    let o = outcome(&path, &model.w())?;
    let pick = |want_rank: bool| {
        (0..grid.len())
            .filter(|&k| !want_rank || o.ranks[k] == model.rank())
            .min_by(|&a, &b| o.errors[a].total_cmp(&o.errors[b]))
    };
    let (k, found) = match pick(true) {
        Some(k) => (k, true),
        None => (pick(false).expect("grid is nonempty"), false),
    };
    let row = ScatterRow {
        design: index,
        seed: spec.seed,
        condition_target: kappa,
        lambda_norm,
        log10_lambda_norm: lambda_norm.log10(),
        best_error: o.errors[k],
        lambda_at_best: grid[k],
        correct_rank_found: found,
    };
    Ok((row, o.inexact))
}

pub fn lambda_error_scatter(config: &ScatterConfig, execution: Execution) -> Result<ScatterReport> {
    if config.n_designs < 10 {
        return Err(Error::invalid("scatter needs at least 10 designs"));
    }
    config.template.validate()?;
    config.solver.validate()?;
    let results = par::map_indexed(config.n_designs, execution, |i| scatter_row(config, i));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut inexact_points = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((row, inexact)) => {
                rows.push(row);
                inexact_points += inexact;
            }
            Err(e) => {
                log::warn!("design {i} excluded: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_designs as f64 {
        return Err(Error::Aborted(format!("{} of {} designs failed", failures.len(), config.n_designs)));
    }
    Ok(ScatterReport { config: config.clone(), rows, inexact_points, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub n: usize,
    /// Sample values strictly above the reference median.
    pub successes: usize,
    pub p_value: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sided sign test of "`sample` tends to exceed the median of
/// `reference`": `P(Binomial(n, ½) ≥ successes)`, ties dropped.
pub fn sign_test_greater(reference: &[f64], sample: &[f64]) -> SignTest {
    let m = median(reference);
    let informative: Vec<f64> = sample.iter().copied().filter(|&x| x != m).collect();
    let n = informative.len();
    let successes = informative.iter().filter(|&&x| x > m).count();
    let p_value = if n == 0 || successes == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, n as u64).expect("valid binomial");
        b.sf(successes as u64 - 1)
    };
    SignTest { n, successes, p_value }
}

impl ScatterReport {
    /// Errors of designs with `log₁₀‖Λ‖₂ < lower` and `> upper`.
    pub fn split(&self, lower: f64, upper: f64) -> (Vec<f64>, Vec<f64>) {
        let below = self.rows.iter().filter(|r| r.log10_lambda_norm < lower).map(|r| r.best_error).collect();
        let above = self.rows.iter().filter(|r| r.log10_lambda_norm > upper).map(|r| r.best_error).collect();
        (below, above)
    }
}
