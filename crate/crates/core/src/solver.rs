//! Smoothed Newton solver for
//!
//! ```text
//! min_W  ½ vec(W)ᵀ Σ vec(W) − tr(Wᵀ Q) + λ ‖W‖_*
//! ```
//!
//! The trace norm is replaced by `λ F_{ε/λ}(W)`, which is infinitely
//! differentiable; damped Newton steps are taken on this primal until the
//! smoothed duality gap drops below `ε · min(p, q)`, and `ε` is decreased
//! geometrically. A smoothed gap of `ε · min(p, q)` certifies a gap of at most
//! `(1 + 2 log 2) ε · min(p, q)` on the original problem.

use std::f64::consts::LN_2;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par::{self, Execution};
use crate::problem::{quadratic_part, EmpiricalMoments};
use crate::spectral::{self, BarrierSpec, SvdTriple, DEFAULT_TAU_RANK};

/// Singular values below this multiple of the final smoothing scale `ε/λ`
/// are read as zero: at a smoothed optimum an inactive singular value equals
/// `(2ε/λ)·atanh(ρ)` for a dual singular value `ρ < 1`.
pub const RANK_FLOOR_FACTOR: f64 = 40.0;

/// Final-stage iterations at rounding-level steps without halving the best gap
/// before the solve is reported as stalled.
pub const STALL_WINDOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, sufficient_decrease: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial smoothing; `None` picks `max(eps_target, 0.1·λ·‖Q‖₂ / max(1, ‖Q‖₂))`.
    pub eps_init: Option<f64>,
    pub eps_target: f64,
    pub eps_factor: f64,
    /// Relative Newton step size at which the final stage stops.
    pub newton_tol: f64,
    /// Newton iteration cap per smoothing stage.
    pub max_newton_iters: usize,
    pub line_search: LineSearch,
    pub tau_rank: f64,
    /// Record per-iteration telemetry in [`SolveResult::trace`].
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_init: None,
            eps_target: 1e-9,
            eps_factor: 0.5,
            newton_tol: 1e-10,
            max_newton_iters: 500,
            line_search: LineSearch::default(),
            tau_rank: DEFAULT_TAU_RANK,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_target > 0.0) {
            return Err(Error::invalid("eps_target must be positive"));
        }
        if let Some(e) = self.eps_init {
            if !(e >= self.eps_target) {
                return Err(Error::invalid("eps_init must be at least eps_target"));
            }
        }
        if !(self.eps_factor > 0.0 && self.eps_factor < 1.0) {
            return Err(Error::invalid("eps_factor must lie in (0, 1)"));
        }
        let ls = self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) || !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 0.5) {
            return Err(Error::invalid("line search parameters out of range"));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::invalid("max_newton_iters must be positive"));
        }
        Ok(())
    }

    fn initial_eps(&self, lambda: f64, q_norm: f64) -> f64 {
        self.eps_init
            .unwrap_or_else(|| (0.1 * lambda * q_norm / q_norm.max(1.0)).max(self.eps_target))
    }
}

/// One accepted (or final) Newton iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub stage: usize,
    pub iteration: usize,
    pub eps: f64,
    pub objective: f64,
    pub gap: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub w: DMatrix<f64>,
    pub svd: SvdTriple,
    pub estimated_rank: usize,
    pub lambda: f64,
    /// Smoothed duality gap at termination.
    pub duality_gap: f64,
    /// `(1 + 2 log 2)·ε·min(p, q)`, bounding suboptimality on the unsmoothed problem.
    pub raw_gap_bound: f64,
    pub newton_iters: usize,
    pub eps_final: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn singular_values(&self) -> &[f64] {
        &self.svd.s
    }
}

/// Second moment prepared for repeated solves.
struct Prepared {
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    q: DMatrix<f64>,
    p: usize,
    qdim: usize,
}

fn prepare(moments: &EmpiricalMoments) -> Result<Prepared> {
    let d = moments.dim();
    if d == 0 {
        return Err(Error::invalid("empty problem"));
    }
    linalg::ensure_finite(&moments.sigma_mz, "Q")?;
    let sigma = &moments.sigma_mm;
    let ev = linalg::sym_eigenvalues(sigma);
    let (lo, hi) = (ev[0], ev[d - 1]);
    if hi <= 0.0 {
        return Err(Error::InfeasibleDual("second moment matrix is zero".into()));
    }
    let (sigma, ridged) = if lo <= 1e-12 * hi {
        let ridge = 1e-10 * sigma.trace() / d as f64;
        log::warn!("second moment matrix is near singular (min eigenvalue {lo:e}); adding ridge {ridge:e}");
        (sigma + DMatrix::identity(d, d) * ridge, true)
    } else {
        (sigma.clone(), false)
    };
    let chol = sigma.clone().cholesky().ok_or_else(|| Error::InfeasibleDual("second moment is not PSD".into()))?;
    if ridged {
        // vec(Q) must lie in the range of the unridged second moment
        let qv = linalg::vec(&moments.sigma_mz);
        let x = chol.solve(&qv);
        let resid = (&moments.sigma_mm * &x - &qv).norm();
        if resid > 1e-6 * qv.norm().max(1e-300) {
            return Err(Error::InfeasibleDual(format!(
                "vec(Q) is outside the range of the second moment (residual {resid:e})"
            )));
        }
    }
    Ok(Prepared { sigma, chol, q: moments.sigma_mz.clone(), p: moments.p, qdim: moments.q })
}

impl Prepared {
    fn k(&self) -> usize {
        self.p.min(self.qdim)
    }

    fn smoothed_objective(&self, w: &DMatrix<f64>, lambda: f64, barrier: &BarrierSpec) -> f64 {
        let wv = linalg::vec(w);
        0.5 * wv.dot(&(&self.sigma * &wv)) - w.dot(&self.q) + lambda * spectral::spectral_value(w, barrier)
    }

    fn gradient(&self, w: &DMatrix<f64>, svd: &SvdTriple, lambda: f64, barrier: &BarrierSpec) -> DVector<f64> {
        let wv = linalg::vec(w);
        &self.sigma * wv - linalg::vec(&self.q) + linalg::vec(&spectral::gradient_from_svd(svd, barrier)) * lambda
    }

    /// `½ gᵀ Σ⁻¹ g`, equal to smoothed primal minus smoothed dual at the
    /// dual candidate attached to `W`.
    fn gap_from_gradient(&self, g: &DVector<f64>) -> f64 {
        0.5 * g.dot(&self.chol.solve(g))
    }
}

/// `V = U Diag(tanh(s_i / 2ε)) Vᵀ`, the maximizer in
/// `F_ε(W) = max_{‖V‖₂ ≤ 1} tr(VᵀW) − ε B(V)`.
pub fn dual_candidate(w: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let barrier = BarrierSpec::new(eps)?;
    spectral::spectral_gradient(w, &barrier)
}

/// `B(V) = Σ b(s_i(V))`.
pub fn barrier_sum(v: &DMatrix<f64>) -> f64 {
    spectral::singular_values(v).iter().map(|&s| spectral::barrier_primal(s)).sum()
}

/// Smoothed primal `½ wᵀΣw − tr(WᵀQ) + λ F_{ε/λ}(W)`.
pub fn smoothed_primal(w: &DMatrix<f64>, moments: &EmpiricalMoments, lambda: f64, eps: f64) -> Result<f64> {
    Ok(quadratic_part(w, moments) + lambda * spectral::smoothed_trace_norm(w, eps / lambda)?)
}

/// Smoothed dual `−½ vec(Q − λV)ᵀ Σ⁻¹ vec(Q − λV) − ε B(V)`.
pub fn smoothed_dual(v: &DMatrix<f64>, moments: &EmpiricalMoments, lambda: f64, eps: f64) -> Result<f64> {
    let r = linalg::vec(&(&moments.sigma_mz - v * lambda));
    let x = linalg::spd_solve_vec(&moments.sigma_mm, &r)
        .ok_or_else(|| Error::invalid("second moment matrix is not positive definite"))?;
    Ok(-0.5 * r.dot(&x) - eps * barrier_sum(v))
}

/// Smoothed duality gap at `W` with the dual candidate `V(W, ε/λ)`.
pub fn duality_gap(w: &DMatrix<f64>, moments: &EmpiricalMoments, lambda: f64, eps: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if w.shape() != (moments.p, moments.q) {
        return Err(Error::invalid("W shape does not match moments"));
    }
    let prep = prepare(moments)?;
    let barrier = BarrierSpec::new(eps / lambda)?;
    let svd = spectral::full_svd(w)?;
    let g = prep.gradient(w, &svd, lambda, &barrier);
    Ok(prep.gap_from_gradient(&g))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// Minimizes the trace-norm regularized quadratic.
pub fn smoothed_solve(
    moments: &EmpiricalMoments,
    lambda: f64,
    config: &SolverConfig,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<SolveResult> {
    check_lambda(lambda)?;
    config.validate()?;
    let prep = prepare(moments)?;
    solve_prepared(&prep, lambda, config, warm_start)
}

fn solve_prepared(
    prep: &Prepared,
    lambda: f64,
    config: &SolverConfig,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<SolveResult> {
    let (p, q) = (prep.p, prep.qdim);
    let q_norm = spectral::spectral_norm(&prep.q);
    let eps_init = config.initial_eps(lambda, q_norm);
    let mut w = match warm_start {
        Some(w0) => {
            if w0.shape() != (p, q) {
                return Err(Error::invalid("warm start has the wrong shape"));
            }
            linalg::ensure_finite(w0, "warm start")?;
            w0.clone()
        }
        None => DMatrix::zeros(p, q),
    };
    let mut eps = if warm_start.is_some() {
        (eps_init * config.eps_factor * config.eps_factor).max(config.eps_target)
    } else {
        eps_init
    };

    let mut trace = Vec::new();
    let mut total_iters = 0usize;
    let mut stage = 0usize;
    let mut gap;
    loop {
        let final_stage = eps <= config.eps_target;
        let barrier = BarrierSpec::new(eps / lambda)?;
        let stage_out = newton_stage(prep, &mut w, lambda, eps, &barrier, final_stage, config, stage, &mut trace);
        total_iters += stage_out.iterations;
        gap = stage_out.gap;
        if !stage_out.converged {
            let best = finish(prep, w, lambda, eps, gap, total_iters, config, trace)?;
            return Err(Error::NonConverged { iterations: total_iters, gap, best: Some(Box::new(best)) });
        }
        if final_stage {
            break;
        }
        eps = (eps * config.eps_factor).max(config.eps_target);
        stage += 1;
    }
    finish(prep, w, lambda, eps, gap, total_iters, config, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prep: &Prepared,
    w: DMatrix<f64>,
    lambda: f64,
    eps: f64,
    gap: f64,
    newton_iters: usize,
    config: &SolverConfig,
    trace: Vec<TraceRow>,
) -> Result<SolveResult> {
    let svd = spectral::full_svd_tau(&w, config.tau_rank)?;
    let estimated_rank = svd.rank_with_floor(config.tau_rank, RANK_FLOOR_FACTOR * eps / lambda);
    Ok(SolveResult {
        w,
        svd,
        estimated_rank,
        lambda,
        duality_gap: gap,
        raw_gap_bound: (1.0 + 2.0 * LN_2) * eps * prep.k() as f64,
        newton_iters,
        eps_final: eps,
        trace,
    })
}

struct StageOutcome {
    iterations: usize,
    gap: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn newton_stage(
    prep: &Prepared,
    w: &mut DMatrix<f64>,
    lambda: f64,
    eps: f64,
    barrier: &BarrierSpec,
    final_stage: bool,
    config: &SolverConfig,
    stage: usize,
    trace: &mut Vec<TraceRow>,
) -> StageOutcome {
    let (p, q) = (prep.p, prep.qdim);
    let gap_target = eps * prep.k() as f64;
    let mut f = prep.smoothed_objective(w, lambda, barrier);
    let mut last_step = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let (mut best_gap, mut since_best) = (f64::INFINITY, 0usize);
    for it in 0..=config.max_newton_iters {
        let complete = match spectral::complete_svd(w) {
            Ok(c) => c,
            Err(_) => return StageOutcome { iterations: it, gap, converged: false },
        };
        let svd = SvdTriple {
            u: complete.u.columns(0, complete.s.len()).into_owned(),
            v: complete.v.columns(0, complete.s.len()).into_owned(),
            s: complete.s.clone(),
            numerical_rank: 0,
        };
        let g = prep.gradient(w, &svd, lambda, barrier);
        gap = prep.gap_from_gradient(&g).max(0.0);
        let small_step = last_step <= config.newton_tol * w.norm().max(1.0);
        let grad_small = g.norm() <= config.newton_tol;
        let done = gap <= gap_target && (!final_stage || small_step || grad_small);
        if config.trace {
            trace.push(TraceRow { stage, iteration: it, eps, objective: f, gap, step: if it == 0 { 0.0 } else { last_step } });
        }
        if done {
            return StageOutcome { iterations: it, gap, converged: true };
        }
        if gap < 0.5 * best_gap {
            (best_gap, since_best) = (gap, 0);
        } else if final_stage && small_step {
            // the gap is at its floating-point floor (ill-conditioned Σ, tiny ε/λ)
            since_best += 1;
            if since_best >= STALL_WINDOW {
                return StageOutcome { iterations: it, gap, converged: false };
            }
        }
        if it == config.max_newton_iters {
            break;
        }

        let hess = &prep.sigma + spectral::hessian_from_complete(&complete, p, q, barrier) * lambda;
        let dir = match hess.clone().cholesky() {
            Some(c) => -c.solve(&g),
            None => {
                let d = hess.nrows();
                let bump = 1e-14 * hess.trace().abs().max(1.0);
                match (hess + DMatrix::identity(d, d) * bump).cholesky() {
                    Some(c) => -c.solve(&g),
                    None => return StageOutcome { iterations: it, gap, converged: false },
                }
            }
        };
        let slope = g.dot(&dir);
        let step_dir = linalg::unvec(&dir, p, q);
        if slope >= 0.0 || !slope.is_finite() {
            // numerically flat: nothing left to gain at this smoothing level
            return StageOutcome { iterations: it, gap, converged: gap <= gap_target };
        }
        if -slope <= 1e-12 * f.abs().max(1.0) {
            // decrease below the rounding level of f: the line search cannot
            // discriminate, and the full step is inside the quadratic region
            *w += &step_dir;
            f = prep.smoothed_objective(w, lambda, barrier);
            last_step = step_dir.norm();
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let cand = &*w + &step_dir * t;
            let fc = prep.smoothed_objective(&cand, lambda, barrier);
            if fc <= f + config.line_search.sufficient_decrease * t * slope {
                *w = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= config.line_search.shrink;
        }
        if !accepted {
            // rounding floor of the objective: accept convergence if the gap allows it
            return StageOutcome { iterations: it + 1, gap, converged: gap <= gap_target };
        }
        last_step = t * step_dir.norm();
    }
    StageOutcome { iterations: config.max_newton_iters, gap, converged: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaInterval {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `Q = 0`: the solution is zero for every λ.
    pub empty: bool,
}

/// Endpoints of a useful regularization path: above `‖Q‖₂` the solution is
/// exactly zero; below `eps_rel · vec(Q)ᵀΣ⁻¹vec(Q) / ‖Σ⁻¹vec(Q)‖_*` the
/// unregularized solution is already within a relative gap `eps_rel`.
pub fn lambda_interval(moments: &EmpiricalMoments, eps_rel: f64) -> Result<LambdaInterval> {
    if !(eps_rel > 0.0 && eps_rel < 1.0) {
        return Err(Error::invalid("eps_rel must lie in (0, 1)"));
    }
    let qv = linalg::vec(&moments.sigma_mz);
    if qv.iter().all(|&x| x == 0.0) {
        return Ok(LambdaInterval { lambda_min: 0.0, lambda_max: 0.0, empty: true });
    }
    let x = linalg::spd_solve_vec(&moments.sigma_mm, &qv)
        .ok_or_else(|| Error::invalid("lambda_interval requires an invertible second moment"))?;
    let lambda_max = spectral::spectral_norm(&moments.sigma_mz);
    let ls = linalg::unvec(&x, moments.p, moments.q);
    let lambda_min = eps_rel * qv.dot(&x) / spectral::trace_norm(&ls)?;
    debug_assert!(lambda_min <= lambda_max * (1.0 + 1e-12));
    Ok(LambdaInterval { lambda_min, lambda_max, empty: false })
}

/// `count` values log-uniform on `[lo, hi]`, descending.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi >= lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (b + (a - b) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathOptions {
    pub grid_size: usize,
    /// Relative gap defining the lower endpoint.
    pub eps_rel: f64,
    /// Warm-start each solve from the previous (larger-λ) solution.
    pub warm_start: bool,
    /// Execution mode for cold-started paths.
    pub execution: Execution,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { grid_size: 30, eps_rel: 1e-3, warm_start: true, execution: Execution::Sequential }
    }
}

/// One grid point. A non-converged solve keeps its best iterate in `result`
/// and its message in `error`; `result` is `None` only when no iterate exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub result: Option<SolveResult>,
    pub error: Option<String>,
}

impl PathPoint {
    pub fn converged(&self) -> bool {
        self.result.is_some() && self.error.is_none()
    }

    fn from_outcome(lambda: f64, out: Result<SolveResult>) -> Self {
        match out {
            Ok(r) => Self { lambda, result: Some(r), error: None },
            Err(Error::NonConverged { iterations, gap, best: Some(best) }) => {
                let msg = Error::NonConverged { iterations, gap, best: None }.to_string();
                Self { lambda, result: Some(*best), error: Some(msg) }
            }
            Err(e) => Self { lambda, result: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub points: Vec<PathPoint>,
}

impl PathResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn total_newton_iters(&self) -> usize {
        self.points.iter().filter_map(|p| p.result.as_ref()).map(|r| r.newton_iters).sum()
    }

    /// Points that did not converge, including those that kept a best iterate.
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.converged()).count()
    }

    /// Points with no usable iterate at all.
    pub fn missing(&self) -> usize {
        self.points.iter().filter(|p| p.result.is_none()).count()
    }
}

/// Log-uniform path between the endpoints of [`lambda_interval`].
pub fn regularization_path(moments: &EmpiricalMoments, options: &PathOptions, config: &SolverConfig) -> Result<PathResult> {
    if options.grid_size < 2 {
        return Err(Error::invalid("grid_size must be at least 2"));
    }
    let iv = lambda_interval(moments, options.eps_rel)?;
    if iv.empty {
        return Err(Error::invalid("Q = 0: the regularization path is identically zero"));
    }
    let grid = log_grid(iv.lambda_min, iv.lambda_max, options.grid_size);
    path_on_grid(moments, &grid, options.warm_start, options.execution, config)
}

/// Solves at every λ of `grid`; warm starts follow grid order, so pass a
/// descending grid. Failures are recorded per point.
pub fn path_on_grid(
    moments: &EmpiricalMoments,
    grid: &[f64],
    warm_start: bool,
    execution: Execution,
    config: &SolverConfig,
) -> Result<PathResult> {
    config.validate()?;
    for &l in grid {
        check_lambda(l)?;
    }
    let prep = prepare(moments)?;
    let point = PathPoint::from_outcome;
    let points = if warm_start {
        let mut prev: Option<DMatrix<f64>> = None;
        let mut pts = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let pt = point(lambda, solve_prepared(&prep, lambda, config, prev.as_ref()));
            if let Some(r) = &pt.result {
                prev = Some(r.w.clone());
            }
            pts.push(pt);
        }
        pts
    } else {
        par::map_indexed(grid.len(), execution, |i| point(grid[i], solve_prepared(&prep, grid[i], config, None)))
    };
    Ok(PathResult { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{kkt_residual, objective_value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, q, |_, _| rng.sample(StandardNormal))
    }

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let g = randn(rng, d, d);
        g.transpose() * g / d as f64 + DMatrix::identity(d, d) * 0.1
    }

    fn soft_threshold(q: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let t = spectral::full_svd(q).unwrap();
        let mut us = t.u.clone();
        for (j, s) in t.s.iter().enumerate() {
            us.column_mut(j).scale_mut((s - lambda).max(0.0));
        }
        us * t.v.transpose()
    }

    #[test]
    fn zero_solution_above_spectral_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = randn(&mut rng, 4, 3);
        let mo = EmpiricalMoments::identity(q.clone());
        let r = smoothed_solve(&mo, spectral::spectral_norm(&q) * 1.01, &SolverConfig::default(), None).unwrap();
        assert!(r.w.norm() <= 1e-6);
        assert_eq!(r.estimated_rank, 0);
    }

    #[test]
    fn identity_design_soft_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = randn(&mut rng, 4, 3);
        let lambda = 0.5 * spectral::spectral_norm(&q);
        let mo = EmpiricalMoments::identity(q.clone());
        let r = smoothed_solve(&mo, lambda, &SolverConfig::default(), None).unwrap();
        let st = soft_threshold(&q, lambda);
        assert!((&r.w - &st).norm() <= 1e-6, "{}", (&r.w - &st).norm());
        assert!(kkt_residual(&st, &mo, lambda, 1e-8).unwrap().optimal);
        assert_eq!(r.estimated_rank, spectral::full_svd(&st).unwrap().numerical_rank);
        assert!(r.duality_gap <= 1e-9 * 3.0);
    }

    #[test]
    fn dual_candidate_attains_the_smoothing_max() {
        assert_eq!(dual_candidate(&DMatrix::zeros(3, 2), 0.1).unwrap(), DMatrix::zeros(3, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = randn(&mut rng, 4, 3);
        let eps = 0.3;
        let v = dual_candidate(&w, eps).unwrap();
        assert!(spectral::spectral_norm(&v) <= 1.0 + 1e-12);
        let lhs = v.dot(&w) - eps * barrier_sum(&v);
        let f = spectral::smoothed_trace_norm(&w, eps).unwrap();
        assert!((lhs - f).abs() <= 1e-10 * f.abs());
    }

    #[test]
    fn tanh_maximizer_matches_scalar_search() {
        // golden-section maximization of s·v − ε b(v) on (−1, 1)
        let eps = 0.05;
        for &s in &[0.0, 0.01, 0.1, 0.4, 2.0] {
            let obj = |v: f64| s * v - eps * spectral::barrier_primal(v);
            let (mut a, mut b) = (-1.0_f64, 1.0_f64);
            let gr = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - gr * (b - a);
                let d = a + gr * (b - a);
                if obj(c) > obj(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let v_num = 0.5 * (a + b);
            let v_closed = (s / (2.0 * eps)).tanh();
            assert!((v_num - v_closed).abs() < 1e-7, "s={s}: {v_num} vs {v_closed}");
            assert!(v_closed <= 1.0);
        }
    }

    #[test]
    fn gap_matches_primal_minus_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = random_pd(&mut rng, 12);
        let q = randn(&mut rng, 4, 3);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let w = randn(&mut rng, 4, 3) * 0.3;
        let (lambda, eps) = (0.4, 1e-2);
        let gap = duality_gap(&w, &mo, lambda, eps).unwrap();
        let v = dual_candidate(&w, eps / lambda).unwrap();
        let diff = smoothed_primal(&w, &mo, lambda, eps).unwrap() - smoothed_dual(&v, &mo, lambda, eps).unwrap();
        assert!(gap > 0.0);
        assert!((gap - diff).abs() <= 1e-10 * gap.max(1.0));

        let zero = EmpiricalMoments::new(DMatrix::identity(4, 4), DMatrix::zeros(2, 2), 1).unwrap();
        assert_eq!(duality_gap(&DMatrix::zeros(2, 2), &zero, 1.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn gap_and_objective_decrease_along_newton_iterates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = random_pd(&mut rng, 9);
        let q = randn(&mut rng, 3, 3);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let cfg = SolverConfig { trace: true, eps_init: Some(1e-2), eps_target: 1e-2, ..Default::default() };
        let r = smoothed_solve(&mo, 0.3, &cfg, Some(&(randn(&mut rng, 3, 3) * 2.0))).unwrap();
        let rows: Vec<_> = r.trace.iter().filter(|t| t.stage == 0).collect();
        assert!(rows.len() >= 3);
        for pair in rows.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-12);
        }
        // once Newton is in its quadratic phase the gap decreases monotonically
        let tail: Vec<f64> = rows.iter().rev().take(3).rev().map(|t| t.gap).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn converged_gap_meets_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sigma = random_pd(&mut rng, 16);
        let q = randn(&mut rng, 4, 4);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let cfg = SolverConfig::default();
        let r = smoothed_solve(&mo, 0.2, &cfg, None).unwrap();
        assert!(r.duality_gap <= cfg.eps_target * 4.0);
        assert!(r.duality_gap >= -1e-12);
        assert!((r.raw_gap_bound - (1.0 + 2.0 * LN_2) * 4e-9).abs() < 1e-20);
        let gap = duality_gap(&r.w, &mo, 0.2, r.eps_final).unwrap();
        assert!(gap <= cfg.eps_target * 4.0);
    }

    #[test]
    fn lambda_interval_rank_one_and_degenerate() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = DVector::from_vec(vec![0.0, 1.0]);
        let q = &u * v.transpose() * 3.0;
        let mo = EmpiricalMoments::identity(q);
        let iv = lambda_interval(&mo, 0.01).unwrap();
        assert!((iv.lambda_max - 3.0).abs() < 1e-12);
        assert!((iv.lambda_min - 0.03).abs() < 1e-12);
        let z = EmpiricalMoments::identity(DMatrix::zeros(2, 2));
        assert!(lambda_interval(&z, 0.01).unwrap().empty);
        assert!(lambda_interval(&mo, 1.5).is_err());
    }

    #[test]
    fn solution_vanishes_just_above_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = random_pd(&mut rng, 12);
        let q = randn(&mut rng, 3, 4);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let iv = lambda_interval(&mo, 0.01).unwrap();
        let r = smoothed_solve(&mo, 1.01 * iv.lambda_max, &SolverConfig::default(), None).unwrap();
        assert!(r.w.norm() <= 1e-8, "{}", r.w.norm());
    }

    #[test]
    fn path_endpoints_monotonicity_and_warm_start_savings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sigma = random_pd(&mut rng, 16);
        let q = randn(&mut rng, 4, 4);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let cfg = SolverConfig::default();
        let opts = PathOptions { grid_size: 15, ..Default::default() };
        let warm = regularization_path(&mo, &opts, &cfg).unwrap();
        assert_eq!(warm.failures(), 0);
        let first = warm.points.first().unwrap().result.as_ref().unwrap();
        let last = warm.points.last().unwrap().result.as_ref().unwrap();
        assert!(first.estimated_rank <= 1);
        assert_eq!(last.estimated_rank, 4);
        let norms: Vec<f64> = warm
            .points
            .iter()
            .map(|p| spectral::trace_norm(&p.result.as_ref().unwrap().w).unwrap())
            .collect();
        // λ descending ⇒ trace norm nondecreasing along the grid
        assert!(norms.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        let cold = regularization_path(&mo, &PathOptions { warm_start: false, ..opts }, &cfg).unwrap();
        assert!(warm.total_newton_iters() < cold.total_newton_iters());
        for (a, b) in warm.points.iter().zip(&cold.points) {
            let (a, b) = (a.result.as_ref().unwrap(), b.result.as_ref().unwrap());
            assert!((&a.w - &b.w).norm() < 1e-6);
        }
    }

    #[test]
    fn objective_within_certificate_of_tighter_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sigma = random_pd(&mut rng, 9);
        let q = randn(&mut rng, 3, 3);
        let mo = EmpiricalMoments::new(sigma, q, 10).unwrap();
        let cfg = SolverConfig { eps_target: 1e-6, ..Default::default() };
        let r = smoothed_solve(&mo, 0.3, &cfg, None).unwrap();
        let tight = smoothed_solve(&mo, 0.3, &SolverConfig { eps_target: 1e-8, ..cfg.clone() }, None).unwrap();
        let f = objective_value(&r.w, &mo, 0.3, None).unwrap().moment_form;
        let f_ref = objective_value(&tight.w, &mo, 0.3, None).unwrap().moment_form;
        assert!(f - f_ref <= (1.0 + 2.0 * LN_2) * 1e-6 * 3.0);
    }

    #[test]
    fn infeasible_and_invalid_inputs() {
        // singular Σ with Q outside its range
        let mut sigma = DMatrix::zeros(4, 4);
        sigma[(0, 0)] = 1.0;
        let mut q = DMatrix::zeros(2, 2);
        q[(1, 1)] = 1.0;
        let mo = EmpiricalMoments::new(sigma, q, 1).unwrap();
        assert!(matches!(smoothed_solve(&mo, 0.1, &SolverConfig::default(), None), Err(Error::InfeasibleDual(_))));
        let ok = EmpiricalMoments::identity(DMatrix::zeros(2, 2));
        assert!(smoothed_solve(&ok, 0.0, &SolverConfig::default(), None).is_err());
        let bad = SolverConfig { eps_factor: 1.5, ..Default::default() };
        assert!(smoothed_solve(&ok, 1.0, &bad, None).is_err());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = randn(&mut rng, 3, 3);
        let mo = EmpiricalMoments::identity(q);
        let cfg = SolverConfig { max_newton_iters: 1, ..Default::default() };
        match smoothed_solve(&mo, 0.1, &cfg, None) {
            Err(Error::NonConverged { best: Some(b), .. }) => assert!(b.w.iter().all(|x| x.is_finite())),
            other => panic!("expected NonConverged, got {:?}", other.map(|r| r.newton_iters)),
        }
    }

    #[test]
    fn soft_thresholding_across_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = SolverConfig::default();
        for _ in 0..25 {
            let p = rng.random_range(1..=5);
            let q = rng.random_range(1..=5);
            let qm = randn(&mut rng, p, q);
            let lambda = spectral::spectral_norm(&qm) * rng.random_range(0.05..1.2);
            let r = smoothed_solve(&EmpiricalMoments::identity(qm.clone()), lambda, &cfg, None).unwrap();
            assert!((&r.w - soft_threshold(&qm, lambda)).norm() <= 1e-6);
        }
    }

    #[test]
    fn lasso_embedding_gives_diagonal_shrinkage() {
        use crate::problem::{embed_design, DesignKind};
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 4;
        let emb = embed_design(DesignKind::Lasso, &[1; 4]).unwrap();
        for _ in 0..5 {
            let d: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
            let qx: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let sxx = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
            let sigma = &emb.h * sxx * emb.h.transpose();
            let qm = linalg::unvec(&(&emb.h * DVector::from_vec(qx.clone())), m, m);
            let mo = EmpiricalMoments::new(sigma, qm, 10).unwrap();
            let lambda = 0.5;
            let r = smoothed_solve(&mo, lambda, &SolverConfig::default(), None).unwrap();
            let mut off = r.w.clone();
            off.fill_diagonal(0.0);
            assert!(off.norm() <= 1e-8 * r.w.norm().max(1e-300) + 1e-12);
            for i in 0..m {
                let expect = qx[i].signum() * (qx[i].abs() - lambda).max(0.0) / d[i];
                assert!((r.w[(i, i)] - expect).abs() <= 1e-6, "{i}: {} vs {expect}", r.w[(i, i)]);
            }
        }
    }
}
