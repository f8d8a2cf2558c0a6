//! Subcommand implementations. Every command prints a JSON summary on
//! stdout and writes its artifacts under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use tracenorm::adaptive::{adaptive_solve, adaptive_weights, least_squares_estimate};
use tracenorm::consistency::{check_conditions, complement_block_norm, GroundTruthModel, DEFAULT_MARGIN};
use tracenorm::experiments::output::{fmt, path_table, replication_table, scatter_table, write_table, Table};
use tracenorm::experiments::plot::{path_figure, render, replication_figure, scatter_figure};
use tracenorm::experiments::{
    lambda_error_scatter, median, resolve_grid, run_replications, sign_test_greater, solve_dataset, ExperimentConfig,
    Method,
};
use tracenorm::par::Execution;
use tracenorm::problem::assemble_moments;
use tracenorm::problem::io::{read_dataset, write_dataset};
use tracenorm::simulation::{generate_ground_truth, sample};
use tracenorm::solver::{smoothed_solve, TraceRow};
use tracenorm::{EmpiricalMoments, Error, Result, SolveResult};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Settings every command sees.
pub struct Context {
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
    pub execution: Execution,
    pub trace: bool,
}

impl Context {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(p)
    }

    fn write_svg(&self, name: &str, svg: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let p = self.path(name);
        fs::write(&p, svg)?;
        Ok(p)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

/// Moments from a dataset file, or from a fresh synthetic sample (with its
/// ground truth) when no file is given.
fn load_problem(data: Option<&Path>, manifest: Option<&Path>, cfg: &RunConfig) -> Result<(EmpiricalMoments, Option<GroundTruthModel>)> {
    match data {
        Some(path) => {
            let (_, obs) = read_dataset(path, manifest)?;
            Ok((assemble_moments(&obs)?, None))
        }
        None => {
            let model = generate_ground_truth(&cfg.spec)?;
            let obs = sample(&cfg.spec, &model)?;
            Ok((assemble_moments(&obs)?, Some(model)))
        }
    }
}

fn trace_table(trace: &[TraceRow]) -> Table {
    let mut t = Table::new(&["stage", "iteration", "eps", "objective", "gap", "step"]);
    for r in trace {
        t.push(vec![
            r.stage.to_string(),
            r.iteration.to_string(),
            fmt(r.eps),
            fmt(r.objective),
            fmt(r.gap),
            fmt(r.step),
        ]);
    }
    t
}

fn solve_summary(r: &SolveResult, truth: Option<&GroundTruthModel>) -> Value {
    json!({
        "lambda": r.lambda,
        "rank": r.estimated_rank,
        "singular_values": r.svd.s.as_slice(),
        "duality_gap": r.duality_gap,
        "raw_gap_bound": r.raw_gap_bound,
        "newton_iters": r.newton_iters,
        "eps_final": r.eps_final,
        "rmse": truth.map(|m| (&r.w - m.w()).norm()),
        "w": rows(&r.w),
    })
}

pub fn solve(ctx: &Context, cfg: &RunConfig, data: Option<&Path>, manifest: Option<&Path>, lambda: f64) -> Result<Value> {
    let (moments, truth) = load_problem(data, manifest, cfg)?;
    let solver = tracenorm::SolverConfig { trace: ctx.trace || cfg.solver.trace, ..cfg.solver.clone() };
    let outcome = match cfg.method {
        Method::Plain => smoothed_solve(&moments, lambda, &solver, None),
        Method::Adaptive { gamma } => {
            let pilot = least_squares_estimate(&moments)?;
            let weights = adaptive_weights(&pilot, gamma, moments.n)?;
            adaptive_solve(&moments, lambda, &weights, &solver)
        }
    };
    // a stalled solve still leaves its trace behind for diagnosis
    let trace = match &outcome {
        Ok(r) => Some(&r.trace),
        Err(Error::NonConverged { best: Some(b), .. }) => Some(&b.trace),
        Err(_) => None,
    };
    let mut written = Vec::new();
    if solver.trace {
        if let Some(t) = trace {
            let p = ctx.path("solve_trace.csv");
            write_table(&p, &trace_table(t), &json!({ "lambda": lambda, "config": cfg }))?;
            written.push(p);
        }
    }
    let r = outcome?;
    let mut summary = solve_summary(&r, truth.as_ref());
    if ctx.wants(Format::Csv) {
        let mut t = Table::new(&[]);
        t.header = (1..=r.w.ncols()).map(|j| format!("w{j}")).collect();
        for row in rows(&r.w) {
            t.push(row.into_iter().map(fmt).collect());
        }
        let p = ctx.path("solve_w.csv");
        let mut meta = summary.clone();
        meta["w"] = Value::Null;
        write_table(&p, &t, &json!({ "result": meta, "config": cfg, "data": data }))?;
        written.push(p);
    }
    if ctx.wants(Format::Json) {
        written.push(ctx.write_json("solve.json", &json!({ "result": summary, "config": cfg }))?);
    }
    summary["written"] = json!(display(&written));
    Ok(summary)
}

pub fn path(ctx: &Context, cfg: &RunConfig, data: Option<&Path>, manifest: Option<&Path>) -> Result<Value> {
    let (result, table, grid_len) = match data {
        Some(_) => {
            let (moments, _) = load_problem(data, manifest, cfg)?;
            let grid = explicit_or_sample_grid(cfg, &moments)?;
            let result = path_with_method(&moments, &grid, cfg)?;
            let k = moments.p.min(moments.q);
            let table = path_table(&result, k, None);
            (result, table, grid.len())
        }
        None => {
            let model = generate_ground_truth(&cfg.spec)?;
            let exp = cfg.experiment(cfg.spec.n);
            let grid = resolve_grid(&exp, &model)?;
            let result = solve_dataset(&cfg.spec, &model, cfg.method, &grid, &cfg.solver)?;
            let k = model.p().min(model.q());
            let truth_s = model.s.as_slice().to_vec();
            let table = path_table(&result, k, Some((&model.w(), &truth_s)));
            (result, table, grid.len())
        }
    };
    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        let p = ctx.path("path.csv");
        write_table(&p, &table, &json!({ "config": cfg, "data": data }))?;
        files.push(p);
    }
    if ctx.wants(Format::Json) {
        files.push(ctx.write_json("path.json", &result)?);
    }
    if ctx.wants(Format::Svg) {
        let title = format!("singular value path ({})", cfg.method.label());
        files.push(ctx.write_svg("path.svg", &render(&path_figure(&table, &title)?))?);
    }
    let failed: Vec<Value> = result
        .points
        .iter()
        .filter(|p| !p.converged())
        .map(|p| json!({ "lambda": p.lambda, "error": p.error, "kept_best_iterate": p.result.is_some() }))
        .collect();
    let ranks: Vec<Option<usize>> = result.points.iter().map(|p| p.result.as_ref().map(|r| r.estimated_rank)).collect();
    Ok(json!({
        "grid_size": grid_len,
        "lambdas": result.lambdas(),
        "ranks": ranks,
        "failed_points": failed,
        "total_newton_iters": result.total_newton_iters(),
        "written": display(&files),
    }))
}

fn explicit_or_sample_grid(cfg: &RunConfig, moments: &EmpiricalMoments) -> Result<Vec<f64>> {
    use tracenorm::experiments::GridSpec;
    use tracenorm::solver::{lambda_interval, log_grid};
    match &cfg.grid {
        GridSpec::Explicit { values } => {
            let mut v = values.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
            Ok(v)
        }
        GridSpec::Auto { count, eps_rel } => {
            // no population problem for a dataset: use the sample endpoints
            let iv = lambda_interval(moments, *eps_rel)?;
            Ok(log_grid(iv.lambda_min, iv.lambda_max, *count))
        }
    }
}

fn path_with_method(moments: &EmpiricalMoments, grid: &[f64], cfg: &RunConfig) -> Result<tracenorm::solver::PathResult> {
    use tracenorm::adaptive::adaptive_path;
    use tracenorm::solver::path_on_grid;
    match cfg.method {
        Method::Plain => path_on_grid(moments, grid, true, Execution::Sequential, &cfg.solver),
        Method::Adaptive { gamma } => {
            let pilot = least_squares_estimate(moments)?;
            let weights = adaptive_weights(&pilot, gamma, moments.n)?;
            adaptive_path(moments, grid, &weights, &cfg.solver)
        }
    }
}

pub fn consistency_check(ctx: &Context, cfg: &RunConfig) -> Result<Value> {
    let model = generate_ground_truth(&cfg.spec)?;
    let report = check_conditions(&model, DEFAULT_MARGIN)?;
    let summary = json!({
        "lambda_norm": report.lambda_norm,
        "weak_ok": report.weak_ok,
        "strict_ok": report.strict_ok,
        "boundary": report.boundary,
        "saddle_residual": report.saddle_residual,
        "complement_block_norm": complement_block_norm(&model, &report.delta),
        "true_singular_values": model.s.as_slice(),
    });
    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        let mut t = Table::new(&["lambda_norm", "weak_ok", "strict_ok", "boundary", "saddle_residual"]);
        t.push(vec![
            fmt(report.lambda_norm),
            report.weak_ok.to_string(),
            report.strict_ok.to_string(),
            report.boundary.to_string(),
            fmt(report.saddle_residual),
        ]);
        let p = ctx.path("consistency.csv");
        write_table(&p, &t, &json!({ "config": cfg }))?;
        files.push(p);
    }
    if ctx.wants(Format::Json) {
        files.push(ctx.write_json("consistency.json", &json!({ "report": report, "model": model, "config": cfg }))?);
    }
    let mut out = summary;
    out["written"] = json!(display(&files));
    Ok(out)
}

pub fn simulate(ctx: &Context, cfg: &RunConfig, name: &str) -> Result<Value> {
    let model = generate_ground_truth(&cfg.spec)?;
    let obs = sample(&cfg.spec, &model)?;
    fs::create_dir_all(&ctx.out_dir)?;
    let csv = ctx.path(&format!("{name}.csv"));
    let manifest = write_dataset(&csv, &obs)?;
    let truth = ctx.write_json(&format!("{name}.truth.json"), &json!({ "model": model, "config": cfg }))?;
    Ok(json!({
        "n": obs.len(),
        "manifest": manifest,
        "true_singular_values": model.s.as_slice(),
        "written": display(&[csv.clone(), tracenorm::problem::io::default_manifest_path(&csv), truth]),
    }))
}

pub fn replicate(ctx: &Context, cfg: &RunConfig) -> Result<Value> {
    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for &n in &cfg.n_values {
        let exp: ExperimentConfig = cfg.experiment(n);
        let report = run_replications(&exp, ctx.execution)?;
        let table = replication_table(&report);
        if ctx.wants(Format::Csv) {
            let p = ctx.path(&format!("replicate_n{n}.csv"));
            let meta = json!({
                "experiment": exp,
                "true_rank": report.true_rank,
                "lambda_norm": report.lambda_norm,
                "n_completed": report.n_completed,
                "inexact_points": report.inexact_points,
                "failures": report.failures,
            });
            write_table(&p, &table, &meta)?;
            files.push(p);
        }
        let iv = report.high_frequency_interval(0.8);
        summaries.push(json!({
            "n": n,
            "lambda_norm": report.lambda_norm,
            "n_completed": report.n_completed,
            "excluded": report.failures.len(),
            "interval_0_8": iv,
            "best_rmse": report.best_rmse(),
            "tradeoff_points": report.tradeoff_indices(0.8, 2.0).len(),
        }));
        curves.push((format!("n = {n}"), table));
        reports.push(report);
    }
    if ctx.wants(Format::Json) {
        files.push(ctx.write_json("replicate.json", &reports)?);
    }
    if ctx.wants(Format::Svg) {
        let label = cfg.method.label();
        let f = replication_figure(&curves, "correct_rank_frequency", &format!("correct rank frequency ({label})"))?;
        files.push(ctx.write_svg("replicate_frequency.svg", &render(&f))?);
        let e = replication_figure(&curves, "log10_mean_rmse", &format!("log10 mean error ({label})"))?;
        files.push(ctx.write_svg("replicate_error.svg", &render(&e))?);
    }
    Ok(json!({ "runs": summaries, "written": display(&files) }))
}

pub fn scatter(ctx: &Context, cfg: &RunConfig) -> Result<Value> {
    let sc = cfg.scatter();
    let report = lambda_error_scatter(&sc, ctx.execution)?;
    let table = scatter_table(&report);
    let mut files = Vec::new();
    if ctx.wants(Format::Csv) {
        let p = ctx.path("scatter.csv");
        let meta = json!({ "config": sc, "inexact_points": report.inexact_points, "failures": report.failures });
        write_table(&p, &table, &meta)?;
        files.push(p);
    }
    if ctx.wants(Format::Json) {
        files.push(ctx.write_json("scatter.json", &report)?);
    }
    if ctx.wants(Format::Svg) {
        let f = scatter_figure(&table, "best correct-rank error against log10 ||Lambda||_2")?;
        files.push(ctx.write_svg("scatter.svg", &render(&f))?);
    }
    let (below, above) = report.split(-0.2, 0.2);
    let test = sign_test_greater(&below, &above);
    Ok(json!({
        "designs": report.rows.len(),
        "excluded": report.failures.len(),
        "flagged_no_correct_rank": report.rows.iter().filter(|r| !r.correct_rank_found).count(),
        "median_error_below": if below.is_empty() { None } else { Some(median(&below)) },
        "median_error_above": if above.is_empty() { None } else { Some(median(&above)) },
        "sign_test": test,
        "written": display(&files),
    }))
}
