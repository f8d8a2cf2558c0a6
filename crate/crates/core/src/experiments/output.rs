//! CSV tables with JSON metadata sidecars.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a table
//! is byte-identical whenever its values are bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use super::{ReplicationReport, ScatterReport};
use crate::error::{Error, Result};
use crate::solver::PathResult;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("table has no column {name:?}")))
    }

    /// Numeric column; empty or unparsable cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }
}

/// `results.csv` → `results.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the table and a pretty-printed metadata sidecar next to it.
pub fn write_table<M: Serialize>(path: &Path, table: &Table, metadata: &M) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, table.to_csv_string()?)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(metadata)? + "\n")?;
    Ok(())
}

pub fn replication_table(report: &ReplicationReport) -> Table {
    let mut t = Table::new(&["lambda", "log10_lambda", "correct_rank_frequency", "mean_rmse", "log10_mean_rmse"]);
    for (k, &l) in report.lambdas.iter().enumerate() {
        t.push(vec![
            fmt(l),
            fmt(l.log10()),
            fmt(report.correct_rank_frequency[k]),
            fmt(report.mean_rmse[k]),
            fmt(report.log10_mean_rmse[k]),
        ]);
    }
    t
}

pub fn scatter_table(report: &ScatterReport) -> Table {
    let mut t = Table::new(&[
        "design",
        "seed",
        "condition_target",
        "lambda_norm",
        "log10_lambda_norm",
        "best_error",
        "lambda_at_best",
        "correct_rank_found",
    ]);
    for r in &report.rows {
        t.push(vec![
            r.design.to_string(),
            r.seed.to_string(),
            fmt(r.condition_target),
            fmt(r.lambda_norm),
            fmt(r.log10_lambda_norm),
            fmt(r.best_error),
            fmt(r.lambda_at_best),
            r.correct_rank_found.to_string(),
        ]);
    }
    t
}

/// Columns `lambda, s1..sk, rank, gap, rmse`, plus `true_s1..` when the truth
/// is known. Failed points keep their λ and leave the other cells empty.
pub fn path_table(path: &PathResult, k: usize, truth: Option<(&DMatrix<f64>, &[f64])>) -> Table {
    let mut header: Vec<String> = vec!["lambda".into()];
    header.extend((1..=k).map(|i| format!("s{i}")));
    header.extend(["rank", "gap", "rmse"].map(String::from));
    if truth.is_some() {
        header.extend((1..=k).map(|i| format!("true_s{i}")));
    }
    let mut t = Table { header, rows: Vec::new() };
    for pt in &path.points {
        let mut row = vec![fmt(pt.lambda)];
        match &pt.result {
            Some(r) => {
                row.extend((0..k).map(|i| fmt(r.svd.s.get(i).copied().unwrap_or(0.0))));
                row.push(r.estimated_rank.to_string());
                row.push(fmt(r.duality_gap));
                row.push(truth.map_or(String::new(), |(w, _)| fmt((&r.w - w).norm())));
            }
            None => row.extend(std::iter::repeat_n(String::new(), k + 3)),
        }
        if let Some((_, s)) = truth {
            row.extend((0..k).map(|i| fmt(s.get(i).copied().unwrap_or(0.0))));
        }
        t.rows.push(row);
    }
    t
}
