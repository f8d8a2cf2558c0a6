//! Resolved run configuration: JSON file first, then command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tracenorm::experiments::{ExperimentConfig, GridSpec, Method, ScatterConfig};
use tracenorm::simulation::{DesignSpec, SamplingMode, SyntheticSpec};
use tracenorm::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub spec: SyntheticSpec,
    pub method: Method,
    pub grid: GridSpec,
    pub n_replicates: usize,
    /// Sample sizes swept by `replicate`.
    pub n_values: Vec<usize>,
    pub scatter: ScatterSettings,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterSettings {
    pub n_designs: usize,
    pub condition_range: (f64, f64),
}

impl Default for ScatterSettings {
    fn default() -> Self {
        let d = ScatterConfig::default();
        Self { n_designs: d.n_designs, condition_range: d.condition_range }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            spec: e.spec,
            method: e.method,
            grid: e.grid,
            n_replicates: e.n_replicates,
            n_values: vec![100, 1_000, 10_000],
            scatter: ScatterSettings::default(),
            solver: e.solver,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> tracenorm::Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
            None => Ok(Self::default()),
        }
    }

    /// Full-scale settings: 200 replicates and n up to 1e5.
    pub fn full_scale(&mut self) {
        self.n_replicates = 200;
        self.n_values = vec![100, 1_000, 10_000, 100_000];
    }

    pub fn experiment(&self, n: usize) -> ExperimentConfig {
        ExperimentConfig {
            spec: SyntheticSpec { n, ..self.spec.clone() },
            method: self.method,
            grid: self.grid.clone(),
            n_replicates: self.n_replicates,
            solver: self.solver.clone(),
        }
    }

    pub fn scatter(&self) -> ScatterConfig {
        let (count, eps_rel) = auto_params(&self.grid);
        ScatterConfig {
            n_designs: self.scatter.n_designs,
            template: self.spec.clone(),
            base_seed: self.spec.seed,
            condition_range: self.scatter.condition_range,
            grid_count: count,
            grid_eps_rel: eps_rel,
            solver: self.solver.clone(),
        }
    }
}

/// Automatic grid parameters, falling back to the scatter defaults for
/// explicit grids.
fn auto_params(grid: &GridSpec) -> (usize, f64) {
    match grid {
        GridSpec::Auto { count, eps_rel } => (*count, *eps_rel),
        GridSpec::Explicit { .. } => {
            let d = ScatterConfig::default();
            (d.grid_count, d.grid_eps_rel)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DesignArg {
    Identity,
    RandomPd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Plain,
    Adaptive,
}

/// Synthetic model overrides shared by several subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SpecArgs {
    /// Rows of W.
    #[arg(long)]
    pub p: Option<usize>,
    /// Columns of W.
    #[arg(long)]
    pub q: Option<usize>,
    /// True rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Covariance of the x and y covariates.
    #[arg(long, value_enum)]
    pub design: Option<DesignArg>,
    /// Condition number target for `random-pd` designs.
    #[arg(long, default_value_t = 10.0)]
    pub kappa: f64,
    /// Collaborative sampling with this many x and y prototypes, e.g. `20,30`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub collaborative: Option<Vec<usize>>,
}

impl SpecArgs {
    pub fn apply(&self, spec: &mut SyntheticSpec) {
        if let Some(v) = self.p {
            spec.p = v;
        }
        if let Some(v) = self.q {
            spec.q = v;
        }
        if let Some(v) = self.rank {
            spec.r = v;
        }
        if let Some(v) = self.n {
            spec.n = v;
        }
        if let Some(v) = self.noise {
            spec.sigma_noise = v;
        }
        match self.design {
            Some(DesignArg::Identity) => spec.design = DesignSpec::Identity,
            Some(DesignArg::RandomPd) => spec.design = DesignSpec::RandomPd { condition_target: self.kappa },
            None => {}
        }
        if let Some(c) = &self.collaborative {
            spec.mode = SamplingMode::Collaborative { n_x: c[0], n_y: c[1] };
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct MethodArgs {
    /// Plain or adaptive trace-norm penalty.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Adaptive exponent γ.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Number of automatic grid points.
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// Lower grid endpoint relative to the upper one.
    #[arg(long)]
    pub eps_rel: Option<f64>,
    /// Explicit λ grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
}

impl MethodArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self.method {
            Some(MethodArg::Plain) => cfg.method = Method::Plain,
            Some(MethodArg::Adaptive) => cfg.method = Method::Adaptive { gamma: self.gamma },
            None => {}
        }
        if let Some(values) = &self.lambdas {
            cfg.grid = GridSpec::Explicit { values: values.clone() };
        } else if self.grid_count.is_some() || self.eps_rel.is_some() {
            let (c0, e0) = auto_params(&cfg.grid);
            cfg.grid = GridSpec::Auto { count: self.grid_count.unwrap_or(c0), eps_rel: self.eps_rel.unwrap_or(e0) };
        }
    }
}
