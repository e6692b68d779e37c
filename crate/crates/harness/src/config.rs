//! Scenario configuration, read from JSON.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gi_filter::filter::ExpMapMethod;
use gi_filter::linalg::{Matrix, Vector};
use gi_filter::models::{LinearParams, Tracking9DParams};
use gi_filter::FilterConfig;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Gif,
    Ekf,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Gif => "gif",
            FilterKind::Ekf => "ekf",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "gif" => Ok(FilterKind::Gif),
            "ekf" => Ok(FilterKind::Ekf),
            other => Err(format!("unknown filter `{other}` (expected gif or ekf)")),
        }
    }
}

/// Cubic benchmark parameters; the observation interval comes from the
/// scenario's `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cubic1DConfig {
    pub p_crit: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Row-major matrices of the linear-Gaussian model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub a: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl LinearConfig {
    pub fn params(&self) -> Result<LinearParams> {
        Ok(LinearParams {
            a_mat: matrix("model.a", &self.a)?,
            sigma_mat: matrix("model.sigma", &self.sigma)?,
            j_mat: matrix("model.j", &self.j)?,
            b_mat: matrix("model.b", &self.b)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Cubic1d(Cubic1DConfig),
    Tracking9d(Tracking9DParams),
    Linear(LinearConfig),
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Cubic1d(_) => 1,
            ModelConfig::Tracking9d(_) => 9,
            ModelConfig::Linear(l) => l.a.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialEstimate {
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
}

/// One long run, or `runs` independent runs sharing the `n_obs` budget.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunMode {
    #[default]
    Single,
    Independent { runs: usize },
}

impl RunMode {
    pub fn runs(&self) -> usize {
        match self {
            RunMode::Single => 1,
            RunMode::Independent { runs } => *runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "defaults::trajectory_file")]
    pub trajectory: String,
    #[serde(default = "defaults::summary_file")]
    pub summary: String,
    #[serde(default = "defaults::histogram_file")]
    pub histogram: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            trajectory: defaults::trajectory_file(),
            summary: defaults::summary_file(),
            histogram: defaults::histogram_file(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub delta: f64,
    pub n_obs: usize,
    pub initial_estimate: InitialEstimate,
    /// True initial state; defaults to `initial_estimate.mu0`.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::n_substeps")]
    pub n_substeps: usize,
    /// Euler-Maruyama steps per observation interval.
    #[serde(default = "defaults::sim_substeps")]
    pub sim_substeps: usize,
    #[serde(default = "defaults::filters")]
    pub filters: Vec<FilterKind>,
    #[serde(default = "defaults::enabled")]
    pub collar_enabled: bool,
    #[serde(default = "defaults::enabled")]
    pub quadratic_enabled: bool,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "defaults::exp_map")]
    pub exp_map: ExpMapMethod,
    #[serde(default)]
    pub runs: RunMode,
    #[serde(default = "defaults::histogram_bins")]
    pub histogram_bins: usize,
    #[serde(default = "defaults::tail_quantile")]
    pub tail_quantile: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

mod defaults {
    use super::*;

    pub fn n_substeps() -> usize {
        8
    }
    pub fn sim_substeps() -> usize {
        20
    }
    pub fn filters() -> Vec<FilterKind> {
        vec![FilterKind::Gif, FilterKind::Ekf]
    }
    pub fn enabled() -> bool {
        true
    }
    pub fn exp_map() -> ExpMapMethod {
        ExpMapMethod::Series
    }
    pub fn histogram_bins() -> usize {
        50
    }
    pub fn tail_quantile() -> f64 {
        0.95
    }
    pub fn trajectory_file() -> String {
        "trajectory.csv".into()
    }
    pub fn summary_file() -> String {
        "summary.json".into()
    }
    pub fn histogram_file() -> String {
        "histogram.csv".into()
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(HarnessError::Config(format!("{name} must be a non-empty rectangular matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HarnessError::Config(format!("{name} has non-finite entries")));
    }
    Ok(Matrix::from_fn(n, m, |i, k| rows[i][k]))
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.n_obs == 0 {
            return bad("n_obs must be at least 1".into());
        }
        if self.n_substeps == 0 || self.sim_substeps == 0 {
            return bad("n_substeps and sim_substeps must be at least 1".into());
        }
        if self.filters.is_empty() {
            return bad("filters must name at least one of gif, ekf".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be at least 1".into());
        }
        if !(self.tail_quantile > 0.0 && self.tail_quantile < 1.0) {
            return bad(format!("tail_quantile must lie in (0, 1), got {}", self.tail_quantile));
        }
        let runs = self.runs.runs();
        if runs == 0 || self.n_obs % runs != 0 {
            return bad(format!("n_obs ({}) must be a positive multiple of runs ({runs})", self.n_obs));
        }
        let dim = self.model.dim();
        if self.initial_estimate.mu0.len() != dim {
            return bad(format!(
                "initial_estimate.mu0 has length {}, model dimension is {dim}",
                self.initial_estimate.mu0.len()
            ));
        }
        let sigma0 = matrix("initial_estimate.sigma0", &self.initial_estimate.sigma0)?;
        if sigma0.nrows() != dim || sigma0.ncols() != dim {
            return bad(format!("initial_estimate.sigma0 must be {dim}x{dim}"));
        }
        if let Some(x0) = &self.initial_state {
            if x0.len() != dim {
                return bad(format!("initial_state has length {}, model dimension is {dim}", x0.len()));
            }
        }
        self.filter_config().validate()?;
        Ok(())
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            delta: self.delta,
            n_substeps: self.n_substeps,
            collar_enabled: self.collar_enabled,
            quadratic_enabled: self.quadratic_enabled,
            jitter: self.jitter,
            exp_map: self.exp_map,
        }
    }

    pub fn mu0(&self) -> Vector {
        Vector::from_column_slice(&self.initial_estimate.mu0)
    }

    pub fn sigma0(&self) -> Result<Matrix> {
        matrix("initial_estimate.sigma0", &self.initial_estimate.sigma0)
    }

    pub fn x0(&self) -> Vector {
        match &self.initial_state {
            Some(x) => Vector::from_column_slice(x),
            None => self.mu0(),
        }
    }

    /// Stable SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("configuration is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}
