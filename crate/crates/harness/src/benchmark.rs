//! Monte Carlo comparison of the filters over many observation cycles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FilterKind, ScenarioConfig};
use crate::run::{run_filters, FilterTrack};
use crate::scenario::Scenario;
use crate::simulate::{simulate_sde, trajectory_rng, Trajectory};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub filter: FilterKind,
    pub scored_cycles: usize,
    pub mean_abs_error: f64,
    pub median_abs_error: f64,
    pub max_abs_error: f64,
    /// Counts per histogram bin; they sum to `scored_cycles`.
    pub histogram: Vec<u64>,
    /// Fraction of scored cycles with error above the pooled threshold.
    pub tail_frequency: f64,
    pub psd_repairs: usize,
    pub aborted_steps: usize,
    pub diverged_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_obs: usize,
    pub runs: usize,
    /// Set when a simulation stopped early; statistics cover what was produced.
    pub truncated: bool,
    pub delta: f64,
    pub n_substeps: usize,
    pub sim_substeps: usize,
    pub collar_enabled: bool,
    pub quadratic_enabled: bool,
    pub tail_quantile: f64,
    pub error_norm: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub filters: Vec<FilterStats>,
    pub bin_edges: Vec<f64>,
    /// Pooled-error quantile used for the tail frequencies.
    pub tail_threshold: f64,
    pub metadata: RunMetadata,
}

impl BenchmarkSummary {
    pub fn stats(&self, kind: FilterKind) -> Option<&FilterStats> {
        self.filters.iter().find(|s| s.filter == kind)
    }
}

/// Summary together with the raw per-run records.
#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub summary: BenchmarkSummary,
    pub trajectories: Vec<Trajectory>,
    /// `tracks[run][k]` is filter `config.filters[k]` on run `run`.
    pub tracks: Vec<Vec<FilterTrack>>,
}

/// Simulates and filters one run; the run index selects the random stream.
pub fn run_single(config: &ScenarioConfig, scenario: &Scenario, index: usize) -> Result<(Trajectory, Vec<FilterTrack>)> {
    let n_obs = config.n_obs / config.runs.runs();
    let mut rng = trajectory_rng(config.seed, index as u64);
    let traj = simulate_sde(scenario, &config.x0(), config.delta, n_obs, config.sim_substeps, &mut rng)?;
    let tracks = run_filters(
        scenario,
        &traj,
        &config.filters,
        &config.filter_config(),
        &config.mu0(),
        &config.sigma0()?,
    )?;
    Ok((traj, tracks))
}

pub fn run_benchmark(config: &ScenarioConfig) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let scenario = Scenario::build(&config.model, config.delta)?;
    let runs = config.runs.runs();
    let results: Vec<_> = (0..runs)
        .into_par_iter()
        .map(|i| run_single(config, &scenario, i))
        .collect::<Result<_>>()?;
    let (trajectories, tracks): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = summarize(config, &trajectories, &tracks);
    Ok(BenchmarkOutcome {
        summary,
        trajectories,
        tracks,
    })
}

fn summarize(config: &ScenarioConfig, trajectories: &[Trajectory], tracks: &[Vec<FilterTrack>]) -> BenchmarkSummary {
    let per_filter: Vec<Vec<f64>> = (0..config.filters.len())
        .map(|k| {
            tracks
                .iter()
                .flat_map(|run| run[k].errors.iter().copied())
                .filter(|e| e.is_finite())
                .collect()
        })
        .collect();
    let mut pooled: Vec<f64> = per_filter.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let tail_threshold = quantile(&pooled, config.tail_quantile);
    let top = pooled.last().copied().unwrap_or(0.0);
    let bin_edges = bin_edges(if top > 0.0 { top } else { 1.0 }, config.histogram_bins);

    let filters = config
        .filters
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let errors = &per_filter[k];
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let n = errors.len();
            let tail = errors.iter().filter(|&&e| e > tail_threshold).count();
            FilterStats {
                filter: kind,
                scored_cycles: n,
                mean_abs_error: if n > 0 { errors.iter().sum::<f64>() / n as f64 } else { f64::NAN },
                median_abs_error: quantile(&sorted, 0.5),
                max_abs_error: sorted.last().copied().unwrap_or(f64::NAN),
                histogram: histogram(errors, &bin_edges),
                tail_frequency: if n > 0 { tail as f64 / n as f64 } else { 0.0 },
                psd_repairs: tracks.iter().map(|run| run[k].psd_repairs).sum(),
                aborted_steps: tracks.iter().map(|run| run[k].aborted_steps()).sum(),
                diverged_steps: tracks.iter().map(|run| run[k].diverged_steps()).sum(),
            }
        })
        .collect();

    BenchmarkSummary {
        filters,
        bin_edges,
        tail_threshold,
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            n_obs: config.n_obs,
            runs: config.runs.runs(),
            truncated: trajectories.iter().any(|t| t.truncated),
            delta: config.delta,
            n_substeps: config.n_substeps,
            sim_substeps: config.sim_substeps,
            collar_enabled: config.collar_enabled,
            quadratic_enabled: config.quadratic_enabled,
            tail_quantile: config.tail_quantile,
            error_norm: "euclidean chart distance".into(),
        },
    }
}

/// Linearly interpolated quantile of sorted data (NaN when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * w
        }
    }
}

/// `bins + 1` uniform edges over `[0, top]`.
pub fn bin_edges(top: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| top * i as f64 / bins as f64).collect()
}

/// Counts per bin; the last bin is closed and values beyond it are clamped
/// into it, so every value is counted exactly once.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let bins = edges.len() - 1;
    let top = edges[bins];
    let mut counts = vec![0u64; bins];
    for &v in values {
        let k = if top > 0.0 { ((v / top) * bins as f64).floor() as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    counts
}
