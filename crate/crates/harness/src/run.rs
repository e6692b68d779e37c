//! Runs the configured filters over a simulated trajectory.

use gi_filter::ekf::{ekf_predict, ekf_update, EkfEstimate};
use gi_filter::linalg::{self, Matrix};
use gi_filter::{filter_step, FilterConfig, Point, StateEstimate};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::FilterKind;
use crate::scenario::Scenario;
use crate::simulate::Trajectory;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    /// The step failed and the previous estimate was kept.
    Aborted,
    /// The estimate is no longer finite.
    Diverged,
}

impl StepStatus {
    pub fn name(self) -> &'static str {
        match self {
            StepStatus::Ok => "ok",
            StepStatus::Aborted => "aborted",
            StepStatus::Diverged => "diverged",
        }
    }
}

/// One filter's output along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrack {
    pub kind: FilterKind,
    pub estimates: Vec<Point>,
    /// `‖μ̂ - X‖` in the model chart.
    pub errors: Vec<f64>,
    pub status: Vec<StepStatus>,
    pub psd_repairs: usize,
}

impl FilterTrack {
    fn new(kind: FilterKind, n: usize) -> Self {
        FilterTrack {
            kind,
            estimates: Vec::with_capacity(n),
            errors: Vec::with_capacity(n),
            status: Vec::with_capacity(n),
            psd_repairs: 0,
        }
    }

    fn record(&mut self, estimate: &Point, truth: &Point, status: StepStatus) {
        let error = (estimate - truth).norm();
        let status = if error.is_finite() { status } else { StepStatus::Diverged };
        self.estimates.push(estimate.clone());
        self.errors.push(error);
        self.status.push(status);
    }

    pub fn aborted_steps(&self) -> usize {
        self.status.iter().filter(|s| **s == StepStatus::Aborted).count()
    }

    pub fn diverged_steps(&self) -> usize {
        self.status.iter().filter(|s| **s == StepStatus::Diverged).count()
    }
}

/// Runs each filter in `filters` from `(mu0, sigma0)` over the observations.
pub fn run_filters(
    scenario: &Scenario,
    traj: &Trajectory,
    filters: &[FilterKind],
    config: &FilterConfig,
    mu0: &Point,
    sigma0: &Matrix,
) -> Result<Vec<FilterTrack>> {
    config.validate()?;
    filters
        .iter()
        .map(|&kind| match kind {
            FilterKind::Gif => run_gif(scenario, traj, config, mu0, sigma0),
            FilterKind::Ekf => run_ekf(scenario, traj, config, mu0, sigma0),
        })
        .collect()
}

fn run_gif(
    scenario: &Scenario,
    traj: &Trajectory,
    config: &FilterConfig,
    mu0: &Point,
    sigma0: &Matrix,
) -> Result<FilterTrack> {
    let mut track = FilterTrack::new(FilterKind::Gif, traj.len());
    let mut est = StateEstimate::new(mu0.clone(), sigma0.clone())?;
    let model = scenario.state();
    for (n, (event, truth)) in traj.observations.iter().zip(&traj.truth).enumerate() {
        let obs = scenario.observation_at(event.time);
        let status = match filter_step(model, obs.as_ref(), &est, event, config) {
            Ok(out) => {
                track.psd_repairs += out.psd_repairs;
                est = out.estimate;
                StepStatus::Ok
            }
            Err(e) => {
                warn!("gif step {n} aborted: {e}");
                StepStatus::Aborted
            }
        };
        track.record(&est.mu_hat, truth, status);
    }
    Ok(track)
}

fn run_ekf(
    scenario: &Scenario,
    traj: &Trajectory,
    config: &FilterConfig,
    mu0: &Point,
    sigma0: &Matrix,
) -> Result<FilterTrack> {
    let mut track = FilterTrack::new(FilterKind::Ekf, traj.len());
    let mut est = EkfEstimate::new(mu0.clone(), sigma0.clone())?;
    let model = scenario.state();
    for (n, (event, truth)) in traj.observations.iter().zip(&traj.truth).enumerate() {
        let obs = scenario.observation_at(event.time);
        let step = ekf_predict(model, &est, config.delta, config.n_substeps)
            .and_then(|pred| ekf_update(&pred, obs.as_ref(), &event.y, config.jitter));
        let status = match step {
            Ok((next, clipped)) if linalg::all_finite(&next.mean) => {
                track.psd_repairs += clipped;
                est = next;
                StepStatus::Ok
            }
            Ok(_) => {
                warn!("ekf step {n} produced a non-finite mean");
                StepStatus::Aborted
            }
            Err(e) => {
                warn!("ekf step {n} aborted: {e}");
                StepStatus::Aborted
            }
        };
        track.record(&est.mean, truth, status);
    }
    Ok(track)
}
