//! Self-checks exposed as CLI subcommands: linear equivalence with a directly
//! coded Kalman filter, and the coordinate-invariance scaling study.

use std::sync::Arc;
use std::time::Instant;

use gi_filter::linalg::{Matrix, Vector};
use gi_filter::models::{
    cubic1d_build, linear_build, Cubic1DParams, CubicWarp, LinearParams, WarpedCubicObservation, WarpedCubicState,
};
use gi_filter::{filter_step, FilterConfig, StateEstimate};
use rand::Rng;
use serde::Serialize;

use crate::scenario::Scenario;
use crate::simulate::{simulate_sde, trajectory_rng};
use crate::{HarnessError, Result};

pub const KALMAN_TOLERANCE: f64 = 1e-8;
pub const INVARIANCE_RATIO: (f64, f64) = (8.0, 32.0);

#[derive(Clone, Debug, Serialize)]
pub struct KalmanReport {
    pub seed: u64,
    pub steps: usize,
    pub n_substeps: usize,
    pub max_rel_mean: f64,
    pub max_rel_cov: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub elapsed_secs: f64,
}

/// Random stable linear-Gaussian model with `p` states and `q` observations.
pub fn random_linear<R: Rng + ?Sized>(rng: &mut R, p: usize, q: usize) -> LinearParams {
    let a = Matrix::from_fn(p, p, |i, k| {
        let off: f64 = rng.random_range(-0.5..0.5);
        if i == k {
            off - 0.5
        } else {
            off
        }
    });
    let sigma = Matrix::from_fn(p, p, |_, _| rng.random_range(-0.3..0.3));
    let j = Matrix::from_fn(q, p, |_, _| rng.random_range(-1.0..1.0));
    let l = Matrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
    let b = (&l * l.transpose() + Matrix::identity(q, q) * 0.1) * 0.2;
    LinearParams {
        a_mat: a,
        sigma_mat: sigma,
        j_mat: j,
        b_mat: b,
    }
}

/// Exact discretisation `(Φ, Q_d)` of `dX = AX dt + σ dW` over `dt`.
fn van_loan(a: &Matrix, q: &Matrix, dt: f64) -> (Matrix, Matrix) {
    let n = a.nrows();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    block.view_mut((0, n), (n, n)).copy_from(&(q * dt));
    block.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let e = block.exp();
    let phi = e.view((n, n), (n, n)).transpose();
    let qd = &phi * e.view((0, n), (n, n));
    (phi, (&qd + qd.transpose()) * 0.5)
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// GIF against a textbook Kalman filter on a random linear model
/// (3 states, 2 observations, `steps` cycles of `δ = 0.1`).
pub fn kalman_check(seed: u64, steps: usize, n_substeps: usize) -> Result<KalmanReport> {
    let start = Instant::now();
    let delta = 0.1;
    let mut rng = trajectory_rng(seed, u64::MAX);
    let params = random_linear(&mut rng, 3, 2);
    let (state, obs) = linear_build(&params)?;
    let scenario = Scenario::fixed(Arc::new(state.clone()), Arc::new(obs.clone()));
    let x0 = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
    let traj = simulate_sde(&scenario, &x0, delta, steps, 20, &mut trajectory_rng(seed, 0))?;
    if traj.truncated {
        return Err(HarnessError::CheckFailed("linear simulation stopped early".into()));
    }

    let alpha = &params.sigma_mat * params.sigma_mat.transpose();
    let (phi, qd) = van_loan(&params.a_mat, &alpha, delta);
    let mut config = FilterConfig::new(delta);
    config.n_substeps = n_substeps;

    let mut m = x0.clone();
    let mut p = Matrix::identity(3, 3) * 0.2;
    let mut est = StateEstimate::new(m.clone(), p.clone())?;
    let (mut max_mean, mut max_cov) = (0.0f64, 0.0f64);
    for event in &traj.observations {
        est = filter_step(&state, &obs, &est, event, &config)?.estimate;

        let mp = &phi * &m;
        let pp = &phi * &p * phi.transpose() + &qd;
        let s = &params.j_mat * &pp * params.j_mat.transpose() + &params.b_mat;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| HarnessError::CheckFailed("singular innovation covariance".into()))?;
        let k = &pp * params.j_mat.transpose() * s_inv;
        m = &mp + &k * (&event.y - &params.j_mat * &mp);
        let pn = (Matrix::identity(3, 3) - &k * &params.j_mat) * pp;
        p = (&pn + pn.transpose()) * 0.5;

        let dm = (&est.mu_hat - &m).amax() / m.amax().max(f64::MIN_POSITIVE);
        max_mean = max_mean.max(dm);
        max_cov = max_cov.max(rel(est.sigma_hat.mat(), &p));
    }
    Ok(KalmanReport {
        seed,
        steps,
        n_substeps,
        max_rel_mean: max_mean,
        max_rel_cov: max_cov,
        tolerance: KALMAN_TOLERANCE,
        passed: max_mean <= KALMAN_TOLERANCE && max_cov <= KALMAN_TOLERANCE,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceLevel {
    /// Factor applied to `α`, `β` and `Σ₀`; `δ` scales with its square root.
    pub scale: f64,
    pub delta: f64,
    pub mean_mismatch: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub seed: u64,
    pub steps: usize,
    pub warp_k: f64,
    pub levels: Vec<InvarianceLevel>,
    /// Mismatch ratio between consecutive levels.
    pub ratios: Vec<f64>,
    pub bounds: (f64, f64),
    pub passed: bool,
    pub elapsed_secs: f64,
}

/// Base regime of the invariance study.
#[derive(Clone, Copy, Debug)]
pub struct InvarianceSetup {
    pub p_crit: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma0: f64,
    pub delta: f64,
    pub x0: f64,
    pub warp_k: f64,
    pub steps: usize,
    pub n_substeps: usize,
    pub sim_substeps: usize,
}

impl Default for InvarianceSetup {
    fn default() -> Self {
        InvarianceSetup {
            p_crit: 1.0,
            alpha: 0.01,
            beta: 0.01,
            sigma0: 0.01,
            delta: 0.5,
            x0: 0.8,
            warp_k: 0.2,
            steps: 1000,
            n_substeps: 8,
            sim_substeps: 20,
        }
    }
}

/// Mean of `|φ(μ̂ₓ) - μ̂_y|` over the run, where `μ̂ₓ` is filtered in the
/// original chart and `μ̂_y` in the warped chart on the same observations.
pub fn invariance_mismatch(setup: &InvarianceSetup, scale: f64, seed: u64) -> Result<InvarianceLevel> {
    let alpha = setup.alpha * scale;
    let beta = setup.beta * scale;
    let sigma0 = setup.sigma0 * scale;
    let delta = setup.delta * scale.sqrt();
    let warp = CubicWarp::new(setup.warp_k)?;
    let (state, obs) = cubic1d_build(&Cubic1DParams {
        p_crit: setup.p_crit,
        alpha,
        beta,
        delta,
    })?;
    let w_state = WarpedCubicState::new(alpha, warp);
    let w_obs = WarpedCubicObservation::new(setup.p_crit, beta, warp);
    let scenario = Scenario::fixed(Arc::new(state.clone()), Arc::new(obs.clone()));

    let x0 = Vector::from_element(1, setup.x0);
    let traj = simulate_sde(&scenario, &x0, delta, setup.steps, setup.sim_substeps, &mut trajectory_rng(seed, 0))?;
    if traj.truncated {
        return Err(HarnessError::CheckFailed("cubic simulation stopped early".into()));
    }

    let mut config = FilterConfig::new(delta);
    config.n_substeps = setup.n_substeps;
    let mut ex = StateEstimate::new(x0.clone(), Matrix::from_element(1, 1, sigma0))?;
    let mut ey = StateEstimate::new(
        Vector::from_element(1, warp.map(setup.x0)),
        Matrix::from_element(1, 1, warp.push_variance(setup.x0, sigma0)),
    )?;
    let mut total = 0.0;
    for event in &traj.observations {
        ex = filter_step(&state, &obs, &ex, event, &config)?.estimate;
        ey = filter_step(&w_state, &w_obs, &ey, event, &config)?.estimate;
        total += (warp.map(ex.mu_hat[0]) - ey.mu_hat[0]).abs();
    }
    Ok(InvarianceLevel {
        scale,
        delta,
        mean_mismatch: total / traj.len() as f64,
    })
}

/// Runs the study at scales `1, 1/4, 1/16` (each step halves `γ`).
pub fn invariance_check(setup: &InvarianceSetup, seed: u64) -> Result<InvarianceReport> {
    let start = Instant::now();
    let levels = [1.0, 0.25, 0.0625]
        .iter()
        .map(|&s| invariance_mismatch(setup, s, seed))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].mean_mismatch / w[1].mean_mismatch).collect();
    let (lo, hi) = INVARIANCE_RATIO;
    Ok(InvarianceReport {
        seed,
        steps: setup.steps,
        warp_k: setup.warp_k,
        passed: ratios.iter().all(|r| (lo..=hi).contains(r)),
        levels,
        ratios,
        bounds: INVARIANCE_RATIO,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
