//! Continuous-discrete extended Kalman filter, used as the baseline.

use log::warn;

use crate::error::{FilterError, Result};
use crate::filter::gain;
use crate::geometry::{Point, SymTensor2};
use crate::linalg::{self, Matrix};
use crate::observation::ObservationModel;
use crate::state_model::{check_point, taylor3_step, DiffusionModel};

#[derive(Clone, Debug, PartialEq)]
pub struct EkfEstimate {
    pub mean: Point,
    pub cov: SymTensor2,
}

impl EkfEstimate {
    pub fn new(mean: Point, cov: Matrix) -> Result<Self> {
        let cov = SymTensor2::covariance(mean.clone(), cov)?;
        Ok(EkfEstimate { mean, cov })
    }
}

/// Integrates `m' = b(m)` with the third-order Taylor scheme and
/// `P' = AP + PAᵀ + α`, `A = Db(m)`, with the trapezium rule.
pub fn ekf_predict(
    model: &dyn DiffusionModel,
    est: &EkfEstimate,
    delta: f64,
    n_substeps: usize,
) -> Result<EkfEstimate> {
    check_point(&est.mean, model.dim())?;
    if !(delta > 0.0) || n_substeps == 0 {
        return Err(FilterError::InvalidInput(
            "prediction needs a positive interval and at least one substep".into(),
        ));
    }
    let h = delta / n_substeps as f64;
    let mut m = est.mean.clone();
    let mut p = est.cov.mat().clone();
    let mut a_prev = model.drift_b_jacobian(&m);
    let mut q_prev = model.alpha(&m);
    for step in 0..n_substeps {
        let b = model.drift_b(&m);
        let d2 = model.drift_b_second(&m, &(&b * b.transpose()));
        let m_next = taylor3_step(&m, h, &b, &a_prev, &d2);
        let a_next = model.drift_b_jacobian(&m_next);
        let q_next = model.alpha(&m_next);
        let tau = linalg::expm(&((&a_prev + &a_next) * (h / 2.0)))?;
        let p_next = &q_next * (h / 2.0) + &tau * (&p + &q_prev * (h / 2.0)) * tau.transpose();
        p = linalg::symmetrize(&p_next);
        m = m_next;
        if !linalg::all_finite(&m) || !p.iter().all(|v| v.is_finite()) {
            return Err(FilterError::Divergence {
                stage: "EKF prediction",
                step,
            });
        }
        a_prev = a_next;
        q_prev = q_next;
    }
    Ok(EkfEstimate {
        cov: SymTensor2::symmetrized(m.clone(), &p),
        mean: m,
    })
}

/// First-order measurement update. Returns the updated estimate and the
/// number of eigenvalues clipped by the covariance repair.
pub fn ekf_update(
    pred: &EkfEstimate,
    obs: &dyn ObservationModel,
    y_obs: &Point,
    jitter: f64,
) -> Result<(EkfEstimate, usize)> {
    if y_obs.len() != obs.dim_obs() || pred.mean.len() != obs.dim_state() {
        return Err(FilterError::InvalidInput(
            "observation and estimate have inconsistent dimensions".into(),
        ));
    }
    let y_pred = obs.psi(&pred.mean)?;
    let j = obs.dpsi(&pred.mean)?;
    let beta = obs.beta(&y_pred);
    let k = gain(&pred.cov, &j, &beta, jitter)?;
    let mean = &pred.mean + &k * obs.residual(y_obs, &y_pred);
    let n = mean.len();
    let cov = (Matrix::identity(n, n) - &k * &j) * pred.cov.mat();
    let (cov, clipped) = linalg::repair_psd(&cov);
    if clipped > 0 {
        warn!("clipped {clipped} negative EKF covariance eigenvalue(s)");
    }
    if !linalg::all_finite(&mean) {
        return Err(FilterError::Divergence {
            stage: "EKF update",
            step: 0,
        });
    }
    Ok((
        EkfEstimate {
            cov: SymTensor2::symmetrized(mean.clone(), &cov),
            mean,
        },
        clipped,
    ))
}
