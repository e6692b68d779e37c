//! Observation-side geometry: `ψ`, its derivatives, the covariance metric
//! `β` with its Levi-Civita connector, and the observation AILP.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FilterError, Result};
use crate::geometry::{exp_map_series, Bilinear3, Connector, Point};
use crate::linalg::{self, Matrix, Vector};
use crate::state_model::PropagationBundle;

/// Observation map `ψ: N → M` with noise covariance metric `β` on `M`.
pub trait ObservationModel: Send + Sync {
    fn dim_state(&self) -> usize;

    fn dim_obs(&self) -> usize;

    fn psi(&self, x: &Point) -> Result<Point>;

    /// `J = Dψ(x)`, a `q x p` matrix.
    fn dpsi(&self, x: &Point) -> Result<Matrix>;

    /// `D²ψ(x)` as a `q`-valued bilinear form on state tangents.
    fn d2psi(&self, x: &Point) -> Result<Bilinear3>;

    /// Covariance metric `β(y)`, symmetric positive definite.
    fn beta(&self, y: &Point) -> Matrix;

    /// Levi-Civita connector `Γ̄` of the metric inverse to `β`.
    fn connector(&self) -> &dyn Connector;

    /// Chart difference `y_obs - y_ref`, reduced for periodic coordinates.
    fn residual(&self, y_obs: &Point, y_ref: &Point) -> Vector {
        y_obs - y_ref
    }

    /// Brings an observation into the canonical coordinate range.
    fn canonicalize(&self, y: Point) -> Point {
        y
    }
}

/// A timestamped observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationEvent {
    pub time: f64,
    pub y: Point,
}

impl ObservationEvent {
    pub fn new(time: f64, y: Point) -> Result<Self> {
        if !time.is_finite() || !linalg::all_finite(&y) {
            return Err(FilterError::InvalidInput(
                "observation has non-finite entries".into(),
            ));
        }
        Ok(ObservationEvent { time, y })
    }
}

/// `∇dψ(x)(v⊗w) = D²ψ(v⊗w) - Dψ Γ(x)(v⊗w) + Γ̄(ψ(x))(Dψ v ⊗ Dψ w)`.
pub fn map_second_fundamental_form(
    obs: &dyn ObservationModel,
    state_conn: &dyn Connector,
    x: &Point,
) -> Result<Bilinear3> {
    let j = obs.dpsi(x)?;
    let mut out = obs.d2psi(x)?;
    if !state_conn.is_flat() {
        out = out.add(&state_conn.coefficients(x).map_output(&(-&j)));
    }
    let obs_conn = obs.connector();
    if !obs_conn.is_flat() {
        let y = obs.psi(x)?;
        out = out.add(&obs_conn.coefficients(&y).pull_back_inputs(&j));
    }
    Ok(out)
}

/// Observation AILP
/// `½{D²ψ(x_δ)(Ξ_δ) - J Γ(x_δ)(Ξ_δ) + Γ̄(y_δ)(J Ξ_δ Jᵀ)} + J m_δ`.
pub fn ailp_observation(
    bundle: &PropagationBundle,
    obs: &dyn ObservationModel,
    state_conn: &dyn Connector,
) -> Result<Vector> {
    let x = &bundle.x_delta;
    let xi = bundle.xi_delta.mat();
    let j = obs.dpsi(x)?;
    let y = obs.psi(x)?;
    let second = obs.d2psi(x)?.contract(xi);
    let state_term = &j * state_conn.contract(x, xi);
    let obs_term = obs.connector().contract(&y, &(&j * xi * j.transpose()));
    Ok((second - state_term + obs_term) * 0.5 + &j * &bundle.m_delta)
}

/// Draws `Y = exp_{ψ(x)}(V)` with `V ~ N(0, β(ψ(x)))`.
pub fn sample_observation<R: Rng + ?Sized>(
    obs: &dyn ObservationModel,
    x: &Point,
    time: f64,
    rng: &mut R,
) -> Result<ObservationEvent> {
    let y = obs.psi(x)?;
    let beta = obs.beta(&y);
    if !linalg::is_symmetric(&beta, 1e-12) {
        return Err(FilterError::SingularMetric(
            "observation covariance is not symmetric".into(),
        ));
    }
    let root = linalg::sym_sqrt(&beta)?;
    if beta.clone().cholesky().is_none() {
        return Err(FilterError::SingularMetric(
            "observation covariance is not positive definite".into(),
        ));
    }
    let q = obs.dim_obs();
    let noise = Vector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let v = root * noise;
    let out = exp_map_series(&y, &v, obs.connector())?;
    ObservationEvent::new(time, obs.canonicalize(out))
}
