//! The filter update: gain, quadratic correction, innovation, conditional
//! moments and the move to the new estimate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::geometry::{
    barycenter_correction, exp_map_series, geodesic_flow, pushforward_covariance, Bilinear3,
    Connector, Point, SymTensor2,
};
use crate::linalg::{self, Matrix, Vector};
use crate::observation::{ailp_observation, map_second_fundamental_form, ObservationEvent, ObservationModel};
use crate::state_model::{precompute, DiffusionModel, FlowGrid, PropagationBundle};

/// Point estimate with its covariance tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEstimate {
    pub mu_hat: Point,
    pub sigma_hat: SymTensor2,
}

impl StateEstimate {
    pub fn new(mu_hat: Point, sigma: Matrix) -> Result<Self> {
        let sigma_hat = SymTensor2::covariance(mu_hat.clone(), sigma)?;
        if !linalg::all_finite(&mu_hat) {
            return Err(FilterError::InvalidInput("non-finite state estimate".into()));
        }
        Ok(StateEstimate { mu_hat, sigma_hat })
    }
}

/// How the exponential map and its derivative are evaluated in the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ExpMapMethod {
    /// Third-order series with the first-order derivative `F = I - Γ(v⊗·)`.
    Series,
    /// RK4 integration of the geodesic and derivative flows.
    Geodesic { steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub delta: f64,
    pub n_substeps: usize,
    pub collar_enabled: bool,
    pub quadratic_enabled: bool,
    pub jitter: f64,
    pub exp_map: ExpMapMethod,
}

impl FilterConfig {
    pub fn new(delta: f64) -> Self {
        FilterConfig {
            delta,
            n_substeps: 8,
            collar_enabled: true,
            quadratic_enabled: true,
            jitter: 0.0,
            exp_map: ExpMapMethod::Series,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(FilterError::InvalidInput(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.n_substeps == 0 {
            return Err(FilterError::InvalidInput("n_substeps must be at least 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(FilterError::InvalidInput(format!(
                "jitter must be non-negative, got {}",
                self.jitter
            )));
        }
        if let ExpMapMethod::Geodesic { steps: 0 } = self.exp_map {
            return Err(FilterError::InvalidInput("geodesic steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<FlowGrid> {
        FlowGrid::new(self.delta, self.n_substeps)
    }
}

/// Largest acceptable condition number of the innovation covariance.
pub const MAX_GAIN_CONDITION: f64 = 1e12;

/// Innovation covariance `J Ξ Jᵀ + β + jitter·I`, symmetrized.
pub fn innovation_covariance(xi: &Matrix, j: &Matrix, beta: &Matrix, jitter: f64) -> Matrix {
    let q = beta.nrows();
    linalg::symmetrize(&(j * xi * j.transpose() + beta + Matrix::identity(q, q) * jitter))
}

/// `G = Ξ Jᵀ [J Ξ Jᵀ + β]⁻¹`, computed with a linear solve.
pub fn gain(xi_delta: &SymTensor2, j: &Matrix, beta: &Matrix, jitter: f64) -> Result<Matrix> {
    let p = xi_delta.dim();
    let q = beta.nrows();
    if j.nrows() != q || j.ncols() != p || beta.ncols() != q {
        return Err(FilterError::InvalidInput(format!(
            "gain inputs have inconsistent shapes: J {}x{}, beta {}x{}, Xi {p}x{p}",
            j.nrows(),
            j.ncols(),
            beta.nrows(),
            beta.ncols()
        )));
    }
    let xi = xi_delta.mat();
    let s = innovation_covariance(xi, j, beta, jitter);
    let cond = linalg::condition_number(&s);
    if !(cond <= MAX_GAIN_CONDITION) {
        return Err(FilterError::IllConditioned {
            what: "innovation covariance",
            cond,
        });
    }
    // S is symmetric, so G = (S⁻¹ J Ξ)ᵀ.
    let rhs = j * xi;
    let solved = s.lu().solve(&rhs).ok_or(FilterError::IllConditioned {
        what: "innovation covariance",
        cond: f64::INFINITY,
    })?;
    Ok(solved.transpose())
}

/// Gain together with the quadratic correction `ρ` and its mean.
#[derive(Clone, Debug, PartialEq)]
pub struct GainRho {
    pub g: Matrix,
    /// `ρ` as a bilinear form on observation tangents.
    pub rho_coeffs: Bilinear3,
    /// `ρ` evaluated with `G J Ξ_δ` in place of `Gz ⊗ Gz`.
    pub rho_mean: Vector,
}

impl GainRho {
    pub fn rho(&self, z: &Vector) -> Vector {
        self.rho_coeffs.apply(z, z)
    }
}

/// `ρ(z⊗z) = ½{[I - GJ] ∇dφ_δ(τ_δ⁰Gz ⊗ τ_δ⁰Gz) - G ∇dψ(Gz ⊗ Gz)}`.
pub fn rho_build(
    g: &Matrix,
    j: &Matrix,
    nabla_dphi: &Bilinear3,
    nabla_dpsi: &Bilinear3,
    tau_delta_0: &Matrix,
    xi_delta: &SymTensor2,
) -> GainRho {
    let p = g.nrows();
    let residual = Matrix::identity(p, p) - g * j;
    let back = tau_delta_0 * g;

    let flow_part = nabla_dphi.pull_back_inputs(&back).map_output(&residual);
    let obs_part = nabla_dpsi.pull_back_inputs(g).map_output(g);
    let rho_coeffs = flow_part.add(&obs_part.scale(-1.0)).scale(0.5);

    let gjx = linalg::symmetrize(&(g * j * xi_delta.mat()));
    let pulled = linalg::symmetrize(&(tau_delta_0 * &gjx * tau_delta_0.transpose()));
    let rho_mean = (&residual * nabla_dphi.contract(&pulled) - g * nabla_dpsi.contract(&gjx)) * 0.5;

    GainRho {
        g: g.clone(),
        rho_coeffs,
        rho_mean,
    }
}

/// `Z_δ = w + ½Γ̄(y_δ)(w⊗w)` with `w` the (wrapped) chart difference.
pub fn pull_back_observation(y_delta: &Point, y_obs: &Point, obs: &dyn ObservationModel) -> Vector {
    let w = obs.residual(y_obs, y_delta);
    let conn = obs.connector();
    if conn.is_flat() {
        return w;
    }
    &w + conn.gamma(y_delta, &w, &w) * 0.5
}

/// The pieces of the conditional mean, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct AssimilationTerms {
    pub innovation: Vector,
    pub linear: Vector,
    /// Quadratic correction after any collar or ablation.
    pub quadratic: Vector,
    /// Factor applied by the collar (1 when inactive).
    pub collar_scale: f64,
}

/// Rescales `q` so that `‖q‖ <= bound` holds exactly in floating point.
pub fn apply_collar(q: &Vector, bound: f64) -> (Vector, f64) {
    let norm = q.norm();
    if norm <= bound {
        return (q.clone(), 1.0);
    }
    if bound == 0.0 {
        return (Vector::zeros(q.len()), 0.0);
    }
    let mut scale = bound / norm;
    let mut out = q * scale;
    while out.norm() > bound {
        scale *= 1.0 - f64::EPSILON;
        out = q * scale;
    }
    (out, scale)
}

/// Conditional mean `μ` of `U_δ` and variance `Σ = (I - GJ)Ξ_δ`, both at `x_δ`.
pub fn assimilate(
    bundle: &PropagationBundle,
    obs_ailp: &Vector,
    gr: &GainRho,
    j: &Matrix,
    z_delta: &Vector,
    config: &FilterConfig,
) -> (Vector, SymTensor2, AssimilationTerms) {
    let innovation = z_delta - obs_ailp;
    let linear = &gr.g * &innovation;
    let (quadratic, collar_scale) = if !config.quadratic_enabled {
        (Vector::zeros(linear.len()), 0.0)
    } else {
        let q = gr.rho(&innovation) - &gr.rho_mean;
        if config.collar_enabled {
            apply_collar(&q, linear.norm())
        } else {
            (q, 1.0)
        }
    };
    let mu = &bundle.m_delta + &linear + &quadratic;
    let p = linear.len();
    let sigma = (Matrix::identity(p, p) - &gr.g * j) * bundle.xi_delta.mat();
    let sigma = SymTensor2::symmetrized(bundle.x_delta.clone(), &sigma);
    (
        mu,
        sigma,
        AssimilationTerms {
            innovation,
            linear,
            quadratic,
            collar_scale,
        },
    )
}

/// Moves from `x_δ` along the barycenter-corrected `μ` and carries `Σ` along.
/// Returns the new estimate and the number of eigenvalues clipped to restore
/// positive semi-definiteness.
pub fn update_estimate(
    x_delta: &Point,
    mu: &Vector,
    sigma: &SymTensor2,
    state_conn: &dyn Connector,
    method: ExpMapMethod,
) -> Result<(StateEstimate, usize)> {
    let v = barycenter_correction(mu, sigma, state_conn, x_delta);
    let (mu_hat, f) = match method {
        ExpMapMethod::Series => {
            let mu_hat = exp_map_series(x_delta, &v, state_conn)?;
            let p = v.len();
            let mut f = Matrix::identity(p, p);
            if !state_conn.is_flat() {
                for k in 0..p {
                    let col = state_conn.gamma(x_delta, &v, &linalg::basis(p, k));
                    let mut fk = f.column_mut(k);
                    fk -= col;
                }
            }
            (mu_hat, f)
        }
        ExpMapMethod::Geodesic { steps } => {
            let end = geodesic_flow(x_delta, &v, state_conn, steps)?;
            (end.endpoint().clone(), end.dexp)
        }
    };
    let pushed = pushforward_covariance(sigma, &f, mu_hat.clone());
    let (repaired, clipped) = linalg::repair_psd(pushed.mat());
    if clipped > 0 {
        warn!("clipped {clipped} negative covariance eigenvalue(s) after the update");
    }
    if !linalg::all_finite(&mu_hat) || !repaired.iter().all(|v| v.is_finite()) {
        return Err(FilterError::Divergence {
            stage: "state update",
            step: 0,
        });
    }
    Ok((
        StateEstimate {
            sigma_hat: SymTensor2::symmetrized(mu_hat.clone(), &repaired),
            mu_hat,
        },
        clipped,
    ))
}

/// Intermediate quantities of one filter step.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub bundle: PropagationBundle,
    pub y_delta: Point,
    pub j: Matrix,
    pub obs_ailp: Vector,
    pub gain_rho: GainRho,
    pub z_delta: Vector,
    pub mu: Vector,
    pub sigma: SymTensor2,
    pub terms: AssimilationTerms,
    /// Relative residual of `G(JΞJᵀ + β) = ΞJᵀ`.
    pub gain_residual: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub estimate: StateEstimate,
    pub psd_repairs: usize,
    pub diagnostics: StepDiagnostics,
}

/// One full cycle: propagate over `[0, δ]`, assimilate `y_obs`, update.
///
/// On error the caller keeps its previous estimate.
pub fn filter_step(
    model: &dyn DiffusionModel,
    obs: &dyn ObservationModel,
    est: &StateEstimate,
    y_obs: &ObservationEvent,
    config: &FilterConfig,
) -> Result<StepOutcome> {
    config.validate()?;
    if y_obs.y.len() != obs.dim_obs() || obs.dim_state() != model.dim() {
        return Err(FilterError::InvalidInput(
            "observation and state models have inconsistent dimensions".into(),
        ));
    }
    let grid = config.grid()?;
    let bundle = precompute(model, &est.mu_hat, &est.sigma_hat, &grid)?;
    let conn = model.connector();

    let x = &bundle.x_delta;
    let y_delta = obs.psi(x)?;
    let j = obs.dpsi(x)?;
    let nabla_dpsi = map_second_fundamental_form(obs, conn, x)?;
    let obs_ailp = ailp_observation(&bundle, obs, conn)?;

    let beta = obs.beta(&y_delta);
    let g = gain(&bundle.xi_delta, &j, &beta, config.jitter)?;
    let gain_rho = rho_build(
        &g,
        &j,
        &bundle.nabla_dphi,
        &nabla_dpsi,
        bundle.tau_delta_0(),
        &bundle.xi_delta,
    );
    let gain_residual = gain_identity_residual(&g, bundle.xi_delta.mat(), &j, &beta, config.jitter);

    let z_delta = pull_back_observation(&y_delta, &y_obs.y, obs);
    let (mu, sigma, terms) = assimilate(&bundle, &obs_ailp, &gain_rho, &j, &z_delta, config);
    if !linalg::all_finite(&mu) {
        return Err(FilterError::Divergence {
            stage: "assimilation",
            step: 0,
        });
    }
    let (estimate, psd_repairs) = update_estimate(x, &mu, &sigma, conn, config.exp_map)?;
    Ok(StepOutcome {
        estimate,
        psd_repairs,
        diagnostics: StepDiagnostics {
            bundle,
            y_delta,
            j,
            obs_ailp,
            gain_rho,
            z_delta,
            mu,
            sigma,
            terms,
            gain_residual,
        },
    })
}

/// `‖G S - Ξ Jᵀ‖ / ‖Ξ Jᵀ‖` (absolute when `Ξ Jᵀ = 0`).
pub fn gain_identity_residual(g: &Matrix, xi: &Matrix, j: &Matrix, beta: &Matrix, jitter: f64) -> f64 {
    let s = innovation_covariance(xi, j, beta, jitter);
    let target = xi * j.transpose();
    let diff = (g * s - &target).amax();
    let scale = target.amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
