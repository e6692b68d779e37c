//! One-dimensional benchmark: `dX = -X³/2 dt + √α dW`, `Y = X/(p + X²) + √β V`.

use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::geometry::{Bilinear3, Connector, FlatConnector, Point};
use crate::linalg::{Matrix, Vector};
use crate::observation::ObservationModel;
use crate::state_model::DiffusionModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cubic1DParams {
    pub p_crit: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Cubic1DParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_crit", self.p_crit),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FilterError::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Cubic1DState {
    alpha: f64,
    conn: FlatConnector,
}

impl Cubic1DState {
    pub fn new(alpha: f64) -> Self {
        Cubic1DState {
            alpha,
            conn: FlatConnector::new(1),
        }
    }
}

impl DiffusionModel for Cubic1DState {
    fn dim(&self) -> usize {
        1
    }
    fn xi(&self, x: &Point) -> Vector {
        Vector::from_element(1, -0.5 * x[0].powi(3))
    }
    fn dxi(&self, x: &Point) -> Matrix {
        Matrix::from_element(1, 1, -1.5 * x[0] * x[0])
    }
    fn d2xi_contract(&self, x: &Point, chi: &Matrix) -> Vector {
        Vector::from_element(1, -3.0 * x[0] * chi[(0, 0)])
    }
    fn alpha(&self, _x: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.alpha)
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

#[derive(Clone, Debug)]
pub struct Cubic1DObservation {
    p_crit: f64,
    beta: f64,
    conn: FlatConnector,
}

impl Cubic1DObservation {
    pub fn new(p_crit: f64, beta: f64) -> Self {
        Cubic1DObservation {
            p_crit,
            beta,
            conn: FlatConnector::new(1),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        x / (self.p_crit + x * x)
    }

    pub fn first(&self, x: f64) -> f64 {
        let d = self.p_crit + x * x;
        (self.p_crit - x * x) / (d * d)
    }

    pub fn second(&self, x: f64) -> f64 {
        let d = self.p_crit + x * x;
        2.0 * x * (x * x - 3.0 * self.p_crit) / (d * d * d)
    }
}

impl ObservationModel for Cubic1DObservation {
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_obs(&self) -> usize {
        1
    }
    fn psi(&self, x: &Point) -> Result<Point> {
        Ok(Vector::from_element(1, self.value(x[0])))
    }
    fn dpsi(&self, x: &Point) -> Result<Matrix> {
        Ok(Matrix::from_element(1, 1, self.first(x[0])))
    }
    fn d2psi(&self, x: &Point) -> Result<Bilinear3> {
        Bilinear3::from_components(1, vec![Matrix::from_element(1, 1, self.second(x[0]))])
    }
    fn beta(&self, _y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.beta)
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

pub fn cubic1d_build(params: &Cubic1DParams) -> Result<(Cubic1DState, Cubic1DObservation)> {
    params.validate()?;
    Ok((
        Cubic1DState::new(params.alpha),
        Cubic1DObservation::new(params.p_crit, params.beta),
    ))
}

/// Closed-form flow `x_t = x_0 / √(1 + x_0² t)`.
pub fn cubic1d_analytic_flow(x0: f64, t: f64) -> f64 {
    x0 / (1.0 + x0 * x0 * t).sqrt()
}

/// Closed-form state AILP over `[0, δ]`; singular at `x0 = 0`.
pub fn cubic1d_analytic_ailp(x0: f64, sigma0: f64, alpha: f64, delta: f64) -> Result<f64> {
    if x0 == 0.0 {
        return Err(FilterError::Domain(
            "the closed-form AILP is singular at x0 = 0".into(),
        ));
    }
    let xd = cubic1d_analytic_flow(x0, delta);
    let x2 = x0 * x0;
    let term1 = alpha / (12.0 * xd.powi(3));
    let term2 = (sigma0 - alpha / (3.0 * x2)) * xd.powi(3) / x2.powi(2);
    let term3 = (sigma0 - alpha / (4.0 * x2)) * xd.powi(5) / x2.powi(3);
    Ok(-1.5 * (term1 + term2 - term3))
}
