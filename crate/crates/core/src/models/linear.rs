//! Linear-Gaussian reference model `dX = AX dt + σ dW`, `Y = JX + B^{1/2} V`.

use crate::error::{FilterError, Result};
use crate::geometry::{Bilinear3, Connector, FlatConnector, Point};
use crate::linalg::{self, Matrix, Vector};
use crate::observation::ObservationModel;
use crate::state_model::DiffusionModel;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub a_mat: Matrix,
    pub sigma_mat: Matrix,
    pub j_mat: Matrix,
    pub b_mat: Matrix,
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        let p = self.a_mat.nrows();
        let q = self.j_mat.nrows();
        if !self.a_mat.is_square() || self.sigma_mat.nrows() != p || self.j_mat.ncols() != p {
            return Err(FilterError::InvalidInput(
                "linear model matrices have inconsistent shapes".into(),
            ));
        }
        if self.b_mat.nrows() != q || self.b_mat.ncols() != q {
            return Err(FilterError::InvalidInput(
                "observation covariance has the wrong shape".into(),
            ));
        }
        linalg::spd_inverse(&self.b_mat, "observation covariance")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LinearDynamics {
    a: Matrix,
    alpha: Matrix,
    conn: FlatConnector,
}

impl DiffusionModel for LinearDynamics {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn xi(&self, x: &Point) -> Vector {
        &self.a * x
    }
    fn dxi(&self, _x: &Point) -> Matrix {
        self.a.clone()
    }
    fn d2xi_contract(&self, _x: &Point, _chi: &Matrix) -> Vector {
        Vector::zeros(self.dim())
    }
    fn alpha(&self, _x: &Point) -> Matrix {
        self.alpha.clone()
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

#[derive(Clone, Debug)]
pub struct LinearObservation {
    j: Matrix,
    b: Matrix,
    conn: FlatConnector,
}

impl ObservationModel for LinearObservation {
    fn dim_state(&self) -> usize {
        self.j.ncols()
    }
    fn dim_obs(&self) -> usize {
        self.j.nrows()
    }
    fn psi(&self, x: &Point) -> Result<Point> {
        Ok(&self.j * x)
    }
    fn dpsi(&self, _x: &Point) -> Result<Matrix> {
        Ok(self.j.clone())
    }
    fn d2psi(&self, _x: &Point) -> Result<Bilinear3> {
        Ok(Bilinear3::zeros(self.dim_obs(), self.dim_state()))
    }
    fn beta(&self, _y: &Point) -> Matrix {
        self.b.clone()
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

pub fn linear_build(params: &LinearParams) -> Result<(LinearDynamics, LinearObservation)> {
    params.validate()?;
    let p = params.a_mat.nrows();
    let q = params.j_mat.nrows();
    Ok((
        LinearDynamics {
            a: params.a_mat.clone(),
            alpha: linalg::symmetrize(&(&params.sigma_mat * params.sigma_mat.transpose())),
            conn: FlatConnector::new(p),
        },
        LinearObservation {
            j: params.j_mat.clone(),
            b: params.b_mat.clone(),
            conn: FlatConnector::new(q),
        },
    ))
}
