//! The cubic benchmark expressed in the chart `y = φ(x) = x + k x³`.
//!
//! Drift, noise, connector and observation map are transported by the chain
//! rule, so an intrinsic filter run here must agree (to the order of its
//! expansions) with a run in the original chart mapped through `φ`.

use crate::error::{FilterError, Result};
use crate::geometry::{Bilinear3, Connector, FlatConnector, Point};
use crate::linalg::{Matrix, Vector};
use crate::observation::ObservationModel;
use crate::state_model::DiffusionModel;

/// The cubic warp `φ(x) = x + k x³`, `k > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicWarp {
    pub k: f64,
}

impl CubicWarp {
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(FilterError::InvalidInput(format!(
                "warp coefficient must be non-negative, got {k}"
            )));
        }
        Ok(CubicWarp { k })
    }

    pub fn map(&self, x: f64) -> f64 {
        x + self.k * x * x * x
    }

    pub fn d1(&self, x: f64) -> f64 {
        1.0 + 3.0 * self.k * x * x
    }

    pub fn d2(&self, x: f64) -> f64 {
        6.0 * self.k * x
    }

    pub fn d3(&self) -> f64 {
        6.0 * self.k
    }

    /// Inverse by Newton's method (the map is strictly increasing).
    pub fn inverse(&self, y: f64) -> f64 {
        let mut x = y / (1.0 + self.k * y * y).cbrt().max(1.0);
        for _ in 0..100 {
            let step = (self.map(x) - y) / self.d1(x);
            x -= step;
            if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }

    /// Variance transported to the warped chart, `φ'(x)² v`.
    pub fn push_variance(&self, x: f64, v: f64) -> f64 {
        self.d1(x).powi(2) * v
    }
}

/// Connector of the flat original chart seen through the warp:
/// `Γ̃(y) = -φ''/φ'²` evaluated at `x = φ⁻¹(y)`.
#[derive(Clone, Copy, Debug)]
pub struct WarpConnector {
    warp: CubicWarp,
}

impl Connector for WarpConnector {
    fn dim(&self) -> usize {
        1
    }
    fn gamma(&self, y: &Point, u: &Vector, v: &Vector) -> Vector {
        let x = self.warp.inverse(y[0]);
        let c = -self.warp.d2(x) / self.warp.d1(x).powi(2);
        Vector::from_element(1, c * (u[0] * v[0]))
    }
    fn dgamma(&self, y: &Point, w: &Vector, u: &Vector, v: &Vector) -> Vector {
        let x = self.warp.inverse(y[0]);
        let (f1, f2, f3) = (self.warp.d1(x), self.warp.d2(x), self.warp.d3());
        let dc = (-f3 / (f1 * f1) + 2.0 * f2 * f2 / f1.powi(3)) / f1;
        Vector::from_element(1, dc * w[0] * (u[0] * v[0]))
    }
}

/// Values of `g(x(y))` and its first two `y`-derivatives given `g, g', g''`
/// in `x`.
fn chain(warp: &CubicWarp, x: f64, g: [f64; 3]) -> [f64; 3] {
    let (f1, f2) = (warp.d1(x), warp.d2(x));
    [g[0], g[1] / f1, (g[2] * f1 - g[1] * f2) / f1.powi(3)]
}

#[derive(Clone, Debug)]
pub struct WarpedCubicState {
    alpha: f64,
    warp: CubicWarp,
    conn: WarpConnector,
}

impl WarpedCubicState {
    pub fn new(alpha: f64, warp: CubicWarp) -> Self {
        WarpedCubicState {
            alpha,
            warp,
            conn: WarpConnector { warp },
        }
    }

    /// `ξ̃ = φ'ξ` and its `y`-derivatives.
    fn xi_parts(&self, y: f64) -> [f64; 3] {
        let x = self.warp.inverse(y);
        let w = &self.warp;
        let (xi, dxi, d2xi) = (-0.5 * x.powi(3), -1.5 * x * x, -3.0 * x);
        let a = w.d1(x) * xi;
        let da = w.d2(x) * xi + w.d1(x) * dxi;
        let d2a = w.d3() * xi + 2.0 * w.d2(x) * dxi + w.d1(x) * d2xi;
        chain(w, x, [a, da, d2a])
    }

    /// Itô drift `b̃ = φ'ξ + ½φ''α` and its `y`-derivatives.
    fn b_parts(&self, y: f64) -> [f64; 3] {
        let x = self.warp.inverse(y);
        let w = &self.warp;
        let (xi, dxi, d2xi) = (-0.5 * x.powi(3), -1.5 * x * x, -3.0 * x);
        let b = w.d1(x) * xi + 0.5 * w.d2(x) * self.alpha;
        let db = w.d2(x) * xi + w.d1(x) * dxi + 0.5 * w.d3() * self.alpha;
        let d2b = w.d3() * xi + 2.0 * w.d2(x) * dxi + w.d1(x) * d2xi;
        chain(w, x, [b, db, d2b])
    }
}

impl DiffusionModel for WarpedCubicState {
    fn dim(&self) -> usize {
        1
    }
    fn xi(&self, y: &Point) -> Vector {
        Vector::from_element(1, self.xi_parts(y[0])[0])
    }
    fn dxi(&self, y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.xi_parts(y[0])[1])
    }
    fn d2xi_contract(&self, y: &Point, chi: &Matrix) -> Vector {
        Vector::from_element(1, self.xi_parts(y[0])[2] * chi[(0, 0)])
    }
    fn alpha(&self, y: &Point) -> Matrix {
        let x = self.warp.inverse(y[0]);
        Matrix::from_element(1, 1, self.warp.push_variance(x, self.alpha))
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
    fn drift_b(&self, y: &Point) -> Vector {
        Vector::from_element(1, self.b_parts(y[0])[0])
    }
    fn drift_b_jacobian(&self, y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.b_parts(y[0])[1])
    }
    fn drift_b_second(&self, y: &Point, chi: &Matrix) -> Vector {
        Vector::from_element(1, self.b_parts(y[0])[2] * chi[(0, 0)])
    }
}

/// `ψ̃(y) = ψ(φ⁻¹(y))` with `ψ(x) = x/(p + x²)`; the observation space is
/// untouched, so its connector stays flat.
#[derive(Clone, Debug)]
pub struct WarpedCubicObservation {
    p_crit: f64,
    beta: f64,
    warp: CubicWarp,
    conn: FlatConnector,
}

impl WarpedCubicObservation {
    pub fn new(p_crit: f64, beta: f64, warp: CubicWarp) -> Self {
        WarpedCubicObservation {
            p_crit,
            beta,
            warp,
            conn: FlatConnector::new(1),
        }
    }

    fn parts(&self, y: f64) -> [f64; 3] {
        let x = self.warp.inverse(y);
        let p = self.p_crit;
        let d = p + x * x;
        let psi = [
            x / d,
            (p - x * x) / (d * d),
            2.0 * x * (x * x - 3.0 * p) / (d * d * d),
        ];
        chain(&self.warp, x, psi)
    }
}

impl ObservationModel for WarpedCubicObservation {
    fn dim_state(&self) -> usize {
        1
    }
    fn dim_obs(&self) -> usize {
        1
    }
    fn psi(&self, y: &Point) -> Result<Point> {
        Ok(Vector::from_element(1, self.parts(y[0])[0]))
    }
    fn dpsi(&self, y: &Point) -> Result<Matrix> {
        Ok(Matrix::from_element(1, 1, self.parts(y[0])[1]))
    }
    fn d2psi(&self, y: &Point) -> Result<Bilinear3> {
        Bilinear3::from_components(1, vec![Matrix::from_element(1, 1, self.parts(y[0])[2])])
    }
    fn beta(&self, _y: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.beta)
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let w = CubicWarp::new(0.2).unwrap();
        for &x in &[-5.0, -1.3, -0.01, 0.0, 0.4, 2.0, 40.0] {
            let back = w.inverse(w.map(x));
            assert!((back - x).abs() <= 1e-14 * (1.0 + x.abs()), "{x} -> {back}");
        }
    }

    #[test]
    fn identity_warp_recovers_cubic() {
        let w = CubicWarp::new(0.0).unwrap();
        let m = WarpedCubicState::new(0.01, w);
        let y = Vector::from_element(1, 0.7);
        assert_eq!(m.xi(&y)[0], -0.5 * 0.7f64.powi(3));
        assert_eq!(m.drift_b(&y)[0], m.xi(&y)[0]);
        assert_eq!(m.connector().gamma(&y, &y, &y)[0], 0.0);
    }
}
