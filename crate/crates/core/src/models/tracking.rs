//! Nine-dimensional constant-speed target tracked by range, two angles,
//! relative speed and a fictitious `a·v` measurement.
//!
//! States are packed as `(p, v, a)`; the dynamics keep `‖v‖` constant and
//! `a ⊥ v`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::geometry::{Bilinear3, Connector, Point};
use crate::linalg::{Matrix, Vector};
use crate::observation::ObservationModel;
use crate::state_model::{check_point, DiffusionModel};

/// Speeds below this are treated as singular.
pub const MIN_SPEED: f64 = 1e-6;
/// Ranges below this are treated as singular.
pub const MIN_RANGE: f64 = 1e-6;

fn block(x: &Vector, k: usize) -> Vector3<f64> {
    Vector3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2])
}

fn set_block(x: &mut Vector, k: usize, v: &Vector3<f64>) {
    x[3 * k] = v[0];
    x[3 * k + 1] = v[1];
    x[3 * k + 2] = v[2];
}

fn mat_block(m: &Matrix, r: usize, c: usize) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(3 * r + i, 3 * c + j)])
}

fn put_block(m: &mut Matrix, r: usize, c: usize, b: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            m[(3 * r + i, 3 * c + j)] = b[(i, j)];
        }
    }
}

/// Position, velocity and acceleration of a tracking state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl TrackingState {
    pub fn from_point(x: &Point) -> Self {
        TrackingState {
            p: block(x, 0),
            v: block(x, 1),
            a: block(x, 2),
        }
    }

    pub fn to_point(&self) -> Point {
        let mut x = Vector::zeros(9);
        set_block(&mut x, 0, &self.p);
        set_block(&mut x, 1, &self.v);
        set_block(&mut x, 2, &self.a);
        x
    }

    /// Relative violation of `v·a = 0`.
    pub fn orthogonality_defect(&self) -> f64 {
        let scale = self.v.norm() * self.a.norm();
        if scale == 0.0 {
            0.0
        } else {
            self.v.dot(&self.a).abs() / scale
        }
    }
}

/// `P(v) = I - vvᵀ/‖v‖²`.
pub fn projector(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - v * v.transpose() / v.norm_squared()
}

/// Turn-rate term `ρ(x) = ‖a‖²/‖v‖²` of the drift.
pub fn turn_rate_sq(v: &Vector3<f64>, a: &Vector3<f64>) -> f64 {
    a.norm_squared() / v.norm_squared()
}

fn check_speed(v: &Vector3<f64>) -> Result<()> {
    let s = v.norm();
    if !(s >= MIN_SPEED) {
        return Err(FilterError::SingularState(format!(
            "speed {s:.3e} is below the threshold {MIN_SPEED:e}"
        )));
    }
    Ok(())
}

/// State connector `Γ(x)(ζ⊗ς) = S(ζ⊗ς)v / (2‖v‖²)` with
/// `S = [0; ζ_a ς_aᵀ + ς_a ζ_aᵀ; -(ζ_v ς_aᵀ + ς_v ζ_aᵀ)]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrackingConnector;

impl TrackingConnector {
    /// `S(ζ⊗ς) w`.
    fn s_apply(u: &Vector, v: &Vector, w: &Vector3<f64>) -> Vector {
        let (ua, va) = (block(u, 2), block(v, 2));
        let (uv, vv) = (block(u, 1), block(v, 1));
        let ua_w = ua.dot(w);
        let va_w = va.dot(w);
        let mid = ua * va_w + va * ua_w;
        let bot = -(uv * va_w + vv * ua_w);
        let mut out = Vector::zeros(9);
        set_block(&mut out, 1, &mid);
        set_block(&mut out, 2, &bot);
        out
    }
}

impl Connector for TrackingConnector {
    fn dim(&self) -> usize {
        9
    }

    fn gamma(&self, x: &Point, u: &Vector, v: &Vector) -> Vector {
        let vel = block(x, 1);
        Self::s_apply(u, v, &vel) / (2.0 * vel.norm_squared())
    }

    /// Derivative with `‖v‖²` held fixed, as appropriate on the constraint set.
    fn dgamma(&self, x: &Point, w: &Vector, u: &Vector, v: &Vector) -> Vector {
        let vel = block(x, 1);
        Self::s_apply(u, v, &block(w, 1)) / (2.0 * vel.norm_squared())
    }

    fn contract(&self, x: &Point, s: &Matrix) -> Vector {
        let vel = block(x, 1);
        let c = vel.norm_squared();
        let aa = mat_block(s, 2, 2);
        let va = mat_block(s, 1, 2);
        let mut out = Vector::zeros(9);
        set_block(&mut out, 1, &(aa * vel / c));
        set_block(&mut out, 2, &(-(va * vel) / c));
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrackingDynamics {
    lambda: f64,
    gamma_noise: f64,
    conn: TrackingConnector,
}

impl TrackingDynamics {
    pub fn new(lambda: f64, gamma_noise: f64) -> Self {
        TrackingDynamics {
            lambda,
            gamma_noise,
            conn: TrackingConnector,
        }
    }
}

impl DiffusionModel for TrackingDynamics {
    fn dim(&self) -> usize {
        9
    }

    fn xi(&self, x: &Point) -> Vector {
        let s = TrackingState::from_point(x);
        let rho = turn_rate_sq(&s.v, &s.a);
        let acc = -(s.v * rho) - projector(&s.v) * s.a * self.lambda;
        let mut out = Vector::zeros(9);
        set_block(&mut out, 0, &s.v);
        set_block(&mut out, 1, &s.a);
        set_block(&mut out, 2, &acc);
        out
    }

    fn dxi(&self, x: &Point) -> Matrix {
        let s = TrackingState::from_point(x);
        let c = s.v.norm_squared();
        let rho = turn_rate_sq(&s.v, &s.a);
        let q = s.v * s.a.transpose() / c;
        let eye = Matrix3::identity();
        let mut m = Matrix::zeros(9, 9);
        put_block(&mut m, 0, 1, &eye);
        put_block(&mut m, 1, 2, &eye);
        put_block(&mut m, 2, 1, &(q * self.lambda - eye * rho));
        put_block(&mut m, 2, 2, &(-(projector(&s.v) * self.lambda) - q * 2.0));
        m
    }

    fn d2xi_contract(&self, x: &Point, chi: &Matrix) -> Vector {
        let s = TrackingState::from_point(x);
        let c = s.v.norm_squared();
        let aa = mat_block(chi, 2, 2);
        let va = mat_block(chi, 1, 2);
        let av = mat_block(chi, 2, 1);
        let bot = (s.v * aa.trace() + (va + av) * s.a) * (-2.0 / c);
        let mut out = Vector::zeros(9);
        set_block(&mut out, 2, &bot);
        out
    }

    fn alpha(&self, x: &Point) -> Matrix {
        let mut m = Matrix::zeros(9, 9);
        let proj = projector(&block(x, 1));
        put_block(&mut m, 2, 2, &(proj * self.gamma_noise.powi(2)));
        m
    }

    fn connector(&self) -> &dyn Connector {
        &self.conn
    }

    fn diffusion_sqrt(&self, x: &Point) -> Result<Matrix> {
        self.validate_state(x)?;
        let mut m = Matrix::zeros(9, 9);
        put_block(&mut m, 2, 2, &(projector(&block(x, 1)) * self.gamma_noise));
        Ok(m)
    }

    /// Restores the anchor's speed and makes `a` orthogonal to `v`.
    fn project(&self, x: &Point, anchor: &Point) -> Point {
        let mut s = TrackingState::from_point(x);
        let speed = block(anchor, 1).norm();
        let norm = s.v.norm();
        if norm > 0.0 {
            s.v *= speed / norm;
            s.a = projector(&s.v) * s.a;
        }
        s.to_point()
    }

    fn validate_state(&self, x: &Point) -> Result<()> {
        check_point(x, 9)?;
        check_speed(&block(x, 1))
    }
}

/// Known state of the observing platform at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissileState {
    pub p: [f64; 3],
    pub v: [f64; 3],
    #[serde(default)]
    pub a: [f64; 3],
}

/// Platform trajectory as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MissileTrajectory {
    /// `p(t) = p0 + v t`, zero acceleration.
    ConstantVelocity { p0: [f64; 3], v: [f64; 3] },
    /// Piecewise-constant table; the latest entry not after `t` applies.
    Table { times: Vec<f64>, states: Vec<MissileState> },
}

impl Default for MissileTrajectory {
    fn default() -> Self {
        MissileTrajectory::ConstantVelocity {
            p0: [0.0; 3],
            v: [0.0; 3],
        }
    }
}

impl MissileTrajectory {
    pub fn validate(&self) -> Result<()> {
        if let MissileTrajectory::Table { times, states } = self {
            if times.is_empty() || times.len() != states.len() {
                return Err(FilterError::InvalidInput(
                    "missile table needs matching, non-empty times and states".into(),
                ));
            }
            if times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(FilterError::InvalidInput(
                    "missile table times must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> MissileState {
        match self {
            MissileTrajectory::ConstantVelocity { p0, v } => MissileState {
                p: [p0[0] + v[0] * t, p0[1] + v[1] * t, p0[2] + v[2] * t],
                v: *v,
                a: [0.0; 3],
            },
            MissileTrajectory::Table { times, states } => {
                let idx = times.partition_point(|&s| s <= t).saturating_sub(1);
                states[idx]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tracking9DParams {
    pub lambda: f64,
    pub gamma_noise: f64,
    /// Variance constants `s0..s5` of the observation covariance.
    pub s: [f64; 6],
    pub sigma_f: f64,
    #[serde(default)]
    pub missile: MissileTrajectory,
}

impl Tracking9DParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FilterError::InvalidInput("lambda must be positive".into()));
        }
        if !(self.gamma_noise > 0.0 && self.gamma_noise.is_finite()) {
            return Err(FilterError::InvalidInput("gamma_noise must be positive".into()));
        }
        if self.s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(FilterError::InvalidInput(
                "observation variance constants must be non-negative".into(),
            ));
        }
        if self.s[0] == 0.0 || self.s[5] == 0.0 || self.s[1] + self.s[2] == 0.0 || self.s[3] + self.s[4] == 0.0 {
            return Err(FilterError::InvalidInput(
                "observation covariance would be singular".into(),
            ));
        }
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(FilterError::InvalidInput("sigma_f must be positive".into()));
        }
        self.missile.validate()
    }
}

/// Diagonal observation covariance `diag(h_1, …, h_5)` as functions of range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeCovariance {
    pub s: [f64; 6],
    pub sigma_f: f64,
}

impl RangeCovariance {
    pub fn h(&self, r: f64) -> [f64; 5] {
        let s = &self.s;
        [
            s[0] * r * r,
            s[1] / r + s[2],
            s[3] / r + s[4],
            s[5] * r * r,
            self.sigma_f * self.sigma_f,
        ]
    }

    pub fn dh(&self, r: f64) -> [f64; 5] {
        let s = &self.s;
        [2.0 * s[0] * r, -s[1] / (r * r), -s[3] / (r * r), 2.0 * s[5] * r, 0.0]
    }

    pub fn d2h(&self, r: f64) -> [f64; 5] {
        let s = &self.s;
        let r3 = r * r * r;
        [2.0 * s[0], 2.0 * s[1] / r3, 2.0 * s[3] / r3, 2.0 * s[5], 0.0]
    }

    pub fn beta(&self, y: &Point) -> Matrix {
        Matrix::from_diagonal(&Vector::from_row_slice(&self.h(y[0])))
    }
}

/// Closed-form Levi-Civita connector of the range-dependent diagonal metric.
#[derive(Clone, Copy, Debug)]
pub struct RangeConnector {
    cov: RangeCovariance,
}

impl RangeConnector {
    pub fn new(cov: RangeCovariance) -> Self {
        RangeConnector { cov }
    }

    /// Bilinear map built from `c_k = h_k'/h_k` and `e_i = h_1 h_i'/h_i²`:
    /// `out_k = -½(u¹v^k + u^k v¹) c_k + δ_k1 ½ Σ_i e_i u^i v^i`.
    fn assemble(c: &[f64; 5], e: &[f64; 5], u: &Vector, v: &Vector) -> Vector {
        let mut out = Vector::zeros(5);
        for k in 0..5 {
            out[k] = -0.5 * (u[0] * v[k] + u[k] * v[0]) * c[k];
        }
        let mut diag = 0.0;
        for i in 0..5 {
            diag += e[i] * (u[i] * v[i]);
        }
        out[0] += 0.5 * diag;
        out
    }
}

impl Connector for RangeConnector {
    fn dim(&self) -> usize {
        5
    }

    fn gamma(&self, y: &Point, u: &Vector, v: &Vector) -> Vector {
        let r = y[0];
        let h = self.cov.h(r);
        let dh = self.cov.dh(r);
        let c: [f64; 5] = std::array::from_fn(|k| dh[k] / h[k]);
        let e: [f64; 5] = std::array::from_fn(|i| h[0] * dh[i] / (h[i] * h[i]));
        Self::assemble(&c, &e, u, v)
    }

    fn dgamma(&self, y: &Point, w: &Vector, u: &Vector, v: &Vector) -> Vector {
        let r = y[0];
        let h = self.cov.h(r);
        let dh = self.cov.dh(r);
        let d2h = self.cov.d2h(r);
        let c: [f64; 5] = std::array::from_fn(|k| (d2h[k] * h[k] - dh[k] * dh[k]) / (h[k] * h[k]));
        let e: [f64; 5] = std::array::from_fn(|i| {
            dh[0] * dh[i] / (h[i] * h[i]) + h[0] * (d2h[i] * h[i] - 2.0 * dh[i] * dh[i]) / h[i].powi(3)
        });
        Self::assemble(&c, &e, u, v) * w[0]
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Observation map at one instant, relative to a known platform state.
#[derive(Clone, Debug)]
pub struct TrackingObservation {
    cov: RangeCovariance,
    conn: RangeConnector,
    missile: MissileState,
}

/// Index of the azimuth coordinate, which is periodic.
pub const AZIMUTH: usize = 2;

impl TrackingObservation {
    pub fn new(s: [f64; 6], sigma_f: f64, missile: MissileState) -> Self {
        let cov = RangeCovariance { s, sigma_f };
        TrackingObservation {
            cov,
            conn: RangeConnector::new(cov),
            missile,
        }
    }

    pub fn missile(&self) -> &MissileState {
        &self.missile
    }

    fn relative(&self, x: &Point) -> (TrackingState, Vector3<f64>, Vector3<f64>) {
        let s = TrackingState::from_point(x);
        let d = s.p - Vector3::from(self.missile.p);
        let u = s.v - Vector3::from(self.missile.v);
        (s, d, u)
    }

    fn check_geometry(d: &Vector3<f64>, u: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let r = d.norm();
        if !(r >= MIN_RANGE) {
            return Err(FilterError::SingularObservation(format!(
                "range {r:.3e} is below the threshold {MIN_RANGE:e}"
            )));
        }
        let rho = d[0].hypot(d[1]);
        if !(rho > 1e-12 * r) {
            return Err(FilterError::SingularObservation(
                "target is on the vertical axis of the platform".into(),
            ));
        }
        let speed = u.norm();
        if !(speed > 0.0) {
            return Err(FilterError::SingularObservation(
                "relative speed is zero".into(),
            ));
        }
        Ok((r, rho, speed))
    }
}

impl ObservationModel for TrackingObservation {
    fn dim_state(&self) -> usize {
        9
    }

    fn dim_obs(&self) -> usize {
        5
    }

    fn psi(&self, x: &Point) -> Result<Point> {
        check_point(x, 9)?;
        let (s, d, u) = self.relative(x);
        let r = d.norm();
        if !(r >= MIN_RANGE) {
            return Err(FilterError::SingularObservation(format!(
                "range {r:.3e} is below the threshold {MIN_RANGE:e}"
            )));
        }
        let rho = d[0].hypot(d[1]);
        Ok(Vector::from_vec(vec![
            r,
            rho.atan2(d[2]),
            d[1].atan2(d[0]),
            u.norm(),
            s.a.dot(&s.v),
        ]))
    }

    fn dpsi(&self, x: &Point) -> Result<Matrix> {
        check_point(x, 9)?;
        let (s, d, u) = self.relative(x);
        let (r, rho, speed) = Self::check_geometry(&d, &u)?;
        let r2 = r * r;
        let rho2 = rho * rho;
        let mut j = Matrix::zeros(5, 9);
        for i in 0..3 {
            j[(0, i)] = d[i] / r;
            j[(3, 3 + i)] = u[i] / speed;
            j[(4, 3 + i)] = s.a[i];
            j[(4, 6 + i)] = s.v[i];
        }
        j[(1, 0)] = d[0] * d[2] / (rho * r2);
        j[(1, 1)] = d[1] * d[2] / (rho * r2);
        j[(1, 2)] = -rho / r2;
        j[(2, 0)] = -d[1] / rho2;
        j[(2, 1)] = d[0] / rho2;
        Ok(j)
    }

    fn d2psi(&self, x: &Point) -> Result<Bilinear3> {
        check_point(x, 9)?;
        let (_, d, u) = self.relative(x);
        let (r, rho, speed) = Self::check_geometry(&d, &u)?;
        let r2 = r * r;
        let r4 = r2 * r2;
        let rho2 = rho * rho;
        let eye = Matrix3::<f64>::identity();

        let h_range = (eye - d * d.transpose() / r2) / r;

        let mut h_polar = Matrix3::zeros();
        let w = r2 / rho + 2.0 * rho;
        for i in 0..2 {
            for k in 0..2 {
                let delta = if i == k { rho * r2 } else { 0.0 };
                h_polar[(i, k)] = d[2] * (delta - d[i] * d[k] * w) / (rho2 * r4);
            }
            let cross = d[i] * (rho2 - d[2] * d[2]) / (rho * r4);
            h_polar[(i, 2)] = cross;
            h_polar[(2, i)] = cross;
        }
        h_polar[(2, 2)] = 2.0 * rho * d[2] / r4;

        let rho4 = rho2 * rho2;
        let mut h_az = Matrix3::zeros();
        h_az[(0, 0)] = 2.0 * d[0] * d[1] / rho4;
        h_az[(1, 1)] = -2.0 * d[0] * d[1] / rho4;
        h_az[(0, 1)] = (d[1] * d[1] - d[0] * d[0]) / rho4;
        h_az[(1, 0)] = h_az[(0, 1)];

        let h_speed = (eye - u * u.transpose() / (speed * speed)) / speed;

        let mut comps = vec![Matrix::zeros(9, 9); 5];
        put_block(&mut comps[0], 0, 0, &h_range);
        put_block(&mut comps[1], 0, 0, &h_polar);
        put_block(&mut comps[2], 0, 0, &h_az);
        put_block(&mut comps[3], 1, 1, &h_speed);
        put_block(&mut comps[4], 1, 2, &eye);
        put_block(&mut comps[4], 2, 1, &eye);
        Bilinear3::from_components(9, comps)
    }

    fn beta(&self, y: &Point) -> Matrix {
        self.cov.beta(y)
    }

    fn connector(&self) -> &dyn Connector {
        &self.conn
    }

    fn residual(&self, y_obs: &Point, y_ref: &Point) -> Vector {
        let mut w = y_obs - y_ref;
        w[AZIMUTH] = wrap_angle(w[AZIMUTH]);
        w
    }

    fn canonicalize(&self, mut y: Point) -> Point {
        y[AZIMUTH] = wrap_angle(y[AZIMUTH]);
        y
    }
}

/// Observation models for every instant along a platform trajectory.
#[derive(Clone, Debug)]
pub struct TrackingObservationFamily {
    s: [f64; 6],
    sigma_f: f64,
    missile: MissileTrajectory,
}

impl TrackingObservationFamily {
    pub fn at(&self, t: f64) -> TrackingObservation {
        TrackingObservation::new(self.s, self.sigma_f, self.missile.at(t))
    }
}

pub fn tracking9d_build(params: &Tracking9DParams) -> Result<(TrackingDynamics, TrackingObservationFamily)> {
    params.validate()?;
    Ok((
        TrackingDynamics::new(params.lambda, params.gamma_noise),
        TrackingObservationFamily {
            s: params.s,
            sigma_f: params.sigma_f,
            missile: params.missile.clone(),
        },
    ))
}
