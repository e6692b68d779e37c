#![allow(dead_code)]

use gi_filter::linalg::{Matrix, Vector};
use gi_filter::models::{TrackingObservation, TrackingState, MissileState};
use gi_filter::Point;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.random_range(lo..hi)))
}

pub fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// A tracking state with `v·a = 0` (up to rounding), speed in [100, 300] m/s
/// and turn acceleration up to 30 m/s².
pub fn tracking_state(rng: &mut ChaCha8Rng) -> Point {
    let p = uniform3(rng, -5000.0, 5000.0) + Vector3::new(8000.0, 6000.0, 3000.0);
    let dir = uniform3(rng, -1.0, 1.0).normalize();
    let v = dir * rng.random_range(100.0..300.0);
    let raw = uniform3(rng, -1.0, 1.0);
    let perp = (raw - v * (raw.dot(&v) / v.norm_squared())).normalize();
    let a = perp * rng.random_range(0.0..30.0);
    TrackingState { p, v, a }.to_point()
}

/// A tangent vector at `x` whose velocity block is orthogonal to `v`.
pub fn constrained_tangent(rng: &mut ChaCha8Rng, x: &Point, scale: f64) -> Vector {
    let s = TrackingState::from_point(x);
    let mut w = uniform_vec(rng, 9, -scale, scale);
    let wv = Vector3::new(w[3], w[4], w[5]);
    let wv = wv - s.v * (wv.dot(&s.v) / s.v.norm_squared());
    w[3] = wv[0];
    w[4] = wv[1];
    w[5] = wv[2];
    w
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&l * l.transpose() + Matrix::identity(n, n) * 0.1) * scale
}

pub const TRACKING_S: [f64; 6] = [1e-4, 2e-3, 1e-6, 2e-3, 1e-6, 1e-4];

pub fn tracking_observation() -> TrackingObservation {
    TrackingObservation::new(
        TRACKING_S,
        0.5,
        MissileState {
            p: [0.0, 0.0, 0.0],
            v: [250.0, 20.0, 5.0],
            a: [0.0; 3],
        },
    )
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Matrix exponential by a truncated Taylor series with scaling and squaring.
pub fn taylor_expm(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let mut term = Matrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact discretisation of `dX = AX dt + dW` with `E[dW dWᵀ] = Q dt` over
/// `dt` (Van Loan's block exponential): returns `(e^{A dt}, Q_d)`.
pub fn van_loan(a: &Matrix, q: &Matrix, dt: f64) -> (Matrix, Matrix) {
    let n = a.nrows();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    block.view_mut((0, n), (n, n)).copy_from(&(q * dt));
    block.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let e = taylor_expm(&block);
    let phi = e.view((n, n), (n, n)).transpose();
    let qd = &phi * e.view((0, n), (n, n));
    (phi, (&qd + qd.transpose()) * 0.5)
}

/// Textbook Kalman filter on `x_{k+1} = Φx_k + w`, `y = Jx + v`.
pub struct Kalman {
    pub phi: Matrix,
    pub qd: Matrix,
    pub j: Matrix,
    pub b: Matrix,
}

impl Kalman {
    pub fn step(&self, m: &Vector, p: &Matrix, y: &Vector) -> (Vector, Matrix) {
        let mp = &self.phi * m;
        let pp = &self.phi * p * self.phi.transpose() + &self.qd;
        let s = &self.j * &pp * self.j.transpose() + &self.b;
        let k = &pp * self.j.transpose() * s.try_inverse().unwrap();
        let m_new = &mp + &k * (y - &self.j * &mp);
        let n = m.len();
        let p_new = (Matrix::identity(n, n) - &k * &self.j) * pp;
        (m_new, (&p_new + p_new.transpose()) * 0.5)
    }
}

/// `‖a - b‖ / ‖b‖` in the max norm.
pub fn rel_mat(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
