//! Deterministic random inputs shared by the cases.

use gi_filter::linalg::{Matrix, Vector};
use gi_filter::models::{MissileState, TrackingObservation, TrackingState};
use gi_filter::Point;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRACKING_S: [f64; 6] = [1e-4, 2e-3, 1e-6, 2e-3, 1e-6, 1e-4];
pub const TRACKING_SIGMA_F: f64 = 0.5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.random_range(lo..hi)))
}

fn uniform3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Valid aircraft state: speed in [100, 300] m/s, turn acceleration below
/// 30 m/s², `a ⊥ v`.
pub fn tracking_state(rng: &mut ChaCha8Rng) -> Point {
    let p = uniform3(rng, -5000.0, 5000.0) + Vector3::new(8000.0, 6000.0, 3000.0);
    let dir = uniform3(rng, -1.0, 1.0).normalize();
    let v = dir * rng.random_range(100.0..300.0);
    let raw = uniform3(rng, -1.0, 1.0);
    let perp = (raw - v * (raw.dot(&v) / v.norm_squared())).normalize();
    let a = perp * rng.random_range(0.0..30.0);
    TrackingState { p, v, a }.to_point()
}

/// Valid state with velocity and acceleration shrunk by 100 and the
/// position at the origin (the connector ignores position), which keeps
/// scaling studies above the rounding floor.
pub fn slow_tracking_state(rng: &mut ChaCha8Rng) -> Point {
    let mut x = tracking_state(rng);
    for k in 0..3 {
        x[k] = 0.0;
    }
    for k in 3..9 {
        x[k] /= 100.0;
    }
    x
}

/// Tangent at `x` whose velocity block is orthogonal to `v`.
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

pub fn unit_constrained_tangent(rng: &mut ChaCha8Rng, x: &Point) -> Vector {
    let w = constrained_tangent(rng, x, 1.0);
    &w / w.norm()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&l * l.transpose() + Matrix::identity(n, n) * 0.1) * scale
}

pub fn tracking_observation() -> TrackingObservation {
    TrackingObservation::new(
        TRACKING_S,
        TRACKING_SIGMA_F,
        MissileState {
            p: [0.0, 0.0, 0.0],
            v: [250.0, 20.0, 5.0],
            a: [0.0; 3],
        },
    )
}
