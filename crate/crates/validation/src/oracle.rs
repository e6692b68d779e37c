//! Reference computations written independently of `gi_filter`'s numerics.
//!
//! Oracles use only model evaluations (`ψ`, `ξ`, `Γ`) from the library, never
//! its flow, propagation, curvature or update routines.

use gi_filter::linalg::{Matrix, Vector};
use gi_filter::{Connector, ObservationModel, Point};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Matrix exponential by a 30-term Taylor series after scaling to norm 1/2.
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

/// `(e^{A dt}, Q_d)` for `dX = AX dt + dW`, `E[dW dWᵀ] = Q dt`, from the
/// block exponential of `[[-A, Q], [0, Aᵀ]] dt`.
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

/// Textbook Kalman filter on `x' = Φx + w`, `y = Jx + v`.
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
        let k = &pp * self.j.transpose() * s.try_inverse().expect("innovation covariance is invertible");
        let m_new = &mp + &k * (y - &self.j * &mp);
        let n = m.len();
        let p_new = (Matrix::identity(n, n) - &k * &self.j) * pp;
        (m_new, (&p_new + p_new.transpose()) * 0.5)
    }
}

/// Christoffel symbols of the metric `diag(e^{-2y₀}, 1)` (inverse of
/// `diag(e^{2y₀}, 1)`), worked by hand: only `Γ⁰₀₀ = ½g⁰⁰∂₀g₀₀ = -1` survives.
/// Layout `[m][i][j]`, row-major.
pub fn exponential_metric_christoffel(_y: &Point) -> [f64; 8] {
    [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
}

/// Geodesic `ẍ = -Γ(ẋ, ẋ)` over `s ∈ [0, 1]` by classical RK4.
pub fn rk4_geodesic(conn: &dyn Connector, x: &Point, v: &Vector, steps: usize) -> Point {
    let h = 1.0 / steps as f64;
    let accel = |x: &Vector, v: &Vector| -conn.gamma(x, v, v);
    let (mut x, mut v) = (x.clone(), v.clone());
    for _ in 0..steps {
        let (k1x, k1v) = (v.clone(), accel(&x, &v));
        let (x2, v2) = (&x + &k1x * (h / 2.0), &v + &k1v * (h / 2.0));
        let (k2x, k2v) = (v2.clone(), accel(&x2, &v2));
        let (x3, v3) = (&x + &k2x * (h / 2.0), &v + &k2v * (h / 2.0));
        let (k3x, k3v) = (v3.clone(), accel(&x3, &v3));
        let (x4, v4) = (&x + &k3x * h, &v + &k3v * h);
        let (k4x, k4v) = (v4.clone(), accel(&x4, &v4));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    x
}

/// Base-point derivative of the RK4 geodesic endpoint, by central differences.
pub fn rk4_geodesic_base_jacobian(conn: &dyn Connector, x: &Point, v: &Vector, steps: usize) -> Matrix {
    let n = x.len();
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-6 * (1.0 + x[k].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (rk4_geodesic(conn, &xp, v, steps) - rk4_geodesic(conn, &xm, v, steps)) / (xp[k] - xm[k]);
        out.set_column(k, &col);
    }
    out
}

fn transport_leg(conn: &dyn Connector, x: &mut Point, w: &mut Vector, dir: &Vector, length: f64, steps: usize) {
    // dW/ds = -Γ(c(s))(ċ, W) along c(s) = x + s·dir, RK4 in s.
    let h = length / steps as f64;
    let rhs = |x: &Point, w: &Vector| -conn.gamma(x, dir, w);
    for _ in 0..steps {
        let k1 = rhs(x, w);
        let xm = &*x + dir * (h / 2.0);
        let k2 = rhs(&xm, &(&*w + &k1 * (h / 2.0)));
        let k3 = rhs(&xm, &(&*w + &k2 * (h / 2.0)));
        let xe = &*x + dir * h;
        let k4 = rhs(&xe, &(&*w + &k3 * h));
        *w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        *x = xe;
    }
}

/// Holonomy estimate of `R(u, v)w`: parallel-transport `w` around the
/// coordinate square `x → x+hu → x+hu+hv → x+hv → x` and divide the defect
/// by the area `h²`. To second order the defect is
/// `h²{DΓ(v)(u,w) - DΓ(u)(v,w) + Γ(v,Γ(u,w)) - Γ(u,Γ(v,w))}`.
pub fn holonomy(conn: &dyn Connector, x: &Point, u: &Vector, v: &Vector, w: &Vector, h: f64, steps: usize) -> Vector {
    let mut p = x.clone();
    let mut t = w.clone();
    transport_leg(conn, &mut p, &mut t, u, h, steps);
    transport_leg(conn, &mut p, &mut t, v, h, steps);
    transport_leg(conn, &mut p, &mut t, &-u, h, steps);
    transport_leg(conn, &mut p, &mut t, &-v, h, steps);
    (t - w) / (h * h)
}

/// `μ - ⅓ Σᵢⱼₖ Rᵢⱼₖ μⁱ Σʲᵏ` with `Rᵐᵢⱼₖ` assembled component by component from
/// the connector coefficients and their derivatives on basis vectors.
pub fn barycenter_by_loops(conn: &dyn Connector, x: &Point, mu: &Vector, sigma: &Matrix) -> Vector {
    let n = x.len();
    let e = |i: usize| {
        let mut v = Vector::zeros(n);
        v[i] = 1.0;
        v
    };
    // g[i][j][m] = Γᵐᵢⱼ, d[l][i][j][m] = ∂ₗΓᵐᵢⱼ
    let g: Vec<Vec<Vector>> = (0..n).map(|i| (0..n).map(|j| conn.gamma(x, &e(i), &e(j))).collect()).collect();
    let d: Vec<Vec<Vec<Vector>>> = (0..n)
        .map(|l| (0..n).map(|i| (0..n).map(|j| conn.dgamma(x, &e(l), &e(i), &e(j))).collect()).collect())
        .collect();
    let mut out = mu.clone();
    for m in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            if mu[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                for k in 0..n {
                    if sigma[(j, k)] == 0.0 {
                        continue;
                    }
                    // R(eᵢ, eⱼ)eₖ = ∂ⱼΓ(eᵢ,eₖ) - ∂ᵢΓ(eⱼ,eₖ) + Γ(Γ(eᵢ,eₖ), eⱼ) - Γ(Γ(eⱼ,eₖ), eᵢ)
                    let mut r = d[j][i][k][m] - d[i][j][k][m];
                    for q in 0..n {
                        r += g[i][k][q] * g[q][j][m] - g[j][k][q] * g[q][i][m];
                    }
                    acc += r * mu[i] * sigma[(j, k)];
                }
            }
        }
        out[m] -= acc / 3.0;
    }
    out
}

/// `(F Σ Fᵀ)_ab = Σᵢⱼ F_ai Σ_ij F_bj`.
pub fn pushforward_by_loops(f: &Matrix, sigma: &Matrix) -> Matrix {
    let n = f.nrows();
    let m = f.ncols();
    let mut out = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += f[(a, i)] * sigma[(i, j)] * f[(b, j)];
                }
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// `x_t = x₀/√(1 + x₀²t)`, the flow of `ẋ = -x³/2`.
pub fn cubic_flow(x0: f64, t: f64) -> f64 {
    x0 / (1.0 + x0 * x0 * t).sqrt()
}

/// Central second difference of `x₀ ↦ x_t`.
pub fn cubic_flow_second_difference(x0: f64, t: f64, h: f64) -> f64 {
    (cubic_flow(x0 + h, t) - 2.0 * cubic_flow(x0, t) + cubic_flow(x0 - h, t)) / (h * h)
}

/// `Var(X_δ)` for `dX = -aX dt + σ dW`.
pub fn ou_variance(a: f64, sigma: f64, sigma0: f64, delta: f64) -> f64 {
    let e = (-2.0 * a * delta).exp();
    e * sigma0 + sigma * sigma * (1.0 - e) / (2.0 * a)
}

/// `d²/dx² x/(p + x²) = 2x(x² - 3p)/(p + x²)³`.
pub fn cubic_psi_second(p: f64, x: f64) -> f64 {
    2.0 * x * (x * x - 3.0 * p) / (p + x * x).powi(3)
}

/// `∇dψ(x)(eₐ, e_b)` with `Dψ` and `D²ψ` from central differences of `ψ`
/// (chart differences through `residual`, so angle wrap is respected).
/// Returns the `q` components, each `p x p`.
pub fn observation_sff_by_differences(
    obs: &dyn ObservationModel,
    state_conn: &dyn Connector,
    x: &Point,
) -> Vec<Matrix> {
    let p = x.len();
    let q = obs.dim_obs();
    let y = obs.psi(x).expect("valid state");
    let h: Vec<f64> = (0..p).map(|k| 1e-3 * (1.0 + x[k].abs())).collect();
    let at = |shift: &[(usize, f64)]| {
        let mut z = x.clone();
        for &(k, s) in shift {
            z[k] += s * h[k];
        }
        obs.residual(&obs.psi(&z).expect("valid state"), &y)
    };
    let j = Matrix::from_fn(q, p, |_, _| 0.0);
    let mut j = j;
    for k in 0..p {
        let col = (at(&[(k, 1.0)]) - at(&[(k, -1.0)])) / (2.0 * h[k]);
        j.set_column(k, &col);
    }
    let mut out = vec![Matrix::zeros(p, p); q];
    for a in 0..p {
        for b in a..p {
            let d2 = if a == b {
                (at(&[(a, 1.0)]) + at(&[(a, -1.0)])) / (h[a] * h[a])
            } else {
                (at(&[(a, 1.0), (b, 1.0)]) - at(&[(a, 1.0), (b, -1.0)]) - at(&[(a, -1.0), (b, 1.0)])
                    + at(&[(a, -1.0), (b, -1.0)]))
                    / (4.0 * h[a] * h[b])
            };
            let mut ea = Vector::zeros(p);
            let mut eb = Vector::zeros(p);
            ea[a] = 1.0;
            eb[b] = 1.0;
            let total = d2 - &j * state_conn.gamma(x, &ea, &eb)
                + obs.connector().gamma(&y, &j.column(a).into_owned(), &j.column(b).into_owned());
            for m in 0..q {
                out[m][(a, b)] = total[m];
                out[m][(b, a)] = total[m];
            }
        }
    }
    out
}

/// Draws `n` samples of `f`, in chunks with their own ChaCha8 streams; the
/// result is in chunk order regardless of scheduling.
pub fn monte_carlo<F>(n: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    const CHUNK: usize = 10_000;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    parts.concat()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance and its large-sample standard error `√((m₄ - s⁴)/n)`.
pub fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var) / n).sqrt())
}

/// One Euler-Maruyama path of `dX = b(X) dt + √α dW` over `[0, δ]`.
pub fn euler_maruyama<B: Fn(f64) -> f64>(x0: f64, b: B, alpha: f64, delta: f64, steps: usize, rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let h = delta / steps as f64;
    let root = (alpha * h).sqrt();
    let mut x = x0;
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        x += b(x) * h + root * z;
    }
    x
}

/// Same recursion with the noise switched off, for use as a control variate.
pub fn euler_deterministic<B: Fn(f64) -> f64>(x0: f64, b: B, delta: f64, steps: usize) -> f64 {
    let h = delta / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        x += b(x) * h;
    }
    x
}

/// Scalar cubic benchmark `ξ = -x³/2`, `ψ = x/(p + x²)`, written out line by
/// line for a single filter cycle (flat chart, so the exponential map is
/// `x + v` and `F = 1`).
#[derive(Clone, Copy, Debug)]
pub struct ScalarCubic {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub n_substeps: usize,
    pub collar: bool,
    pub quadratic: bool,
}

/// Scalar propagation quantities over one interval.
#[derive(Clone, Copy, Debug)]
pub struct ScalarBundle {
    pub x_delta: f64,
    pub tau: f64,
    pub xi: f64,
    pub m: f64,
    pub ndphi: f64,
}

impl ScalarCubic {
    fn xi(x: f64) -> f64 {
        -0.5 * x * x * x
    }
    fn xi1(x: f64) -> f64 {
        -1.5 * x * x
    }
    fn xi2(x: f64) -> f64 {
        -3.0 * x
    }
    pub fn psi(&self, x: f64) -> f64 {
        x / (self.p + x * x)
    }
    pub fn psi1(&self, x: f64) -> f64 {
        (self.p - x * x) / (self.p + x * x).powi(2)
    }
    pub fn psi2(&self, x: f64) -> f64 {
        cubic_psi_second(self.p, x)
    }

    pub fn propagate(&self, mu: f64, s0: f64) -> ScalarBundle {
        let h = self.delta / self.n_substeps as f64;
        let a = self.alpha;
        let (mut x, mut xi, mut kappa, mut nd, mut tau) = (mu, s0, 0.0, 0.0, 1.0);
        for _ in 0..self.n_substeps {
            let f0 = Self::xi(x);
            let d1 = Self::xi1(x);
            let xn = x + h * f0 + h * h / 2.0 * d1 * f0 + h.powi(3) / 6.0 * (Self::xi2(x) * f0 * f0 + d1 * d1 * f0);
            let t = (h / 2.0 * (d1 + Self::xi1(xn))).exp();
            let xin = h / 2.0 * a + t * (xi + h / 2.0 * a) * t;
            kappa = h / 2.0 * Self::xi2(xn) * xin + t * (kappa + h / 2.0 * Self::xi2(x) * xi);
            let tn = t * tau;
            nd = h / 2.0 * Self::xi2(xn) * tn * tn + t * (nd + h / 2.0 * Self::xi2(x) * tau * tau);
            x = xn;
            xi = xin;
            tau = tn;
        }
        ScalarBundle {
            x_delta: x,
            tau,
            xi,
            m: 0.5 * kappa,
            ndphi: nd,
        }
    }

    /// Conditional mean and variance of the tangent update at `x_δ`.
    pub fn assimilate(&self, b: &ScalarBundle, y: f64) -> (f64, f64) {
        let j = self.psi1(b.x_delta);
        let hpsi = self.psi2(b.x_delta);
        let obs_ailp = 0.5 * hpsi * b.xi + j * b.m;
        let g = b.xi * j / (j * j * b.xi + self.beta);
        let z = y - self.psi(b.x_delta) - obs_ailp;
        let rho = |zz: f64| 0.5 * ((1.0 - g * j) * b.ndphi * (g / b.tau).powi(2) * zz - g * hpsi * g * g * zz);
        let lin = g * z;
        let mut q = rho(z * z) - rho(j * b.xi / g);
        if !self.quadratic {
            q = 0.0;
        } else if self.collar && q.abs() > lin.abs() {
            q *= lin.abs() / q.abs();
        }
        (b.m + lin + q, (1.0 - g * j) * b.xi)
    }

    pub fn step(&self, mu: f64, s0: f64, y: f64) -> (f64, f64) {
        let b = self.propagate(mu, s0);
        let (v, s) = self.assimilate(&b, y);
        (b.x_delta + v, s)
    }

    /// EKF update of `(m, P)` on observation `y`.
    pub fn ekf_update(&self, m: f64, p: f64, y: f64) -> (f64, f64) {
        let j = self.psi1(m);
        let k = p * j / (j * j * p + self.beta);
        (m + k * (y - self.psi(m)), (1.0 - k * j) * p)
    }
}

/// 1-D connector `Γ(u⊗v) = c·uv`; its geodesic from `x` with velocity `v`
/// is `x + ln(1 + cv)/c`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantConnector {
    pub c: f64,
}

impl Connector for ConstantConnector {
    fn dim(&self) -> usize {
        1
    }
    fn gamma(&self, _x: &Point, u: &Vector, v: &Vector) -> Vector {
        Vector::from_element(1, self.c * u[0] * v[0])
    }
    fn dgamma(&self, _x: &Point, _w: &Vector, _u: &Vector, _v: &Vector) -> Vector {
        Vector::zeros(1)
    }
}

/// Flat 1-D diffusion `dX = X² dt + √α dW`.
#[derive(Clone, Debug)]
pub struct SquareDrift {
    pub alpha: f64,
    pub conn: gi_filter::geometry::FlatConnector,
}

impl SquareDrift {
    pub fn new(alpha: f64) -> Self {
        SquareDrift {
            alpha,
            conn: gi_filter::geometry::FlatConnector::new(1),
        }
    }
}

impl gi_filter::DiffusionModel for SquareDrift {
    fn dim(&self) -> usize {
        1
    }
    fn xi(&self, x: &Point) -> Vector {
        Vector::from_element(1, x[0] * x[0])
    }
    fn dxi(&self, x: &Point) -> Matrix {
        Matrix::from_element(1, 1, 2.0 * x[0])
    }
    fn d2xi_contract(&self, _x: &Point, chi: &Matrix) -> Vector {
        Vector::from_element(1, 2.0 * chi[(0, 0)])
    }
    fn alpha(&self, _x: &Point) -> Matrix {
        Matrix::from_element(1, 1, self.alpha)
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

/// `ψ(X_δ) - ψ(x_δ) - ψ'(x_δ)L_δ` along one Euler path of the cubic model,
/// where `L` is the linearised deviation driven by the same noise. `E[L] = 0`
/// exactly, so the mean is `E[ψ(X_δ)] - ψ(x_δ)` with far smaller variance.
#[allow(clippy::too_many_arguments)]
pub fn cubic_observation_defect<P, D>(
    x0: f64,
    s0: f64,
    alpha: f64,
    delta: f64,
    steps: usize,
    psi: P,
    dpsi: D,
    rng: &mut ChaCha8Rng,
) -> f64
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    use rand::Rng;
    use rand_distr::StandardNormal;
    let h = delta / steps as f64;
    let root = (alpha * h).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    let l0 = s0.sqrt() * z;
    let (mut x, mut d, mut l) = (x0 + l0, x0, l0);
    for _ in 0..steps {
        let dw = root * rng.sample::<f64, _>(StandardNormal);
        x += -0.5 * x * x * x * h + dw;
        l += -1.5 * d * d * l * h + dw;
        d += -0.5 * d * d * d * h;
    }
    psi(x) - psi(d) - dpsi(d) * l
}
