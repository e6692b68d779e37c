//! Deterministic-flow quantities over one inter-observation interval.

use crate::error::{FilterError, Result};
use crate::geometry::{Bilinear3, Connector, Point, SymTensor2};
use crate::linalg::{self, Matrix, Vector};

/// State diffusion `dX = b(X) dt + σ(X) dW` described through its intrinsic
/// drift `ξ`, the diffusion variance `α = σσᵀ` and a connector `Γ`.
pub trait DiffusionModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Intrinsic drift `ξ(x)`.
    fn xi(&self, x: &Point) -> Vector;

    /// `Dξ(x)`.
    fn dxi(&self, x: &Point) -> Matrix;

    /// `D²ξ(x)(χ)` for a symmetric 2-tensor `χ`.
    fn d2xi_contract(&self, x: &Point, chi: &Matrix) -> Vector;

    /// `α(x) = σ·σ(x)`, symmetric positive semi-definite.
    fn alpha(&self, x: &Point) -> Matrix;

    fn connector(&self) -> &dyn Connector;

    /// Itô drift `b` of the state equation; defaults to `ξ` for models whose
    /// connector annihilates `α`.
    fn drift_b(&self, x: &Point) -> Vector {
        self.xi(x)
    }

    fn drift_b_jacobian(&self, x: &Point) -> Matrix {
        self.dxi(x)
    }

    fn drift_b_second(&self, x: &Point, chi: &Matrix) -> Vector {
        self.d2xi_contract(x, chi)
    }

    /// A square root `σ` with `σσᵀ = α`.
    fn diffusion_sqrt(&self, x: &Point) -> Result<Matrix> {
        linalg::sym_sqrt(&self.alpha(x))
    }

    /// Maps a simulated state back onto the model's constraint set, using
    /// `anchor` for any conserved quantities. Unconstrained models return `x`.
    fn project(&self, x: &Point, _anchor: &Point) -> Point {
        x.clone()
    }

    /// Rejects states at which the model is singular.
    fn validate_state(&self, x: &Point) -> Result<()> {
        check_point(x, self.dim())
    }
}

pub(crate) fn check_point(x: &Point, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(FilterError::InvalidInput(format!(
            "state of length {} for a model of dimension {dim}",
            x.len()
        )));
    }
    if !linalg::all_finite(x) {
        return Err(FilterError::InvalidInput("non-finite state".into()));
    }
    Ok(())
}

/// Uniform subdivision of `[0, delta]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGrid {
    delta: f64,
    n_steps: usize,
}

impl FlowGrid {
    pub fn new(delta: f64, n_steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(FilterError::InvalidInput(format!(
                "interval length must be positive, got {delta}"
            )));
        }
        if n_steps == 0 {
            return Err(FilterError::InvalidInput(
                "grid needs at least one step".into(),
            ));
        }
        Ok(FlowGrid { delta, n_steps })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.delta / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.step();
        let mut t: Vec<f64> = (0..=self.n_steps).map(|i| i as f64 * h).collect();
        t[self.n_steps] = self.delta;
        t
    }
}

/// One step of the third-order Taylor scheme for `x' = f(x)` given `f`, its
/// Jacobian and its second-derivative contraction at `x`.
pub(crate) fn taylor3_step(
    x: &Point,
    h: f64,
    f: &Vector,
    df: &Matrix,
    d2f_ff: &Vector,
) -> Point {
    let dff = df * f;
    x + f * h + &dff * (h * h / 2.0) + (d2f_ff + df * &dff) * (h * h * h / 6.0)
}

/// Deterministic flow of `ξ` at every grid time.
pub fn integrate_flow(model: &dyn DiffusionModel, x0: &Point, grid: &FlowGrid) -> Result<Vec<Point>> {
    check_point(x0, model.dim())?;
    let h = grid.step();
    let mut path = Vec::with_capacity(grid.n_steps() + 1);
    path.push(x0.clone());
    for step in 0..grid.n_steps() {
        let x = &path[step];
        let f = model.xi(x);
        let df = model.dxi(x);
        let d2 = model.d2xi_contract(x, &(&f * f.transpose()));
        let next = taylor3_step(x, h, &f, &df, &d2);
        if !linalg::all_finite(&next) {
            return Err(FilterError::Divergence {
                stage: "flow integration",
                step,
            });
        }
        path.push(next);
    }
    Ok(path)
}

/// Transition Jacobians of the flow along a grid.
#[derive(Clone, Debug)]
pub struct Transitions {
    /// `τ_u^t` for each consecutive pair of grid times.
    pub steps: Vec<Matrix>,
    /// `τ_0^t` at every grid time, starting from the identity.
    pub accumulated: Vec<Matrix>,
    /// `τ_δ^0 = (τ_0^δ)⁻¹`.
    pub tau_delta_0: Matrix,
}

impl Transitions {
    pub fn tau_0_delta(&self) -> &Matrix {
        self.accumulated.last().expect("accumulated Jacobians are never empty")
    }
}

/// Largest acceptable condition number for `τ_0^δ`.
pub const MAX_FLOW_CONDITION: f64 = 1e12;

pub fn transition_jacobians(
    model: &dyn DiffusionModel,
    x_path: &[Point],
    grid: &FlowGrid,
) -> Result<Transitions> {
    if x_path.len() != grid.n_steps() + 1 {
        return Err(FilterError::InvalidInput(format!(
            "path of {} points on a grid of {} steps",
            x_path.len(),
            grid.n_steps()
        )));
    }
    let h = grid.step();
    let p = model.dim();
    let mut steps = Vec::with_capacity(grid.n_steps());
    let mut accumulated = Vec::with_capacity(grid.n_steps() + 1);
    accumulated.push(Matrix::identity(p, p));
    let mut d_prev = model.dxi(&x_path[0]);
    for k in 0..grid.n_steps() {
        let d_next = model.dxi(&x_path[k + 1]);
        let tau = linalg::expm(&((&d_prev + &d_next) * (h / 2.0)))?;
        let acc = &tau * &accumulated[k];
        steps.push(tau);
        accumulated.push(acc);
        d_prev = d_next;
    }
    let total = accumulated.last().unwrap();
    let cond = linalg::condition_number(total);
    if !(cond <= MAX_FLOW_CONDITION) {
        return Err(FilterError::IllConditioned {
            what: "flow Jacobian",
            cond,
        });
    }
    let tau_delta_0 = total
        .clone()
        .lu()
        .solve(&Matrix::identity(p, p))
        .ok_or(FilterError::IllConditioned {
            what: "flow Jacobian",
            cond: f64::INFINITY,
        })?;
    Ok(Transitions {
        steps,
        accumulated,
        tau_delta_0,
    })
}

/// Trapezium recursion `Ξ_t = h/2 α(x_t) + τ [Ξ_u + h/2 α(x_u)] τᵀ`.
pub fn propagate_covariance(
    model: &dyn DiffusionModel,
    x_path: &[Point],
    taus: &Transitions,
    sigma0: &SymTensor2,
    grid: &FlowGrid,
) -> Result<Vec<Matrix>> {
    if sigma0.dim() != model.dim() {
        return Err(FilterError::InvalidInput(
            "initial covariance has the wrong dimension".into(),
        ));
    }
    let h2 = grid.step() / 2.0;
    let mut xis = Vec::with_capacity(grid.n_steps() + 1);
    xis.push(sigma0.mat().clone());
    let mut a_prev = model.alpha(&x_path[0]);
    for (k, tau) in taus.steps.iter().enumerate() {
        let a_next = model.alpha(&x_path[k + 1]);
        let inner = &xis[k] + &a_prev * h2;
        let next = &a_next * h2 + tau * inner * tau.transpose();
        xis.push(linalg::symmetrize(&next));
        a_prev = a_next;
    }
    Ok(xis)
}

/// Integrand `D²ξ(x)(Ξ) - Γ(x)(α(x))` of the state AILP.
fn ailp_integrand(model: &dyn DiffusionModel, x: &Point, xi: &Matrix) -> Vector {
    model.d2xi_contract(x, xi) - model.connector().contract(x, &model.alpha(x))
}

/// State AILP `m_δ = ½{κ_δ - τ_0^δ Γ(x_0)(Σ_0) + Γ(x_δ)(Ξ_δ)}`.
pub fn ailp_state(
    model: &dyn DiffusionModel,
    x_path: &[Point],
    taus: &Transitions,
    xis: &[Matrix],
    sigma0: &SymTensor2,
    grid: &FlowGrid,
) -> Vector {
    let h2 = grid.step() / 2.0;
    let conn = model.connector();
    let mut kappa = Vector::zeros(model.dim());
    let mut f_prev = ailp_integrand(model, &x_path[0], &xis[0]);
    for (k, tau) in taus.steps.iter().enumerate() {
        let f_next = ailp_integrand(model, &x_path[k + 1], &xis[k + 1]);
        kappa = &f_next * h2 + tau * (&kappa + &f_prev * h2);
        f_prev = f_next;
    }
    let x0 = &x_path[0];
    let xd = x_path.last().unwrap();
    let start = taus.tau_0_delta() * conn.contract(x0, sigma0.mat());
    let end = conn.contract(xd, xis.last().unwrap());
    (kappa - start + end) * 0.5
}

/// `D²ξ(x)(a ⊗ b)` through the symmetric contraction.
fn d2xi_pair(model: &dyn DiffusionModel, x: &Point, a: &Vector, b: &Vector) -> Vector {
    let outer = a * b.transpose();
    model.d2xi_contract(x, &linalg::symmetrize(&outer))
}

/// Second fundamental form `∇dφ_δ(x_0)` of the flow map, with the time
/// integral evaluated by the trapezium rule on the grid.
pub fn flow_second_fundamental_form(
    model: &dyn DiffusionModel,
    x_path: &[Point],
    taus: &Transitions,
    grid: &FlowGrid,
) -> Bilinear3 {
    let p = model.dim();
    let h2 = grid.step() / 2.0;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();

    let integrand = |k: usize| -> Vec<Vector> {
        let acc = &taus.accumulated[k];
        pairs
            .iter()
            .map(|&(i, j)| {
                d2xi_pair(
                    model,
                    &x_path[k],
                    &acc.column(i).into_owned(),
                    &acc.column(j).into_owned(),
                )
            })
            .collect()
    };

    let mut sums = vec![Vector::zeros(p); pairs.len()];
    let mut g_prev = integrand(0);
    for (k, tau) in taus.steps.iter().enumerate() {
        let g_next = integrand(k + 1);
        for (idx, s) in sums.iter_mut().enumerate() {
            *s = &g_next[idx] * h2 + tau * (&*s + &g_prev[idx] * h2);
        }
        g_prev = g_next;
    }

    let conn = model.connector();
    let x0 = &x_path[0];
    let xd = x_path.last().unwrap();
    let tau = taus.tau_0_delta();
    let start = conn.coefficients(x0).map_output(tau);
    let end = conn.coefficients(xd).pull_back_inputs(tau);
    let mut lookup = sums.into_iter();
    let integral = Bilinear3::from_basis_pairs(p, p, |_, _| lookup.next().unwrap());
    integral.add(&start.scale(-1.0)).add(&end)
}

/// Everything the update needs from the deterministic flow over `[0, δ]`.
#[derive(Clone, Debug)]
pub struct PropagationBundle {
    pub grid: FlowGrid,
    pub x_path: Vec<Point>,
    pub transitions: Transitions,
    /// `Ξ_t` at every grid time.
    pub xi_path: Vec<Matrix>,
    pub sigma0: SymTensor2,
    pub x_delta: Point,
    pub xi_delta: SymTensor2,
    pub m_delta: Vector,
    pub nabla_dphi: Bilinear3,
}

impl PropagationBundle {
    pub fn tau_0_delta(&self) -> &Matrix {
        self.transitions.tau_0_delta()
    }

    pub fn tau_delta_0(&self) -> &Matrix {
        &self.transitions.tau_delta_0
    }
}

pub fn precompute(
    model: &dyn DiffusionModel,
    x0: &Point,
    sigma0: &SymTensor2,
    grid: &FlowGrid,
) -> Result<PropagationBundle> {
    model.validate_state(x0)?;
    if sigma0.base() != x0 {
        return Err(FilterError::InvalidInput(
            "initial covariance is not based at the initial state".into(),
        ));
    }
    let x_path = integrate_flow(model, x0, grid)?;
    let transitions = transition_jacobians(model, &x_path, grid)?;
    let xi_path = propagate_covariance(model, &x_path, &transitions, sigma0, grid)?;
    let m_delta = ailp_state(model, &x_path, &transitions, &xi_path, sigma0, grid);
    let nabla_dphi = flow_second_fundamental_form(model, &x_path, &transitions, grid);
    let x_delta = x_path.last().unwrap().clone();
    let xi_delta = SymTensor2::symmetrized(x_delta.clone(), xi_path.last().unwrap());
    if !linalg::all_finite(&m_delta) || !xi_delta.mat().iter().all(|v| v.is_finite()) {
        return Err(FilterError::Divergence {
            stage: "propagation",
            step: grid.n_steps(),
        });
    }
    Ok(PropagationBundle {
        grid: grid.clone(),
        x_path,
        transitions,
        xi_path,
        sigma0: sigma0.clone(),
        x_delta,
        xi_delta,
        m_delta,
        nabla_dphi,
    })
}
