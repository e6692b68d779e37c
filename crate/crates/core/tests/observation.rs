mod common;

use common::{rng, tracking_observation, tracking_state};
use gi_filter::geometry::{Bilinear3, Connector, FlatConnector, SymTensor2};
use gi_filter::linalg::{basis, Matrix, Vector};
use gi_filter::models::{
    cubic1d_build, linear_build, Cubic1DParams, LinearParams, TrackingConnector,
    TrackingObservation,
};
use gi_filter::observation::{ailp_observation, map_second_fundamental_form, sample_observation};
use gi_filter::state_model::precompute;
use gi_filter::{DiffusionModel, FilterError, FlowGrid, ObservationModel, Point, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn cubic_params() -> Cubic1DParams {
    Cubic1DParams {
        p_crit: 0.1,
        alpha: 0.01,
        beta: 0.001,
        delta: 1.0,
    }
}

/// `ψ(x) = x` with a fixed noise covariance.
struct Identity {
    dim: usize,
    beta: Matrix,
    conn: FlatConnector,
}

impl Identity {
    fn new(beta: Matrix) -> Self {
        let dim = beta.nrows();
        Identity {
            dim,
            beta,
            conn: FlatConnector::new(dim),
        }
    }
}

impl ObservationModel for Identity {
    fn dim_state(&self) -> usize {
        self.dim
    }
    fn dim_obs(&self) -> usize {
        self.dim
    }
    fn psi(&self, x: &Point) -> Result<Point> {
        Ok(x.clone())
    }
    fn dpsi(&self, _x: &Point) -> Result<Matrix> {
        Ok(Matrix::identity(self.dim, self.dim))
    }
    fn d2psi(&self, _x: &Point) -> Result<Bilinear3> {
        Ok(Bilinear3::zeros(self.dim, self.dim))
    }
    fn beta(&self, _y: &Point) -> Matrix {
        self.beta.clone()
    }
    fn connector(&self) -> &dyn Connector {
        &self.conn
    }
}

#[test]
fn linear_observation_has_no_second_fundamental_form() {
    let params = LinearParams {
        a_mat: Matrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.0, -0.2]),
        sigma_mat: Matrix::identity(2, 2) * 0.1,
        j_mat: Matrix::from_row_slice(1, 2, &[1.0, 2.0]),
        b_mat: Matrix::from_element(1, 1, 0.5),
    };
    let (state, obs) = linear_build(&params).unwrap();
    let x = Vector::from_vec(vec![0.4, -1.0]);
    let form = map_second_fundamental_form(&obs, state.connector(), &x).unwrap();
    assert_eq!(form.amax(), 0.0);

    let sigma0 = SymTensor2::covariance(x.clone(), Matrix::identity(2, 2) * 0.2).unwrap();
    let bundle = precompute(&state, &x, &sigma0, &FlowGrid::new(0.5, 8).unwrap()).unwrap();
    assert_eq!(ailp_observation(&bundle, &obs, state.connector()).unwrap().amax(), 0.0);
}

#[test]
fn cubic_second_fundamental_form_is_the_second_derivative() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    for &x in &[-1.3, -0.2, 0.0, 0.31, 2.0] {
        let form = map_second_fundamental_form(&obs, state.connector(), &Vector::from_element(1, x)).unwrap();
        let d = 0.1 + x * x;
        let expected = 2.0 * x * (x * x - 0.3) / (d * d * d);
        assert!((form.component(0)[(0, 0)] - expected).abs() <= 1e-14 * expected.abs().max(1.0));
    }
}

#[test]
fn tracking_second_fundamental_form_matches_assembled_terms() {
    let obs = tracking_observation();
    let conn = TrackingConnector;
    let mut r = rng(41);
    for _ in 0..20 {
        let x = tracking_state(&mut r);
        let form = map_second_fundamental_form(&obs, &conn, &x).unwrap();
        let j = obs.dpsi(&x).unwrap();
        let y = obs.psi(&x).unwrap();
        for a in 0..9 {
            let ea = basis(9, a);
            // D²ψ(e_a, ·) by central differences of Dψ.
            let h = 1e-4 * (1.0 + x[a].abs());
            let jp = obs.dpsi(&(&x + &ea * h)).unwrap();
            let jm = obs.dpsi(&(&x - &ea * h)).unwrap();
            let d2 = (jp - jm) / (2.0 * h);
            for b in 0..9 {
                let eb = basis(9, b);
                let expected = d2.column(b).into_owned() - &j * conn.gamma(&x, &ea, &eb)
                    + obs.connector().gamma(&y, &j.column(a).into_owned(), &j.column(b).into_owned());
                let got = form.apply(&ea, &eb);
                let scale = expected.amax().max(got.amax()).max(1e-12);
                assert!(
                    (&got - &expected).amax() <= 1e-5 * scale,
                    "entry ({a},{b}): {got} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn observation_ailp_is_linear_in_covariance_and_mean() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    let x0 = Vector::from_element(1, 0.8);
    let sigma0 = SymTensor2::covariance(x0.clone(), Matrix::from_element(1, 1, 0.02)).unwrap();
    let bundle = precompute(&state, &x0, &sigma0, &FlowGrid::new(1.0, 16).unwrap()).unwrap();

    let mut no_mean = bundle.clone();
    no_mean.m_delta = Vector::zeros(1);
    let single = ailp_observation(&no_mean, &obs, state.connector()).unwrap();
    let mut doubled = no_mean.clone();
    doubled.xi_delta = SymTensor2::symmetrized(bundle.x_delta.clone(), &(bundle.xi_delta.mat() * 2.0));
    let twice = ailp_observation(&doubled, &obs, state.connector()).unwrap();
    assert_eq!(twice, &single * 2.0);

    let full = ailp_observation(&bundle, &obs, state.connector()).unwrap();
    let j = obs.dpsi(&bundle.x_delta).unwrap();
    assert!((&full - (&single + &j * &bundle.m_delta)).amax() <= 1e-15);
}

#[test]
fn identity_observation_ailp_is_the_state_ailp() {
    let (state, _) = cubic1d_build(&cubic_params()).unwrap();
    let obs = Identity::new(Matrix::from_element(1, 1, 0.001));
    let x0 = Vector::from_element(1, 1.0);
    let sigma0 = SymTensor2::covariance(x0.clone(), Matrix::from_element(1, 1, 0.01)).unwrap();
    let bundle = precompute(&state, &x0, &sigma0, &FlowGrid::new(1.0, 32).unwrap()).unwrap();
    assert!(bundle.m_delta[0] != 0.0);
    assert_eq!(ailp_observation(&bundle, &obs, state.connector()).unwrap(), bundle.m_delta);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let obs = tracking_observation();
    let x = tracking_state(&mut rng(3));
    let a = sample_observation(&obs, &x, 1.5, &mut rng(99)).unwrap();
    let b = sample_observation(&obs, &x, 1.5, &mut rng(99)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.time, 1.5);
    let c = sample_observation(&obs, &x, 1.5, &mut rng(100)).unwrap();
    assert_ne!(a.y, c.y);
}

#[test]
fn vanishing_noise_returns_the_exact_image() {
    let (_, obs) = cubic1d_build(&Cubic1DParams {
        beta: 1e-20,
        ..cubic_params()
    })
    .unwrap();
    let x = Vector::from_element(1, 0.7);
    let event = sample_observation(&obs, &x, 0.0, &mut rng(5)).unwrap();
    let exact = obs.psi(&x).unwrap()[0];
    assert!((event.y[0] - exact).abs() <= 4.0 * f64::EPSILON * exact.abs() + 1e-9);

    let obs = tracking_observation();
    let x = tracking_state(&mut rng(8));
    let tiny = TrackingObservation::new(
        common::TRACKING_S.map(|s| s * 1e-20),
        0.5e-10,
        obs.missile().clone(),
    );
    let event = sample_observation(&tiny, &x, 0.0, &mut rng(5)).unwrap();
    let exact = obs.psi(&x).unwrap();
    assert!((&event.y - &exact).amax() <= 1e-9 * exact.amax());
}

#[test]
fn sampling_rejects_indefinite_covariance() {
    let obs = Identity::new(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    let err = sample_observation(&obs, &Vector::zeros(2), 0.0, &mut rng(1)).unwrap_err();
    assert!(matches!(err, FilterError::SingularMetric(_)), "{err}");
}

#[test]
fn identity_noise_samples_are_standard_normal() {
    let obs = Identity::new(Matrix::identity(2, 2));
    let x = Vector::from_vec(vec![0.0, 0.0]);
    let normal = Normal::standard();
    let bins = 20usize;
    let mut counts = vec![[0usize; 2]; bins];
    let mut r = rng(2024);
    let n = 100_000;
    for _ in 0..n {
        let y = sample_observation(&obs, &x, 0.0, &mut r).unwrap().y;
        for c in 0..2 {
            let k = ((normal.cdf(y[c]) * bins as f64) as usize).min(bins - 1);
            counts[k][c] += 1;
        }
    }
    let expected = n as f64 / bins as f64;
    let critical = ChiSquared::new((bins - 1) as f64).unwrap();
    for c in 0..2 {
        let stat: f64 = counts
            .iter()
            .map(|row| (row[c] as f64 - expected).powi(2) / expected)
            .sum();
        let p_value = 1.0 - critical.cdf(stat);
        assert!(p_value > 1e-3, "component {c}: chi-square {stat}, p = {p_value}");
    }
}
