mod common;

use common::{constrained_tangent, random_spd, rel_mat, rng, tracking_observation, tracking_state, uniform_vec, Kalman};
use gi_filter::filter::{
    apply_collar, assimilate, gain, gain_identity_residual, pull_back_observation, rho_build,
    update_estimate, ExpMapMethod,
};
use gi_filter::geometry::{geodesic_flow, log_map_series, Bilinear3, FlatConnector};
use gi_filter::linalg::{self, Matrix, Vector};
use gi_filter::models::{
    cubic1d_build, linear_build, Cubic1DParams, LinearParams, TrackingConnector,
};
use gi_filter::observation::ailp_observation;
use gi_filter::state_model::precompute;
use gi_filter::{
    filter_step, DiffusionModel, FilterConfig, FilterError, FlowGrid, ObservationEvent,
    ObservationModel, StateEstimate, SymTensor2,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn cubic_params() -> Cubic1DParams {
    Cubic1DParams {
        p_crit: 0.1,
        alpha: 0.01,
        beta: 0.001,
        delta: 1.0,
    }
}

fn random_linear(seed: u64, p: usize, q: usize) -> LinearParams {
    let mut r = rng(seed);
    let a = Matrix::from_fn(p, p, |i, k| {
        let off: f64 = r.random_range(-0.5..0.5);
        if i == k {
            off - 0.5
        } else {
            off
        }
    });
    LinearParams {
        a_mat: a,
        sigma_mat: Matrix::from_fn(p, p, |_, _| r.random_range(-0.3..0.3)),
        j_mat: Matrix::from_fn(q, p, |_, _| r.random_range(-1.0..1.0)),
        b_mat: random_spd(&mut r, q, 0.2),
    }
}

#[test]
fn gain_examples() {
    let x = Vector::zeros(3);
    let j = Matrix::from_fn(2, 3, |i, k| (i + 2 * k) as f64 - 1.5);
    let beta = Matrix::identity(2, 2) * 0.3;
    let zero = gain(&SymTensor2::zeros(x.clone()), &j, &beta, 0.0).unwrap();
    assert_eq!(zero, Matrix::zeros(3, 2));

    let s = 0.37;
    let b = 0.05;
    let scalar = gain(
        &SymTensor2::covariance(Vector::zeros(1), Matrix::from_element(1, 1, s)).unwrap(),
        &Matrix::from_element(1, 1, 1.0),
        &Matrix::from_element(1, 1, b),
        0.0,
    )
    .unwrap();
    assert!((scalar[(0, 0)] - s / (s + b)).abs() <= 2.0 * f64::EPSILON);

    let mut r = rng(12);
    for _ in 0..50 {
        let xi = random_spd(&mut r, 9, 1.0);
        let j = Matrix::from_fn(5, 9, |_, _| r.random_range(-1.0..1.0));
        let beta = random_spd(&mut r, 5, 0.5);
        let g = gain(&SymTensor2::covariance(Vector::zeros(9), xi.clone()).unwrap(), &j, &beta, 0.0).unwrap();
        assert!(gain_identity_residual(&g, &xi, &j, &beta, 0.0) <= 1e-10);
    }
}

#[test]
fn gain_rejects_ill_conditioned_innovation() {
    let xi = SymTensor2::covariance(Vector::zeros(2), Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))).unwrap();
    let beta = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-15]));
    let err = gain(&xi, &Matrix::identity(2, 2), &beta, 0.0).unwrap_err();
    assert!(matches!(err, FilterError::IllConditioned { .. }), "{err}");
    assert!(gain(&xi, &Matrix::identity(2, 2), &beta, 1e-6).is_ok());
}

#[test]
fn rho_vanishes_without_curvature_or_innovation() {
    let g = Matrix::from_row_slice(2, 1, &[0.3, -0.1]);
    let j = Matrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let xi = SymTensor2::covariance(Vector::zeros(2), Matrix::identity(2, 2) * 0.1).unwrap();
    let gr = rho_build(&g, &j, &Bilinear3::zeros(2, 2), &Bilinear3::zeros(1, 2), &Matrix::identity(2, 2), &xi);
    assert_eq!(gr.rho(&Vector::from_element(1, 0.4)).amax(), 0.0);
    assert_eq!(gr.rho_mean.amax(), 0.0);

    let phi = Bilinear3::from_components(2, vec![Matrix::identity(2, 2), Matrix::from_element(2, 2, 0.5)]).unwrap();
    let psi = Bilinear3::from_components(2, vec![Matrix::identity(2, 2) * -2.0]).unwrap();
    let gr = rho_build(&g, &j, &phi, &psi, &Matrix::identity(2, 2), &xi);
    assert_eq!(gr.rho(&Vector::zeros(1)).amax(), 0.0);
}

#[test]
fn cubic_rho_matches_term_by_term_evaluation() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    let x0 = Vector::from_element(1, 0.6);
    let sigma0 = SymTensor2::covariance(x0.clone(), Matrix::from_element(1, 1, 0.01)).unwrap();
    let bundle = precompute(&state, &x0, &sigma0, &FlowGrid::new(1.0, 32).unwrap()).unwrap();
    let xd = bundle.x_delta[0];
    let jv = obs.first(xd);
    let j = Matrix::from_element(1, 1, jv);
    let xi = bundle.xi_delta.mat()[(0, 0)];
    let g = gain(&bundle.xi_delta, &j, &Matrix::from_element(1, 1, 0.001), 0.0).unwrap();
    let psi2 = Bilinear3::from_components(1, vec![Matrix::from_element(1, 1, obs.second(xd))]).unwrap();
    let gr = rho_build(&g, &j, &bundle.nabla_dphi, &psi2, bundle.tau_delta_0(), &bundle.xi_delta);

    let gv = g[(0, 0)];
    let back = bundle.tau_delta_0()[(0, 0)];
    let phi2 = bundle.nabla_dphi.component(0)[(0, 0)];
    let z = 0.1;
    let expected = 0.5 * ((1.0 - gv * jv) * phi2 * (back * gv * z).powi(2) - gv * obs.second(xd) * (gv * z).powi(2));
    let got = gr.rho(&Vector::from_element(1, z))[0];
    assert!((got - expected).abs() <= 1e-14 * expected.abs(), "{got} vs {expected}");
    assert!(expected != 0.0);

    let m = gv * jv * xi;
    let expected_mean = 0.5 * ((1.0 - gv * jv) * phi2 * back * back * m - gv * obs.second(xd) * m);
    assert!((gr.rho_mean[0] - expected_mean).abs() <= 1e-14 * expected_mean.abs());
}

#[test]
fn pull_back_examples() {
    let (_, obs) = cubic1d_build(&cubic_params()).unwrap();
    let y = Vector::from_element(1, 0.2);
    assert_eq!(pull_back_observation(&y, &y, &obs).amax(), 0.0);
    let yo = Vector::from_element(1, 0.35);
    assert_eq!(pull_back_observation(&y, &yo, &obs), &yo - &y);

    let obs = tracking_observation();
    let mut r = rng(77);
    for _ in 0..10 {
        let x = tracking_state(&mut r);
        let y = obs.psi(&x).unwrap();
        // Scale each direction relative to its coordinate so the study
        // stays inside the range where the series is meaningful.
        let scale = Vector::from_vec(vec![y[0] * 1e-2, 1e-3, 1e-3, 1.0, 1e2]);
        let dir = uniform_vec(&mut r, 5, -1.0, 1.0).component_mul(&scale);
        let gap = |t: f64| {
            let yo = &y + &dir * t;
            let z = pull_back_observation(&y, &yo, &obs);
            let exact = log_map_series(&y, &yo, obs.connector()).unwrap();
            (&z - &exact).component_div(&scale).amax()
        };
        let ratio = gap(1.0) / gap(0.5);
        assert!(ratio >= 6.0, "cubic-order ratio {ratio}");
    }
}

proptest! {
    #[test]
    fn collar_bound_is_exact(
        q in proptest::collection::vec(-1e3f64..1e3, 1..9),
        frac in 0.0f64..2.0,
    ) {
        let q = Vector::from_vec(q);
        let bound = q.norm() * frac;
        let (out, scale) = apply_collar(&q, bound);
        prop_assert!(out.norm() <= bound || out == q);
        prop_assert!(out.norm() <= q.norm().max(bound));
        prop_assert!((0.0..=1.0).contains(&scale));
        if scale > 0.0 {
            // Direction is preserved.
            prop_assert!((&out - &q * scale).amax() == 0.0);
        }
    }
}

#[test]
fn linear_assimilation_is_the_kalman_update() {
    let params = random_linear(4, 3, 2);
    let (state, obs) = linear_build(&params).unwrap();
    let x0 = Vector::from_vec(vec![0.3, -0.2, 1.0]);
    let sigma0 = SymTensor2::covariance(x0.clone(), random_spd(&mut rng(5), 3, 0.4)).unwrap();
    let bundle = precompute(&state, &x0, &sigma0, &FlowGrid::new(0.2, 16).unwrap()).unwrap();
    let j = params.j_mat.clone();
    let g = gain(&bundle.xi_delta, &j, &params.b_mat, 0.0).unwrap();
    let gr = rho_build(&g, &j, &bundle.nabla_dphi, &Bilinear3::zeros(2, 3), bundle.tau_delta_0(), &bundle.xi_delta);
    let obs_ailp = ailp_observation(&bundle, &obs, state.connector()).unwrap();
    let y_delta = obs.psi(&bundle.x_delta).unwrap();
    let y_obs = Vector::from_vec(vec![0.7, -0.4]);
    let z = pull_back_observation(&y_delta, &y_obs, &obs);
    let (mu, sigma, terms) = assimilate(&bundle, &obs_ailp, &gr, &j, &z, &FilterConfig::new(0.2));
    assert_eq!(terms.quadratic.amax(), 0.0);
    assert_eq!(mu, &g * (&y_obs - &y_delta));
    let expected = (Matrix::identity(3, 3) - &g * &j) * bundle.xi_delta.mat();
    assert!(rel_mat(sigma.mat(), &linalg::symmetrize(&expected)) <= 1e-15);
}

#[test]
fn zero_innovation_on_flat_geometry_keeps_the_ailp() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    let x0 = Vector::from_element(1, 0.9);
    let sigma0 = SymTensor2::covariance(x0.clone(), Matrix::from_element(1, 1, 0.01)).unwrap();
    let bundle = precompute(&state, &x0, &sigma0, &FlowGrid::new(1.0, 16).unwrap()).unwrap();
    let j = obs.dpsi(&bundle.x_delta).unwrap();
    let g = gain(&bundle.xi_delta, &j, &Matrix::from_element(1, 1, 0.001), 0.0).unwrap();
    let psi2 = obs.d2psi(&bundle.x_delta).unwrap();
    let gr = rho_build(&g, &j, &bundle.nabla_dphi, &psi2, bundle.tau_delta_0(), &bundle.xi_delta);
    let obs_ailp = ailp_observation(&bundle, &obs, state.connector()).unwrap();
    let mut config = FilterConfig::new(1.0);
    config.collar_enabled = false;
    config.quadratic_enabled = false;
    let (mu, sigma, _) = assimilate(&bundle, &obs_ailp, &gr, &j, &obs_ailp, &config);
    assert_eq!(mu, bundle.m_delta);
    let expected = (1.0 - g[(0, 0)] * j[(0, 0)]) * bundle.xi_delta.mat()[(0, 0)];
    assert_eq!(sigma.mat()[(0, 0)], expected);
}

#[test]
fn update_estimate_trivial_cases() {
    let x = Vector::from_vec(vec![1.0, -2.0]);
    let mu = Vector::from_vec(vec![0.1, 0.3]);
    let sigma = SymTensor2::covariance(x.clone(), Matrix::identity(2, 2) * 0.2).unwrap();
    let (est, clipped) = update_estimate(&x, &mu, &sigma, &FlatConnector::new(2), ExpMapMethod::Series).unwrap();
    assert_eq!(clipped, 0);
    assert_eq!(est.mu_hat, &x + &mu);
    assert_eq!(est.sigma_hat.mat(), sigma.mat());

    let mut r = rng(8);
    let x = tracking_state(&mut r);
    let sigma = SymTensor2::covariance(x.clone(), random_spd(&mut r, 9, 1.0)).unwrap();
    let (est, _) = update_estimate(&x, &Vector::zeros(9), &sigma, &TrackingConnector, ExpMapMethod::Series).unwrap();
    assert_eq!(est.mu_hat, x);
    assert!(rel_mat(est.sigma_hat.mat(), sigma.mat()) <= 1e-15);
}

#[test]
fn series_update_agrees_with_geodesic_update() {
    let mut r = rng(90);
    for _ in 0..10 {
        let mut x = tracking_state(&mut r);
        for k in 3..9 {
            x[k] /= 100.0;
        }
        let dir = constrained_tangent(&mut r, &x, 1.0);
        let dir = &dir / dir.norm();
        let sigma = SymTensor2::covariance(x.clone(), random_spd(&mut r, 9, 1.0)).unwrap();
        let gaps = |t: f64| {
            let mu = &dir * t;
            let zero = SymTensor2::zeros(x.clone());
            let (a, _) = update_estimate(&x, &mu, &zero, &TrackingConnector, ExpMapMethod::Series).unwrap();
            let (b, _) =
                update_estimate(&x, &mu, &zero, &TrackingConnector, ExpMapMethod::Geodesic { steps: 200 }).unwrap();
            let (c, _) = update_estimate(&x, &mu, &sigma, &TrackingConnector, ExpMapMethod::Series).unwrap();
            let (d, _) =
                update_estimate(&x, &mu, &sigma, &TrackingConnector, ExpMapMethod::Geodesic { steps: 200 }).unwrap();
            ((&a.mu_hat - &b.mu_hat).amax(), (c.sigma_hat.mat() - d.sigma_hat.mat()).amax())
        };
        let (m1, s1) = gaps(0.1);
        let (m2, s2) = gaps(0.05);
        assert!((12.0..=20.0).contains(&(m1 / m2)), "mean gap ratio {}", m1 / m2);
        assert!((1.6..=2.4).contains(&(s1 / s2)), "covariance gap ratio {}", s1 / s2);
    }
    let x = tracking_state(&mut r);
    let end = geodesic_flow(&x, &Vector::zeros(9), &TrackingConnector, 4).unwrap();
    assert_eq!(end.endpoint(), &x);
}

#[test]
fn linear_filter_matches_kalman_filter() {
    let params = random_linear(31, 3, 2);
    let (state, obs) = linear_build(&params).unwrap();
    let delta = 0.1;
    let alpha = &params.sigma_mat * params.sigma_mat.transpose();
    let (phi, qd) = common::van_loan(&params.a_mat, &alpha, delta);
    let kf = Kalman {
        phi,
        qd,
        j: params.j_mat.clone(),
        b: params.b_mat.clone(),
    };
    let mut config = FilterConfig::new(delta);
    config.n_substeps = 1024;
    let mut r = rng(32);
    let mut m = Vector::from_vec(vec![0.5, -0.3, 0.8]);
    let mut p = random_spd(&mut r, 3, 0.3);
    let mut est = StateEstimate::new(m.clone(), p.clone()).unwrap();
    for k in 0..5 {
        let y = uniform_vec(&mut r, 2, -1.0, 1.0);
        let event = ObservationEvent::new(delta * (k + 1) as f64, y.clone()).unwrap();
        est = filter_step(&state, &obs, &est, &event, &config).unwrap().estimate;
        (m, p) = kf.step(&m, &p, &y);
        let dm = (&est.mu_hat - &m).amax() / m.amax();
        let dp = rel_mat(est.sigma_hat.mat(), &p);
        assert!(dm <= 1e-8 && dp <= 1e-8, "step {k}: mean {dm:e}, covariance {dp:e}");
    }
}

#[test]
fn noiseless_limit_tracks_the_flow() {
    let params = Cubic1DParams {
        alpha: 0.01 * 1e-12,
        beta: 0.001 * 1e-12,
        ..cubic_params()
    };
    let (state, obs) = cubic1d_build(&params).unwrap();
    let mut config = FilterConfig::new(1.0);
    config.n_substeps = 64;
    let x0 = 0.3;
    let mut est = StateEstimate::new(Vector::from_element(1, x0), Matrix::from_element(1, 1, params.alpha)).unwrap();
    for n in 1..=20 {
        let t = n as f64;
        let truth = gi_filter::models::cubic1d_analytic_flow(x0, t);
        let y = obs.psi(&Vector::from_element(1, truth)).unwrap();
        let event = ObservationEvent::new(t, y).unwrap();
        est = filter_step(&state, &obs, &est, &event, &config).unwrap().estimate;
        assert!((est.mu_hat[0] - truth).abs() <= 1e-6, "t = {t}: {} vs {truth}", est.mu_hat[0]);
    }
}

#[test]
fn benchmark_steps_keep_gain_identity_and_psd() {
    let params = cubic_params();
    let (state, obs) = cubic1d_build(&params).unwrap();
    let config = FilterConfig {
        n_substeps: 32,
        ..FilterConfig::new(1.0)
    };
    let mut r = rng(6);
    let mut x = 0.3;
    let mut est = StateEstimate::new(Vector::from_element(1, x), Matrix::from_element(1, 1, params.alpha)).unwrap();
    let h = 1.0 / 20.0;
    for n in 1..=200 {
        for _ in 0..20 {
            let w: f64 = r.sample(StandardNormal);
            x += -0.5 * x * x * x * h + (params.alpha * h).sqrt() * w;
        }
        let v: f64 = r.sample(StandardNormal);
        let y = obs.value(x) + params.beta.sqrt() * v;
        let event = ObservationEvent::new(n as f64, Vector::from_element(1, y)).unwrap();
        let out = filter_step(&state, &obs, &est, &event, &config).unwrap();
        let d = &out.diagnostics;
        assert!(d.gain_residual <= 1e-10, "gain residual {}", d.gain_residual);
        assert!(d.terms.quadratic.norm() <= d.terms.linear.norm());
        assert!(out.estimate.sigma_hat.is_psd());
        est = out.estimate;
    }
}

#[test]
fn ablation_drops_the_quadratic_term() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    let est = StateEstimate::new(Vector::from_element(1, 0.4), Matrix::from_element(1, 1, 0.01)).unwrap();
    let event = ObservationEvent::new(1.0, Vector::from_element(1, 2.5)).unwrap();
    let mut config = FilterConfig::new(1.0);
    let with = filter_step(&state, &obs, &est, &event, &config).unwrap();
    assert!(with.diagnostics.terms.quadratic.amax() > 0.0);
    config.quadratic_enabled = false;
    let without = filter_step(&state, &obs, &est, &event, &config).unwrap();
    let d = &without.diagnostics;
    assert_eq!(d.terms.quadratic.amax(), 0.0);
    assert_eq!(d.mu, &d.bundle.m_delta + &d.terms.linear);
}

#[test]
fn filter_step_rejects_bad_input() {
    let (state, obs) = cubic1d_build(&cubic_params()).unwrap();
    let est = StateEstimate::new(Vector::from_element(1, 0.4), Matrix::from_element(1, 1, 0.01)).unwrap();
    let wrong = ObservationEvent::new(1.0, Vector::zeros(2)).unwrap();
    let err = filter_step(&state, &obs, &est, &wrong, &FilterConfig::new(1.0)).unwrap_err();
    assert!(matches!(err, FilterError::InvalidInput(_)));
    let event = ObservationEvent::new(1.0, Vector::zeros(1)).unwrap();
    let mut config = FilterConfig::new(1.0);
    config.n_substeps = 0;
    assert!(matches!(
        filter_step(&state, &obs, &est, &event, &config),
        Err(FilterError::InvalidInput(_))
    ));
    assert!(StateEstimate::new(Vector::from_element(1, 0.0), Matrix::from_element(1, 1, -1.0)).is_err());
    assert!(state.dim() == 1);
}
