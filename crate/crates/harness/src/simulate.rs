//! Euler-Maruyama simulation of the state diffusion with noisy observations.

use gi_filter::linalg::{self, Vector};
use gi_filter::observation::sample_observation;
use gi_filter::{ObservationEvent, Point};
use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scenario::Scenario;
use crate::Result;

/// Random stream for trajectory `index` of a run seeded with `seed`.
///
/// Streams depend only on `(seed, index)`, so runs may execute in any order.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Truth and observations at `t_n = n δ`, `n = 1..=n_obs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x0: Point,
    pub times: Vec<f64>,
    pub truth: Vec<Point>,
    pub observations: Vec<ObservationEvent>,
    /// Set when the simulation stopped before `n_obs` observations.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn simulate_sde<R: Rng + ?Sized>(
    scenario: &Scenario,
    x0: &Point,
    delta: f64,
    n_obs: usize,
    sim_substeps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let model = scenario.state();
    model.validate_state(x0)?;
    let h = delta / sim_substeps as f64;
    let root_h = h.sqrt();
    let dim = model.dim();
    let mut out = Trajectory {
        x0: x0.clone(),
        times: Vec::with_capacity(n_obs),
        truth: Vec::with_capacity(n_obs),
        observations: Vec::with_capacity(n_obs),
        truncated: false,
    };
    let mut x = x0.clone();
    'cycles: for n in 1..=n_obs {
        for _ in 0..sim_substeps {
            let sigma = match model.diffusion_sqrt(&x) {
                Ok(s) => s,
                Err(e) => {
                    warn!("simulation stopped at cycle {n}: {e}");
                    out.truncated = true;
                    break 'cycles;
                }
            };
            let noise = Vector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let next = &x + model.drift_b(&x) * h + sigma * noise * root_h;
            let next = model.project(&next, x0);
            if !linalg::all_finite(&next) || model.validate_state(&next).is_err() {
                warn!("simulation diverged at cycle {n}");
                out.truncated = true;
                break 'cycles;
            }
            x = next;
        }
        let t = n as f64 * delta;
        let obs = scenario.observation_at(t);
        let event = match sample_observation(obs.as_ref(), &x, t, rng) {
            Ok(e) => e,
            Err(e) => {
                warn!("observation failed at cycle {n}: {e}");
                out.truncated = true;
                break;
            }
        };
        out.times.push(t);
        out.truth.push(x.clone());
        out.observations.push(event);
    }
    Ok(out)
}
