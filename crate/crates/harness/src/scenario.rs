//! Model instantiation from a scenario configuration.

use std::sync::Arc;

use gi_filter::models::{cubic1d_build, linear_build, tracking9d_build, Cubic1DParams, TrackingObservationFamily};
use gi_filter::{DiffusionModel, ObservationModel};

use crate::config::ModelConfig;
use crate::Result;

#[derive(Clone)]
enum ObservationSource {
    Fixed(Arc<dyn ObservationModel>),
    Tracking(TrackingObservationFamily),
}

/// A state model together with its (possibly time-varying) observation model.
#[derive(Clone)]
pub struct Scenario {
    state: Arc<dyn DiffusionModel>,
    obs: ObservationSource,
}

impl Scenario {
    pub fn build(model: &ModelConfig, delta: f64) -> Result<Self> {
        Ok(match model {
            ModelConfig::Cubic1d(c) => {
                let (state, obs) = cubic1d_build(&Cubic1DParams {
                    p_crit: c.p_crit,
                    alpha: c.alpha,
                    beta: c.beta,
                    delta,
                })?;
                Scenario::fixed(Arc::new(state), Arc::new(obs))
            }
            ModelConfig::Tracking9d(params) => {
                let (state, family) = tracking9d_build(params)?;
                Scenario {
                    state: Arc::new(state),
                    obs: ObservationSource::Tracking(family),
                }
            }
            ModelConfig::Linear(l) => {
                let (state, obs) = linear_build(&l.params()?)?;
                Scenario::fixed(Arc::new(state), Arc::new(obs))
            }
        })
    }

    pub fn fixed(state: Arc<dyn DiffusionModel>, obs: Arc<dyn ObservationModel>) -> Self {
        Scenario {
            state,
            obs: ObservationSource::Fixed(obs),
        }
    }

    pub fn state(&self) -> &dyn DiffusionModel {
        self.state.as_ref()
    }

    /// Observation model in force at time `t`.
    pub fn observation_at(&self, t: f64) -> Arc<dyn ObservationModel> {
        match &self.obs {
            ObservationSource::Fixed(obs) => obs.clone(),
            ObservationSource::Tracking(family) => Arc::new(family.at(t)),
        }
    }
}
