//! Geometrically intrinsic nonlinear filtering for continuous-time diffusions
//! observed at discrete times, with a continuous-discrete EKF baseline.
//!
//! The crate is organised bottom-up: [`geometry`] holds chart-level
//! differential geometry, [`state_model`] the flow quantities over one
//! observation interval, [`observation`] the observation-side geometry,
//! [`filter`] the update itself, [`ekf`] the baseline, and [`models`] the
//! concrete models.

pub mod ekf;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod linalg;
pub mod models;
pub mod observation;
pub mod state_model;

pub use error::{FilterError, Result};
pub use filter::{filter_step, FilterConfig, StateEstimate};
pub use geometry::{Connector, Point, SymTensor2};
pub use observation::{ObservationEvent, ObservationModel};
pub use state_model::{DiffusionModel, FlowGrid, PropagationBundle};
