//! Concrete models: the cubic benchmark, constrained target tracking, the
//! linear-Gaussian reference, and the cubic benchmark in a warped chart.

pub mod cubic;
pub mod linear;
pub mod tracking;
pub mod warped;

pub use cubic::{
    cubic1d_analytic_ailp, cubic1d_analytic_flow, cubic1d_build, Cubic1DObservation, Cubic1DParams,
    Cubic1DState,
};
pub use linear::{linear_build, LinearDynamics, LinearObservation, LinearParams};
pub use tracking::{
    tracking9d_build, MissileState, MissileTrajectory, RangeConnector, RangeCovariance,
    Tracking9DParams, TrackingConnector, TrackingDynamics, TrackingObservation,
    TrackingObservationFamily, TrackingState,
};
pub use warped::{CubicWarp, WarpConnector, WarpedCubicObservation, WarpedCubicState};
