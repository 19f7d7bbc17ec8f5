//! Overtaking-duration modelling toolkit.
//!
//! The crate is organised around the data flow of an overtaking study:
//!
//! - [`sim`] generates deterministic two-lane traffic traces with a scripted
//!   motorcycle overtake and its ground truth.
//! - [`geometry`] turns monocular image observations into longitudinal and
//!   lateral distances and differences gaps into adjacent-vehicle speeds.
//! - [`maneuver`] segments an ego trace into the five overtaking periods and
//!   extracts the per-maneuver variable record.
//! - [`survival`] evaluates the covariate-driven log-logistic accelerated
//!   failure time model; [`fit`] estimates it by maximum likelihood.
//! - [`avoidance`] turns a traffic snapshot and a fitted model into a
//!   SAFE/UNSAFE overtaking advisory.
//! - [`io`] holds the on-disk formats (model JSON, trace/observation/
//!   calibration CSV, camera JSON).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod avoidance;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod maneuver;
mod numeric;
pub mod optim;
pub mod sim;
pub mod survival;

pub use avoidance::{decide, Decision, DecisionConfig, TrafficSnapshot, Verdict};
pub use fit::{fit_aft, DurationObservation, FitOptions, FitResult};
pub use geometry::{CameraModel, ImageObservation};
pub use maneuver::{
    Direction, ManeuverRecord, PhaseBoundaries, RoadGeometry, SegmentationConfig, TraceSample,
    TraceSet, VehicleTrace,
};
pub use numeric::pairwise_sum;
pub use sim::{run_scenario, ScenarioSpec, SimOutput};
pub use survival::{CovariateVector, LogLogisticAft, Parameterization, TimePoint};
