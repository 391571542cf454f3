//! Knee and knee-onset identification for battery capacity-fade curves.
//!
//! The pipeline smooths a normalized fade curve, takes a discrete
//! second-difference curvature, computes its matrix profile and segments
//! it with the corrected arc curve. A double Bacon-Watts fit is provided
//! as a baseline, and [`earlypredict`] trains a boosted-tree regressor on
//! early-cycle discharge features.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below cover the usual case.

#![allow(clippy::needless_range_loop)]

pub mod baconwatts;
pub mod earlypredict;
pub mod error;
pub mod ingest;
pub mod lm;
pub mod matrixprofile;
pub mod params;
pub mod preprocess;
pub mod report;
mod scalar;
pub mod segmentation;
pub mod spline;
pub mod synthgen;

pub use error::{Error, Result};
pub use params::PipelineParams;
pub use scalar::Scalar;
pub use segmentation::{identify_knees, KneeReport, Method};

/// Cycle number as it appears in the input data.
pub type Cycle = u32;

pub type CapacityFadeSeriesF64 = ingest::CapacityFadeSeries<f64>;
pub type NormalizedSeriesF64 = ingest::NormalizedSeries<f64>;
pub type SmoothedSeriesF64 = preprocess::SmoothedSeries<f64>;
pub type CurvatureSeriesF64 = preprocess::CurvatureSeries<f64>;
pub type MatrixProfileF64 = matrixprofile::MatrixProfile<f64>;
pub type DistanceProfileF64 = matrixprofile::DistanceProfile<f64>;
pub type BaconWattsFitF64 = baconwatts::BaconWattsFit<f64>;
pub type DbwParamsF64 = baconwatts::DbwParams<f64>;
pub type CycleRecordF64 = earlypredict::CycleRecord<f64>;
pub type FeatureVectorF64 = earlypredict::FeatureVector<f64>;
pub type GbrtModelF64 = earlypredict::GbrtModel<f64>;
