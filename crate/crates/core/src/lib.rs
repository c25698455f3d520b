//! Leaf damage quantification from plant video: per-leaf tracking, best-view
//! selection and two-pass segmentation.

pub mod config;
pub mod detection;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod roi;
pub mod scalar;
pub mod segmentation;
pub mod synthetic;
pub mod tracker;

pub use config::RunConfig;
pub use detection::{BackendError, BackendKind, Detection, Detector};
pub use ingest::{Frame, IngestConfig};
pub use pipeline::{Analysis, Pipeline, PipelineError};
pub use report::LeafReport;
pub use scalar::Scalar;
pub use segmentation::Segmenter;

/// Grayscale plane in double precision.
pub type GrayPlane = raster::Plane<f64>;
/// Grayscale plane in single precision.
pub type GrayPlane32 = raster::Plane<f32>;
pub type KalmanState = tracker::KalmanState<f64>;
pub type KalmanState32 = tracker::KalmanState<f32>;
pub type KalmanFilter = tracker::KalmanFilter<f64>;
pub type KalmanFilter32 = tracker::KalmanFilter<f32>;
pub type CostMatrix = tracker::CostMatrix<f64>;
pub type CostMatrix32 = tracker::CostMatrix<f32>;
pub type AppearanceFeature = tracker::AppearanceFeature<f64>;
