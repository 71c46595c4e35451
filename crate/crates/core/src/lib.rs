//! ECG arrhythmia pipeline: record I/O, QRS detection, rasterization,
//! dataset splits, small neural classifiers and evaluation metrics.

pub mod dataset;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod qrs;
pub mod raster;
pub mod record;
pub mod synth;

pub use error::{Error, Result};
pub use record::{ArrhythmiaClass, EcgRecord, LeadId, QrsAnnotation};
