//! Simulation, calibration and depth reconstruction for pulsed correlation
//! time-of-flight (PC-ToF) sensors.
//!
//! The pipeline runs from [`signal_model`] (coding functions and their
//! correlation) through [`scene`] and [`acquisition`] (synthetic tap frames)
//! to [`calibration`] and [`reconstruction`]. [`analysis`] scores codings and
//! [`io`] reads and writes the file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod analysis;
pub mod calibration;
pub mod error;
pub mod io;
pub mod numerics;
pub mod reconstruction;
pub mod scene;
pub mod signal_model;

pub use acquisition::{
    raw_fraction, render_taps, AcquisitionConfig, NoiseModel, PixelPerturbation, RawFractionFrame,
    TapFrame,
};
pub use analysis::{
    compare_modes, depth_precision_measure, local_sensitivity, CompareSettings, ModeComparison,
};
pub use calibration::{
    build_calibration, measure_offset, CalibrationSettings, CalibrationTable, PixelCalibration,
};
pub use error::{Error, Result};
pub use numerics::{MonotoneResponse, Smoothing};
pub use reconstruction::{pctof_depth, rms_error, sinusoid_depth, DepthMap, DepthMode};
pub use scene::{Resolution, SceneFrame, ScenePreset};
pub use signal_model::{
    AmplitudeConvention, CodingConfig, DemodulationSpec, ModulationSpec, SPEED_OF_LIGHT,
};
