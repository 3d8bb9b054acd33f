//! Benchmark fixtures shared by the criterion targets.

use pctof_core::acquisition::{AcquisitionConfig, NoiseModel};
use pctof_core::calibration::CalibrationSettings;
use pctof_core::scene::{make_plane, Resolution, SceneFrame};
use pctof_core::signal_model::{doi_to_global_shift, AmplitudeConvention, CodingConfig};

pub const DOI: f64 = 0.5;
pub const EXPOSURE: f64 = 1e-3;

/// 500 ps pulses against a σ_D = 0.0775 gate at 10 MHz.
pub fn pulsed() -> CodingConfig {
    CodingConfig::pulsed(1e7, 500e-12, 0.0775, AmplitudeConvention::UnitAveragePower)
        .expect("valid coding")
}

pub fn plane(resolution: Resolution) -> SceneFrame {
    make_plane(DOI, 1.0, 0.0, resolution, pulsed().unambiguity_range()).expect("valid plane")
}

/// Acquisition at the DOI shift with 1% read noise.
pub fn measurement(seed: u64) -> AcquisitionConfig {
    let c = pulsed();
    let shifted = c.with_global_shift(doi_to_global_shift(DOI, &c).expect("DOI in range"));
    AcquisitionConfig::new(
        shifted,
        EXPOSURE,
        NoiseModel::relative(0.01, &c, EXPOSURE),
        seed,
    )
    .expect("valid acquisition")
}

pub fn calibration_acquisition(noise: f64) -> AcquisitionConfig {
    let c = pulsed();
    AcquisitionConfig::new(c, EXPOSURE, NoiseModel::relative(noise, &c, EXPOSURE), 1)
        .expect("valid acquisition")
}

pub fn calibration_settings(resolution: Resolution) -> CalibrationSettings {
    CalibrationSettings {
        resolution,
        ..CalibrationSettings::default()
    }
}
