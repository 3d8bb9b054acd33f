//! Run configuration: a versioned TOML file whose every field is required.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pctof_core::acquisition::{AcquisitionConfig, NoiseModel};
use pctof_core::scene::{Resolution, ScenePreset};
use pctof_core::signal_model::{AmplitudeConvention, CodingConfig, DemodulationSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

/// Invalid or incomplete configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sensor: Sensor,
    pub coding: Coding,
    pub acquisition: Acquisition,
    pub noise: Noise,
    pub measurement: Measurement,
    pub calibration: Calibration,
    pub scene: Scene,
    pub validation: Validation,
    pub compare: Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coding {
    pub frequency_hz: f64,
    pub pulse_fwhm_s: f64,
    pub sigma_d_rad: f64,
    pub amplitude: AmplitudeConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acquisition {
    pub exposure_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    /// Gaussian read noise as a fraction of the brightest pulsed tap.
    pub relative_read: f64,
    /// Photo-electrons per intensity unit; 0 disables shot noise.
    pub shot_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    /// Depth of interest; negative means "take the coarse estimate's median".
    pub doi_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub reference_depth_m: f64,
    pub coarse_steps: usize,
    pub fine_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub preset: String,
    pub base_depth_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    pub offsets: usize,
    pub half_span_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compare {
    pub noise_levels: Vec<f64>,
    pub trials: usize,
    pub grid_n: usize,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub doi: Option<f64>,
    pub noise: Option<f64>,
    pub scene: Option<String>,
}

fn positive(name: &str, v: f64) -> anyhow::Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        bail!(ConfigError(format!("`{name}` must be positive, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
            None => Self::parse(DEFAULT_CONFIG),
        }
    }

    pub fn apply(mut self, o: &Overrides) -> anyhow::Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        if let Some(d) = o.doi {
            self.measurement.doi_m = d;
        }
        if let Some(n) = o.noise {
            self.noise.relative_read = n;
        }
        if let Some(s) = &o.scene {
            self.scene.preset = s.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(ConfigError(format!(
                "`schema_version` {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.sensor.width == 0 || self.sensor.height == 0 {
            bail!(ConfigError(
                "`sensor.width` and `sensor.height` must be positive".into()
            ));
        }
        positive("coding.frequency_hz", self.coding.frequency_hz)?;
        positive("coding.pulse_fwhm_s", self.coding.pulse_fwhm_s)?;
        if !(self.coding.sigma_d_rad >= 0.0) {
            bail!(ConfigError("`coding.sigma_d_rad` must be ≥ 0".into()));
        }
        positive("acquisition.exposure_s", self.acquisition.exposure_s)?;
        if !(self.noise.relative_read >= 0.0) || !self.noise.relative_read.is_finite() {
            bail!(ConfigError("`noise.relative_read` must be ≥ 0".into()));
        }
        if !(self.noise.shot_scale >= 0.0) {
            bail!(ConfigError("`noise.shot_scale` must be ≥ 0".into()));
        }
        positive(
            "calibration.reference_depth_m",
            self.calibration.reference_depth_m,
        )?;
        if !(1..=24).contains(&self.calibration.fine_bits) {
            bail!(ConfigError(
                "`calibration.fine_bits` must be in 1..=24".into()
            ));
        }
        if self.calibration.coarse_steps < 16 {
            bail!(ConfigError(
                "`calibration.coarse_steps` must be at least 16".into()
            ));
        }
        positive("scene.base_depth_m", self.scene.base_depth_m)?;
        self.preset()?;
        if self.validation.offsets == 0 {
            bail!(ConfigError("`validation.offsets` must be positive".into()));
        }
        if !(self.validation.half_span_m >= 0.0) {
            bail!(ConfigError("`validation.half_span_m` must be ≥ 0".into()));
        }
        if self.compare.trials == 0 || self.compare.noise_levels.is_empty() {
            bail!(ConfigError(
                "`compare` needs trials and at least one noise level".into()
            ));
        }
        if self.compare.noise_levels.iter().any(|n| !(*n >= 0.0)) {
            bail!(ConfigError("`compare.noise_levels` must be ≥ 0".into()));
        }
        self.pulsed()
            .map_err(|e| ConfigError(format!("coding: {e}")))?;
        Ok(())
    }

    pub fn resolution(&self) -> Resolution {
        Resolution {
            width: self.sensor.width,
            height: self.sensor.height,
        }
    }

    pub fn preset(&self) -> anyhow::Result<ScenePreset> {
        self.scene
            .preset
            .parse()
            .map_err(|e| ConfigError(format!("`scene.preset`: {e}")).into())
    }

    pub fn pulsed(&self) -> pctof_core::Result<CodingConfig> {
        CodingConfig::pulsed(
            self.coding.frequency_hz,
            self.coding.pulse_fwhm_s,
            self.coding.sigma_d_rad,
            self.coding.amplitude,
        )
    }

    /// Sinusoidal light against the same sensor gain as the pulsed mode.
    pub fn sinusoid(&self) -> pctof_core::Result<CodingConfig> {
        CodingConfig::sinusoidal(
            self.coding.frequency_hz,
            DemodulationSpec::smoothed_rect(self.coding.sigma_d_rad)?,
            self.coding.amplitude,
        )
    }

    /// Noise model with read noise scaled to the pulsed peak tap.
    pub fn noise_model(&self) -> pctof_core::Result<NoiseModel> {
        let pulsed = self.pulsed()?;
        let mut n = NoiseModel::relative(
            self.noise.relative_read,
            &pulsed,
            self.acquisition.exposure_s,
        );
        if self.noise.shot_scale > 0.0 {
            n = n.with_shot(self.noise.shot_scale);
        }
        Ok(n)
    }

    pub fn acquisition(
        &self,
        coding: CodingConfig,
        seed: u64,
    ) -> pctof_core::Result<AcquisitionConfig> {
        AcquisitionConfig::new(
            coding,
            self.acquisition.exposure_s,
            self.noise_model()?,
            seed,
        )
    }

    pub fn doi(&self) -> Option<f64> {
        (self.measurement.doi_m >= 0.0).then_some(self.measurement.doi_m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML echo.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
