//! K-tap correlation image formation, sensor noise and the raw fraction.
//!
//! For pixel `p` and tap `i` the simulated intensity is
//! `I_i(p) = n·(E_c(p)·C_i(φ_Γ(p)) + E_a(p)·∫s/ω) + noise`, with `n = τν`
//! integrated periods.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::scene::{translate_depth, Resolution, SceneFrame};
use crate::signal_model::{phase_from_depth, CodingConfig};

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of the `index`-th frame of a sequence; index 0 keeps the base seed.
pub fn frame_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index.wrapping_mul(SEED_STRIDE))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SEED_STRIDE);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(pixel as u64)))
}

/// Per-tap sensor noise. `Ω = sqrt(K)·sigma_read` under the constant-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_read: f64,
    pub shot_enabled: bool,
    /// Electrons per intensity unit when shot noise is on.
    pub shot_scale: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma_read: 0.0,
            shot_enabled: false,
            shot_scale: 1.0,
        }
    }

    pub fn gaussian(sigma_read: f64) -> Self {
        Self {
            sigma_read,
            ..Self::none()
        }
    }

    /// Read noise equal to `fraction` of the brightest tap a unit-albedo
    /// target produces under `coding`.
    pub fn relative(fraction: f64, coding: &CodingConfig, exposure: f64) -> Self {
        Self::gaussian(fraction * peak_tap_intensity(coding, exposure))
    }

    pub fn with_shot(mut self, shot_scale: f64) -> Self {
        self.shot_enabled = true;
        self.shot_scale = shot_scale;
        self
    }

    pub fn is_silent(&self) -> bool {
        self.sigma_read == 0.0 && !self.shot_enabled
    }

    pub fn omega_total(&self, k_taps: usize) -> f64 {
        (k_taps as f64).sqrt() * self.sigma_read
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_read >= 0.0) || !self.sigma_read.is_finite() {
            return Err(domain(format!(
                "read noise must be ≥ 0, got {}",
                self.sigma_read
            )));
        }
        if self.shot_enabled && !(self.shot_scale > 0.0) {
            return Err(domain("shot scale must be positive"));
        }
        Ok(())
    }
}

/// Largest tap intensity of a unit-albedo, ambient-free pixel.
pub fn peak_tap_intensity(coding: &CodingConfig, exposure: f64) -> f64 {
    exposure * coding.frequency() * coding.correlation_at(0.0)
}

/// Per-pixel sensor defects: a phase skew (radians) and a gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPerturbation {
    pub phase: Vec<f64>,
    pub gain: Vec<f64>,
}

impl PixelPerturbation {
    pub fn phase_only(phase: Vec<f64>) -> Self {
        let gain = vec![1.0; phase.len()];
        Self { phase, gain }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub coding: CodingConfig,
    /// Exposure `τ` in seconds.
    pub exposure: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Uniform ADC step in intensity units, if quantizing.
    #[serde(default)]
    pub quantization: Option<f64>,
    #[serde(skip)]
    pub perturbation: Option<Arc<PixelPerturbation>>,
}

impl AcquisitionConfig {
    pub fn new(coding: CodingConfig, exposure: f64, noise: NoiseModel, seed: u64) -> Result<Self> {
        let acq = Self {
            coding,
            exposure,
            noise,
            seed,
            quantization: None,
            perturbation: None,
        };
        acq.validate()?;
        Ok(acq)
    }

    pub fn validate(&self) -> Result<()> {
        self.coding.validate()?;
        if !(self.exposure > 0.0) || !self.exposure.is_finite() {
            return Err(domain(format!(
                "exposure must be positive, got {}",
                self.exposure
            )));
        }
        if self.periods() < 1.0 {
            return Err(domain(format!(
                "exposure covers {} periods; at least one is required",
                self.periods()
            )));
        }
        if let Some(q) = self.quantization {
            if !(q > 0.0) {
                return Err(domain("quantization step must be positive"));
            }
        }
        self.noise.validate()
    }

    /// `τ·ν`.
    pub fn periods(&self) -> f64 {
        self.exposure * self.coding.frequency()
    }

    pub fn with_global_shift(&self, theta_g: f64) -> Self {
        let mut a = self.clone();
        a.coding = a.coding.with_global_shift(theta_g);
        a
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut a = self.clone();
        a.seed = seed;
        a
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Self {
        let mut a = self.clone();
        a.noise = noise;
        a
    }

    pub fn with_perturbation(&self, p: PixelPerturbation) -> Self {
        let mut a = self.clone();
        a.perturbation = Some(Arc::new(p));
        a
    }
}

/// K intensity images from one exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct TapFrame {
    resolution: Resolution,
    taps: Vec<Vec<f64>>,
    acquisition: AcquisitionConfig,
}

impl TapFrame {
    pub fn new(
        resolution: Resolution,
        taps: Vec<Vec<f64>>,
        acquisition: AcquisitionConfig,
    ) -> Result<Self> {
        if taps.len() != acquisition.coding.k_taps() {
            return Err(domain(format!(
                "{} tap images for a {}-tap coding",
                taps.len(),
                acquisition.coding.k_taps()
            )));
        }
        if taps.iter().any(|t| t.len() != resolution.pixels()) {
            return Err(domain("tap images must match the resolution"));
        }
        if taps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(domain("tap intensities must be finite"));
        }
        Ok(Self {
            resolution,
            taps,
            acquisition,
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn taps(&self) -> &[Vec<f64>] {
        &self.taps
    }

    pub fn tap(&self, i: usize) -> &[f64] {
        &self.taps[i]
    }

    pub fn acquisition(&self) -> &AcquisitionConfig {
        &self.acquisition
    }

    pub fn k(&self) -> usize {
        self.taps.len()
    }
}

/// Noise-free intensities of one pixel for every tap.
pub fn render_pixel(
    phase_depth: f64,
    albedo: f64,
    ambient: f64,
    coding: &CodingConfig,
    periods: f64,
    out: &mut [f64],
) {
    let ambient_term = ambient * coding.demodulation().period_integral() / coding.omega();
    for (i, v) in out.iter_mut().enumerate() {
        let c = coding.correlation_at(phase_depth - coding.tap_shift(i));
        *v = periods * (albedo * c + ambient_term);
    }
}

/// Renders the taps of `scene` under `acq`. Deterministic given the seed and
/// independent of thread scheduling.
pub fn render_taps(scene: &SceneFrame, acq: &AcquisitionConfig) -> Result<TapFrame> {
    acq.validate()?;
    let coding = &acq.coding;
    let range = coding.unambiguity_range();
    if scene.max_depth() > range * (1.0 + 1e-12) {
        return Err(domain(format!(
            "scene depths may reach {} m but the coding is unambiguous only to {range} m",
            scene.max_depth()
        )));
    }
    let n = scene.resolution().pixels();
    if let Some(p) = &acq.perturbation {
        if p.phase.len() != n || p.gain.len() != n {
            return Err(domain(
                "pixel perturbation maps must match the scene resolution",
            ));
        }
    }
    let k = coding.k_taps();
    let periods = acq.periods();
    let noise = acq.noise;
    let mut flat = vec![0.0; n * k];
    flat.par_chunks_mut(k)
        .enumerate()
        .try_for_each(|(p, out)| -> Result<()> {
            let mut phase = phase_from_depth(scene.depth()[p], coding)?;
            let mut albedo = scene.albedo()[p];
            if let Some(pert) = &acq.perturbation {
                phase += pert.phase[p];
                albedo *= pert.gain[p];
            }
            render_pixel(phase, albedo, scene.ambient()[p], coding, periods, out);
            if !noise.is_silent() {
                let mut rng = pixel_rng(acq.seed, p);
                for v in out.iter_mut() {
                    if noise.shot_enabled {
                        let lambda = (*v * noise.shot_scale).max(0.0);
                        if lambda > 0.0 {
                            let count: f64 = Poisson::new(lambda)
                                .map_err(|e| Error::Domain(format!("shot noise: {e}")))?
                                .sample(&mut rng);
                            *v = count / noise.shot_scale;
                        }
                    }
                    if noise.sigma_read > 0.0 {
                        *v += noise.sigma_read * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            if let Some(q) = acq.quantization {
                for v in out.iter_mut() {
                    *v = (*v / q).round() * q;
                }
            }
            Ok(())
        })?;
    let taps = (0..k)
        .map(|i| flat.iter().skip(i).step_by(k).copied().collect())
        .collect();
    TapFrame::new(scene.resolution(), taps, acq.clone())
}

/// The two tap differences a four-tap sensor reports: `I₀ − I₂` and `I₁ − I₃`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceFrame {
    pub resolution: Resolution,
    pub d02: Vec<f64>,
    pub d13: Vec<f64>,
    /// Magnitude below which `d13` counts as zero.
    pub epsilon: f64,
}

impl DifferenceFrame {
    pub fn from_taps(taps: &TapFrame) -> Result<Self> {
        if taps.k() != 4 {
            return Err(Error::UnsupportedTapCount(taps.k()));
        }
        let t = taps.taps();
        let max_tap = t.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let d02 = t[0].iter().zip(&t[2]).map(|(a, b)| a - b).collect();
        let d13 = t[1].iter().zip(&t[3]).map(|(a, b)| a - b).collect();
        Ok(Self {
            resolution: taps.resolution(),
            d02,
            d13,
            epsilon: 1e-9 * max_tap,
        })
    }

    /// Hardware path: differences only, epsilon scaled by the largest difference.
    pub fn from_differences(resolution: Resolution, d02: Vec<f64>, d13: Vec<f64>) -> Result<Self> {
        if d02.len() != resolution.pixels() || d13.len() != resolution.pixels() {
            return Err(domain("difference maps must match the resolution"));
        }
        let max = d02.iter().chain(&d13).fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            resolution,
            d02,
            d13,
            epsilon: 1e-9 * max,
        })
    }
}

/// Per-pixel `Ψ = (I₀ − I₂)/(I₁ − I₃)` with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFractionFrame {
    pub resolution: Resolution,
    pub psi: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RawFractionFrame {
    pub fn from_differences(diff: &DifferenceFrame) -> Self {
        let (psi, valid) = diff
            .d02
            .iter()
            .zip(&diff.d13)
            .map(|(num, den)| {
                if den.abs() < diff.epsilon || *den == 0.0 {
                    (0.0, false)
                } else {
                    (num / den, true)
                }
            })
            .unzip();
        Self {
            resolution: diff.resolution,
            psi,
            valid,
        }
    }
}

/// Raw fraction of a four-tap frame.
pub fn raw_fraction(taps: &TapFrame) -> Result<RawFractionFrame> {
    Ok(RawFractionFrame::from_differences(
        &DifferenceFrame::from_taps(taps)?,
    ))
}

/// Renders one frame per rail offset (meters); frame `k` uses
/// `frame_seed(seed, k)`.
pub fn rail_sweep(
    scene: &SceneFrame,
    acq: &AcquisitionConfig,
    offsets: &[f64],
) -> Result<Vec<TapFrame>> {
    offsets
        .iter()
        .enumerate()
        .map(|(k, &off)| {
            let moved = translate_depth(scene, off)?;
            render_taps(&moved, &acq.with_seed(frame_seed(acq.seed, k as u64)))
        })
        .collect()
}

/// `count` offsets evenly spanning `[lo, hi]`.
pub fn rail_offsets(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}
