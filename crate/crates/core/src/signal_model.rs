//! Modulation/demodulation signal pairs and their correlation functions.
//!
//! All phases are in radians. A target at depth `Γ` delays the modulation by
//! `φ_Γ = 2ωΓ/c`; tap `i` samples the correlation at `φ_Γ − θ_i` with
//! `θ_i = θ_G + 2πi/K`. The pulsed pair (Gaussian pulse train against a
//! Gaussian-smoothed square wave of duty 0.5) has the erf closed form; the
//! other supported pairs have first-harmonic closed forms.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::erf_diff;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// `FWHM = 2·sqrt(2·ln 2)·σ` for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Wraps a phase into `(−π, π]`.
#[inline]
pub fn wrap_pi(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

/// Wraps a phase into `[0, 2π)`.
#[inline]
pub fn wrap_tau(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeConvention {
    /// Pulse peak (or sinusoid peak) equals one.
    UnitAmplitude,
    /// Mean optical power over one period equals one.
    UnitAveragePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModulationKind {
    GaussianPulseTrain { sigma_m: f64 },
    Sinusoid,
}

/// Light-source waveform `i(φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpec {
    pub kind: ModulationKind,
    pub amplitude: AmplitudeConvention,
}

impl ModulationSpec {
    /// Gaussian pulse train; enforces the narrow-pulse assumption `6σ < 2π`.
    pub fn gaussian_pulses(sigma_m: f64, amplitude: AmplitudeConvention) -> Result<Self> {
        let spec = Self {
            kind: ModulationKind::GaussianPulseTrain { sigma_m },
            amplitude,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sinusoid(amplitude: AmplitudeConvention) -> Self {
        Self {
            kind: ModulationKind::Sinusoid,
            amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModulationKind::GaussianPulseTrain { sigma_m } = self.kind {
            if !(sigma_m > 0.0) || !sigma_m.is_finite() {
                return Err(domain(format!(
                    "pulse sigma must be positive, got {sigma_m}"
                )));
            }
            if 6.0 * sigma_m >= TAU {
                return Err(Error::ModelValidity(format!(
                    "pulse sigma {sigma_m} rad violates the narrow-pulse assumption 6σ < 2π"
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_m(&self) -> f64 {
        match self.kind {
            ModulationKind::GaussianPulseTrain { sigma_m } => sigma_m,
            ModulationKind::Sinusoid => 0.0,
        }
    }

    /// Peak of one pulse, or the cosine coefficient of a sinusoid.
    pub fn peak(&self) -> f64 {
        match (self.kind, self.amplitude) {
            (ModulationKind::GaussianPulseTrain { .. }, AmplitudeConvention::UnitAmplitude) => 1.0,
            (
                ModulationKind::GaussianPulseTrain { sigma_m },
                AmplitudeConvention::UnitAveragePower,
            ) => TAU.sqrt() / sigma_m,
            (ModulationKind::Sinusoid, AmplitudeConvention::UnitAmplitude) => 0.5,
            (ModulationKind::Sinusoid, AmplitudeConvention::UnitAveragePower) => 1.0,
        }
    }

    /// `∫ i(φ) dφ` over one period.
    pub fn period_integral(&self) -> f64 {
        match self.kind {
            ModulationKind::GaussianPulseTrain { sigma_m } => self.peak() * sigma_m * TAU.sqrt(),
            ModulationKind::Sinusoid => self.peak() * TAU,
        }
    }

    /// Pointwise periodic waveform.
    pub fn eval(&self, phi: f64) -> f64 {
        match self.kind {
            ModulationKind::GaussianPulseTrain { sigma_m } => {
                let w = wrap_pi(phi);
                let inv = 1.0 / (2.0 * sigma_m * sigma_m);
                let g = |d: f64| (-d * d * inv).exp();
                self.peak() * (g(w) + g(w - TAU) + g(w + TAU))
            }
            ModulationKind::Sinusoid => self.peak() * (1.0 + phi.cos()),
        }
    }

    pub(crate) fn feature_width(&self) -> f64 {
        match self.kind {
            ModulationKind::GaussianPulseTrain { sigma_m } => sigma_m,
            ModulationKind::Sinusoid => PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DemodulationSpec {
    /// Square wave (high for half the period, centred on phase 0) convolved
    /// with a unit-area Gaussian of standard deviation `sigma_d`.
    SmoothedRect { sigma_d: f64 },
    /// Zero-mean `cos φ` gain.
    Sinusoid,
}

impl DemodulationSpec {
    /// Fraction of the period the square wave is high.
    pub const DUTY: f64 = 0.5;

    pub fn smoothed_rect(sigma_d: f64) -> Result<Self> {
        let s = Self::SmoothedRect { sigma_d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::SmoothedRect { sigma_d } = *self {
            if !(sigma_d >= 0.0) || !sigma_d.is_finite() {
                return Err(domain(format!("edge sigma must be ≥ 0, got {sigma_d}")));
            }
            if 6.0 * sigma_d >= PI {
                return Err(Error::ModelValidity(format!(
                    "edge sigma {sigma_d} rad smears the half-period gate"
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_d(&self) -> f64 {
        match *self {
            Self::SmoothedRect { sigma_d } => sigma_d,
            Self::Sinusoid => 0.0,
        }
    }

    /// `∫ s(φ) dφ` over one period.
    pub fn period_integral(&self) -> f64 {
        match self {
            Self::SmoothedRect { .. } => TAU * Self::DUTY,
            Self::Sinusoid => 0.0,
        }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        match *self {
            Self::SmoothedRect { sigma_d } => {
                let w = wrap_pi(phi);
                if sigma_d == 0.0 {
                    return if w.abs() < FRAC_PI_2 {
                        1.0
                    } else if w.abs() == FRAC_PI_2 {
                        0.5
                    } else {
                        0.0
                    };
                }
                let k = 1.0 / (sigma_d * std::f64::consts::SQRT_2);
                let gate = |x: f64| 0.5 * erf_diff((x + FRAC_PI_2) * k, (x - FRAC_PI_2) * k);
                gate(w) + gate(w - TAU) + gate(w + TAU)
            }
            Self::Sinusoid => phi.cos(),
        }
    }

    pub(crate) fn feature_width(&self) -> f64 {
        match *self {
            Self::SmoothedRect { sigma_d } if sigma_d > 0.0 => sigma_d,
            _ => PI,
        }
    }
}

/// A complete coding: frequency, taps, global shift and the signal pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    frequency: f64,
    k_taps: usize,
    theta_g: f64,
    modulation: ModulationSpec,
    demodulation: DemodulationSpec,
}

impl CodingConfig {
    pub fn new(
        frequency: f64,
        k_taps: usize,
        modulation: ModulationSpec,
        demodulation: DemodulationSpec,
    ) -> Result<Self> {
        let c = Self {
            frequency,
            k_taps,
            theta_g: 0.0,
            modulation,
            demodulation,
        };
        c.validate()?;
        Ok(c)
    }

    /// Four-tap pulsed coding from a pulse FWHM in seconds.
    pub fn pulsed(
        frequency: f64,
        pulse_fwhm: f64,
        sigma_d: f64,
        amplitude: AmplitudeConvention,
    ) -> Result<Self> {
        let sigma_m = fwhm_to_sigma_at(pulse_fwhm, TAU * frequency)?;
        Self::new(
            frequency,
            4,
            ModulationSpec::gaussian_pulses(sigma_m, amplitude)?,
            DemodulationSpec::smoothed_rect(sigma_d)?,
        )
    }

    /// Four-tap sinusoidal light against the given sensor gain.
    pub fn sinusoidal(
        frequency: f64,
        demodulation: DemodulationSpec,
        amplitude: AmplitudeConvention,
    ) -> Result<Self> {
        Self::new(
            frequency,
            4,
            ModulationSpec::sinusoid(amplitude),
            demodulation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(domain(format!(
                "frequency must be positive, got {}",
                self.frequency
            )));
        }
        if self.k_taps < 3 {
            return Err(domain(format!("need at least 3 taps, got {}", self.k_taps)));
        }
        if !self.theta_g.is_finite() {
            return Err(domain("global shift must be finite"));
        }
        self.modulation.validate()?;
        self.demodulation.validate()
    }

    /// Same coding with global shift `theta_g` (wrapped into `[0, 2π)`).
    pub fn with_global_shift(mut self, theta_g: f64) -> Self {
        self.theta_g = wrap_tau(theta_g);
        self
    }

    /// Same coding with a different light waveform.
    pub fn with_modulation(mut self, modulation: ModulationSpec) -> Result<Self> {
        modulation.validate()?;
        self.modulation = modulation;
        Ok(self)
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn omega(&self) -> f64 {
        TAU * self.frequency
    }

    pub fn k_taps(&self) -> usize {
        self.k_taps
    }

    pub fn theta_g(&self) -> f64 {
        self.theta_g
    }

    pub fn modulation(&self) -> &ModulationSpec {
        &self.modulation
    }

    pub fn demodulation(&self) -> &DemodulationSpec {
        &self.demodulation
    }

    /// `θ_i = 2πi/K + θ_G mod 2π`.
    pub fn tap_shift(&self, i: usize) -> f64 {
        wrap_tau(TAU * i as f64 / self.k_taps as f64 + self.theta_g)
    }

    pub fn tap_shifts(&self) -> Vec<f64> {
        (0..self.k_taps).map(|i| self.tap_shift(i)).collect()
    }

    /// `sqrt(σ_M² + σ_D²)`; sinusoidal parts contribute zero.
    pub fn sigma_eff(&self) -> f64 {
        self.modulation.sigma_m().hypot(self.demodulation.sigma_d())
    }

    pub fn is_pulsed(&self) -> bool {
        matches!(
            self.modulation.kind,
            ModulationKind::GaussianPulseTrain { .. }
        ) && matches!(self.demodulation, DemodulationSpec::SmoothedRect { .. })
    }

    pub fn is_sinusoidal(&self) -> bool {
        matches!(self.modulation.kind, ModulationKind::Sinusoid)
    }

    /// Duration of one correlation edge in seconds: the 1/e² width `4σ/ω`
    /// for the pulsed pair, half a period otherwise.
    pub fn rise_time(&self) -> f64 {
        if self.is_pulsed() {
            4.0 * self.sigma_eff() / self.omega()
        } else {
            PI / self.omega()
        }
    }

    /// `c / (2ν)`.
    pub fn unambiguity_range(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.frequency)
    }

    /// True when both codings differ at most in their global shift.
    pub fn same_signals(&self, other: &Self) -> bool {
        self.frequency == other.frequency
            && self.k_taps == other.k_taps
            && self.modulation == other.modulation
            && self.demodulation == other.demodulation
    }

    /// Correlation as a function of the relative phase `φ_Γ − θ_i`.
    pub fn correlation_at(&self, rel: f64) -> f64 {
        let x = wrap_pi(rel);
        let inv_omega = 1.0 / self.omega();
        match (self.modulation.kind, self.demodulation) {
            (ModulationKind::GaussianPulseTrain { .. }, DemodulationSpec::SmoothedRect { .. }) => {
                let k = 1.0 / (self.sigma_eff() * std::f64::consts::SQRT_2);
                let half_area = 0.5 * self.modulation.period_integral();
                // the neighbouring periods only matter far in the tails
                let window = |y: f64| erf_diff((y + FRAC_PI_2) * k, (y - FRAC_PI_2) * k);
                inv_omega * half_area * (window(x - TAU) + window(x) + window(x + TAU))
            }
            (ModulationKind::GaussianPulseTrain { sigma_m }, DemodulationSpec::Sinusoid) => {
                let area = self.modulation.period_integral();
                inv_omega * area * (-0.5 * sigma_m * sigma_m).exp() * x.cos()
            }
            (ModulationKind::Sinusoid, DemodulationSpec::SmoothedRect { sigma_d }) => {
                let a = self.modulation.peak();
                inv_omega * a * (PI + 2.0 * (-0.5 * sigma_d * sigma_d).exp() * x.cos())
            }
            (ModulationKind::Sinusoid, DemodulationSpec::Sinusoid) => {
                inv_omega * self.modulation.peak() * PI * x.cos()
            }
        }
    }

    /// `∂C/∂φ_Γ` as a function of the relative phase.
    pub fn slope_at(&self, rel: f64) -> f64 {
        let x = wrap_pi(rel);
        let inv_omega = 1.0 / self.omega();
        match (self.modulation.kind, self.demodulation) {
            (ModulationKind::GaussianPulseTrain { .. }, DemodulationSpec::SmoothedRect { .. }) => {
                let s = self.sigma_eff();
                let a = 1.0 / (2.0 * s * s);
                let scale = self.modulation.period_integral() / (s * TAU.sqrt());
                let edges = |y: f64| {
                    let lo = y + FRAC_PI_2;
                    let hi = y - FRAC_PI_2;
                    (-a * lo * lo).exp() - (-a * hi * hi).exp()
                };
                inv_omega * scale * (edges(x - TAU) + edges(x) + edges(x + TAU))
            }
            (ModulationKind::GaussianPulseTrain { sigma_m }, DemodulationSpec::Sinusoid) => {
                let area = self.modulation.period_integral();
                -inv_omega * area * (-0.5 * sigma_m * sigma_m).exp() * x.sin()
            }
            (ModulationKind::Sinusoid, DemodulationSpec::SmoothedRect { sigma_d }) => {
                let a = self.modulation.peak();
                -inv_omega * a * 2.0 * (-0.5 * sigma_d * sigma_d).exp() * x.sin()
            }
            (ModulationKind::Sinusoid, DemodulationSpec::Sinusoid) => {
                -inv_omega * self.modulation.peak() * PI * x.sin()
            }
        }
    }

    fn check_tap(&self, tap: usize) -> Result<()> {
        if tap >= self.k_taps {
            return Err(domain(format!(
                "tap {tap} out of range for {} taps",
                self.k_taps
            )));
        }
        Ok(())
    }

    fn require_pulsed(&self) -> Result<()> {
        if !self.is_pulsed() {
            return Err(Error::UnsupportedCoding(
                "closed form needs a Gaussian pulse train against a smoothed rect".into(),
            ));
        }
        Ok(())
    }

    /// Correlation of tap `tap` for any supported signal pair.
    pub fn correlation(&self, phase_depth: f64, tap: usize) -> Result<f64> {
        self.check_tap(tap)?;
        Ok(self.correlation_at(phase_depth - self.tap_shift(tap)))
    }

    /// `∂C_i/∂φ_Γ` for any supported signal pair.
    pub fn correlation_slope(&self, phase_depth: f64, tap: usize) -> Result<f64> {
        self.check_tap(tap)?;
        Ok(self.slope_at(phase_depth - self.tap_shift(tap)))
    }
}

/// `φ_Γ = 2ωΓ/c`, not reduced modulo 2π.
pub fn phase_from_depth(depth: f64, config: &CodingConfig) -> Result<f64> {
    if !(depth >= 0.0) || !depth.is_finite() {
        return Err(domain(format!("depth must be finite and ≥ 0, got {depth}")));
    }
    Ok(2.0 * config.omega() * depth / SPEED_OF_LIGHT)
}

/// Inverse of [`phase_from_depth`] without range checks.
pub fn depth_from_phase(phase: f64, config: &CodingConfig) -> f64 {
    phase * SPEED_OF_LIGHT / (2.0 * config.omega())
}

fn fwhm_to_sigma_at(fwhm: f64, omega: f64) -> Result<f64> {
    if !(fwhm >= 0.0) || !fwhm.is_finite() {
        return Err(domain(format!("FWHM must be ≥ 0, got {fwhm}")));
    }
    let sigma = fwhm * omega / FWHM_PER_SIGMA;
    if 6.0 * sigma >= TAU {
        return Err(Error::ModelValidity(format!(
            "FWHM {fwhm} s gives σ = {sigma} rad, violating 6σ < 2π"
        )));
    }
    Ok(sigma)
}

/// Pulse FWHM in seconds to the Gaussian σ in phase radians.
pub fn fwhm_to_sigma(fwhm: f64, config: &CodingConfig) -> Result<f64> {
    fwhm_to_sigma_at(fwhm, config.omega())
}

/// Closed-form pulsed correlation `C_i(φ_Γ)`.
pub fn closed_form_correlation(phase_depth: f64, tap: usize, config: &CodingConfig) -> Result<f64> {
    config.require_pulsed()?;
    config.correlation(phase_depth, tap)
}

/// Closed-form `∂C_i/∂φ_Γ`: a positive Gaussian at `θ_i − π/2` and a
/// negative one at `θ_i + π/2`.
pub fn correlation_derivative(phase_depth: f64, tap: usize, config: &CodingConfig) -> Result<f64> {
    config.require_pulsed()?;
    config.correlation_slope(phase_depth, tap)
}

/// `(θ_i − π/2, θ_i + π/2)`, both wrapped into `[0, 2π)`.
pub fn max_sensitivity_phases(tap: usize, config: &CodingConfig) -> Result<(f64, f64)> {
    config.check_tap(tap)?;
    let t = config.tap_shift(tap);
    Ok((wrap_tau(t - FRAC_PI_2), wrap_tau(t + FRAC_PI_2)))
}

/// Global shift that puts tap 0's sensitivity extremum at the depth of
/// interest: `θ_G = 2ωΓ₀/c − π/2 mod 2π`.
///
/// At this shift the raw fraction rises with `θ_G` through the depth of
/// interest, which is the edge the calibration sweep tracks.
pub fn doi_to_global_shift(doi: f64, config: &CodingConfig) -> Result<f64> {
    let range = config.unambiguity_range();
    if !(doi >= 0.0 && doi < range) {
        return Err(domain(format!(
            "depth of interest {doi} m outside [0, {range})"
        )));
    }
    Ok(wrap_tau(phase_from_depth(doi, config)? - FRAC_PI_2))
}

/// `(Δφ, ΔΓ) = (4σ, 4σ·c/(2ω))`.
pub fn sensitive_range(config: &CodingConfig) -> (f64, f64) {
    let dphi = 4.0 * config.sigma_eff();
    (dphi, depth_from_phase(dphi, config))
}
