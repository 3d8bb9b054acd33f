//! Coding performance: local depth sensitivity, the depth precision measure
//! `χ̄`, and Monte-Carlo comparisons between sinusoidal and pulsed operation.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::acquisition::{
    frame_seed, peak_tap_intensity, render_taps, AcquisitionConfig, NoiseModel,
};
use crate::calibration::{build_calibration, CalibrationSettings, CalibrationTable};
use crate::error::{domain, Error, Result};
use crate::reconstruction::{pctof_depth, sinusoid_depth, DepthMap, DepthMode};
use crate::scene::SceneFrame;
use crate::signal_model::{doi_to_global_shift, sensitive_range, CodingConfig, SPEED_OF_LIGHT};

/// Smallest grid accepted by [`depth_precision_measure`].
pub const MIN_GRID: usize = 1000;
const CONVERGENCE_TOL: f64 = 1e-6;

/// `sqrt(Σᵢ (∂C_i/∂Γ)²)` at `depth` meters.
pub fn local_sensitivity(depth: f64, config: &CodingConfig) -> f64 {
    let k = 2.0 * config.omega() / SPEED_OF_LIGHT;
    let phase = k * depth;
    (0..config.k_taps())
        .map(|i| {
            let s = config.slope_at(phase - config.tap_shift(i)) * k;
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// `(depth, sensitivity)` at `n` equally spaced depths over one
/// unambiguity range.
pub fn sensitivity_profile(config: &CodingConfig, n: usize) -> Vec<(f64, f64)> {
    let range = config.unambiguity_range();
    (0..n)
        .map(|j| {
            let d = range * j as f64 / n as f64;
            (d, local_sensitivity(d, config))
        })
        .collect()
}

/// `∫₀^Γ_range √Σ(∂C_i/∂Γ)² dΓ` by the trapezoid rule on a periodic grid.
fn sensitivity_integral(config: &CodingConfig, n: usize) -> f64 {
    let h = config.unambiguity_range() / n as f64;
    sensitivity_profile(config, n)
        .iter()
        .map(|(_, s)| s)
        .sum::<f64>()
        * h
}

/// `χ̄ = E_c/(Ω·Γ_range)·∫ √Σ(∂C_i/∂Γ)² dΓ` on `grid_n` points, checked
/// against a grid of `2·grid_n` points.
pub fn depth_precision_measure(
    config: &CodingConfig,
    e_c: f64,
    omega_noise: f64,
    grid_n: usize,
) -> Result<f64> {
    if !(e_c > 0.0) || !e_c.is_finite() {
        return Err(domain(format!("E_c must be positive, got {e_c}")));
    }
    if !(omega_noise > 0.0) || !omega_noise.is_finite() {
        return Err(domain(format!("Ω must be positive, got {omega_noise}")));
    }
    if grid_n < MIN_GRID {
        return Err(domain(format!(
            "grid needs at least {MIN_GRID} points, got {grid_n}"
        )));
    }
    let coarse = sensitivity_integral(config, grid_n);
    let fine = sensitivity_integral(config, 2 * grid_n);
    if !coarse.is_finite() || (fine - coarse).abs() > CONVERGENCE_TOL * fine.abs() {
        return Err(Error::Integration(format!(
            "sensitivity integral moved from {coarse} to {fine} on grid doubling"
        )));
    }
    Ok(e_c / (omega_noise * config.unambiguity_range()) * coarse)
}

/// How a coding distributes its sensitivity over the range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentration {
    pub peak: f64,
    /// Share of the range where sensitivity is at least `peak·e⁻²`.
    pub sensitive_fraction: f64,
    /// Share of the sensitivity integral collected there.
    pub integral_fraction: f64,
}

pub fn sensitivity_concentration(config: &CodingConfig, grid_n: usize) -> Result<Concentration> {
    if grid_n < MIN_GRID {
        return Err(domain(format!(
            "grid needs at least {MIN_GRID} points, got {grid_n}"
        )));
    }
    let profile = sensitivity_profile(config, grid_n);
    let peak = profile.iter().fold(0.0f64, |m, (_, s)| m.max(*s));
    let level = peak * (-2.0f64).exp();
    let total: f64 = profile.iter().map(|(_, s)| s).sum();
    let (inside, count) = profile
        .iter()
        .filter(|(_, s)| *s >= level)
        .fold((0.0, 0usize), |(a, c), (_, s)| (a + s, c + 1));
    Ok(Concentration {
        peak,
        sensitive_fraction: count as f64 / grid_n as f64,
        integral_fraction: if total > 0.0 { inside / total } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRow {
    pub mode: DepthMode,
    pub chi_bar: f64,
    pub peak_sensitivity: f64,
    pub sensitive_fraction: f64,
}

/// `χ̄` and sensitivity summaries for a set of codings; the profile belongs
/// to the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub chi_bar: f64,
    pub sensitivity_profile: Vec<(f64, f64)>,
    pub summary: String,
    pub rows: Vec<PrecisionRow>,
}

pub fn precision_report(
    codings: &[(DepthMode, CodingConfig)],
    e_c: f64,
    omega_noise: f64,
    grid_n: usize,
) -> Result<PrecisionReport> {
    let (_, first) = codings
        .first()
        .ok_or_else(|| domain("no codings to report on"))?;
    let mut rows = codings
        .iter()
        .map(|(mode, c)| {
            let conc = sensitivity_concentration(c, grid_n)?;
            Ok(PrecisionRow {
                mode: *mode,
                chi_bar: depth_precision_measure(c, e_c, omega_noise, grid_n)?,
                peak_sensitivity: conc.peak,
                sensitive_fraction: conc.sensitive_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chi_bar = rows[0].chi_bar;
    rows.sort_by_key(|a| a.mode);
    let summary = format!(
        "f = {} Hz, K = {}, sigma_eff = {} rad, E_c = {e_c}, Omega = {omega_noise}, grid = {grid_n}",
        first.frequency(),
        first.k_taps(),
        first.sigma_eff()
    );
    Ok(PrecisionReport {
        chi_bar,
        sensitivity_profile: sensitivity_profile(first, grid_n),
        summary,
        rows,
    })
}

/// Inputs shared by every trial of [`compare_modes`].
#[derive(Debug, Clone)]
pub struct CompareSettings {
    pub pulsed: CodingConfig,
    pub sinusoid: CodingConfig,
    pub exposure: f64,
    pub doi: f64,
    pub trials: usize,
    pub seed: u64,
    /// Calibration for the pulsed mode; built noise-free at the DOI if absent.
    pub table: Option<Arc<CalibrationTable>>,
    pub grid_n: usize,
}

/// Monte-Carlo depth errors of one mode at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub mode: DepthMode,
    /// Read noise as a fraction of the pulsed mode's brightest tap.
    pub noise: f64,
    pub trials: usize,
    /// RMS over valid pixels whose true depth lies within `ΔΓ/2` of the DOI.
    pub rms_doi: f64,
    /// RMS over all valid pixels.
    pub rms_full: f64,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    pub precision: PrecisionReport,
    pub rows: Vec<TrialRow>,
}

struct TrialErrors {
    sq_doi: f64,
    n_doi: usize,
    sq_full: f64,
    n_full: usize,
    valid: usize,
    total: usize,
}

fn trial_errors(map: &DepthMap, truth: &SceneFrame, doi: f64, half: f64) -> TrialErrors {
    let mut e = TrialErrors {
        sq_doi: 0.0,
        n_doi: 0,
        sq_full: 0.0,
        n_full: 0,
        valid: 0,
        total: truth.depth().len(),
    };
    for ((d, v), t) in map.depth().iter().zip(map.valid()).zip(truth.depth()) {
        if !*v {
            continue;
        }
        let r = (d - t) * (d - t);
        e.valid += 1;
        e.sq_full += r;
        e.n_full += 1;
        if (t - doi).abs() <= half {
            e.sq_doi += r;
            e.n_doi += 1;
        }
    }
    e
}

/// Renders and reconstructs `scene` in one mode with noise `sigma`.
pub fn reconstruct_trial(
    scene: &SceneFrame,
    mode: DepthMode,
    sigma: f64,
    seed: u64,
    settings: &CompareSettings,
    table: &CalibrationTable,
) -> Result<DepthMap> {
    let noise = NoiseModel::gaussian(sigma);
    match mode {
        DepthMode::Sinusoid => {
            let acq = AcquisitionConfig::new(settings.sinusoid, settings.exposure, noise, seed)?;
            sinusoid_depth(&render_taps(scene, &acq)?)
        }
        DepthMode::Pctof => {
            let shift = doi_to_global_shift(settings.doi, &settings.pulsed)?;
            let acq = AcquisitionConfig::new(
                settings.pulsed.with_global_shift(shift),
                settings.exposure,
                noise,
                seed,
            )?;
            pctof_depth(&render_taps(scene, &acq)?, table, settings.doi)
        }
    }
}

/// Runs `settings.trials` seeded trials per (mode, noise) pair. Rows are
/// sorted by mode, then noise; trials are reduced in seed order.
pub fn compare_modes(
    scene: &SceneFrame,
    noise_grid: &[f64],
    modes: &[DepthMode],
    settings: &CompareSettings,
) -> Result<ModeComparison> {
    if settings.trials == 0 {
        return Err(domain("at least one trial is required"));
    }
    if noise_grid.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
        return Err(domain("noise levels must be finite and ≥ 0"));
    }
    let table = match &settings.table {
        Some(t) => t.clone(),
        None => {
            let acq = AcquisitionConfig::new(
                settings.pulsed,
                settings.exposure,
                NoiseModel::none(),
                settings.seed,
            )?;
            let cal = CalibrationSettings {
                resolution: scene.resolution(),
                ..CalibrationSettings::default()
            };
            Arc::new(build_calibration(settings.doi, &acq, &cal)?)
        }
    };
    let peak = peak_tap_intensity(&settings.pulsed, settings.exposure);
    let half = 0.5 * sensitive_range(&settings.pulsed).1;

    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let mut noise = noise_grid.to_vec();
    noise.sort_by(f64::total_cmp);
    noise.dedup();

    let mut rows = Vec::new();
    for &mode in &modes {
        for &level in &noise {
            let per_trial = (0..settings.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = frame_seed(settings.seed, t as u64);
                    let map = reconstruct_trial(scene, mode, level * peak, seed, settings, &table)?;
                    Ok(trial_errors(&map, scene, settings.doi, half))
                })
                .collect::<Result<Vec<_>>>()?;
            let sum = per_trial.iter().fold((0.0, 0, 0.0, 0, 0, 0), |a, e| {
                (
                    a.0 + e.sq_doi,
                    a.1 + e.n_doi,
                    a.2 + e.sq_full,
                    a.3 + e.n_full,
                    a.4 + e.valid,
                    a.5 + e.total,
                )
            });
            let rms = |sq: f64, n: usize| {
                if n > 0 {
                    (sq / n as f64).sqrt()
                } else {
                    f64::NAN
                }
            };
            rows.push(TrialRow {
                mode,
                noise: level,
                trials: settings.trials,
                rms_doi: rms(sum.0, sum.1),
                rms_full: rms(sum.2, sum.3),
                valid_fraction: sum.4 as f64 / sum.5 as f64,
            });
        }
    }
    let e_c = settings.exposure * settings.pulsed.frequency();
    let codings: Vec<(DepthMode, CodingConfig)> = modes
        .iter()
        .map(|m| match m {
            DepthMode::Pctof => (*m, settings.pulsed),
            DepthMode::Sinusoid => (*m, settings.sinusoid),
        })
        .collect();
    let precision = precision_report(&codings, e_c, 1.0, settings.grid_n)?;
    Ok(ModeComparison { precision, rows })
}

impl ModeComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,noise,trials,rms_doi_m,rms_full_m,valid_fraction\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.mode, r.noise, r.trials, r.rms_doi, r.rms_full, r.valid_fraction
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n\n", self.precision.summary);
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:>16} {:>18}",
            "mode", "chi_bar", "peak_sens", "sensitive_frac"
        );
        for r in &self.precision.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>14.6e} {:>16.6e} {:>18.6}",
                r.mode.to_string(),
                r.chi_bar,
                r.peak_sensitivity,
                r.sensitive_fraction
            );
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>7} {:>14} {:>14} {:>8}",
            "mode", "noise", "trials", "rms_doi_mm", "rms_full_mm", "valid"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>12.4e} {:>7} {:>14.6} {:>14.6} {:>8.4}",
                r.mode.to_string(),
                r.noise,
                r.trials,
                1e3 * r.rms_doi,
                1e3 * r.rms_full,
                r.valid_fraction
            );
        }
        s
    }
}

impl PrecisionReport {
    pub fn profile_csv(&self) -> String {
        let mut s = String::from("depth_m,sensitivity_per_m\n");
        for (d, v) in &self.sensitivity_profile {
            let _ = writeln!(s, "{d},{v}");
        }
        s
    }
}

/// Read-noise fraction (of the pulsed peak tap) at which sinusoid-mode RMS
/// over the DOI neighborhood reaches `target_rms`, from a linear probe.
/// The result is scaled up by `margin`.
pub fn noise_for_sinusoid_rms(
    scene: &SceneFrame,
    settings: &CompareSettings,
    target_rms: f64,
    margin: f64,
) -> Result<f64> {
    let probe = 1e-3;
    let probe_settings = CompareSettings {
        table: Some(
            settings
                .table
                .clone()
                .ok_or_else(|| domain("noise probe needs a calibration table"))?,
        ),
        ..settings.clone()
    };
    let cmp = compare_modes(scene, &[probe], &[DepthMode::Sinusoid], &probe_settings)?;
    let rms = cmp.rows[0].rms_doi;
    if !(rms > 0.0) {
        return Err(Error::Integration(
            "noise probe produced no depth error".into(),
        ));
    }
    Ok(probe * target_rms / rms * margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadrature_correlate;
    use crate::signal_model::{AmplitudeConvention, DemodulationSpec};

    fn pulsed(sd: f64) -> CodingConfig {
        CodingConfig::pulsed(1e7, 500e-12, sd, AmplitudeConvention::UnitAveragePower).unwrap()
    }

    fn sinus() -> CodingConfig {
        CodingConfig::sinusoidal(
            1e7,
            DemodulationSpec::smoothed_rect(0.0775).unwrap(),
            AmplitudeConvention::UnitAveragePower,
        )
        .unwrap()
    }

    #[test]
    fn doi_is_the_global_maximum() {
        let doi = 0.5;
        let c = pulsed(0.0775);
        let c = c.with_global_shift(doi_to_global_shift(doi, &c).unwrap());
        let at_doi = local_sensitivity(doi, &c);
        for (_, s) in sensitivity_profile(&c, 20000) {
            assert!(s <= at_doi * (1.0 + 1e-9));
        }
        let (_, dg) = sensitive_range(&c);
        let edge = (-2.0f64).exp();
        assert!(local_sensitivity(doi + dg, &c) <= edge * at_doi);
        let half = local_sensitivity(doi + dg / 2.0, &c) / at_doi;
        assert!((half - edge).abs() < 1e-6, "{half}");
    }

    #[test]
    fn sinusoid_profile_is_flat() {
        let c = sinus().with_global_shift(0.7);
        let s0 = local_sensitivity(0.0, &c);
        for (_, s) in sensitivity_profile(&c, 5000) {
            assert!((s - s0).abs() <= 1e-9 * s0);
        }
    }

    #[test]
    fn sinusoid_slope_matches_quadrature_differences() {
        let c = sinus();
        let h = 1e-4;
        for k in 0..40 {
            let phi = 0.157 * k as f64;
            for i in 0..4 {
                let q = |p: f64| {
                    quadrature_correlate(
                        c.modulation(),
                        c.demodulation(),
                        p,
                        c.tap_shift(i),
                        c.omega(),
                    )
                    .unwrap()
                };
                let fd = (q(phi + h) - q(phi - h)) / (2.0 * h);
                let an = c.correlation_slope(phi, i).unwrap();
                assert!(
                    (fd - an).abs() < 1e-6 * c.correlation_at(0.0),
                    "{fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn chi_bar_scaling_and_contracts() {
        let c = pulsed(0.0775);
        let base = depth_precision_measure(&c, 1.0, 1.0, 2000).unwrap();
        assert!(base > 0.0);
        let x3 = depth_precision_measure(&c, 3.0, 1.0, 2000).unwrap();
        let half = depth_precision_measure(&c, 1.0, 2.0, 2000).unwrap();
        assert!((x3 - 3.0 * base).abs() <= 1e-12 * x3);
        assert!((half - base / 2.0).abs() <= 1e-12 * base);
        assert!(depth_precision_measure(&c, 0.0, 1.0, 2000).is_err());
        assert!(depth_precision_measure(&c, 1.0, 0.0, 2000).is_err());
        assert!(depth_precision_measure(&c, 1.0, 1.0, 999).is_err());
    }

    #[test]
    fn chi_bar_independent_of_global_shift() {
        let c = pulsed(0.0775);
        let a = depth_precision_measure(&c, 1.0, 1.0, 4096).unwrap();
        for t in [0.3, 1.9, 4.4] {
            let b = depth_precision_measure(&c.with_global_shift(t), 1.0, 1.0, 4096).unwrap();
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn pulsed_sensitivity_is_concentrated() {
        let c = pulsed(0.0775);
        let conc = sensitivity_concentration(&c, 20000).unwrap();
        assert!(conc.integral_fraction > 0.95, "{}", conc.integral_fraction);
        let flat = sensitivity_concentration(&sinus(), 20000).unwrap();
        assert_eq!(flat.sensitive_fraction, 1.0);
        let wide = sensitivity_concentration(&pulsed(0.15), 20000).unwrap();
        assert!(wide.sensitive_fraction > conc.sensitive_fraction);
        assert!(wide.peak < conc.peak);
        // four edges, each 4σ wide
        let expected = 4.0 * 4.0 * c.sigma_eff() / std::f64::consts::TAU;
        assert!((conc.sensitive_fraction - expected).abs() < 0.01);
    }

    #[test]
    fn report_rows_sorted() {
        let r = precision_report(
            &[
                (DepthMode::Sinusoid, sinus()),
                (DepthMode::Pctof, pulsed(0.0775)),
            ],
            1.0,
            1.0,
            2000,
        )
        .unwrap();
        assert_eq!(r.rows[0].mode, DepthMode::Sinusoid);
        assert_eq!(r.rows[1].mode, DepthMode::Pctof);
        assert!(r.chi_bar > 0.0);
        assert!(r.sensitivity_profile.iter().all(|(_, s)| *s >= 0.0));
    }
}
