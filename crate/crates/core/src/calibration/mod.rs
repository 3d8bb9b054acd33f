//! Three-stage calibration: a coarse full-period phase sweep, a fine sweep
//! over each pixel's sensitive interval, and a per-pixel phase mask.

mod container;

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{
    frame_seed, render_taps, AcquisitionConfig, DifferenceFrame, RawFractionFrame,
};
use crate::error::{domain, Error, Result};
use crate::numerics::{
    fit_monotone_response, invert_monotone, MonotoneResponse, SampledCurve, Smoothing,
};
use crate::scene::{make_plane, Resolution, SceneFrame};
use crate::signal_model::{phase_from_depth, sensitive_range, wrap_pi, CodingConfig};

pub use container::{FORMAT_VERSION, MAGIC};

/// Minimum number of coarse phase steps.
pub const MIN_SWEEP_LEN: usize = 16;
/// Phase step of a 14-bit phase shifter.
pub const FINE_STEP: f64 = TAU / 16384.0;
/// Fraction of the plateau span an edge sample must depart by.
pub const EDGE_FRACTION: f64 = 0.02;
/// Largest tolerated share of invalid pixels.
pub const MAX_INVALID_FRACTION: f64 = 0.2;

const FINE_SEED_INDEX: u64 = 1 << 32;

/// Raw fractions of every pixel at a sequence of global shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    thetas: Vec<f64>,
    resolution: Resolution,
    /// Frame-major: `psi[k·pixels + p]`.
    psi: Vec<f64>,
    /// `I₁ − I₃`, kept to tell the two rising edges apart.
    denominator: Vec<f32>,
}

impl SweepRecord {
    pub fn new(
        thetas: Vec<f64>,
        resolution: Resolution,
        psi: Vec<f64>,
        denominator: Vec<f32>,
    ) -> Result<Self> {
        let n = resolution.pixels() * thetas.len();
        if psi.len() != n || denominator.len() != n {
            return Err(domain(
                "sweep samples must cover every pixel at every shift",
            ));
        }
        if thetas.windows(2).any(|w| w[1] <= w[0]) || thetas.iter().any(|t| !t.is_finite()) {
            return Err(domain(
                "sweep shifts must be finite and strictly increasing",
            ));
        }
        Ok(Self {
            thetas,
            resolution,
            psi,
            denominator,
        })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// `Ψ` of one pixel across the sweep.
    pub fn pixel_psi(&self, pixel: usize) -> Vec<f64> {
        let n = self.resolution.pixels();
        (0..self.len()).map(|k| self.psi[k * n + pixel]).collect()
    }

    pub fn pixel_denominator(&self, pixel: usize) -> Vec<f64> {
        let n = self.resolution.pixels();
        (0..self.len())
            .map(|k| self.denominator[k * n + pixel] as f64)
            .collect()
    }

    /// Uniformly spaced samples covering exactly one period.
    fn is_full_period(&self) -> bool {
        let n = self.len();
        if n < 2 {
            return false;
        }
        let step = (self.thetas[n - 1] - self.thetas[0]) / (n - 1) as f64;
        (step * n as f64 - TAU).abs() < 1e-9
    }

    fn check_pixel(&self, pixel: usize) -> Result<()> {
        if pixel >= self.resolution.pixels() {
            return Err(domain(format!(
                "pixel {pixel} outside a {}-pixel sweep",
                self.resolution.pixels()
            )));
        }
        Ok(())
    }
}

fn sweep(target: &SceneFrame, acq: &AcquisitionConfig, thetas: Vec<f64>) -> Result<SweepRecord> {
    let frames = thetas
        .par_iter()
        .enumerate()
        .map(|(k, &theta)| {
            let a = acq
                .with_global_shift(theta)
                .with_seed(frame_seed(acq.seed, k as u64));
            let diff = DifferenceFrame::from_taps(&render_taps(target, &a)?)?;
            let psi = RawFractionFrame::from_differences(&diff).psi;
            let den: Vec<f32> = diff.d13.iter().map(|&d| d as f32).collect();
            Ok((psi, den))
        })
        .collect::<Result<Vec<_>>>()?;
    let (psi, den): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    SweepRecord::new(thetas, target.resolution(), psi.concat(), den.concat())
}

/// Renders `Ψ` at `n` equally spaced global shifts in `[0, 2π)`. Frame `k`
/// draws its noise from `frame_seed(acq.seed, k)`.
pub fn coarse_sweep(target: &SceneFrame, acq: &AcquisitionConfig, n: usize) -> Result<SweepRecord> {
    if n < MIN_SWEEP_LEN {
        return Err(domain(format!(
            "coarse sweep needs at least {MIN_SWEEP_LEN} steps, got {n}"
        )));
    }
    let thetas = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    sweep(target, acq, thetas)
}

/// Sweeps `θ_G` from `interval.0` in steps of `step`, covering `interval`
/// with `⌊width/step⌋ + 1` samples.
pub fn fine_sweep(
    target: &SceneFrame,
    acq: &AcquisitionConfig,
    interval: (f64, f64),
    step: f64,
) -> Result<SweepRecord> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(domain(format!("sweep step must be positive, got {step}")));
    }
    let (lo, hi) = interval;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(domain(format!("empty sweep interval [{lo}, {hi}]")));
    }
    let count = ((hi - lo) / step * (1.0 + 1e-12)).floor() as usize + 1;
    let thetas = (0..count).map(|k| lo + k as f64 * step).collect();
    sweep(target, acq, thetas)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Plateau levels of a full sweep: the medians of the samples above and
/// below the overall median. Order-independent.
pub fn plateaus_of(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < MIN_SWEEP_LEN {
        return Err(domain(format!(
            "plateau estimation needs at least {MIN_SWEEP_LEN} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSweep("non-finite raw fraction".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let lo = median_sorted(&s[..n / 2]);
    let hi = median_sorted(&s[n.div_ceil(2)..]);
    let floor = 1e-9 * hi.abs().max(lo.abs()).max(1e-300);
    if !(hi - lo > floor) {
        return Err(Error::DegenerateSweep(format!(
            "plateau span {} below noise floor",
            hi - lo
        )));
    }
    Ok((hi, lo))
}

/// `(plateau_hi, plateau_lo)` of one pixel.
pub fn estimate_plateaus(sweep: &SweepRecord, pixel: usize) -> Result<(f64, f64)> {
    sweep.check_pixel(pixel)?;
    plateaus_of(&sweep.pixel_psi(pixel))
}

/// Midpoint between the plateaus.
pub fn zero_equivalent(plateau_hi: f64, plateau_lo: f64) -> Result<f64> {
    if !(plateau_hi > plateau_lo) {
        return Err(domain(format!(
            "plateau_hi {plateau_hi} must exceed plateau_lo {plateau_lo}"
        )));
    }
    Ok(0.5 * (plateau_hi + plateau_lo))
}

fn moving_median(v: &[f64], cyclic: bool) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut w: Vec<f64> = (-2i64..=2)
                .filter_map(|d| {
                    let j = i as i64 + d;
                    if cyclic {
                        Some(v[j.rem_euclid(n as i64) as usize])
                    } else if (0..n as i64).contains(&j) {
                        Some(v[j as usize])
                    } else {
                        None
                    }
                })
                .collect();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}

/// The `θ_G` interval around the rising edge of `Ψ` whose raw fraction
/// departs from both plateaus by more than `EDGE_FRACTION` of their span.
///
/// Of the two rising edges per period, the one where `I₁ − I₃` is strongly
/// positive is used. Bounds are linearly interpolated; on a full-period
/// sweep they may extend past `[0, 2π)`.
pub fn estimate_sensitive_interval(
    sweep: &SweepRecord,
    pixel: usize,
    plateaus: (f64, f64),
) -> Result<(f64, f64)> {
    sweep.check_pixel(pixel)?;
    let (hi, lo) = plateaus;
    let zero = zero_equivalent(hi, lo)?;
    let n = sweep.len();
    if n < 4 {
        return Err(Error::DegenerateSweep(format!(
            "{n} samples cannot resolve an edge"
        )));
    }
    let cyclic = sweep.is_full_period();
    let psi = moving_median(&sweep.pixel_psi(pixel), cyclic);
    let den = sweep.pixel_denominator(pixel);
    let mut mags: Vec<f64> = den.iter().map(|d| d.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let typical = median_sorted(&mags);
    let step = (sweep.thetas[n - 1] - sweep.thetas[0]) / (n - 1) as f64;

    let at = |i: i64| -> Option<usize> {
        if cyclic {
            Some(i.rem_euclid(n as i64) as usize)
        } else if (0..n as i64).contains(&i) {
            Some(i as usize)
        } else {
            None
        }
    };
    let theta = |i: i64| -> f64 {
        if cyclic {
            sweep.thetas[0] + i as f64 * step
        } else {
            sweep.thetas[i as usize]
        }
    };

    let last = if cyclic { n } else { n - 1 };
    let crossing = (0..last)
        .filter_map(|k| {
            let a = k;
            let b = at(k as i64 + 1)?;
            let strong = den[a] > 0.5 * typical && den[b] > 0.5 * typical;
            (strong && psi[a] < zero && psi[b] >= zero).then(|| (k as i64, den[a].min(den[b])))
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(k, _)| k)
        .ok_or_else(|| {
            Error::DegenerateSweep(format!("no rising edge through {zero} in pixel {pixel}"))
        })?;

    let span = hi - lo;
    let lo_level = lo + EDGE_FRACTION * span;
    let hi_level = hi - EDGE_FRACTION * span;
    let limit = n as i64 / 2;
    let interp = |i: i64, j: i64, level: f64| -> f64 {
        let (pi, pj) = (psi[at(i).unwrap()], psi[at(j).unwrap()]);
        let t = if pj != pi {
            ((level - pi) / (pj - pi)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        theta(i) + t * (theta(j) - theta(i))
    };

    let mut i = crossing;
    let start = loop {
        let idx = at(i)
            .ok_or_else(|| Error::DegenerateSweep("edge runs off the start of the sweep".into()))?;
        if psi[idx] <= lo_level {
            break interp(i, i + 1, lo_level);
        }
        if crossing - i > limit {
            return Err(Error::DegenerateSweep("lower plateau not reached".into()));
        }
        i -= 1;
    };
    let mut j = crossing + 1;
    let end = loop {
        let idx = at(j)
            .ok_or_else(|| Error::DegenerateSweep("edge runs off the end of the sweep".into()))?;
        if psi[idx] >= hi_level {
            break interp(j - 1, j, hi_level);
        }
        if j - crossing > limit {
            return Err(Error::DegenerateSweep("upper plateau not reached".into()));
        }
        j += 1;
    };
    if !(end > start) {
        return Err(Error::DegenerateSweep("empty sensitive interval".into()));
    }
    Ok((start, end))
}

/// Calibration of one pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelCalibration {
    pub plateau_hi: f64,
    pub plateau_lo: f64,
    pub zero_equiv: f64,
    /// Global shift at which the response crosses `zero_equiv`.
    pub zero_phase: f64,
    pub sensitive_interval: (f64, f64),
    pub response: MonotoneResponse,
}

/// Knobs of [`build_calibration`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub resolution: Resolution,
    pub coarse_steps: usize,
    pub fine_step: f64,
    pub smoothing: Smoothing,
    pub albedo: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            resolution: Resolution::default(),
            coarse_steps: 512,
            fine_step: FINE_STEP,
            smoothing: Smoothing::Gcv,
            albedo: 1.0,
        }
    }
}

/// Per-pixel calibrations, the phase mask and their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    coding: CodingConfig,
    resolution: Resolution,
    reference_depth: f64,
    reference_phase: f64,
    pixels: Vec<Option<PixelCalibration>>,
    mask: Vec<f64>,
    config_hash: String,
    seed: u64,
}

impl CalibrationTable {
    pub fn coding(&self) -> &CodingConfig {
        &self.coding
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn reference_depth(&self) -> f64 {
        self.reference_depth
    }

    /// Median zero phase over valid pixels.
    pub fn reference_phase(&self) -> f64 {
        self.reference_phase
    }

    pub fn pixels(&self) -> &[Option<PixelCalibration>] {
        &self.pixels
    }

    pub fn pixel(&self, p: usize) -> Option<&PixelCalibration> {
        self.pixels.get(p).and_then(Option::as_ref)
    }

    /// Per-pixel `zero_phase − reference_phase`; NaN for invalid pixels.
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Errors unless `coding` uses the signals this table was built for.
    pub fn check_compatible(&self, coding: &CodingConfig) -> Result<()> {
        if self.coding.same_signals(coding) {
            Ok(())
        } else {
            Err(Error::Compatibility(format!(
                "table built for {:?}, frames use {:?}",
                self.coding, coding
            )))
        }
    }
}

/// SHA-256 over the signal and sensor settings a calibration depends on.
pub fn config_hash(acq: &AcquisitionConfig) -> String {
    let coding = acq.coding.with_global_shift(0.0);
    let payload = serde_json::json!({
        "coding": coding,
        "exposure": acq.exposure,
        "noise": acq.noise,
        "quantization": acq.quantization,
    });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lower median, so the median pixel's mask entry is exactly zero.
fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

struct CoarseResult {
    plateaus: (f64, f64),
    zero_equiv: f64,
    interval: (f64, f64),
}

fn coarse_pixel(sweep: &SweepRecord, p: usize) -> Result<CoarseResult> {
    let plateaus = estimate_plateaus(sweep, p)?;
    let zero_equiv = zero_equivalent(plateaus.0, plateaus.1)?;
    let interval = estimate_sensitive_interval(sweep, p, plateaus)?;
    Ok(CoarseResult {
        plateaus,
        zero_equiv,
        interval,
    })
}

fn fine_pixel(
    fine: &SweepRecord,
    p: usize,
    coarse: &CoarseResult,
    smoothing: Smoothing,
) -> Result<PixelCalibration> {
    let (lo, hi) = coarse.interval;
    let psi = fine.pixel_psi(p);
    let (xs, ys): (Vec<f64>, Vec<f64>) = fine
        .thetas()
        .iter()
        .zip(&psi)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(t, v)| (*t, *v))
        .unzip();
    let response = fit_monotone_response(&SampledCurve::new(xs, ys)?, smoothing)?;
    let zero_phase = invert_monotone(&response, coarse.zero_equiv)?;
    Ok(PixelCalibration {
        plateau_hi: coarse.plateaus.0,
        plateau_lo: coarse.plateaus.1,
        zero_equiv: coarse.zero_equiv,
        zero_phase,
        sensitive_interval: response.domain(),
        response,
    })
}

/// Runs the full calibration against a homogeneous plane at `target_depth`.
///
/// Pixels whose sweep or fit fails are marked invalid; more than
/// `MAX_INVALID_FRACTION` invalid pixels is an error.
pub fn build_calibration(
    target_depth: f64,
    acq: &AcquisitionConfig,
    settings: &CalibrationSettings,
) -> Result<CalibrationTable> {
    acq.validate()?;
    let coding = acq.coding;
    if coding.k_taps() != 4 {
        return Err(Error::UnsupportedTapCount(coding.k_taps()));
    }
    let target = make_plane(
        target_depth,
        settings.albedo,
        0.0,
        settings.resolution,
        coding.unambiguity_range(),
    )?;
    let n = settings.resolution.pixels();

    let coarse = coarse_sweep(&target, acq, settings.coarse_steps)?;
    let mut stage1: Vec<Option<CoarseResult>> = (0..n)
        .into_par_iter()
        .map(|p| coarse_pixel(&coarse, p).ok())
        .collect();
    drop(coarse);

    // bring every interval onto the same branch as the first valid one
    let anchor = stage1
        .iter()
        .flatten()
        .map(|c| 0.5 * (c.interval.0 + c.interval.1))
        .next();
    let Some(anchor) = anchor else {
        return Err(Error::CalibrationFailure {
            invalid: n,
            total: n,
        });
    };
    for c in stage1.iter_mut().flatten() {
        let mid = 0.5 * (c.interval.0 + c.interval.1);
        let shift = mid - anchor - wrap_pi(mid - anchor);
        c.interval = (c.interval.0 - shift, c.interval.1 - shift);
    }
    let (lo, hi) = stage1
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.interval.0), hi.max(c.interval.1))
        });
    if hi - lo > PI {
        return Err(Error::DegenerateSweep(format!(
            "pixel edges spread over {} rad",
            hi - lo
        )));
    }

    let fine_acq = acq.with_seed(frame_seed(acq.seed, FINE_SEED_INDEX));
    let fine = fine_sweep(&target, &fine_acq, (lo, hi), settings.fine_step)?;
    let pixels: Vec<Option<PixelCalibration>> = (0..n)
        .into_par_iter()
        .map(|p| {
            stage1[p]
                .as_ref()
                .and_then(|c| fine_pixel(&fine, p, c, settings.smoothing).ok())
        })
        .collect();

    let mut zeros: Vec<f64> = pixels.iter().flatten().map(|c| c.zero_phase).collect();
    let invalid = n - zeros.len();
    if zeros.is_empty() || invalid as f64 > MAX_INVALID_FRACTION * n as f64 {
        return Err(Error::CalibrationFailure { invalid, total: n });
    }
    let reference_phase = lower_median(&mut zeros);
    let mask = pixels
        .iter()
        .map(|c| {
            c.as_ref()
                .map_or(f64::NAN, |c| c.zero_phase - reference_phase)
        })
        .collect();
    Ok(CalibrationTable {
        coding: coding.with_global_shift(0.0),
        resolution: settings.resolution,
        reference_depth: target_depth,
        reference_phase,
        pixels,
        mask,
        config_hash: config_hash(acq),
        seed: acq.seed,
    })
}

/// Offset of a measured raw fraction from the table's reference phase, in
/// radians of `θ_G`. Positive offsets mean the target is farther than the
/// calibration plane.
pub fn measure_offset(psi: f64, pixel: usize, table: &CalibrationTable) -> Result<f64> {
    let cal = table
        .pixel(pixel)
        .ok_or_else(|| domain(format!("pixel {pixel} has no valid calibration")))?;
    let theta = invert_monotone(&cal.response, psi)?;
    Ok((cal.zero_phase - theta) - table.mask[pixel])
}

/// Errors unless the calibration plane lies inside the sensitive range
/// around the depth of interest.
pub fn check_reference_in_range(reference: f64, doi: f64, coding: &CodingConfig) -> Result<()> {
    let (dphi, _) = sensitive_range(coding);
    let gap = wrap_pi(phase_from_depth(reference, coding)? - phase_from_depth(doi, coding)?);
    if gap.abs() > 0.5 * dphi {
        return Err(Error::ReferenceOutOfRange {
            reference,
            distance: crate::signal_model::depth_from_phase(gap.abs(), coding),
            half_range: crate::signal_model::depth_from_phase(0.5 * dphi, coding),
        });
    }
    Ok(())
}
