//! Depth maps from tap frames: the four-quadrant arctangent for sinusoidal
//! coding and calibration-table inversion around a depth of interest for
//! pulsed coding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{DifferenceFrame, TapFrame};
use crate::calibration::{measure_offset, CalibrationTable};
use crate::error::{domain, Error, Result};
use crate::scene::{Resolution, SceneFrame};
use crate::signal_model::{
    depth_from_phase, doi_to_global_shift, phase_from_depth, wrap_pi, wrap_tau,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    Sinusoid,
    Pctof,
}

impl std::fmt::Display for DepthMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sinusoid => "sinusoid",
            Self::Pctof => "pctof",
        })
    }
}

/// Per-pixel depth in meters with validity flags. Invalid pixels hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    resolution: Resolution,
    depth: Vec<f64>,
    valid: Vec<bool>,
    mode: DepthMode,
}

impl DepthMap {
    pub fn new(
        resolution: Resolution,
        depth: Vec<f64>,
        valid: Vec<bool>,
        mode: DepthMode,
    ) -> Result<Self> {
        if depth.len() != resolution.pixels() || valid.len() != resolution.pixels() {
            return Err(domain("depth map planes must match the resolution"));
        }
        if depth
            .iter()
            .zip(&valid)
            .any(|(d, v)| *v && !(d.is_finite() && *d >= 0.0))
        {
            return Err(domain("valid depths must be finite and ≥ 0"));
        }
        let depth = depth
            .into_iter()
            .zip(&valid)
            .map(|(d, v)| if *v { d } else { f64::NAN })
            .collect();
        Ok(Self {
            resolution,
            depth,
            valid,
            mode,
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn mode(&self) -> DepthMode {
        self.mode
    }

    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.resolution.width + col;
        self.valid[i].then(|| self.depth[i])
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len() as f64
    }

    /// Same map with every valid depth shifted by `offset` meters.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut m = self.clone();
        for (d, v) in m.depth.iter_mut().zip(&m.valid) {
            if *v {
                *d += offset;
            }
        }
        m
    }
}

/// Four-quadrant arctangent depth of a sinusoidally coded frame.
pub fn sinusoid_depth(taps: &TapFrame) -> Result<DepthMap> {
    arctangent_depth(taps, false)
}

/// The arctangent reconstruction. With `allow_non_sinusoidal` it also runs
/// on other codings, where it carries a depth-dependent systematic error.
pub fn arctangent_depth(taps: &TapFrame, allow_non_sinusoidal: bool) -> Result<DepthMap> {
    let coding = taps.acquisition().coding;
    if !coding.is_sinusoidal() && !allow_non_sinusoidal {
        return Err(Error::UnsupportedCoding(
            "the arctangent reconstruction is exact only for sinusoidal modulation".into(),
        ));
    }
    let diff = DifferenceFrame::from_taps(taps)?;
    let theta_g = coding.theta_g();
    let (depth, valid) = diff
        .d02
        .par_iter()
        .zip(&diff.d13)
        .map(|(&x, &y)| {
            if x.abs() <= diff.epsilon && y.abs() <= diff.epsilon {
                return (f64::NAN, false);
            }
            let phase = wrap_tau(y.atan2(x) + theta_g);
            (depth_from_phase(phase, &coding), true)
        })
        .unzip();
    DepthMap::new(taps.resolution(), depth, valid, DepthMode::Sinusoid)
}

/// Pulsed reconstruction around `doi`.
///
/// Each pixel's raw fraction is inverted through its calibrated response;
/// the resulting phase offset from the calibration plane is converted to
/// depth. Pixels outside the sensitive range, or on the wrong edge, are
/// flagged invalid.
pub fn pctof_depth(taps: &TapFrame, table: &CalibrationTable, doi: f64) -> Result<DepthMap> {
    let coding = taps.acquisition().coding;
    table.check_compatible(&coding)?;
    if taps.resolution() != table.resolution() {
        return Err(Error::Compatibility(format!(
            "frame is {}x{}, calibration is {}x{}",
            taps.resolution().width,
            taps.resolution().height,
            table.resolution().width,
            table.resolution().height
        )));
    }
    let theta_doi = doi_to_global_shift(doi, &coding)?;
    if wrap_pi(coding.theta_g() - theta_doi).abs() > 1e-9 {
        return Err(Error::Compatibility(format!(
            "frame global shift {} does not select the depth of interest {doi} m (expected {theta_doi})",
            coding.theta_g()
        )));
    }
    let diff = DifferenceFrame::from_taps(taps)?;
    let phi_ref = phase_from_depth(table.reference_depth(), &coding)?;
    let phi_doi = phase_from_depth(doi, &coding)?;
    // phase of the calibration plane relative to the DOI, as seen through
    // the table's reference phase
    let alignment = phi_ref + wrap_pi(theta_doi - table.reference_phase()) - phi_doi;
    let (depth, valid) = (0..diff.d02.len())
        .into_par_iter()
        .map(|p| {
            let den = diff.d13[p];
            if !(den > diff.epsilon) {
                return (f64::NAN, false);
            }
            match measure_offset(diff.d02[p] / den, p, table) {
                Ok(offset) => {
                    let d = doi + depth_from_phase(wrap_pi(offset + alignment), &coding);
                    if d.is_finite() && d >= 0.0 {
                        (d, true)
                    } else {
                        (f64::NAN, false)
                    }
                }
                Err(_) => (f64::NAN, false),
            }
        })
        .unzip();
    DepthMap::new(taps.resolution(), depth, valid, DepthMode::Pctof)
}

/// RMS depth error over valid pixels and the valid-pixel fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rms: f64,
    pub valid_fraction: f64,
}

pub fn rms_error(map: &DepthMap, truth: &SceneFrame) -> Result<ErrorStats> {
    if map.resolution() != truth.resolution() {
        return Err(domain("depth map and ground truth differ in size"));
    }
    let (sum, count) = map
        .depth
        .iter()
        .zip(&map.valid)
        .zip(truth.depth())
        .filter(|((_, v), _)| **v)
        .fold((0.0, 0usize), |(s, c), ((d, _), t)| {
            (s + (d - t) * (d - t), c + 1)
        });
    if count == 0 {
        return Err(Error::EmptyMetric);
    }
    Ok(ErrorStats {
        rms: (sum / count as f64).sqrt(),
        valid_fraction: count as f64 / map.valid.len() as f64,
    })
}

/// Column profile of `row`, averaging the valid depths of rows
/// `row ± half_width`. Columns without valid pixels are `None`.
pub fn depth_slice(map: &DepthMap, row: usize, half_width: usize) -> Result<Vec<Option<f64>>> {
    let Resolution { width, height } = map.resolution;
    if row < half_width || row + half_width >= height {
        return Err(domain(format!(
            "rows {}..={} outside a {height}-row map",
            row as i64 - half_width as i64,
            row + half_width
        )));
    }
    Ok((0..width)
        .map(|c| {
            let (sum, n) = (row - half_width..=row + half_width)
                .filter_map(|r| map.at(r, c))
                .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{render_taps, AcquisitionConfig, NoiseModel};
    use crate::scene::{make_plane, make_stairs};
    use crate::signal_model::{AmplitudeConvention, CodingConfig, DemodulationSpec};

    fn res() -> Resolution {
        Resolution::new(4, 5).unwrap()
    }

    fn sinus() -> CodingConfig {
        CodingConfig::sinusoidal(
            1e7,
            DemodulationSpec::Sinusoid,
            AmplitudeConvention::UnitAveragePower,
        )
        .unwrap()
    }

    fn frame(c: CodingConfig, depth: f64) -> TapFrame {
        let scene = make_plane(depth, 1.0, 0.0, res(), c.unambiguity_range()).unwrap();
        render_taps(
            &scene,
            &AcquisitionConfig::new(c, 1e-3, NoiseModel::none(), 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn quarter_range_plane() {
        let c = sinus();
        let d = c.unambiguity_range() / 4.0;
        let map = sinusoid_depth(&frame(c, d)).unwrap();
        assert!(map.depth().iter().all(|v| (v - d).abs() < 1e-9));
        assert_eq!(map.mode(), DepthMode::Sinusoid);
    }

    #[test]
    fn zero_depth_wraps_to_zero() {
        let c = sinus();
        let map = sinusoid_depth(&frame(c, 0.0)).unwrap();
        let r = c.unambiguity_range();
        assert!(map.depth().iter().all(|v| v.min(r - v) < 1e-9));
    }

    #[test]
    fn full_range_sweep_is_exact_and_increasing() {
        for c in [sinus(), sinus().with_global_shift(2.0)] {
            let r = c.unambiguity_range();
            let mut last = -1.0;
            for k in 0..360 {
                let d = r * (k as f64 + 0.5) / 360.0;
                let got = sinusoid_depth(&frame(c, d)).unwrap().depth()[0];
                assert!((got - d).abs() < 1e-9, "{got} vs {d}");
                assert!(got > last);
                last = got;
            }
        }
    }

    #[test]
    fn pulsed_frames_need_the_demo_flag() {
        let c = CodingConfig::pulsed(1e7, 500e-12, 0.0775, AmplitudeConvention::UnitAveragePower)
            .unwrap();
        let f = frame(c, 1.0);
        assert!(matches!(
            sinusoid_depth(&f),
            Err(Error::UnsupportedCoding(_))
        ));
        assert!(arctangent_depth(&f, true).is_ok());
    }

    #[test]
    fn dark_pixels_are_invalid() {
        let c = sinus();
        let scene = make_plane(1.0, 0.0, 0.5, res(), c.unambiguity_range()).unwrap();
        let taps = render_taps(
            &scene,
            &AcquisitionConfig::new(c, 1e-3, NoiseModel::none(), 1).unwrap(),
        )
        .unwrap();
        let map = sinusoid_depth(&taps).unwrap();
        assert!(map.valid().iter().all(|v| !v));
        assert!(matches!(rms_error(&map, &scene), Err(Error::EmptyMetric)));
    }

    #[test]
    fn rms_examples() {
        let c = sinus();
        let scene = make_plane(2.0, 1.0, 0.0, res(), c.unambiguity_range()).unwrap();
        let exact =
            DepthMap::new(res(), vec![2.0; 20], vec![true; 20], DepthMode::Sinusoid).unwrap();
        assert_eq!(rms_error(&exact, &scene).unwrap().rms, 0.0);
        let biased = DepthMap::new(
            res(),
            vec![2.0 + 1e-3; 20],
            vec![true; 20],
            DepthMode::Sinusoid,
        )
        .unwrap();
        assert!((rms_error(&biased, &scene).unwrap().rms - 1e-3).abs() < 1e-15);
        let mut valid = vec![true; 20];
        valid[3] = false;
        let mut depth = vec![2.0; 20];
        depth[3] = 50.0;
        let partial = DepthMap::new(res(), depth, valid, DepthMode::Sinusoid).unwrap();
        let stats = rms_error(&partial, &scene).unwrap();
        assert_eq!(stats.rms, 0.0);
        assert!((stats.valid_fraction - 0.95).abs() < 1e-15);
    }

    #[test]
    fn slices() {
        let flat = DepthMap::new(res(), vec![1.5; 20], vec![true; 20], DepthMode::Pctof).unwrap();
        assert_eq!(depth_slice(&flat, 2, 2).unwrap(), vec![Some(1.5); 4]);
        assert!(depth_slice(&flat, 1, 2).is_err());
        assert!(depth_slice(&flat, 4, 1).is_err());
        let scene = make_stairs(1.0, 0.002, 3, 1, res(), 10.0).unwrap();
        let map = DepthMap::new(
            res(),
            scene.depth().to_vec(),
            vec![true; 20],
            DepthMode::Pctof,
        )
        .unwrap();
        let row = depth_slice(&map, 3, 0).unwrap();
        assert_eq!(
            row,
            (0..4)
                .map(|c| Some(scene.depth_at(3, c)))
                .collect::<Vec<_>>()
        );
        let prof = depth_slice(&map, 2, 2).unwrap();
        for w in prof.windows(2) {
            assert!((w[1].unwrap() - w[0].unwrap() - 0.002).abs() < 1e-12);
        }
        let mut valid = vec![true; 20];
        for r in 0..5 {
            valid[r * 4 + 1] = false;
        }
        let holes = DepthMap::new(res(), vec![1.0; 20], valid, DepthMode::Pctof).unwrap();
        assert_eq!(depth_slice(&holes, 2, 2).unwrap()[1], None);
    }

    #[test]
    fn rejects_invalid_depths_marked_valid() {
        assert!(DepthMap::new(res(), vec![-1.0; 20], vec![true; 20], DepthMode::Pctof).is_err());
        assert!(
            DepthMap::new(res(), vec![f64::NAN; 20], vec![false; 20], DepthMode::Pctof).is_ok()
        );
    }
}
