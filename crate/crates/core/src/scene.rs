//! Synthetic ground-truth scenes authored directly as per-pixel maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(domain(format!("resolution {width}x{height} is empty")));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
        }
    }
}

/// Per-pixel depth `Γ(p)` in meters, modulated irradiance scale `E_c(p)` and
/// ambient irradiance `E_a(p)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    resolution: Resolution,
    depth: Vec<f64>,
    albedo: Vec<f64>,
    ambient: Vec<f64>,
    max_depth: f64,
}

impl SceneFrame {
    /// Builds a frame; every depth must lie in `[0, max_depth)`, where
    /// `max_depth` is the unambiguity range of the coding it will be imaged with.
    pub fn new(
        resolution: Resolution,
        depth: Vec<f64>,
        albedo: Vec<f64>,
        ambient: Vec<f64>,
        max_depth: f64,
    ) -> Result<Self> {
        let n = resolution.pixels();
        if depth.len() != n || albedo.len() != n || ambient.len() != n {
            return Err(domain(format!(
                "maps must have {n} pixels (got depth {}, albedo {}, ambient {})",
                depth.len(),
                albedo.len(),
                ambient.len()
            )));
        }
        if !(max_depth > 0.0) {
            return Err(domain("unambiguity range must be positive"));
        }
        if let Some(d) = depth.iter().find(|d| !(**d >= 0.0 && **d < max_depth)) {
            return Err(domain(format!("depth {d} m outside [0, {max_depth})")));
        }
        if albedo.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(domain("albedo must be finite and ≥ 0"));
        }
        if ambient.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(domain("ambient must be finite and ≥ 0"));
        }
        Ok(Self {
            resolution,
            depth,
            albedo,
            ambient,
            max_depth,
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.resolution.width
    }

    pub fn height(&self) -> usize {
        self.resolution.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn albedo(&self) -> &[f64] {
        &self.albedo
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    pub fn max_depth(&self) -> f64 {
        self.max_depth
    }

    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.resolution.width + col]
    }

    pub fn with_albedo(self, albedo: Vec<f64>) -> Result<Self> {
        Self::new(
            self.resolution,
            self.depth,
            albedo,
            self.ambient,
            self.max_depth,
        )
    }

    pub fn with_ambient(self, ambient: Vec<f64>) -> Result<Self> {
        Self::new(
            self.resolution,
            self.depth,
            self.albedo,
            ambient,
            self.max_depth,
        )
    }

    pub fn with_depth(self, depth: Vec<f64>) -> Result<Self> {
        Self::new(
            self.resolution,
            depth,
            self.albedo,
            self.ambient,
            self.max_depth,
        )
    }
}

fn from_depth(resolution: Resolution, depth: Vec<f64>, max_depth: f64) -> Result<SceneFrame> {
    let n = resolution.pixels();
    SceneFrame::new(resolution, depth, vec![1.0; n], vec![0.0; n], max_depth)
}

/// Homogeneous plane.
pub fn make_plane(
    depth: f64,
    albedo: f64,
    ambient: f64,
    resolution: Resolution,
    max_depth: f64,
) -> Result<SceneFrame> {
    let n = resolution.pixels();
    SceneFrame::new(
        resolution,
        vec![depth; n],
        vec![albedo; n],
        vec![ambient; n],
        max_depth,
    )
}

/// Staircase along the horizontal axis: step `k` (0-based) covers columns
/// `[k·w, (k+1)·w)` at `base + k·step_height`; columns past the last step
/// form a landing at `base + n·step_height`.
pub fn make_stairs(
    base_depth: f64,
    step_height: f64,
    n_steps: usize,
    step_width_px: usize,
    resolution: Resolution,
    max_depth: f64,
) -> Result<SceneFrame> {
    if !(step_height > 0.0) {
        return Err(domain(format!(
            "step height must be positive, got {step_height}"
        )));
    }
    if n_steps > 0 && step_width_px == 0 {
        return Err(domain("step width must be at least one pixel"));
    }
    if n_steps * step_width_px > resolution.width {
        return Err(domain(format!(
            "{n_steps} steps of {step_width_px} px overflow width {}",
            resolution.width
        )));
    }
    let column_depth = |col: usize| {
        let k = col
            .checked_div(step_width_px)
            .map_or(n_steps, |k| k.min(n_steps));
        base_depth + k as f64 * step_height
    };
    let depth = (0..resolution.height)
        .flat_map(|_| (0..resolution.width).map(column_depth))
        .collect();
    from_depth(resolution, depth, max_depth)
}

/// Linear ramp from `base` at column 0 to `base + rise` at column
/// `run_px − 1`, flat afterwards.
pub fn make_ramp(
    base_depth: f64,
    rise: f64,
    run_px: usize,
    resolution: Resolution,
    max_depth: f64,
) -> Result<SceneFrame> {
    if run_px == 0 {
        return Err(domain("ramp run must be at least one pixel"));
    }
    let column_depth = |col: usize| {
        let t = if run_px == 1 {
            1.0
        } else {
            col.min(run_px - 1) as f64 / (run_px - 1) as f64
        };
        base_depth + rise * t
    };
    let depth = (0..resolution.height)
        .flat_map(|_| (0..resolution.width).map(column_depth))
        .collect();
    from_depth(resolution, depth, max_depth)
}

/// Adds `offset` meters to every depth, as when the light path is
/// lengthened on the rail.
pub fn translate_depth(scene: &SceneFrame, offset: f64) -> Result<SceneFrame> {
    let depth = scene.depth.iter().map(|d| d + offset).collect();
    SceneFrame::new(
        scene.resolution,
        depth,
        scene.albedo.clone(),
        scene.ambient.clone(),
        scene.max_depth,
    )
}

/// Named targets used by the command-line workflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScenePreset {
    Plane,
    /// Staircase with the given step height in meters.
    Stairs(f64),
    /// Two ramps of equal rise, the lower half twice as long as the upper.
    Ramps,
}

impl ScenePreset {
    pub const STAIR_HEIGHTS_MM: [f64; 5] = [1.0, 1.5, 2.0, 3.0, 5.0];
    pub const RAMP_RISE: f64 = 0.01;

    pub fn build(
        &self,
        base_depth: f64,
        resolution: Resolution,
        max_depth: f64,
    ) -> Result<SceneFrame> {
        match *self {
            Self::Plane => make_plane(base_depth, 1.0, 0.0, resolution, max_depth),
            Self::Stairs(h) => {
                let n_steps = 4;
                let width = resolution.width / (n_steps + 1);
                if width == 0 {
                    make_plane(base_depth, 1.0, 0.0, resolution, max_depth)
                } else {
                    make_stairs(base_depth, h, n_steps, width, resolution, max_depth)
                }
            }
            Self::Ramps => {
                let w = resolution.width;
                let top = make_ramp(
                    base_depth,
                    Self::RAMP_RISE,
                    (w / 4).max(1),
                    resolution,
                    max_depth,
                )?;
                let bottom = make_ramp(
                    base_depth,
                    Self::RAMP_RISE,
                    (w / 2).max(1),
                    resolution,
                    max_depth,
                )?;
                let split = resolution.height / 2;
                let depth = top.depth[..split * w]
                    .iter()
                    .chain(&bottom.depth[split * w..])
                    .copied()
                    .collect();
                from_depth(resolution, depth, max_depth)
            }
        }
    }
}

impl fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Plane => write!(f, "plane"),
            Self::Stairs(h) => write!(f, "stairs-{}mm", h * 1e3),
            Self::Ramps => write!(f, "ramps"),
        }
    }
}

impl FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::Plane),
            "ramps" => Ok(Self::Ramps),
            _ => {
                let mm = s
                    .strip_prefix("stairs-")
                    .and_then(|r| r.strip_suffix("mm"))
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| Self::STAIR_HEIGHTS_MM.contains(v));
                mm.map(|v| Self::Stairs(v * 1e-3)).ok_or_else(|| {
                    domain(format!(
                        "unknown scene preset '{s}' (expected plane, ramps, or stairs-{{1,1.5,2,3,5}}mm)"
                    ))
                })
            }
        }
    }
}
