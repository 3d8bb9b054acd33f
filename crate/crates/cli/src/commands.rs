//! The five subcommands. Each writes its outputs and a manifest into the
//! configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use pctof_core::acquisition::{frame_seed, render_taps};
use pctof_core::analysis::{compare_modes, CompareSettings};
use pctof_core::calibration::{
    build_calibration, check_reference_in_range, CalibrationSettings, CalibrationTable,
};
use pctof_core::io::{export_taps, plane_to_csv, write_depth_map};
use pctof_core::reconstruction::{depth_slice, pctof_depth, sinusoid_depth, DepthMap, DepthMode};
use pctof_core::scene::{make_plane, SceneFrame};
use pctof_core::signal_model::{doi_to_global_shift, sensitive_range, CodingConfig};

use crate::config::RunConfig;

const SINUSOID_FRAME: u64 = 1;
const PULSED_FRAME: u64 = 2;
const RAIL_FRAMES: u64 = 16;

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Records everything needed to rerun the command.
fn write_manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "tool": "pctof",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
        "config": cfg.to_toml(),
        "outputs": extra,
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    write(
        cfg.output_dir.join(format!("manifest-{command}.json")),
        text + "\n",
    )
}

fn scene(cfg: &RunConfig, coding: &CodingConfig) -> Result<SceneFrame> {
    Ok(cfg.preset()?.build(
        cfg.scene.base_depth_m,
        cfg.resolution(),
        coding.unambiguity_range(),
    )?)
}

fn pulsed_at(cfg: &RunConfig, doi: f64) -> Result<CodingConfig> {
    let c = cfg.pulsed()?;
    Ok(c.with_global_shift(doi_to_global_shift(doi, &c)?))
}

fn settings(cfg: &RunConfig) -> CalibrationSettings {
    CalibrationSettings {
        resolution: cfg.resolution(),
        coarse_steps: cfg.calibration.coarse_steps,
        fine_step: std::f64::consts::TAU / f64::from(1u32 << cfg.calibration.fine_bits),
        ..CalibrationSettings::default()
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let pulsed = cfg.pulsed()?;
    let truth = scene(cfg, &pulsed)?;
    let doi = cfg.doi().unwrap_or(cfg.scene.base_depth_m);
    write(
        dir.join("truth.csv"),
        plane_to_csv(truth.depth(), truth.resolution())?,
    )?;
    let sin = cfg.acquisition(cfg.sinusoid()?, frame_seed(cfg.seed, SINUSOID_FRAME))?;
    export_taps(&render_taps(&truth, &sin)?, &dir.join("taps-sinusoid"))?;
    let pc = cfg.acquisition(pulsed_at(cfg, doi)?, frame_seed(cfg.seed, PULSED_FRAME))?;
    export_taps(&render_taps(&truth, &pc)?, &dir.join("taps-pctof"))?;
    write_manifest(
        cfg,
        "simulate",
        json!({ "truth": "truth.csv", "taps": ["taps-sinusoid", "taps-pctof"], "doi_m": doi }),
    )?;
    println!(
        "simulated {} at {} m into {}",
        cfg.scene.preset,
        cfg.scene.base_depth_m,
        dir.display()
    );
    Ok(())
}

fn histogram(values: &[f64], bins: usize) -> String {
    let mut s = String::from("bin_lo_rad,bin_hi_rad,count\n");
    if values.is_empty() {
        return s;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{c}",
            lo + i as f64 * width,
            lo + (i + 1) as f64 * width
        );
    }
    s
}

pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let coding = cfg.pulsed()?;
    let reference = cfg.calibration.reference_depth_m;
    if let Some(doi) = cfg.doi() {
        check_reference_in_range(reference, doi, &coding)?;
    }
    let acq = cfg.acquisition(coding, cfg.seed)?;
    let table = build_calibration(reference, &acq, &settings(cfg))?;
    table.save(dir.join("calibration.bin"))?;

    let width = table.resolution().width;
    let mut per_pixel =
        String::from("row,col,valid,zero_phase_rad,mask_rad,interval_lo_rad,interval_hi_rad\n");
    for (p, cal) in table.pixels().iter().enumerate() {
        let (r, c) = (p / width, p % width);
        match cal {
            Some(cal) => {
                let _ = writeln!(
                    per_pixel,
                    "{r},{c},1,{},{},{},{}",
                    cal.zero_phase,
                    table.mask()[p],
                    cal.sensitive_interval.0,
                    cal.sensitive_interval.1
                );
            }
            None => {
                let _ = writeln!(per_pixel, "{r},{c},0,NaN,NaN,NaN,NaN");
            }
        }
    }
    write(dir.join("calibration_pixels.csv"), per_pixel)?;
    let zeros: Vec<f64> = table
        .pixels()
        .iter()
        .flatten()
        .map(|c| c.zero_phase)
        .collect();
    write(dir.join("zero_phase_histogram.csv"), histogram(&zeros, 32))?;
    let widths: Vec<f64> = table
        .pixels()
        .iter()
        .flatten()
        .map(|c| c.sensitive_interval.1 - c.sensitive_interval.0)
        .collect();
    let mean_width = widths.iter().sum::<f64>() / widths.len() as f64;
    let valid = table.valid_count() as f64 / table.resolution().pixels() as f64;
    write_manifest(
        cfg,
        "calibrate",
        json!({
            "table": "calibration.bin",
            "table_config_hash": table.config_hash(),
            "valid_fraction": valid,
            "mean_interval_width_rad": mean_width,
        }),
    )?;
    println!(
        "calibrated {} pixels: {:.2}% valid, mean sensitive interval {:.4} rad",
        table.resolution().pixels(),
        100.0 * valid,
        mean_width
    );
    Ok(())
}

fn load_table(cfg: &RunConfig, path: Option<&Path>) -> Result<CalibrationTable> {
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("calibration.bin"));
    CalibrationTable::load(&path).with_context(|| format!("loading calibration {}", path.display()))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn slice_csv(coarse: &DepthMap, fine: &DepthMap, truth: &SceneFrame) -> Result<String> {
    let res = truth.resolution();
    let row = res.height / 2;
    let hw = row.min(res.height - 1 - row).min(2);
    let a = depth_slice(coarse, row, hw)?;
    let b = depth_slice(fine, row, hw)?;
    let mut s = String::from("col,truth_m,sinusoid_m,pctof_m\n");
    let fmt = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
    for c in 0..res.width {
        let _ = writeln!(
            s,
            "{c},{},{},{}",
            truth.depth_at(row, c),
            fmt(a[c]),
            fmt(b[c])
        );
    }
    Ok(s)
}

pub fn measure(cfg: &RunConfig, calibration: Option<&Path>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let table = load_table(cfg, calibration)?;
    let pulsed = cfg.pulsed()?;
    table.check_compatible(&pulsed)?;
    let truth = scene(cfg, &pulsed)?;

    let sin = cfg.acquisition(cfg.sinusoid()?, frame_seed(cfg.seed, SINUSOID_FRAME))?;
    let coarse = sinusoid_depth(&render_taps(&truth, &sin)?)?;
    let doi = match cfg.doi() {
        Some(d) => d,
        None => median(
            coarse
                .depth()
                .iter()
                .zip(coarse.valid())
                .filter(|(_, v)| **v)
                .map(|(d, _)| *d)
                .collect(),
        )
        .context("the coarse estimate has no valid pixels to pick a depth of interest from")?,
    };
    let pc = cfg.acquisition(pulsed_at(cfg, doi)?, frame_seed(cfg.seed, PULSED_FRAME))?;
    let fine = pctof_depth(&render_taps(&truth, &pc)?, &table, doi)?;

    write_depth_map(&coarse, dir, "depth-sinusoid")?;
    write_depth_map(&fine, dir, "depth-pctof")?;
    let diff: Vec<f64> = fine
        .depth()
        .iter()
        .zip(coarse.depth())
        .map(|(a, b)| a - b)
        .collect();
    write(
        dir.join("depth-difference.csv"),
        plane_to_csv(&diff, truth.resolution())?,
    )?;
    write(dir.join("slice.csv"), slice_csv(&coarse, &fine, &truth)?)?;
    write_manifest(
        cfg,
        "measure",
        json!({
            "doi_m": doi,
            "maps": ["depth-sinusoid", "depth-pctof", "depth-difference.csv", "slice.csv"],
            "pctof_valid_fraction": fine.valid_fraction(),
        }),
    )?;
    println!(
        "depth of interest {doi:.4} m; pulsed map {:.1}% valid",
        100.0 * fine.valid_fraction()
    );
    Ok(())
}

/// Per-offset outcome of the rail sweep.
pub struct RailRow {
    pub offset: f64,
    pub truth: f64,
    pub mean: f64,
    pub valid_fraction: f64,
    pub flagged: bool,
}

/// Reconstructs a plane at `doi + offset` for every rail offset and
/// averages the valid pixels.
pub fn rail_validation(
    cfg: &RunConfig,
    table: &CalibrationTable,
    doi: f64,
) -> Result<Vec<RailRow>> {
    let coding = pulsed_at(cfg, doi)?;
    let half = 0.5 * sensitive_range(&coding).1;
    let n = cfg.validation.offsets;
    let span = cfg.validation.half_span_m;
    (0..n)
        .map(|k| {
            let offset = if n == 1 {
                0.0
            } else {
                -span + 2.0 * span * k as f64 / (n - 1) as f64
            };
            let truth = doi + offset;
            let plane = make_plane(
                truth,
                1.0,
                0.0,
                cfg.resolution(),
                coding.unambiguity_range(),
            )?;
            let acq = cfg.acquisition(coding, frame_seed(cfg.seed, RAIL_FRAMES + k as u64))?;
            let map = pctof_depth(&render_taps(&plane, &acq)?, table, doi)?;
            let valid: Vec<f64> = map
                .depth()
                .iter()
                .zip(map.valid())
                .filter(|(_, v)| **v)
                .map(|(d, _)| *d)
                .collect();
            let valid_fraction = valid.len() as f64 / map.valid().len() as f64;
            let mean = if valid.is_empty() {
                f64::NAN
            } else {
                valid.iter().sum::<f64>() / valid.len() as f64
            };
            Ok(RailRow {
                offset,
                truth,
                mean,
                valid_fraction,
                flagged: offset.abs() > half || valid_fraction < 0.5,
            })
        })
        .collect()
}

/// RMS of per-offset mean errors over unflagged rows.
pub fn rail_rms(rows: &[RailRow]) -> Option<f64> {
    let used: Vec<f64> = rows
        .iter()
        .filter(|r| !r.flagged)
        .map(|r| r.mean - r.truth)
        .collect();
    (!used.is_empty()).then(|| (used.iter().map(|e| e * e).sum::<f64>() / used.len() as f64).sqrt())
}

pub fn validate(cfg: &RunConfig, calibration: Option<&Path>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let table = load_table(cfg, calibration)?;
    table.check_compatible(&cfg.pulsed()?)?;
    let doi = cfg.doi().unwrap_or(table.reference_depth());
    let rows = rail_validation(cfg, &table, doi)?;
    let mut csv = String::from("offset_m,truth_m,mean_depth_m,error_m,valid_fraction,flagged\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.offset,
            r.truth,
            r.mean,
            r.mean - r.truth,
            r.valid_fraction,
            u8::from(r.flagged)
        );
    }
    write(dir.join("validation.csv"), csv)?;
    let rms = rail_rms(&rows);
    let flagged = rows.iter().filter(|r| r.flagged).count();
    let report = format!(
        "offsets: {}\nflagged (excluded): {flagged}\nrms_m: {}\n",
        rows.len(),
        rms.map_or("NaN".into(), |v| v.to_string())
    );
    write(dir.join("validation.txt"), &report)?;
    write_manifest(
        cfg,
        "validate",
        json!({ "doi_m": doi, "rms_m": rms, "flagged": flagged }),
    )?;
    match rms {
        Some(v) => println!(
            "rail validation: RMS {:.4} mm over {} offsets ({flagged} flagged)",
            1e3 * v,
            rows.len() - flagged
        ),
        None => println!("rail validation: every offset flagged"),
    }
    Ok(())
}

pub fn compare(cfg: &RunConfig, calibration: Option<&Path>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let pulsed = cfg.pulsed()?;
    let truth = scene(cfg, &pulsed)?;
    let doi = cfg.doi().unwrap_or(cfg.scene.base_depth_m);
    let table = match calibration {
        Some(p) => Some(std::sync::Arc::new(load_table(cfg, Some(p))?)),
        None => None,
    };
    let settings = CompareSettings {
        pulsed,
        sinusoid: cfg.sinusoid()?,
        exposure: cfg.acquisition.exposure_s,
        doi,
        trials: cfg.compare.trials,
        seed: cfg.seed,
        table,
        grid_n: cfg.compare.grid_n,
    };
    let report = compare_modes(
        &truth,
        &cfg.compare.noise_levels,
        &[DepthMode::Sinusoid, DepthMode::Pctof],
        &settings,
    )?;
    write(dir.join("compare.csv"), report.to_csv())?;
    write(dir.join("compare.txt"), report.to_text())?;
    write(
        dir.join("sensitivity_profile.csv"),
        report.precision.profile_csv(),
    )?;
    write_manifest(
        cfg,
        "compare",
        json!({ "doi_m": doi, "files": ["compare.csv", "compare.txt", "sensitivity_profile.csv"] }),
    )?;
    print!("{}", report.to_text());
    Ok(())
}
