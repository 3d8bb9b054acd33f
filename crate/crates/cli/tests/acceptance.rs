//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pctof_core::acquisition::{
    frame_seed, raw_fraction, render_taps, AcquisitionConfig, NoiseModel, PixelPerturbation,
};
use pctof_core::analysis::{
    compare_modes, depth_precision_measure, noise_for_sinusoid_rms, reconstruct_trial,
    CompareSettings,
};
use pctof_core::calibration::{build_calibration, CalibrationSettings, CalibrationTable};
use pctof_core::numerics::quadrature_correlate;
use pctof_core::reconstruction::{pctof_depth, sinusoid_depth, DepthMode};
use pctof_core::scene::{make_plane, Resolution, SceneFrame, ScenePreset};
use pctof_core::signal_model::{
    closed_form_correlation, correlation_derivative, doi_to_global_shift, AmplitudeConvention,
    CodingConfig, DemodulationSpec, ModulationSpec, SPEED_OF_LIGHT,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const FREQ: f64 = 1e7;
const EXPOSURE: f64 = 1e-3;
const DOI: f64 = 0.5;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn coding(sigma_m: f64, sigma_d: f64, freq: f64, amplitude: AmplitudeConvention) -> CodingConfig {
    CodingConfig::new(
        freq,
        4,
        ModulationSpec::gaussian_pulses(sigma_m, amplitude).unwrap(),
        DemodulationSpec::smoothed_rect(sigma_d).unwrap(),
    )
    .unwrap()
}

/// The default pulsed coding: 500 ps pulses, σ_D = 0.0775 at 10 MHz.
fn pulsed() -> CodingConfig {
    CodingConfig::pulsed(FREQ, 500e-12, 0.0775, AmplitudeConvention::UnitAveragePower).unwrap()
}

fn sinusoid() -> CodingConfig {
    CodingConfig::sinusoidal(
        FREQ,
        DemodulationSpec::smoothed_rect(0.0775).unwrap(),
        AmplitudeConvention::UnitAveragePower,
    )
    .unwrap()
}

fn cal_settings(resolution: Resolution) -> CalibrationSettings {
    CalibrationSettings {
        resolution,
        ..CalibrationSettings::default()
    }
}

fn closed_form_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for sigma in [0.01, 0.05, 0.2] {
        let c = coding(sigma, 0.0, FREQ, AmplitudeConvention::UnitAmplitude);
        for k in 0..1000 {
            let phase = TAU * (k as f64 + 0.5) / 1000.0;
            let fast = closed_form_correlation(phase, 0, &c).unwrap();
            let slow = quadrature_correlate(
                c.modulation(),
                c.demodulation(),
                phase,
                c.tap_shift(0),
                c.omega(),
            )
            .unwrap();
            let rel = (fast - slow).abs() / slow.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(if fast == slow { 0.0 } else { rel });
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs < 10.0,
        format!("max relative error {worst:.3e}, {secs:.2} s"),
    )
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-10 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

fn gradient_correctness() -> Outcome {
    let freq = 1.0 / TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let configs: Vec<CodingConfig> = [(0.02, 0.0775), (0.05, 0.05), (0.1, 0.15)]
        .iter()
        .map(|&(m, d)| coding(m, d, freq, AmplitudeConvention::UnitAmplitude))
        .collect();
    for n in 0..10_000 {
        let c = &configs[n % configs.len()];
        let phase = rng.gen_range(0.0..TAU);
        let tap = rng.gen_range(0..4);
        let fd = (closed_form_correlation(phase + h, tap, c).unwrap()
            - closed_form_correlation(phase - h, tap, c).unwrap())
            / (2.0 * h);
        worst = worst.max((correlation_derivative(phase, tap, c).unwrap() - fd).abs());
    }
    let mut extremum = 0.0f64;
    for c in &configs {
        for tap in 0..4 {
            let t = c.tap_shift(tap);
            let w = 0.5;
            let up = golden_max(
                |x| correlation_derivative(x, tap, c).unwrap(),
                t - FRAC_PI_2 - w,
                t - FRAC_PI_2 + w,
            );
            let down = golden_max(
                |x| -correlation_derivative(x, tap, c).unwrap(),
                t + FRAC_PI_2 - w,
                t + FRAC_PI_2 + w,
            );
            extremum = extremum
                .max((up - (t - FRAC_PI_2)).abs())
                .max((down - (t + FRAC_PI_2)).abs());
        }
    }
    check(
        worst <= 1e-6 && extremum <= 1e-6,
        format!("max |dC - FD| {worst:.3e}, max extremum offset {extremum:.3e} rad"),
    )
}

fn sensitive_range_width() -> Outcome {
    // 1/e² width of the rising edge of tap 0's derivative
    let c = pulsed();
    let s = c.sigma_eff();
    let slope = |x: f64| correlation_derivative(x, 0, &c).unwrap();
    let center = c.tap_shift(0) - FRAC_PI_2;
    let level = slope(center) * (-2.0f64).exp();
    let edge = |mut inside: f64, mut outside: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if slope(mid) >= level {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    let width = edge(center, center + 1.0) - edge(center, center - 1.0);
    let width_err = (width / (4.0 * s) - 1.0).abs();

    // σ_eff for ΔΓ = 0.75 m at 10 MHz, split evenly between pulse and gate
    let omega = TAU * FREQ;
    let target = 0.75 * 2.0 * omega / (4.0 * SPEED_OF_LIGHT);
    let c75 = coding(
        target / 2f64.sqrt(),
        target / 2f64.sqrt(),
        FREQ,
        AmplitudeConvention::UnitAveragePower,
    );
    let acq = AcquisitionConfig::new(c75, EXPOSURE, NoiseModel::none(), 3).unwrap();
    let table =
        build_calibration(DOI, &acq, &cal_settings(Resolution::new(4, 3).unwrap())).unwrap();
    let widths: Vec<f64> = table
        .pixels()
        .iter()
        .flatten()
        .map(|p| (p.sensitive_interval.1 - p.sensitive_interval.0) * SPEED_OF_LIGHT / (2.0 * omega))
        .collect();
    let mean = widths.iter().sum::<f64>() / widths.len() as f64;
    let range_err = (mean / 0.75 - 1.0).abs();
    check(
        width_err <= 0.01 && range_err <= 0.15,
        format!(
            "edge width {width:.6} rad vs 4σ = {:.6} ({:.3}%), calibrated range {mean:.4} m vs 0.75 m ({:.2}%)",
            4.0 * s,
            100.0 * width_err,
            100.0 * range_err
        ),
    )
}

fn sinusoid_exactness() -> Outcome {
    let c = sinusoid();
    let range = c.unambiguity_range();
    let res = Resolution::new(360, 1).unwrap();
    let truth: Vec<f64> = (0..360).map(|k| range * (k as f64 + 0.5) / 360.0).collect();
    let scene = make_plane(1.0, 1.0, 0.0, res, range)
        .unwrap()
        .with_depth(truth.clone())
        .unwrap();
    let acq = AcquisitionConfig::new(c, EXPOSURE, NoiseModel::none(), 1).unwrap();
    let map = sinusoid_depth(&render_taps(&scene, &acq).unwrap()).unwrap();
    let worst = map
        .depth()
        .iter()
        .zip(&truth)
        .map(|(d, t)| (d - t).abs())
        .fold(0.0, f64::max);
    let monotone = map.valid().iter().all(|v| *v) && map.depth().windows(2).all(|w| w[1] > w[0]);
    check(
        worst <= 1e-9 && monotone,
        format!("max error {worst:.3e} m over 360 depths, strictly monotone: {monotone}"),
    )
}

fn rail_rms(c: &CodingConfig, noise: NoiseModel, res: Resolution, seed: u64) -> f64 {
    let acq = AcquisitionConfig::new(*c, EXPOSURE, noise, seed).unwrap();
    let table = build_calibration(DOI, &acq, &cal_settings(res)).unwrap();
    let measure = acq.with_global_shift(doi_to_global_shift(DOI, c).unwrap());
    let sq: f64 = (0..51)
        .map(|k| {
            let truth = DOI - 0.025 + 0.001 * k as f64;
            let plane = make_plane(truth, 1.0, 0.0, res, c.unambiguity_range()).unwrap();
            let frame = render_taps(&plane, &measure.with_seed(frame_seed(seed, 100 + k))).unwrap();
            let map = pctof_depth(&frame, &table, DOI).unwrap();
            let valid: Vec<f64> = map
                .depth()
                .iter()
                .zip(map.valid())
                .filter(|(_, v)| **v)
                .map(|(d, _)| *d)
                .collect();
            let mean = valid.iter().sum::<f64>() / valid.len() as f64;
            (mean - truth).powi(2)
        })
        .sum();
    (sq / 51.0).sqrt()
}

fn rail_validation() -> Outcome {
    let start = Instant::now();
    let c = pulsed();
    let res = Resolution::new(32, 24).unwrap();
    let clean = rail_rms(&c, NoiseModel::none(), res, 11);
    let noisy = rail_rms(&c, NoiseModel::relative(0.01, &c, EXPOSURE), res, 12);
    let secs = start.elapsed().as_secs_f64();
    check(
        clean <= 5e-5 && noisy <= 1e-3 && secs < 60.0,
        format!(
            "noise-free RMS {:.3e} mm, 1% noise RMS {:.4} mm, {secs:.1} s",
            1e3 * clean,
            1e3 * noisy
        ),
    )
}

fn stairs_resolution() -> Outcome {
    let c = pulsed();
    let res = Resolution::new(40, 12).unwrap();
    let scene = ScenePreset::Stairs(0.002)
        .build(DOI, res, c.unambiguity_range())
        .unwrap();
    let probe_table = build_calibration(
        DOI,
        &AcquisitionConfig::new(c, EXPOSURE, NoiseModel::none(), 21).unwrap(),
        &cal_settings(res),
    )
    .unwrap();
    let mut settings = CompareSettings {
        pulsed: c,
        sinusoid: sinusoid(),
        exposure: EXPOSURE,
        doi: DOI,
        trials: 30,
        seed: 22,
        table: Some(Arc::new(probe_table)),
        grid_n: 1024,
    };
    let fraction = noise_for_sinusoid_rms(&scene, &settings, 5e-3, 1.1).unwrap();
    let table: Arc<CalibrationTable> = Arc::new(
        build_calibration(
            DOI,
            &AcquisitionConfig::new(
                c,
                EXPOSURE,
                NoiseModel::relative(fraction, &c, EXPOSURE),
                23,
            )
            .unwrap(),
            &cal_settings(res),
        )
        .unwrap(),
    );
    settings.table = Some(table.clone());
    let sin_rms = compare_modes(&scene, &[fraction], &[DepthMode::Sinusoid], &settings)
        .unwrap()
        .rows[0]
        .rms_doi;

    let sigma = NoiseModel::relative(fraction, &c, EXPOSURE).sigma_read;
    let mut plateaus: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for t in 0..30 {
        let map = reconstruct_trial(
            &scene,
            DepthMode::Pctof,
            sigma,
            frame_seed(settings.seed, t),
            &settings,
            &table,
        )
        .unwrap();
        for ((d, v), truth) in map.depth().iter().zip(map.valid()).zip(scene.depth()) {
            if *v {
                plateaus
                    .entry((truth * 1e6).round() as u64)
                    .or_default()
                    .push(*d);
            }
        }
    }
    let stats: Vec<(f64, f64)> = plateaus
        .values()
        .map(|v| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var.sqrt())
        })
        .collect();
    let steps: Vec<f64> = stats.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let step_ok = stats.len() == 5 && steps.iter().all(|s| (s - 0.002).abs() <= 5e-4);
    let worst_std = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let steps_mm: Vec<String> = steps.iter().map(|s| format!("{:.3}", 1e3 * s)).collect();
    check(
        sin_rms >= 5e-3 && step_ok && worst_std <= 1e-3,
        format!(
            "noise {fraction:.3e} of peak tap, sinusoid RMS {:.2} mm, pulsed steps [{}] mm, max plateau std {:.3} mm",
            1e3 * sin_rms,
            steps_mm.join(", "),
            1e3 * worst_std
        ),
    )
}

fn lower_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

fn calibration_mask() -> Outcome {
    let c = pulsed();
    let res = Resolution::new(16, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let skew: Vec<f64> = (0..res.pixels())
        .map(|_| rng.gen_range(-0.01..=0.01))
        .collect();
    let acq = AcquisitionConfig::new(c, EXPOSURE, NoiseModel::none(), 32)
        .unwrap()
        .with_perturbation(PixelPerturbation::phase_only(skew.clone()));
    let table = build_calibration(DOI, &acq, &cal_settings(res)).unwrap();
    let med = lower_median(&skew);
    let rms = (skew
        .iter()
        .zip(table.mask())
        .map(|(s, m)| (s - med - m).powi(2))
        .sum::<f64>()
        / skew.len() as f64)
        .sqrt();
    let mask_median = lower_median(table.mask());
    check(
        rms <= 1e-3 && mask_median == 0.0,
        format!("mask RMS error {rms:.3e} rad, median(mask) = {mask_median}"),
    )
}

fn precision_scaling() -> Outcome {
    let mut worst_scale = 0.0f64;
    let mut worst_conv = 0.0f64;
    for c in [pulsed(), sinusoid()] {
        let base = depth_precision_measure(&c, 1e4, 1.0, 4096).unwrap();
        for f in [0.5, 2.0, 10.0] {
            let e = depth_precision_measure(&c, 1e4 * f, 1.0, 4096).unwrap();
            let o = depth_precision_measure(&c, 1e4, f, 4096).unwrap();
            worst_scale = worst_scale
                .max((e / (base * f) - 1.0).abs())
                .max((o * f / base - 1.0).abs());
        }
        let fine = depth_precision_measure(&c, 1e4, 1.0, 8192).unwrap();
        worst_conv = worst_conv.max((fine / base - 1.0).abs());
    }
    check(
        worst_scale <= 1e-12 && worst_conv < 1e-6,
        format!("max scaling deviation {worst_scale:.3e}, grid doubling change {worst_conv:.3e}"),
    )
}

fn ambient_albedo_invariance() -> Outcome {
    let c = pulsed();
    let res = Resolution::new(24, 16).unwrap();
    let n = res.pixels();
    let depth: Vec<f64> = (0..n)
        .map(|p| DOI - 0.2 + 0.4 * p as f64 / n as f64)
        .collect();
    let base = make_plane(DOI, 1.0, 0.0, res, c.unambiguity_range())
        .unwrap()
        .with_depth(depth)
        .unwrap();
    let acq = AcquisitionConfig::new(
        c.with_global_shift(doi_to_global_shift(DOI, &c).unwrap()),
        EXPOSURE,
        NoiseModel::none(),
        41,
    )
    .unwrap();
    let psi = |s: &SceneFrame| raw_fraction(&render_taps(s, &acq).unwrap()).unwrap();
    let reference = psi(&base);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ambient = base.clone().with_ambient(vec![0.37; n]).unwrap();
    let albedo = base
        .clone()
        .with_albedo((0..n).map(|_| rng.gen_range(0.05..20.0)).collect())
        .unwrap();
    let mut worst = 0.0f64;
    for frame in [psi(&ambient), psi(&albedo)] {
        for ((a, b), v) in frame.psi.iter().zip(&reference.psi).zip(&reference.valid) {
            if *v {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        if frame.valid != reference.valid {
            return Err("validity changed".into());
        }
    }
    check(worst <= 1e-12, format!("max Ψ deviation {worst:.3e}"))
}

fn run_cli(dir: &Path, config: &Path) -> Result<(), String> {
    for cmd in ["simulate", "calibrate", "measure", "validate", "compare"] {
        let out = Command::new(env!("CARGO_BIN_EXE_pctof"))
            .args([cmd, "--config"])
            .arg(config)
            .arg("--out")
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{cmd} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let key = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    let text = include_str!("../configs/default.toml")
        .replace("width = 160", "width = 20")
        .replace("height = 120", "height = 10")
        .replace("trials = 30", "trials = 3")
        .replace("relative_read = 0.001", "relative_read = 0.005");
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_cli(&a, &config)?;
    run_cli(&b, &config)?;
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    check(
        !fa.is_empty() && fa.len() == fb.len() && differing.is_empty(),
        format!(
            "{} CSV files compared, {} differ {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("closed-form fidelity", closed_form_fidelity),
        ("gradient correctness", gradient_correctness),
        ("sensitive range", sensitive_range_width),
        ("sinusoid exactness", sinusoid_exactness),
        ("rail validation", rail_validation),
        ("stairs resolution", stairs_resolution),
        ("calibration mask", calibration_mask),
        ("precision measure scaling", precision_scaling),
        ("ambient/albedo invariance", ambient_albedo_invariance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
