//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used as the independent oracle for every closed-form correlation in the
//! crate, so it evaluates the waveforms pointwise and never touches the
//! analytic correlation code.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::signal_model::{DemodulationSpec, ModulationSpec};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Hard cap on the number of panels before giving up.
pub const MAX_PANELS: usize = 1 << 22;

/// Default relative tolerance of the correlation oracle.
pub const ORACLE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    abs_value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half,
        abs_value: abs_k * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]`, starting from `initial_panels` equal panels
/// and bisecting the worst panel until the summed error estimate drops below
/// `rel_tol * |I|` (or below `1e-15 * ∫|f|` for near-zero integrals).
pub fn adaptive_integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    rel_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(Error::Integration(format!("invalid interval [{a}, {b}]")));
    }
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let edges: Vec<f64> = (0..=n0)
        .map(|k| if k == n0 { b } else { a + width * k as f64 })
        .collect();
    refine(&f, &edges, rel_tol)
}

/// Like [`adaptive_integrate`], but the initial panels never straddle the
/// given `breaks`, so kinks and jumps of `f` sit on panel boundaries. Each
/// piece gets about one panel per `scale`.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    scale: f64,
    rel_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(Error::Integration(format!("invalid interval [{a}, {b}]")));
    }
    if !(scale > 0.0) {
        return Err(Error::Integration(format!(
            "panel scale must be positive, got {scale}"
        )));
    }
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| *x > a && *x < b)
        .collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![a];
    for w in cuts.windows(2) {
        let n = ((w[1] - w[0]) / scale).ceil().clamp(1.0, 1e5) as usize;
        let h = (w[1] - w[0]) / n as f64;
        edges.extend((1..n).map(|k| w[0] + h * k as f64));
        edges.push(w[1]);
    }
    refine(&f, &edges, rel_tol)
}

fn refine<F: Fn(f64) -> f64>(f: &F, edges: &[f64], rel_tol: f64) -> Result<f64> {
    let mut heap: BinaryHeap<Panel> = edges.windows(2).map(|w| gk15(f, w[0], w[1])).collect();
    loop {
        let (value, abs_value, error) = heap.iter().fold((0.0, 0.0, 0.0), |acc, p| {
            (acc.0 + p.value, acc.1 + p.abs_value, acc.2 + p.error)
        });
        if !value.is_finite() {
            return Err(Error::Integration(
                "integrand produced a non-finite value".into(),
            ));
        }
        if abs_value == 0.0 || error <= rel_tol * value.abs() || error <= 1e-15 * abs_value {
            return Ok(value);
        }
        if heap.len() >= MAX_PANELS {
            return Err(Error::Integration(format!(
                "no convergence after {} panels (error estimate {error:e}, value {value:e})",
                heap.len()
            )));
        }
        // refine a batch of the worst panels before re-summing
        let batch = (heap.len() / 8).max(1);
        for _ in 0..batch {
            let worst = heap.pop().expect("heap is never empty");
            let mid = 0.5 * (worst.a + worst.b);
            heap.push(gk15(f, worst.a, mid));
            heap.push(gk15(f, mid, worst.b));
        }
    }
}

/// Numerical correlation of one modulation/demodulation pair:
/// `(1/ω) ∫ i(φ − φ_Γ) · s(φ − θ) dφ` over one period.
pub fn quadrature_correlate(
    modulation: &ModulationSpec,
    demodulation: &DemodulationSpec,
    phase_depth: f64,
    tap_shift: f64,
    omega: f64,
) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!(
            "omega must be positive, got {omega}"
        )));
    }
    let scale = modulation
        .feature_width()
        .min(demodulation.feature_width())
        .min(std::f64::consts::FRAC_PI_4);
    let integrand =
        |phi: f64| modulation.eval(phi - phase_depth) * demodulation.eval(phi - tap_shift);
    let lo = phase_depth - PI;
    let hi = phase_depth + PI;
    // gate edges in every period that touches the window, plus the pulse centre
    let mut breaks = vec![phase_depth];
    for n in -2..=2 {
        let base = tap_shift + TAU * f64::from(n);
        breaks.push(base - FRAC_PI_2);
        breaks.push(base + FRAC_PI_2);
    }
    Ok(integrate_with_breaks(integrand, lo, hi, &breaks, scale, ORACLE_REL_TOL)? / omega)
}
