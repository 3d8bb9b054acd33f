//! Cubic smoothing splines (Reinsch form) and the monotone response curve
//! used as the per-pixel calibration lookup.
//!
//! The fit minimises `Σ (y_i − g(x_i))² + α ∫ g''²` on abscissae rescaled to
//! `[0, 1]`, so `α` is independent of the sweep's phase units. The band
//! solver and the band of the inverse needed for GCV are O(n).

use serde::{Deserialize, Serialize};

use super::isotonic::{isotonic_fit, SampledCurve};
use crate::error::{Error, Result};

/// How the smoothing weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Minimise generalized cross-validation over `α`.
    Gcv,
    /// Use this `α` (0 interpolates).
    Fixed(f64),
}

const MAX_ESCALATIONS: usize = 64;
const ESCALATION_FLOOR: f64 = 1e-10;
const GCV_LOG_RANGE: (f64, f64) = (-14.0, 2.0);

/// Piecewise cubic, non-decreasing map from phase to raw fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneResponse {
    knots: Vec<f64>,
    /// `[c0, c1, c2, c3]` per interval, in powers of `x − knots[i]`.
    coeffs: Vec<[f64; 4]>,
    range: (f64, f64),
}

impl MonotoneResponse {
    /// Rebuilds a response from stored knots and coefficients.
    pub fn from_parts(knots: Vec<f64>, coeffs: Vec<[f64; 4]>) -> Result<Self> {
        if knots.len() < 2 || coeffs.len() + 1 != knots.len() {
            return Err(Error::Domain(format!(
                "{} knots need {} coefficient rows, got {}",
                knots.len(),
                knots.len().saturating_sub(1),
                coeffs.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "response knots must be strictly increasing".into(),
            ));
        }
        let mut r = Self {
            knots,
            coeffs,
            range: (0.0, 0.0),
        };
        let (lo, hi) = r.domain();
        r.range = (r.eval(lo), r.eval(hi));
        Ok(r)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coeffs(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    fn segment(&self, x: f64) -> usize {
        let last = self.coeffs.len() - 1;
        match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => i.min(last),
            Err(0) => 0,
            Err(i) => (i - 1).min(last),
        }
    }

    /// Evaluates the response; outside the domain the end cubics extend.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let t = x - self.knots[i];
        let [c0, c1, c2, c3] = self.coeffs[i];
        c0 + t * (c1 + t * (c2 + t * c3))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let t = x - self.knots[i];
        let [_, c1, c2, c3] = self.coeffs[i];
        c1 + t * (2.0 * c2 + t * 3.0 * c3)
    }

    /// Checks `g' ≥ 0` at every knot and interval midpoint.
    pub fn is_monotone(&self) -> bool {
        let tol = 1e-12 * (self.range.1 - self.range.0).abs().max(f64::MIN_POSITIVE);
        self.coeffs.iter().zip(self.knots.windows(2)).all(|(c, w)| {
            let h = w[1] - w[0];
            let d = |t: f64| c[1] + t * (2.0 * c[2] + t * 3.0 * c[3]);
            d(0.0) >= -tol && d(0.5 * h) >= -tol && d(h) >= -tol
        })
    }
}

/// Natural cubic smoothing spline values and second derivatives at the knots.
struct SplineFit {
    values: Vec<f64>,
    second: Vec<f64>,
}

/// Banded pieces of the Reinsch system on unit-rescaled abscissae.
struct Reinsch {
    // R (tridiagonal)
    r_diag: Vec<f64>,
    r_off: Vec<f64>,
    // QᵀQ (pentadiagonal)
    m_diag: Vec<f64>,
    m_off1: Vec<f64>,
    m_off2: Vec<f64>,
    // Q columns: rows j, j+1, j+2
    q: Vec<[f64; 3]>,
    qty: Vec<f64>,
}

impl Reinsch {
    fn new(u: &[f64], y: &[f64]) -> Self {
        let n = u.len();
        let m = n - 2;
        let h: Vec<f64> = u.windows(2).map(|w| w[1] - w[0]).collect();
        let q: Vec<[f64; 3]> = (0..m)
            .map(|j| [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]])
            .collect();
        let r_diag = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
        let r_off = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();
        let m_diag = q
            .iter()
            .map(|c| c[0] * c[0] + c[1] * c[1] + c[2] * c[2])
            .collect();
        let m_off1 = (0..m.saturating_sub(1))
            .map(|j| q[j][1] * q[j + 1][0] + q[j][2] * q[j + 1][1])
            .collect();
        let m_off2 = (0..m.saturating_sub(2))
            .map(|j| q[j][2] * q[j + 2][0])
            .collect();
        let qty = (0..m)
            .map(|j| q[j][0] * y[j] + q[j][1] * y[j + 1] + q[j][2] * y[j + 2])
            .collect();
        Self {
            r_diag,
            r_off,
            m_diag,
            m_off1,
            m_off2,
            q,
            qty,
        }
    }

    fn m(&self) -> usize {
        self.r_diag.len()
    }

    /// Banded LDLᵀ of `R + α QᵀQ`: returns (d, l1, l2).
    fn factor(&self, alpha: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.m();
        let mut d = vec![0.0; m];
        let mut l1 = vec![0.0; m];
        let mut l2 = vec![0.0; m];
        for i in 0..m {
            let b_ii = self.r_diag[i] + alpha * self.m_diag[i];
            let mut di = b_ii;
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            }
            d[i] = di;
            if i + 1 < m {
                let b = self.r_off[i] + alpha * self.m_off1[i];
                let corr = if i >= 1 {
                    l2[i - 1] * l1[i - 1] * d[i - 1]
                } else {
                    0.0
                };
                l1[i] = (b - corr) / di;
            }
            if i + 2 < m {
                l2[i] = alpha * self.m_off2[i] / di;
            }
        }
        (d, l1, l2)
    }

    fn solve(d: &[f64], l1: &[f64], l2: &[f64], rhs: &[f64]) -> Vec<f64> {
        let m = d.len();
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut v = rhs[i];
            if i >= 1 {
                v -= l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                v -= l2[i - 2] * z[i - 2];
            }
            z[i] = v;
        }
        for i in 0..m {
            z[i] /= d[i];
        }
        for i in (0..m).rev() {
            let mut v = z[i];
            if i + 1 < m {
                v -= l1[i] * z[i + 1];
            }
            if i + 2 < m {
                v -= l2[i] * z[i + 2];
            }
            z[i] = v;
        }
        z
    }

    fn fit(&self, y: &[f64], alpha: f64) -> (SplineFit, f64) {
        let n = y.len();
        let m = self.m();
        let (d, l1, l2) = self.factor(alpha);
        let gamma = Self::solve(&d, &l1, &l2, &self.qty);
        let mut q_gamma = vec![0.0; n];
        for j in 0..m {
            for k in 0..3 {
                q_gamma[j + k] += self.q[j][k] * gamma[j];
            }
        }
        let values: Vec<f64> = y
            .iter()
            .zip(&q_gamma)
            .map(|(yi, qg)| yi - alpha * qg)
            .collect();
        let mut second = vec![0.0; n];
        second[1..n - 1].copy_from_slice(&gamma);
        // GCV score; tr(I − A) = α tr(B⁻¹ QᵀQ) from the band of B⁻¹
        let gcv = if alpha > 0.0 {
            let (s0, s1, s2) = band_inverse(&d, &l1, &l2);
            let mut tr = 0.0;
            for i in 0..m {
                tr += s0[i] * self.m_diag[i];
                if i + 1 < m {
                    tr += 2.0 * s1[i] * self.m_off1[i];
                }
                if i + 2 < m {
                    tr += 2.0 * s2[i] * self.m_off2[i];
                }
            }
            let tr_resid = alpha * tr;
            let rss: f64 = q_gamma.iter().map(|v| (alpha * v).powi(2)).sum();
            n as f64 * rss / (tr_resid * tr_resid)
        } else {
            f64::INFINITY
        };
        (SplineFit { values, second }, gcv)
    }
}

/// Diagonal and first two super-diagonals of `(L D Lᵀ)⁻¹`.
fn band_inverse(d: &[f64], l1: &[f64], l2: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = d.len();
    let mut s0 = vec![0.0; m];
    let mut s1 = vec![0.0; m];
    let mut s2 = vec![0.0; m];
    for i in (0..m).rev() {
        let s_i1_i1 = if i + 1 < m { s0[i + 1] } else { 0.0 };
        let s_i1_i2 = if i + 2 < m { s1[i + 1] } else { 0.0 };
        let s_i2_i2 = if i + 2 < m { s0[i + 2] } else { 0.0 };
        if i + 2 < m {
            s2[i] = -l1[i] * s_i1_i2 - l2[i] * s_i2_i2;
        }
        if i + 1 < m {
            s1[i] = -l1[i] * s_i1_i1 - l2[i] * s_i1_i2;
        }
        s0[i] = 1.0 / d[i] - l1[i] * s1[i] - l2[i] * s2[i];
    }
    (s0, s1, s2)
}

fn gcv_alpha(sys: &Reinsch, y: &[f64]) -> f64 {
    let score = |log_a: f64| {
        let s = sys.fit(y, 10f64.powf(log_a)).1;
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    };
    let (lo, hi) = GCV_LOG_RANGE;
    let steps = 16;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| lo + (hi - lo) * k as f64 / steps as f64)
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(steps)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc, mut fe) = (score(c), score(e));
    for _ in 0..12 {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = score(e);
        }
    }
    let refined = if fc <= fe { c } else { e };
    let log_a = if score(refined) <= scores[best] {
        refined
    } else {
        grid[best]
    };
    10f64.powf(log_a)
}

fn to_response(xs: &[f64], fit: &SplineFit, scale: f64) -> Result<MonotoneResponse> {
    let inv_s2 = 1.0 / (scale * scale);
    let coeffs = xs
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let h = w[1] - w[0];
            let (g0, g1) = (fit.values[i], fit.values[i + 1]);
            let (k0, k1) = (fit.second[i] * inv_s2, fit.second[i + 1] * inv_s2);
            [
                g0,
                (g1 - g0) / h - h * (2.0 * k0 + k1) / 6.0,
                0.5 * k0,
                (k1 - k0) / (6.0 * h),
            ]
        })
        .collect();
    MonotoneResponse::from_parts(xs.to_vec(), coeffs)
}

/// Isotonic pre-pass followed by a cubic smoothing spline, escalating the
/// smoothing weight (doubling, at most 64 times) until the result is
/// non-decreasing at all knots and midpoints.
pub fn fit_monotone_response(
    curve: &SampledCurve,
    smoothing: Smoothing,
) -> Result<MonotoneResponse> {
    let iso = isotonic_fit(curve)?;
    let ys = iso.ys();
    let height = ys[ys.len() - 1] - ys[0];
    let scale_y = ys
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if !(height > 1e-12 * scale_y) {
        return Err(Error::DegenerateEdge);
    }
    let xs = curve.xs();
    let x0 = xs[0];
    let span = xs[xs.len() - 1] - x0;
    let u: Vec<f64> = xs.iter().map(|x| (x - x0) / span).collect();
    let sys = Reinsch::new(&u, ys);
    let mut alpha = match smoothing {
        Smoothing::Gcv => gcv_alpha(&sys, ys),
        Smoothing::Fixed(a) if a >= 0.0 && a.is_finite() => a,
        Smoothing::Fixed(a) => {
            return Err(Error::Domain(format!("smoothing must be ≥ 0, got {a}")))
        }
    };
    for _ in 0..=MAX_ESCALATIONS {
        let (fit, _) = sys.fit(ys, alpha);
        let response = to_response(xs, &fit, span)?;
        if response.is_monotone() {
            return Ok(response);
        }
        alpha = (2.0 * alpha).max(ESCALATION_FLOOR);
    }
    Err(Error::FitFailure(format!(
        "response still non-monotone after {MAX_ESCALATIONS} smoothing escalations"
    )))
}

/// Finds `φ` with `response(φ) = psi` by bisection to 1e-12 rad.
pub fn invert_monotone(response: &MonotoneResponse, psi: f64) -> Result<f64> {
    let (lo_v, hi_v) = response.range();
    if !(psi >= lo_v && psi <= hi_v) {
        return Err(Error::OutOfSensitiveRange {
            psi,
            lo: lo_v,
            hi: hi_v,
        });
    }
    let (mut lo, mut hi) = response.domain();
    if psi == lo_v {
        return Ok(lo);
    }
    if psi == hi_v {
        return Ok(hi);
    }
    // narrow to one segment first: knot values are non-decreasing
    let knots = response.knots();
    let k = knots.partition_point(|&x| response.eval(x) < psi);
    if k > 0 && k < knots.len() {
        lo = knots[k - 1];
        hi = knots[k];
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if response.eval(mid) < psi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::erf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn edge(x: f64) -> f64 {
        erf((x - 0.15) / (0.0785 * std::f64::consts::SQRT_2))
    }

    fn edge_curve(n: usize) -> SampledCurve {
        let xs: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 / (n - 1) as f64).collect();
        let ys = xs.iter().map(|&x| edge(x)).collect();
        SampledCurve::new(xs, ys).unwrap()
    }

    #[test]
    fn interpolates_noise_free_edge() {
        let c = edge_curve(200);
        let r = fit_monotone_response(&c, Smoothing::Fixed(0.0)).unwrap();
        for (x, y) in c.xs().iter().zip(c.ys()) {
            assert!((r.eval(*x) - y).abs() < 1e-9);
        }
        assert!(r.is_monotone());
        let (lo, hi) = r.domain();
        assert_eq!(r.range(), (r.eval(lo), r.eval(hi)));
    }

    #[test]
    fn banded_inverse_matches_dense() {
        let c = edge_curve(9);
        let u: Vec<f64> = c.xs().iter().map(|x| x / 0.3).collect();
        let sys = Reinsch::new(&u, c.ys());
        let (d, l1, l2) = sys.factor(0.01);
        let (s0, s1, s2) = band_inverse(&d, &l1, &l2);
        let m = d.len();
        // dense inverse column by column
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let col = Reinsch::solve(&d, &l1, &l2, &e);
            assert!((col[j] - s0[j]).abs() < 1e-9 * s0[j].abs());
            if j >= 1 {
                assert!((col[j - 1] - s1[j - 1]).abs() < 1e-9 * s0[j].abs());
            }
            if j >= 2 {
                assert!((col[j - 2] - s2[j - 2]).abs() < 1e-9 * s0[j].abs());
            }
        }
    }

    #[test]
    fn noisy_edge_is_monotone_and_close() {
        let n = 800;
        let clean = edge_curve(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.02).unwrap(); // 1% of the edge height 2
        let ys: Vec<f64> = clean
            .ys()
            .iter()
            .map(|y| y + noise.sample(&mut rng))
            .collect();
        let noisy = SampledCurve::new(clean.xs().to_vec(), ys).unwrap();
        let r = fit_monotone_response(&noisy, Smoothing::Gcv).unwrap();
        assert!(r.is_monotone());
        let rms = (clean
            .xs()
            .iter()
            .zip(clean.ys())
            .map(|(x, y)| (r.eval(*x) - y).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms <= 0.005 * 2.0, "rms {rms}");
    }

    #[test]
    fn heavy_noise_still_yields_a_monotone_fit() {
        let clean = edge_curve(400);
        let noise = Normal::new(0.0, 0.1).unwrap();
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = clean
                .ys()
                .iter()
                .map(|y| y + noise.sample(&mut rng))
                .collect();
            let noisy = SampledCurve::new(clean.xs().to_vec(), ys).unwrap();
            let r = fit_monotone_response(&noisy, Smoothing::Gcv).unwrap();
            assert!(r.is_monotone(), "seed {seed}");
        }
    }

    #[test]
    fn constant_input_is_degenerate() {
        let c = SampledCurve::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.7; 5]).unwrap();
        assert!(matches!(
            fit_monotone_response(&c, Smoothing::Gcv),
            Err(Error::DegenerateEdge)
        ));
    }

    #[test]
    fn inversion_round_trip_and_contract() {
        let r = fit_monotone_response(&edge_curve(300), Smoothing::Fixed(0.0)).unwrap();
        let (lo, hi) = r.domain();
        for k in 0..=100 {
            let x = lo + (hi - lo) * k as f64 / 100.0;
            let back = invert_monotone(&r, r.eval(x)).unwrap();
            assert!((back - x).abs() < 1e-10, "x {x} back {back}");
            let (vlo, vhi) = r.range();
            assert!((r.eval(back) - r.eval(x)).abs() <= 1e-10 * (vhi - vlo));
        }
        assert_eq!(invert_monotone(&r, r.range().0).unwrap(), lo);
        assert!(matches!(
            invert_monotone(&r, r.range().1 + 1e-6),
            Err(Error::OutOfSensitiveRange { .. })
        ));
    }
}
