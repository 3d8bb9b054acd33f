use crate::error::{domain, Result};

/// Samples of a scalar response on a strictly increasing abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SampledCurve {
    pub const MIN_LEN: usize = 4;

    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(domain(format!(
                "xs has {} samples, ys has {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < Self::MIN_LEN {
            return Err(domain(format!(
                "need at least {} samples, got {}",
                Self::MIN_LEN,
                xs.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(domain("samples must be finite"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("xs must be strictly increasing"));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Least-squares non-decreasing fit (pool adjacent violators, unit weights).
pub fn isotonic_fit(curve: &SampledCurve) -> Result<SampledCurve> {
    if curve.len() < SampledCurve::MIN_LEN {
        return Err(domain("isotonic fit needs at least 4 samples"));
    }
    let ys = pava(curve.ys());
    Ok(SampledCurve {
        xs: curve.xs.clone(),
        ys,
    })
}

/// Pool adjacent violators on raw values. Works for any length.
pub fn pava(ys: &[f64]) -> Vec<f64> {
    // blocks of (sum, count); a block's level is sum / count
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 <= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = (s0 + s1, n0 + n1);
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for (s, n) in blocks {
        let level = s / n as f64;
        out.extend(std::iter::repeat_n(level, n));
    }
    out
}
