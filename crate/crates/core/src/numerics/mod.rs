//! Numerical kernels: error function, adaptive quadrature, isotonic
//! regression, smoothing splines and monotone inversion.

mod erf;
mod isotonic;
mod quadrature;
mod spline;

pub use erf::{erf, erf_diff, erf_eval, erfc};
pub use isotonic::{isotonic_fit, pava, SampledCurve};
pub use quadrature::{
    adaptive_integrate, integrate_with_breaks, quadrature_correlate, MAX_PANELS, ORACLE_REL_TOL,
};
pub use spline::{fit_monotone_response, invert_monotone, MonotoneResponse, Smoothing};
