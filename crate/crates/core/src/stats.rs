//! Normal-distribution helpers and detection-threshold calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hll::precision_for;

/// Relative standard error constant of the harmonic-mean estimator.
pub const HLL_RSE: f64 = 1.04;

/// Standard deviation of `(C_ns - C_s) / C` for two independent sketches of
/// `m_salted` and `m_unsalted` registers fed the same stream.
pub fn sns_sigma(m_salted: usize, m_unsalted: usize) -> Result<f64> {
    precision_for(m_salted)?;
    precision_for(m_unsalted)?;
    Ok(HLL_RSE * (1.0 / m_salted as f64 + 1.0 / m_unsalted as f64).sqrt())
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
///
/// `erfc` comes from the `libm` port of the FreeBSD/musl routine, which is
/// accurate to about one ulp over the whole real line, so the lower tail
/// keeps full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const THRESHOLD_TOLERANCE: f64 = 1e-10;

/// Smallest `d_t` (to within 1e-10) with `normal_cdf(-d_t / sigma) <= fp_target`.
pub fn threshold_for_fp(fp_target: f64, sigma: f64) -> Result<f64> {
    if !(fp_target > 0.0 && fp_target < 0.5) {
        return Err(Error::InvalidFpTarget(fp_target));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let tail = |d: f64| normal_cdf(-d / sigma);
    let mut lo = 0.0;
    let mut hi = sigma;
    while tail(hi) > fp_target {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > THRESHOLD_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if tail(mid) <= fp_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Calibrated detection parameters for a salted/unsalted pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub sigma: f64,
    pub d_t: f64,
    pub fp_target: f64,
}

impl DetectionParams {
    pub fn calibrate(m_salted: usize, m_unsalted: usize, fp_target: f64) -> Result<Self> {
        let sigma = sns_sigma(m_salted, m_unsalted)?;
        let d_t = threshold_for_fp(fp_target, sigma)?;
        Ok(DetectionParams { sigma, d_t, fp_target })
    }

    /// Fixed threshold; `fp_target` is set to the one-sided tail it implies.
    pub fn with_threshold(m_salted: usize, m_unsalted: usize, d_t: f64) -> Result<Self> {
        let sigma = sns_sigma(m_salted, m_unsalted)?;
        if !(d_t > 0.0 && d_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be positive, got {d_t}"
            )));
        }
        Ok(DetectionParams {
            sigma,
            d_t,
            fp_target: normal_cdf(-d_t / sigma),
        })
    }

    /// One-sided false-positive probability of the calibrated test.
    pub fn false_positive_probability(&self) -> f64 {
        normal_cdf(-self.d_t / self.sigma)
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, sx) = mean_std(xs);
    let (my, sy) = mean_std(ys);
    let n = xs.len() as f64;
    let cov = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
    cov / (sx * sy)
}
