//! Small statistics helpers used by the diagnostics and the acceptance suite.

use statrs::statistics::Statistics;

use crate::error::{Error, Result};

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Empty("sample"));
    }
    Ok((xs.iter().mean(), xs.iter().population_std_dev()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against uniform(lo, hi), with the
/// asymptotic Kolmogorov distribution and Stephens' small-sample correction.
pub fn ks_uniform(xs: &[f64], lo: f64, hi: f64) -> Result<KsResult> {
    if xs.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if !(hi > lo) {
        return Err(Error::contract("uniform support must have positive width"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d),
    })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    // The alternating series converges slowly near zero, where the tail is 1 to
    // double precision anyway.
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::contract("pearson needs equal-length samples"));
    }
    if x.len() < 2 {
        return Err(Error::Empty("pearson sample"));
    }
    let (mx, my) = (x.iter().mean(), y.iter().mean());
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}
