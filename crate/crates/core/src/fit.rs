//! Envelope fits `value ≤ C·w(p)` for polynomial-growth bounds.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub c: f64,
    pub p: f64,
}

/// Least-squares slope of `ln v` against `ln s`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(s, v)| s > 0.0 && v > 0.0)
        .map(|&(s, v)| (s.ln(), v.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Fits `(C, p)` to `(scale, value)` samples.
///
/// The exponent is the log-log slope over samples with `scale ≥ 10`
/// (falling back to `scale ≥ min_scale`), floored at 0. `C` is then the
/// smallest constant with `value_i ≤ C·envelope(p, i)` for every sample.
pub fn fit_power_envelope<F>(points: &[(f64, f64)], min_scale: f64, envelope: F) -> PowerFit
where
    F: Fn(f64, usize) -> f64,
{
    let tail = |lo: f64| -> Vec<(f64, f64)> { points.iter().copied().filter(|p| p.0 >= lo).collect() };
    let p = log_log_slope(&tail(10.0f64.max(min_scale)))
        .or_else(|| log_log_slope(&tail(min_scale)))
        .unwrap_or(0.0)
        .max(0.0);
    let c = points
        .iter()
        .enumerate()
        .map(|(i, &(_, v))| v / envelope(p, i))
        .fold(0.0, f64::max);
    PowerFit { c, p }
}
