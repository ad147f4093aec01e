//! Latitude-weighted scores of one variable at one lead time.
//!
//! Fields are flat row-major `[H, W]` planes; the latitude of element `i`
//! is `i / W`. Every `*_once` function scores a single init time and the
//! plain functions average it over init times.

use crate::error::{GhrError, Result};

use super::weights::LatitudeWeights;

/// What [`activity`] takes the spread of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ActivityMode {
    /// Forecast minus climatology.
    #[default]
    Anomaly,
    /// Target minus forecast, the form printed next to the definition.
    Literal,
}

fn width(len: usize, w: &LatitudeWeights) -> usize {
    assert!(
        !w.is_empty() && len.is_multiple_of(w.len()),
        "plane of {len} values does not fit {} latitudes",
        w.len()
    );
    len / w.len()
}

/// `(1/WH) Σ α(w) f(x)` over a plane.
fn weighted_mean(len: usize, w: &LatitudeWeights, mut f: impl FnMut(usize) -> f64) -> f64 {
    let cols = width(len, w);
    let mut acc = 0.0;
    for (row, &a) in w.as_slice().iter().enumerate() {
        let mut s = 0.0;
        for i in row * cols..(row + 1) * cols {
            s += f(i);
        }
        acc += a * s;
    }
    acc / len as f64
}

fn check_plane(a: &[f32], b: &[f32]) {
    assert_eq!(a.len(), b.len(), "planes of different sizes");
}

pub fn rmse_once(forecast: &[f32], target: &[f32], w: &LatitudeWeights) -> f64 {
    check_plane(forecast, target);
    weighted_mean(forecast.len(), w, |i| {
        let d = target[i] as f64 - forecast[i] as f64;
        d * d
    })
    .sqrt()
}

/// Signed weighted mean of `target − forecast`.
pub fn bias_once(forecast: &[f32], target: &[f32], w: &LatitudeWeights) -> f64 {
    check_plane(forecast, target);
    weighted_mean(forecast.len(), w, |i| target[i] as f64 - forecast[i] as f64)
}

/// Anomaly correlation, `None` when either anomaly has zero weighted energy.
pub fn acc_once(
    forecast: &[f32],
    target: &[f32],
    clim: &[f32],
    w: &LatitudeWeights,
) -> Option<f64> {
    check_plane(forecast, target);
    check_plane(forecast, clim);
    let cols = width(forecast.len(), w);
    let (mut num, mut ff, mut tt) = (0.0, 0.0, 0.0);
    for (row, &a) in w.as_slice().iter().enumerate() {
        for i in row * cols..(row + 1) * cols {
            let fa = forecast[i] as f64 - clim[i] as f64;
            let ta = target[i] as f64 - clim[i] as f64;
            num += a * fa * ta;
            ff += a * fa * fa;
            tt += a * ta * ta;
        }
    }
    if ff == 0.0 || tt == 0.0 {
        return None;
    }
    Some((num / (ff * tt).sqrt()).clamp(-1.0, 1.0))
}

/// Weighted standard deviation of the forecast anomaly (or, in literal mode,
/// of `target − forecast`).
pub fn activity_once(
    forecast: &[f32],
    target: &[f32],
    clim: &[f32],
    w: &LatitudeWeights,
    mode: ActivityMode,
) -> f64 {
    check_plane(forecast, target);
    check_plane(forecast, clim);
    let a = |i: usize| match mode {
        ActivityMode::Anomaly => forecast[i] as f64 - clim[i] as f64,
        ActivityMode::Literal => target[i] as f64 - forecast[i] as f64,
    };
    let mean = weighted_mean(forecast.len(), w, a);
    weighted_mean(forecast.len(), w, |i| {
        let d = a(i) - mean;
        d * d
    })
    .sqrt()
}

fn check_series(what: &str, a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(GhrError::invalid(format!(
            "{what} needs at least one init time"
        )));
    }
    if a != b {
        return Err(GhrError::invalid(format!(
            "{what}: {a} forecasts against {b} targets"
        )));
    }
    Ok(())
}

/// Time mean of [`rmse_once`]; the root is taken per init time.
pub fn rmse(forecasts: &[&[f32]], targets: &[&[f32]], w: &LatitudeWeights) -> Result<f64> {
    check_series("rmse", forecasts.len(), targets.len())?;
    let s: f64 = forecasts
        .iter()
        .zip(targets)
        .map(|(f, t)| rmse_once(f, t, w))
        .sum();
    Ok(s / forecasts.len() as f64)
}

pub fn bias(forecasts: &[&[f32]], targets: &[&[f32]], w: &LatitudeWeights) -> Result<f64> {
    check_series("bias", forecasts.len(), targets.len())?;
    let s: f64 = forecasts
        .iter()
        .zip(targets)
        .map(|(f, t)| bias_once(f, t, w))
        .sum();
    Ok(s / forecasts.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccScore {
    /// Mean over the init times used; NaN if none was usable.
    pub value: f64,
    pub used: usize,
    /// Init times skipped for a zero-variance anomaly.
    pub skipped: usize,
}

pub fn acc(
    forecasts: &[&[f32]],
    targets: &[&[f32]],
    clims: &[&[f32]],
    w: &LatitudeWeights,
) -> Result<AccScore> {
    check_series("acc", forecasts.len(), targets.len())?;
    check_series("acc", forecasts.len(), clims.len())?;
    let (mut sum, mut used) = (0.0, 0);
    for ((f, t), c) in forecasts.iter().zip(targets).zip(clims) {
        if let Some(v) = acc_once(f, t, c, w) {
            sum += v;
            used += 1;
        }
    }
    Ok(AccScore {
        value: if used > 0 {
            sum / used as f64
        } else {
            f64::NAN
        },
        used,
        skipped: forecasts.len() - used,
    })
}

pub fn activity(
    forecasts: &[&[f32]],
    targets: &[&[f32]],
    clims: &[&[f32]],
    w: &LatitudeWeights,
    mode: ActivityMode,
) -> Result<f64> {
    check_series("activity", forecasts.len(), targets.len())?;
    check_series("activity", forecasts.len(), clims.len())?;
    let s: f64 = forecasts
        .iter()
        .zip(targets)
        .zip(clims)
        .map(|((f, t), c)| activity_once(f, t, c, w, mode))
        .sum();
    Ok(s / forecasts.len() as f64)
}
