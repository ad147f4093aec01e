//! Per-channel standardisation.

use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::state::WeatherState;

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Streaming per-channel mean and variance (Welford, 64-bit).
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    count: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            count: vec![0; channels],
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        }
    }

    pub fn push_state(&mut self, state: &WeatherState) -> Result<()> {
        if state.channels() != self.mean.len() {
            return Err(GhrError::invalid(format!(
                "state has {} channels, statistics expect {}",
                state.channels(),
                self.mean.len()
            )));
        }
        for c in 0..self.mean.len() {
            for &v in state.plane(c) {
                self.push(c, v as f64);
            }
        }
        Ok(())
    }

    pub fn push(&mut self, channel: usize, x: f64) {
        self.count[channel] += 1;
        let n = self.count[channel] as f64;
        let delta = x - self.mean[channel];
        self.mean[channel] += delta / n;
        self.m2[channel] += delta * (x - self.mean[channel]);
    }

    /// Population standard deviation per channel.
    pub fn finish(&self) -> Result<NormStats> {
        if self.count.contains(&0) {
            return Err(GhrError::invalid("no samples for statistics"));
        }
        let std = self
            .m2
            .iter()
            .zip(&self.count)
            .map(|(m2, &n)| (m2 / n as f64).sqrt())
            .collect();
        Ok(NormStats {
            mean: self.mean.clone(),
            std,
        })
    }
}

impl NormStats {
    fn check(&self, state: &WeatherState) -> Result<()> {
        if self.mean.len() != state.channels() || self.std.len() != state.channels() {
            return Err(GhrError::invalid(format!(
                "statistics for {} channels applied to {}",
                self.mean.len(),
                state.channels()
            )));
        }
        if let Some((c, s)) = self.std.iter().enumerate().find(|(_, s)| !(**s >= 1e-12)) {
            return Err(GhrError::invalid(format!(
                "channel {c} has degenerate std {s:e}"
            )));
        }
        Ok(())
    }

    fn map(&self, state: &WeatherState, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let n = state.grid.cells();
        let data = state
            .values
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / n;
                f(v as f64, self.mean[c], self.std[c]) as f32
            })
            .collect();
        Tensor::new(state.values.shape(), data).expect("same shape")
    }
}

/// `(x − mean) / std` per channel.
pub fn normalize(state: &WeatherState, stats: &NormStats) -> Result<WeatherState> {
    if state.normalization.is_some() {
        return Err(GhrError::invalid("state is already normalised"));
    }
    stats.check(state)?;
    let values = stats.map(state, |x, m, s| (x - m) / s);
    Ok(WeatherState {
        values,
        normalization: Some(stats.clone()),
        ..state.clone()
    })
}

pub fn denormalize(state: &WeatherState) -> Result<WeatherState> {
    let stats = state
        .normalization
        .as_ref()
        .ok_or_else(|| GhrError::invalid("state is not normalised"))?;
    stats.check(state)?;
    let values = stats.map(state, |x, m, s| x * s + m);
    Ok(WeatherState {
        values,
        normalization: None,
        ..state.clone()
    })
}
