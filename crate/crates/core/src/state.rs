use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::normalize::NormStats;
use crate::time::{check_aligned, Timestamp};
use crate::variables::VariableSet;

/// A `C×H×W` field stack at one valid time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherState {
    pub grid: GridSpec,
    pub variables: VariableSet,
    pub values: Tensor,
    pub valid_time: Timestamp,
    /// Statistics the values are currently normalised with, if any.
    pub normalization: Option<NormStats>,
}

impl WeatherState {
    pub fn new(
        grid: GridSpec,
        variables: VariableSet,
        values: Tensor,
        valid_time: Timestamp,
    ) -> Result<Self> {
        let expected = [variables.len(), grid.n_lat, grid.n_lon];
        if values.shape() != expected {
            return Err(GhrError::invalid(format!(
                "values shape {:?} does not match (C,H,W) = {expected:?}",
                values.shape()
            )));
        }
        check_aligned(&valid_time)?;
        Ok(Self {
            grid,
            variables,
            values,
            valid_time,
            normalization: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.variables.len()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.grid.cells();
        &self.values.data()[c * n..(c + 1) * n]
    }

    /// Same metadata with different values of the same shape.
    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(GhrError::invalid(format!(
                "replacement values {:?} differ from {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }
}

/// Center-point subsample with odd stride `k`.
pub fn subsample_centers(state: &WeatherState, k: usize) -> Result<WeatherState> {
    if k.is_multiple_of(2) {
        return Err(GhrError::invalid(format!(
            "subsample factor {k} must be odd"
        )));
    }
    let c0 = (k - 1) / 2;
    let grid = state.grid.strided(c0, c0, k)?;
    let (h, w) = (state.grid.n_lat, state.grid.n_lon);
    let (hl, wl) = (grid.n_lat, grid.n_lon);
    let src = state.values.data();
    let values = Tensor::from_fn([state.channels(), hl, wl], |idx| {
        let (c, i, j) = (idx / (hl * wl), idx / wl % hl, idx % wl);
        src[(c * h + k * i + c0) * w + k * j + c0]
    });
    Ok(WeatherState {
        grid,
        values,
        ..state.clone()
    })
}

/// Nearest-neighbour upsampling onto `hr_grid` (each LR cell fills its `k×k` patch).
pub fn upsample_nearest(state: &WeatherState, hr_grid: &GridSpec) -> Result<WeatherState> {
    let (hl, wl) = (state.grid.n_lat, state.grid.n_lon);
    if !hr_grid.n_lat.is_multiple_of(hl)
        || hr_grid.n_lon / wl != hr_grid.n_lat / hl
        || !hr_grid.n_lon.is_multiple_of(wl)
    {
        return Err(GhrError::Grid(format!(
            "{}×{} is not an integer multiple of {hl}×{wl}",
            hr_grid.n_lat, hr_grid.n_lon
        )));
    }
    let k = hr_grid.n_lat / hl;
    let (h, w) = (hr_grid.n_lat, hr_grid.n_lon);
    let src = state.values.data();
    let values = Tensor::from_fn([state.channels(), h, w], |idx| {
        let (c, i, j) = (idx / (h * w), idx / w % h, idx % w);
        src[(c * hl + i / k) * wl + j / k]
    });
    Ok(WeatherState {
        grid: hr_grid.clone(),
        values,
        ..state.clone()
    })
}
