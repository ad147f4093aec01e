//! Regular latitude-longitude grids with cell-centred coordinates.

use crate::error::{GhrError, Result};

/// Latitudes run north to south, longitudes eastward from the first column.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_degrees: Vec<f64>,
    pub lon_degrees: Vec<f64>,
    pub resolution_degrees: f64,
}

impl GridSpec {
    /// Global grid of `n_lat × n_lon` square cells; `lat = 90 − (i + ½)Δ`, `lon = (j + ½)Δ`.
    pub fn global(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(GhrError::Grid(format!("empty grid {n_lat}×{n_lon}")));
        }
        let d = 360.0 / n_lon as f64;
        if (180.0 / n_lat as f64 - d).abs() > 1e-9 {
            return Err(GhrError::Grid(format!(
                "{n_lat}×{n_lon} cells are not square (need n_lon = 2·n_lat)"
            )));
        }
        Ok(Self {
            n_lat,
            n_lon,
            lat_degrees: (0..n_lat)
                .map(|i| (n_lat as f64 - 1.0 - 2.0 * i as f64) * d / 2.0)
                .collect(),
            lon_degrees: (0..n_lon).map(|j| (j as f64 + 0.5) * d).collect(),
            resolution_degrees: d,
        })
    }

    /// Every `stride`-th row and column starting at `(row0, col0)`.
    pub fn strided(&self, row0: usize, col0: usize, stride: usize) -> Result<Self> {
        if stride == 0 || !self.n_lat.is_multiple_of(stride) || !self.n_lon.is_multiple_of(stride) {
            return Err(GhrError::Grid(format!(
                "{}×{} grid is not divisible by {stride}",
                self.n_lat, self.n_lon
            )));
        }
        if row0 >= stride || col0 >= stride {
            return Err(GhrError::Grid(format!(
                "offset ({row0},{col0}) outside stride {stride}"
            )));
        }
        Ok(Self {
            n_lat: self.n_lat / stride,
            n_lon: self.n_lon / stride,
            lat_degrees: self.lat_degrees[row0..]
                .iter()
                .step_by(stride)
                .copied()
                .collect(),
            lon_degrees: self.lon_degrees[col0..]
                .iter()
                .step_by(stride)
                .copied()
                .collect(),
            resolution_degrees: self.resolution_degrees * stride as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Checks uniform spacing and full longitude coverage.
    pub fn validate(&self) -> Result<()> {
        let d = self.resolution_degrees;
        if self.lat_degrees.len() != self.n_lat || self.lon_degrees.len() != self.n_lon {
            return Err(GhrError::Grid(
                "coordinate lengths disagree with counts".into(),
            ));
        }
        let uniform = |v: &[f64], sign: f64| {
            v.windows(2)
                .all(|w| (sign * (w[1] - w[0]) - d).abs() <= 1e-9)
        };
        if !uniform(&self.lat_degrees, -1.0) || !uniform(&self.lon_degrees, 1.0) {
            return Err(GhrError::Grid(format!("spacing is not uniformly {d}°")));
        }
        if (self.n_lon as f64 * d - 360.0).abs() > 1e-6 {
            return Err(GhrError::Grid(format!(
                "{} columns at {d}° do not span 360°",
                self.n_lon
            )));
        }
        Ok(())
    }

    /// Same shape and spacing; coordinates may be offset.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.n_lat == other.n_lat
            && self.n_lon == other.n_lon
            && (self.resolution_degrees - other.resolution_degrees).abs() < 1e-9
    }
}
