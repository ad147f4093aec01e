//! Deterministic multiscale fields standing in for reanalysis data.
//!
//! Each channel is a sum of large-scale travelling waves on the sphere plus
//! a seasonal term. HR fields add a small-scale pattern with period `k` cells
//! whose amplitude and phase depend on the local large-scale value, so it is
//! tied to the flow but invisible at the `k`-stride center points that make
//! up the LR grid.

use std::f64::consts::PI;

use ghr_tensor::{Rng, Tensor};

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::state::{subsample_centers, WeatherState};
use crate::time::{self, Timestamp};
use crate::variables::{ChannelKind, VariableSet};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub modes: usize,
    /// Multiplies every temporal frequency; zero gives a time-invariant dataset.
    pub time_scale: f64,
    /// Small-scale amplitude relative to the channel's large-scale amplitude.
    pub small_scale: f64,
    /// Phase rotation of the small-scale pattern per step.
    pub small_scale_rate: f64,
    /// Phase coupling of the small-scale pattern to the large-scale field.
    pub coupling: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            modes: 6,
            time_scale: 1.0,
            small_scale: 0.4,
            small_scale_rate: 2.0 * PI / 8.0,
            coupling: 1.5,
        }
    }
}

#[derive(Clone, Debug)]
struct Mode {
    zonal: f64,
    meridional: f64,
    /// Phase speed in radians per step.
    omega: f64,
    amplitude: f64,
    lat_phase: f64,
}

#[derive(Clone, Debug)]
struct ChannelModel {
    mean: f64,
    scale: f64,
    seasonal: f64,
    weights: Vec<f64>,
    phases: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Generator {
    grid: GridSpec,
    variables: VariableSet,
    k: usize,
    options: SynthOptions,
    modes: Vec<Mode>,
    channels: Vec<ChannelModel>,
}

/// Typical magnitude of a channel as (mean, large-scale amplitude).
fn physical_scale(name: &str, kind: ChannelKind) -> (f64, f64) {
    match (name, kind) {
        (_, ChannelKind::Pressure(level)) if name.starts_with('z') => {
            // Standard-atmosphere geopotential, 9.81 · height.
            let height = 44_330.8 * (1.0 - (level as f64 / 1013.25).powf(0.190_263));
            (
                9.80665 * height,
                400.0 + 2.0 * (1000.0 - level as f64).max(0.0),
            )
        }
        (_, ChannelKind::Pressure(level)) if name.starts_with('t') => {
            (288.0 - 70.0 * (1.0 - level as f64 / 1000.0), 12.0)
        }
        ("t2m", _) => (281.0, 14.0),
        ("msl", _) => (101_325.0, 1_200.0),
        (n, _) if n.starts_with('u') || n.starts_with('v') => (0.0, 6.0),
        (n, _) if n.starts_with('q') => (0.005, 0.003),
        _ => (0.0, 1.0),
    }
}

impl Generator {
    pub fn new(
        seed: u64,
        grid: GridSpec,
        k: usize,
        variables: VariableSet,
        options: SynthOptions,
    ) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(GhrError::invalid(format!(
                "decomposition factor {k} must be odd so LR centers lie on HR cells"
            )));
        }
        if !grid.n_lat.is_multiple_of(k) || !grid.n_lon.is_multiple_of(k) {
            return Err(GhrError::Grid(format!(
                "{}×{} grid is not divisible by {k}",
                grid.n_lat, grid.n_lon
            )));
        }
        grid.validate()?;
        let mut rng = Rng::derived(seed, 0x5e17);
        let mut modes: Vec<Mode> = Vec::with_capacity(options.modes);
        while modes.len() < options.modes {
            let zonal = (1 + rng.below(4)) as f64;
            let meridional = rng.below(3) as f64;
            if modes
                .iter()
                .any(|m| m.zonal == zonal && m.meridional == meridional)
            {
                continue;
            }
            let speed = rng.uniform(0.15, 0.4)
                * if rng.uniform(0.0, 1.0) < 0.8 {
                    1.0
                } else {
                    -1.0
                };
            modes.push(Mode {
                zonal,
                meridional,
                omega: speed,
                amplitude: rng.uniform(0.6, 1.0) / zonal.sqrt(),
                lat_phase: rng.uniform(0.0, PI),
            });
        }
        let channels = variables
            .channels()
            .iter()
            .map(|ch| {
                let (mean, scale) = physical_scale(&ch.name, ch.kind);
                ChannelModel {
                    mean,
                    scale,
                    seasonal: rng.uniform(0.2, 0.6),
                    weights: (0..modes.len()).map(|_| rng.uniform(0.5, 1.0)).collect(),
                    phases: (0..modes.len()).map(|_| rng.uniform(-0.6, 0.6)).collect(),
                }
            })
            .collect();
        Ok(Self {
            grid,
            variables,
            k,
            options,
            modes,
            channels,
        })
    }

    pub fn hr_grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn variables(&self) -> &VariableSet {
        &self.variables
    }

    pub fn factor(&self) -> usize {
        self.k
    }

    /// The full-resolution state at `t`.
    pub fn hr_state(&self, t: Timestamp) -> Result<WeatherState> {
        time::check_aligned(&t)?;
        let steps = (t - time::utc(2000, 1, 1, 0)).num_hours() as f64 / time::STEP_HOURS as f64;
        let tau = steps * self.options.time_scale;
        let season = 2.0 * PI * (time::day_slot(&t) as f64 - 15.0) / 366.0;
        let season = if self.options.time_scale == 0.0 {
            0.0
        } else {
            season.cos()
        };
        let (h, w, k) = (self.grid.n_lat, self.grid.n_lon, self.k);
        let c0 = (k / 2) as isize;
        let lat: Vec<f64> = self
            .grid
            .lat_degrees
            .iter()
            .map(|d| d.to_radians())
            .collect();
        let lon: Vec<f64> = self
            .grid
            .lon_degrees
            .iter()
            .map(|d| d.to_radians())
            .collect();
        // Evaluate large-scale structure at each cell's patch center so the
        // small-scale term is the only sub-patch variation.
        let center_row = |i: usize| (i / k) * k + k / 2;
        let center_col = |j: usize| (j / k) * k + k / 2;
        let ker_lat: Vec<Vec<f64>> = self
            .modes
            .iter()
            .map(|m| {
                (0..h)
                    .map(|i| {
                        let phi = lat[i];
                        phi.cos() * (m.meridional * phi + m.lat_phase).cos()
                    })
                    .collect()
            })
            .collect();
        let mut data = Vec::with_capacity(self.variables.len() * h * w);
        let sin_k: Vec<f64> = (0..k)
            .map(|o| (2.0 * PI * (o as isize - c0) as f64 / k as f64).sin())
            .collect();
        for ch in &self.channels {
            // lon_terms[l][j] = weight · cos(m λ − ω τ + phase)
            let lon_terms: Vec<Vec<f64>> = self
                .modes
                .iter()
                .enumerate()
                .map(|(l, m)| {
                    (0..w)
                        .map(|j| {
                            ch.weights[l]
                                * m.amplitude
                                * (m.zonal * lon[j] - m.omega * tau + ch.phases[l]).cos()
                        })
                        .collect()
                })
                .collect();
            let large_at = |i: usize, j: usize| -> f64 {
                let mut s = ch.seasonal * lat[i].sin() * season;
                for l in 0..self.modes.len() {
                    s += ker_lat[l][i] * lon_terms[l][j];
                }
                s
            };
            let small_phase = self.options.small_scale_rate * tau;
            for i in 0..h {
                for j in 0..w {
                    let (ci, cj) = (center_row(i), center_col(j));
                    let base = large_at(ci, cj);
                    let mut v = large_at(i, j);
                    if k > 1 {
                        let envelope = 1.0 + 0.5 * base.tanh();
                        let theta = small_phase + self.options.coupling * base;
                        let (oi, oj) = (i % k, j % k);
                        v += self.options.small_scale
                            * envelope
                            * (sin_k[oj] * theta.cos() + sin_k[oi] * theta.sin());
                    }
                    data.push((ch.mean + ch.scale * v) as f32);
                }
            }
        }
        let values = Tensor::new([self.variables.len(), h, w], data)?;
        WeatherState::new(self.grid.clone(), self.variables.clone(), values, t)
    }

    /// The LR state at `t`: the HR state sampled at patch centers.
    pub fn lr_state(&self, t: Timestamp) -> Result<WeatherState> {
        subsample_centers(&self.hr_state(t)?, self.k)
    }
}

/// HR and LR trajectories of `n_steps` states every six hours from `start`.
pub fn generate_synthetic(
    seed: u64,
    grid_hr: &GridSpec,
    k: usize,
    start: Timestamp,
    n_steps: usize,
    variables: &VariableSet,
) -> Result<(Vec<WeatherState>, Vec<WeatherState>)> {
    let gen = Generator::new(
        seed,
        grid_hr.clone(),
        k,
        variables.clone(),
        SynthOptions::default(),
    )?;
    let mut hr = Vec::with_capacity(n_steps);
    let mut lr = Vec::with_capacity(n_steps);
    for s in 0..n_steps {
        let state = gen.hr_state(start + time::step() * s as i32)?;
        lr.push(subsample_centers(&state, k)?);
        hr.push(state);
    }
    Ok((hr, lr))
}
