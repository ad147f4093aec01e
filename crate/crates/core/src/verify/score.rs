//! Per variable and lead time score tables, accumulated one forecast at a time.

use std::collections::BTreeMap;

use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::state::WeatherState;
use crate::time::{self, Timestamp};

use super::metrics::{acc_once, activity_once, bias_once, rmse_once, ActivityMode};
use super::weights::{latitude_weights, LatitudeWeights};

pub const METRICS: [&str; 4] = ["rmse", "acc", "bias", "activity"];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeadScores {
    pub rmse: f64,
    pub acc: f64,
    pub bias: f64,
    pub activity: f64,
    /// Init times scored.
    pub count: usize,
    /// Init times left out of the ACC mean.
    pub acc_skipped: usize,
}

impl LeadScores {
    pub fn metric(&self, name: &str) -> Option<(f64, usize)> {
        match name {
            "rmse" => Some((self.rmse, self.count)),
            "acc" => Some((self.acc, self.count - self.acc_skipped)),
            "bias" => Some((self.bias, self.count)),
            "activity" => Some((self.activity, self.count)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub series: String,
    pub variables: Vec<String>,
    pub grid: (usize, usize),
    /// First and last init time scored.
    pub period: Option<(Timestamp, Timestamp)>,
    /// Keyed by channel index and lead hours.
    pub scores: BTreeMap<(usize, u32), LeadScores>,
}

impl ScoreReport {
    pub fn get(&self, variable: &str, lead_hours: u32) -> Option<&LeadScores> {
        let c = self.variables.iter().position(|v| v == variable)?;
        self.scores.get(&(c, lead_hours))
    }

    pub fn leads(&self) -> Vec<u32> {
        let mut l: Vec<u32> = self.scores.keys().map(|&(_, l)| l).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// `variable,lead_hours,metric,value,count` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,lead_hours,metric,value,count\n");
        for (&(c, lead), sc) in &self.scores {
            for m in METRICS {
                let (v, n) = sc.metric(m).expect("known metric");
                s.push_str(&format!("{},{lead},{m},{v},{n}\n", self.variables[c]));
            }
        }
        s
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    rmse: f64,
    acc: f64,
    bias: f64,
    activity: f64,
    count: usize,
    acc_used: usize,
}

pub struct ScoreAccumulator {
    series: String,
    grid: GridSpec,
    variables: Vec<String>,
    weights: LatitudeWeights,
    mode: ActivityMode,
    sums: BTreeMap<(usize, u32), Sums>,
    inits: Option<(Timestamp, Timestamp)>,
}

impl ScoreAccumulator {
    pub fn new(
        series: impl Into<String>,
        grid: &GridSpec,
        variables: Vec<String>,
        mode: ActivityMode,
    ) -> Self {
        Self {
            series: series.into(),
            weights: latitude_weights(grid),
            grid: grid.clone(),
            variables,
            mode,
            sums: BTreeMap::new(),
            inits: None,
        }
    }

    /// Scores one physical-unit forecast against the verifying state.
    pub fn push(
        &mut self,
        lead_hours: u32,
        forecast: &WeatherState,
        target: &WeatherState,
        clim: &Tensor,
    ) -> Result<()> {
        if forecast.valid_time != target.valid_time {
            return Err(GhrError::invalid(format!(
                "forecast valid at {} scored against target at {}",
                time::iso(&forecast.valid_time),
                time::iso(&target.valid_time)
            )));
        }
        if !forecast.grid.same_shape(&self.grid) || !target.grid.same_shape(&self.grid) {
            return Err(GhrError::Grid(
                "forecast or target grid differs from the score grid".into(),
            ));
        }
        let names: Vec<&str> = forecast.variables.names().collect();
        if names != self.variables || target.variables != forecast.variables {
            return Err(GhrError::invalid(
                "forecast and target variables differ from the score variables",
            ));
        }
        if clim.shape() != forecast.values.shape() {
            return Err(GhrError::invalid(format!(
                "climatology {:?} does not match forecast {:?}",
                clim.shape(),
                forecast.values.shape()
            )));
        }
        let init = forecast.valid_time - chrono::Duration::hours(lead_hours as i64);
        self.inits = Some(match self.inits {
            None => (init, init),
            Some((a, b)) => (a.min(init), b.max(init)),
        });
        let plane = self.grid.cells();
        for c in 0..self.variables.len() {
            let (f, t) = (forecast.plane(c), target.plane(c));
            let cl = &clim.data()[c * plane..(c + 1) * plane];
            let s = self.sums.entry((c, lead_hours)).or_default();
            s.rmse += rmse_once(f, t, &self.weights);
            s.bias += bias_once(f, t, &self.weights);
            s.activity += activity_once(f, t, cl, &self.weights, self.mode);
            if let Some(a) = acc_once(f, t, cl, &self.weights) {
                s.acc += a;
                s.acc_used += 1;
            }
            s.count += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> ScoreReport {
        let scores = self
            .sums
            .into_iter()
            .map(|(key, s)| {
                let n = s.count as f64;
                let sc = LeadScores {
                    rmse: s.rmse / n,
                    acc: if s.acc_used > 0 {
                        s.acc / s.acc_used as f64
                    } else {
                        f64::NAN
                    },
                    bias: s.bias / n,
                    activity: s.activity / n,
                    count: s.count,
                    acc_skipped: s.count - s.acc_used,
                };
                (key, sc)
            })
            .collect();
        ScoreReport {
            series: self.series,
            variables: self.variables,
            grid: (self.grid.n_lat, self.grid.n_lon),
            period: self.inits,
            scores,
        }
    }
}
