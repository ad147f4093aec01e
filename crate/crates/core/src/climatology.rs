//! Day-of-year mean fields.

use std::path::Path;

use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::format::{read_state, write_state};
use crate::grid::GridSpec;
use crate::manifest::DatasetManifest;
use crate::state::WeatherState;
use crate::time::{self, Timestamp};
use crate::variables::VariableSet;

pub const DAY_SLOTS: usize = 366;
const LEAP_SLOT: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    pub grid: GridSpec,
    pub variables: VariableSet,
    /// Index 0 is slot 1.
    pub days: Vec<Tensor>,
    pub source: String,
}

/// Accumulates states into per-slot 64-bit sums.
pub struct ClimatologyBuilder {
    template: Option<(GridSpec, VariableSet)>,
    sums: Vec<Option<Vec<f64>>>,
    counts: Vec<u64>,
}

impl Default for ClimatologyBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl ClimatologyBuilder {
    pub fn new() -> Self {
        Self {
            template: None,
            sums: vec![None; DAY_SLOTS],
            counts: vec![0; DAY_SLOTS],
        }
    }

    pub fn push(&mut self, state: &WeatherState) -> Result<()> {
        match &self.template {
            None => self.template = Some((state.grid.clone(), state.variables.clone())),
            Some((g, v)) => {
                if g != &state.grid || v != &state.variables {
                    return Err(GhrError::Grid(format!(
                        "state at {} has a different grid or variable set",
                        time::iso(&state.valid_time)
                    )));
                }
            }
        }
        let slot = time::day_slot(&state.valid_time) as usize - 1;
        let sum = self.sums[slot].get_or_insert_with(|| vec![0.0; state.values.numel()]);
        for (s, &v) in sum.iter_mut().zip(state.values.data()) {
            *s += v as f64;
        }
        self.counts[slot] += 1;
        Ok(())
    }

    /// Slot 60 (29 February), if absent, is the mean of slots 59 and 61.
    pub fn finish(self, source: impl Into<String>) -> Result<Climatology> {
        let (grid, variables) = self
            .template
            .ok_or_else(|| GhrError::invalid("climatology needs at least one state"))?;
        let shape = [variables.len(), grid.n_lat, grid.n_lon];
        let mean = |slot: usize| -> Option<Vec<f64>> {
            self.sums[slot]
                .as_ref()
                .map(|s| s.iter().map(|v| v / self.counts[slot] as f64).collect())
        };
        let mut missing = Vec::new();
        let mut days = Vec::with_capacity(DAY_SLOTS);
        for slot in 0..DAY_SLOTS {
            let m = mean(slot).or_else(|| {
                if slot + 1 != LEAP_SLOT {
                    return None;
                }
                let (a, b) = (mean(slot - 1)?, mean(slot + 1)?);
                Some(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect())
            });
            match m {
                Some(v) => days.push(Tensor::new(
                    shape,
                    v.into_iter().map(|x| x as f32).collect(),
                )?),
                None => missing.push(slot as u16 + 1),
            }
        }
        if !missing.is_empty() {
            return Err(GhrError::MissingDays(missing));
        }
        Ok(Climatology {
            grid,
            variables,
            days,
            source: source.into(),
        })
    }
}

pub fn build_climatology(manifest: &DatasetManifest) -> Result<Climatology> {
    if manifest.is_empty() {
        return Err(GhrError::invalid(format!(
            "manifest {} is empty",
            manifest.split
        )));
    }
    let mut b = ClimatologyBuilder::new();
    for i in 0..manifest.len() {
        b.push(&manifest.load(i)?)?;
    }
    let (first, last) = (
        &manifest.entries[0].0,
        &manifest.entries[manifest.len() - 1].0,
    );
    b.finish(format!(
        "{} {}..{}",
        manifest.split,
        time::iso(first),
        time::iso(last)
    ))
}

/// Calendar date in leap year 2000 of a slot, at 00Z.
fn slot_date(slot: usize) -> Timestamp {
    time::utc(2000, 1, 1, 0) + chrono::Duration::days(slot as i64 - 1)
}

impl Climatology {
    pub fn day(&self, slot: u16) -> &Tensor {
        &self.days[slot as usize - 1]
    }

    pub fn at(&self, t: &Timestamp) -> &Tensor {
        self.day(time::day_slot(t))
    }

    /// The climatology as a single year of daily states; feeding these back
    /// into a builder reproduces it.
    pub fn as_states(&self) -> Result<Vec<WeatherState>> {
        self.days
            .iter()
            .enumerate()
            .map(|(i, d)| {
                WeatherState::new(
                    self.grid.clone(),
                    self.variables.clone(),
                    d.clone(),
                    slot_date(i + 1),
                )
            })
            .collect()
    }

    /// One state file per slot plus a `source.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (i, s) in self.as_states()?.iter().enumerate() {
            write_state(s, &dir.join(format!("doy{:03}.ghr", i + 1)))?;
        }
        crate::format::write_bytes(&dir.join("source.txt"), self.source.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mut days = Vec::with_capacity(DAY_SLOTS);
        let mut template = None;
        for slot in 1..=DAY_SLOTS {
            let s = read_state(&dir.join(format!("doy{slot:03}.ghr")))?;
            if template.is_none() {
                template = Some((s.grid.clone(), s.variables.clone()));
            }
            days.push(s.values);
        }
        let (grid, variables) = template.expect("at least one slot");
        let source = std::fs::read_to_string(dir.join("source.txt")).unwrap_or_default();
        Ok(Self {
            grid,
            variables,
            days,
            source,
        })
    }
}
