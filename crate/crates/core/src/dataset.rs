//! Normalised training and evaluation samples held in memory.

use ghr_tensor::Tensor;

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::manifest::DatasetManifest;
use crate::normalize::{normalize, NormStats, StatsAccumulator};
use crate::state::WeatherState;
use crate::time::Timestamp;
use crate::variables::VariableSet;

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub grid: GridSpec,
    pub variables: VariableSet,
    pub stats: NormStats,
    /// Normalised `[C, H, W]` values per manifest entry.
    pub values: Vec<Tensor>,
}

impl Dataset {
    pub fn load(manifest: DatasetManifest, stats: &NormStats) -> Result<Self> {
        if manifest.is_empty() {
            return Err(GhrError::invalid(format!(
                "manifest {} is empty",
                manifest.split
            )));
        }
        let mut values = Vec::with_capacity(manifest.len());
        let mut template = None;
        for i in 0..manifest.len() {
            let s = manifest.load(i)?;
            if template.is_none() {
                template = Some((s.grid.clone(), s.variables.clone()));
            }
            values.push(normalize(&s, stats)?.values);
        }
        let (grid, variables) = template.expect("non-empty");
        Ok(Self {
            manifest,
            grid,
            variables,
            stats: stats.clone(),
            values,
        })
    }

    /// In-memory dataset from raw states at consecutive valid times.
    pub fn from_states(split: &str, states: &[WeatherState], stats: &NormStats) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| GhrError::invalid(format!("split {split} has no states")))?;
        let entries = states
            .iter()
            .map(|s| {
                (
                    s.valid_time,
                    std::path::PathBuf::from(format!("{}.ghr", crate::time::iso(&s.valid_time))),
                )
            })
            .collect();
        let manifest = DatasetManifest::new(
            split,
            first.grid.n_lat,
            first.grid.n_lon,
            first.variables.names().map(str::to_string).collect(),
            entries,
        )?;
        let values = states
            .iter()
            .map(|s| {
                if !s.grid.same_shape(&first.grid) || s.variables != first.variables {
                    return Err(GhrError::Grid(format!(
                        "split {split} mixes grids or variable sets"
                    )));
                }
                Ok(normalize(s, stats)?.values)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            manifest,
            grid: first.grid.clone(),
            variables: first.variables.clone(),
            stats: stats.clone(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> Timestamp {
        self.manifest.entries[i].0
    }

    /// Start indices with `steps` six-hourly successors.
    pub fn windows(&self, steps: usize) -> Vec<usize> {
        self.manifest.windows(steps)
    }

    /// Stacks entries into `[B, C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        stack(indices.iter().map(|&i| &self.values[i]))
    }
}

pub fn stack<'a>(items: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut shape = None;
    let mut data = Vec::new();
    let mut n = 0;
    for t in items {
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) if s.as_slice() != t.shape() => {
                return Err(GhrError::invalid(format!(
                    "cannot stack {:?} with {s:?}",
                    t.shape()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut s = shape.ok_or_else(|| GhrError::invalid("empty batch"))?;
    s.insert(0, n);
    Ok(Tensor::new(s, data)?)
}

/// Per-channel statistics over every state of a manifest.
pub fn compute_stats(manifest: &DatasetManifest) -> Result<NormStats> {
    let mut acc: Option<StatsAccumulator> = None;
    for i in 0..manifest.len() {
        let s = manifest.load(i)?;
        acc.get_or_insert_with(|| StatsAccumulator::new(s.channels()))
            .push_state(&s)?;
    }
    acc.ok_or_else(|| GhrError::invalid("empty manifest"))?
        .finish()
}
