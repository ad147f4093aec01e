//! Exact space-to-batch decomposition of HR fields into `k²` LR sub-fields.
//!
//! Sub-field `b` holds the HR cells `(k·i + b / k, k·j + b % k)`, so every
//! sub-field has the LR grid spacing and the center sub-field is the LR
//! subsample itself.

use std::sync::Arc;

use ghr_tensor::{Tape, Tensor, Var};

use crate::error::{GhrError, Result};
use crate::model::{forward_graph, AttentionProbe, Bindings, MetaModelParams, ModelConfig};
use crate::res::ResConfig;
use crate::state::WeatherState;
use crate::time;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimeLayout {
    pub k: usize,
    pub hr: (usize, usize),
    pub lr: (usize, usize),
}

impl SimeLayout {
    pub fn new(k: usize, hr: (usize, usize)) -> Result<Self> {
        if k == 0 || k.is_multiple_of(2) {
            return Err(GhrError::invalid(format!(
                "decomposition factor {k} must be odd (a center cell is required)"
            )));
        }
        if !hr.0.is_multiple_of(k) || !hr.1.is_multiple_of(k) {
            return Err(GhrError::Grid(format!(
                "{}×{} grid is not divisible by {k}",
                hr.0, hr.1
            )));
        }
        Ok(Self {
            k,
            hr,
            lr: (hr.0 / k, hr.1 / k),
        })
    }

    pub fn batch(&self) -> usize {
        self.k * self.k
    }

    /// HR coordinates of cell `(i, j)` of sub-field `b`.
    pub fn hr_cell(&self, b: usize, i: usize, j: usize) -> (usize, usize) {
        (self.k * i + b / self.k, self.k * j + b % self.k)
    }

    /// `order[(b·H + i)·W + j]` = HR flat index of that sub-field cell.
    pub fn cell_order(&self) -> Vec<usize> {
        let (h, w) = self.lr;
        let mut order = Vec::with_capacity(self.batch() * h * w);
        for b in 0..self.batch() {
            for i in 0..h {
                for j in 0..w {
                    let (r, c) = self.hr_cell(b, i, j);
                    order.push(r * self.hr.1 + c);
                }
            }
        }
        order
    }

    /// Gather index from `[B, C, Hh, Wh]` to `[B·k², C, H, W]`.
    pub fn decompose_index(&self, batch: usize, channels: usize) -> Arc<[usize]> {
        let order = self.cell_order();
        let cells_lr = self.lr.0 * self.lr.1;
        let cells_hr = self.hr.0 * self.hr.1;
        let mut idx = Vec::with_capacity(batch * channels * cells_hr);
        for n in 0..batch {
            for b in 0..self.batch() {
                for c in 0..channels {
                    let src = (n * channels + c) * cells_hr;
                    idx.extend(
                        order[b * cells_lr..(b + 1) * cells_lr]
                            .iter()
                            .map(|&o| src + o),
                    );
                }
            }
        }
        idx.into()
    }

    /// Gather index from `[B·k², C, H, W]` back to `[B, C, Hh, Wh]`.
    pub fn recompose_index(&self, batch: usize, channels: usize) -> Arc<[usize]> {
        let fwd = self.decompose_index(batch, channels);
        let mut inv = vec![0; fwd.len()];
        for (i, &o) in fwd.iter().enumerate() {
            inv[o] = i;
        }
        inv.into()
    }
}

pub fn decompose_graph(tape: &mut Tape, layout: &SimeLayout, x: Var) -> Result<Var> {
    let (b, c, h, w) = match *tape.shape(x) {
        [b, c, h, w] => (b, c, h, w),
        ref s => return Err(GhrError::invalid(format!("expected [B,C,H,W], got {s:?}"))),
    };
    if (h, w) != layout.hr {
        return Err(GhrError::Grid(format!(
            "field {h}×{w} does not match layout {:?}",
            layout.hr
        )));
    }
    let shape = [b * layout.batch(), c, layout.lr.0, layout.lr.1];
    Ok(tape.gather(x, layout.decompose_index(b, c), &shape)?)
}

pub fn recompose_graph(tape: &mut Tape, layout: &SimeLayout, x: Var) -> Result<Var> {
    let (bk, c, h, w) = match *tape.shape(x) {
        [bk, c, h, w] => (bk, c, h, w),
        ref s => return Err(GhrError::invalid(format!("expected [B,C,H,W], got {s:?}"))),
    };
    if (h, w) != layout.lr || bk % layout.batch() != 0 {
        return Err(GhrError::invalid(format!(
            "batch [{bk}, {c}, {h}, {w}] is inconsistent with factor {} and LR grid {:?}",
            layout.k, layout.lr
        )));
    }
    let b = bk / layout.batch();
    let shape = [b, c, layout.hr.0, layout.hr.1];
    Ok(tape.gather(x, layout.recompose_index(b, c), &shape)?)
}

fn apply(x: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Splits an HR state into its `k²` sub-field states.
pub fn decompose(state: &WeatherState, k: usize) -> Result<(Vec<WeatherState>, SimeLayout)> {
    let layout = SimeLayout::new(k, (state.grid.n_lat, state.grid.n_lon))?;
    let c = state.channels();
    let x = state.values.reshape([1, c, layout.hr.0, layout.hr.1])?;
    let parts = apply(&x, |t, v| decompose_graph(t, &layout, v))?;
    let n = c * layout.lr.0 * layout.lr.1;
    let subs = (0..layout.batch())
        .map(|b| {
            let values = Tensor::new(
                [c, layout.lr.0, layout.lr.1],
                parts.data()[b * n..(b + 1) * n].to_vec(),
            )?;
            Ok(WeatherState {
                grid: state.grid.strided(b / k, b % k, k)?,
                values,
                ..state.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((subs, layout))
}

/// Inverse of [`decompose`].
pub fn recompose(
    parts: &[WeatherState],
    layout: &SimeLayout,
    hr_grid: &crate::grid::GridSpec,
) -> Result<WeatherState> {
    if parts.len() != layout.batch() {
        return Err(GhrError::invalid(format!(
            "{} sub-fields for factor {} (need {})",
            parts.len(),
            layout.k,
            layout.batch()
        )));
    }
    if (hr_grid.n_lat, hr_grid.n_lon) != layout.hr {
        return Err(GhrError::Grid("HR grid does not match layout".into()));
    }
    let first = &parts[0];
    for p in parts {
        if (p.grid.n_lat, p.grid.n_lon) != layout.lr
            || p.channels() != first.channels()
            || p.valid_time != first.valid_time
        {
            return Err(GhrError::invalid(
                "sub-fields disagree with each other or the layout",
            ));
        }
    }
    let c = first.channels();
    let stacked = crate::dataset::stack(parts.iter().map(|p| &p.values))?;
    let hr = apply(&stacked, |t, v| recompose_graph(t, layout, v))?;
    Ok(WeatherState {
        grid: hr_grid.clone(),
        values: hr.reshape([c, layout.hr.0, layout.hr.1])?,
        ..first.clone()
    })
}

/// One 6-hour step on `[B, C, Hh, Wh]` HR fields: decompose, run the meta
/// model (and RES modules, if given) on all sub-fields as one batch, recompose.
pub fn hr_forward_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &Bindings,
    layout: &SimeLayout,
    x: Var,
    res: Option<&ResConfig>,
    probe: Option<&mut AttentionProbe>,
) -> Result<Var> {
    let parts = decompose_graph(tape, layout, x)?;
    let y = forward_graph(tape, cfg, params, parts, res.map(|r| (r, layout.k)), probe)?;
    recompose_graph(tape, layout, y)
}

/// Attention score entries per head for one HR sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionCost {
    pub k: usize,
    pub tokens: usize,
    /// One global block over `k²` sub-fields of `N` tokens each.
    pub sime: u64,
    /// One global block over all `k²·N` HR tokens.
    pub naive: u64,
}

impl AttentionCost {
    pub fn ratio(&self) -> f64 {
        self.naive as f64 / self.sime as f64
    }
}

#[derive(Clone, Debug)]
pub struct SimeForecast {
    pub state: WeatherState,
    pub cost: AttentionCost,
    pub probe: AttentionProbe,
}

/// HR forecast with the LR meta model; the cost is read off the instrumented
/// global-attention score matrices.
pub fn sime_forward(
    x_hr: &WeatherState,
    params: &MetaModelParams,
    cfg: &ModelConfig,
    k: usize,
) -> Result<SimeForecast> {
    if x_hr.normalization.is_none() {
        return Err(GhrError::invalid("model input must be normalised"));
    }
    let layout = SimeLayout::new(k, (x_hr.grid.n_lat, x_hr.grid.n_lon))?;
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &params.0, false);
    let c = x_hr.channels();
    let x = tape.constant(x_hr.values.reshape([1, c, layout.hr.0, layout.hr.1])?);
    let mut probe = AttentionProbe::default();
    let y = hr_forward_graph(&mut tape, cfg, &bound, &layout, x, None, Some(&mut probe))?;
    let global = probe
        .records
        .iter()
        .find(|r| r.label.ends_with("/global"))
        .ok_or_else(|| GhrError::invalid("model has no global block"))?;
    let n = cfg.tokens() as u64;
    let cost = AttentionCost {
        k,
        tokens: cfg.tokens(),
        sime: (global.groups * global.rows * global.cols) as u64,
        naive: (layout.batch() as u64 * n).pow(2),
    };
    Ok(SimeForecast {
        state: WeatherState {
            values: tape.value(y).reshape(x_hr.values.shape())?,
            valid_time: x_hr.valid_time + time::step(),
            ..x_hr.clone()
        },
        cost,
        probe,
    })
}
