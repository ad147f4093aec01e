//! Regional attention modules over tokens at their true HR positions, and
//! their transfer-learning stage with the meta model frozen.

use std::sync::Arc;

use ghr_tensor::{Rng, Tape, Tensor, Var};

use crate::dataset::Dataset;
use crate::error::{GhrError, Result};
use crate::model::attention::{mhsa, AttnVars};
use crate::model::train::{
    fit, spread, weighted_mse, weighted_mse_value, TrainConfig, TrainReport,
};
use crate::model::window::{invert, partition_order, token_gather};
use crate::model::{
    AttentionProbe, Bindings, MetaModelParams, ModelConfig, Provenance, TokenSequence, Window,
};
use crate::params::ParamStore;
use crate::sime::{hr_forward_graph, SimeLayout};
use crate::verify::weights::latitude_weights;

#[derive(Clone, Debug, PartialEq)]
pub struct ResConfig {
    /// 1-based indices of the meta blocks each module follows, increasing.
    pub positions: Vec<usize>,
    /// Window on the HR token grid.
    pub window: Window,
}

impl ResConfig {
    pub fn toy(cfg: &ModelConfig) -> Self {
        Self {
            positions: vec![cfg.blocks / 2, cfg.blocks],
            window: Window::new(4, 4),
        }
    }

    pub fn violations(&self, cfg: &ModelConfig, k: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.positions.windows(2).any(|p| p[1] <= p[0]) {
            v.push(format!(
                "res.positions {:?} must be strictly increasing",
                self.positions
            ));
        }
        if self.positions.iter().any(|&p| p == 0 || p > cfg.blocks) {
            v.push(format!(
                "res.positions {:?} must lie in [1, {}]",
                self.positions, cfg.blocks
            ));
        }
        let (h, w) = cfg.token_grid();
        if !self.window.tiles((k * h, k * w)) {
            v.push(format!(
                "res.window {} does not tile the {}×{} HR token grid",
                self.window,
                k * h,
                k * w
            ));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResParams(pub ParamStore);

pub fn res_prefix(j: usize) -> String {
    format!("res.{j}")
}

/// Output projections start at zero, so every module is the identity at init.
pub fn init_res(cfg: &ModelConfig, rc: &ResConfig, seed: u64) -> ResParams {
    let mut rng = Rng::derived(seed, 0x5245_5300);
    let d = cfg.dim;
    let mut store = ParamStore::new();
    for j in 0..rc.positions.len() {
        let p = res_prefix(j);
        store.insert(format!("{p}.norm.gain"), Tensor::ones([d]));
        store.insert(format!("{p}.norm.offset"), Tensor::zeros([d]));
        for m in ["wq", "wk", "wv"] {
            store.insert(
                format!("{p}.attn.{m}"),
                rng.normal_tensor([d, d], (d as f32).sqrt().recip()),
            );
        }
        store.insert(format!("{p}.attn.wo"), Tensor::zeros([d, d]));
    }
    ResParams(store)
}

/// `order[T]` = index into the stacked `[k²·N]` tokens of HR token `T`,
/// where sub-field `b` token `(i, j)` sits at HR token `(k·i + b/k, k·j + b%k)`.
pub fn rearrange_order(grid: (usize, usize), k: usize) -> Vec<usize> {
    let (h, w) = grid;
    let (hh, wh) = (k * h, k * w);
    let mut order = Vec::with_capacity(hh * wh);
    for r in 0..hh {
        for c in 0..wh {
            let b = (r % k) * k + c % k;
            order.push((b * h + r / k) * w + c / k);
        }
    }
    order
}

fn check_sime(seq: &TokenSequence, layout_k: usize) -> Result<(usize, usize, usize)> {
    match seq.provenance {
        Provenance::Sime { k } if k == layout_k => {}
        other => {
            return Err(GhrError::invalid(format!(
                "RES needs a SIME-decomposed sequence with factor {layout_k}, got {other:?}"
            )))
        }
    }
    match *seq.values.shape() {
        [bk, n, d] if bk % (layout_k * layout_k) == 0 && n == seq.grid.0 * seq.grid.1 => {
            Ok((bk / (layout_k * layout_k), n, d))
        }
        ref s => Err(GhrError::invalid(format!(
            "sequence shape {s:?} inconsistent with factor {layout_k}"
        ))),
    }
}

/// `[B·k², N, D]` sub-field tokens → `[B, k²·N, D]` on the HR token grid.
pub fn res_rearrange(seq: &TokenSequence, layout: &SimeLayout) -> Result<TokenSequence> {
    let (b, n, d) = check_sime(seq, layout.k)?;
    let k = layout.k;
    let order = rearrange_order(seq.grid, k);
    let mut tape = Tape::new();
    let x = tape.constant(seq.values.clone());
    let y = tape.gather(x, token_gather(b, &order, d), &[b, k * k * n, d])?;
    Ok(TokenSequence {
        values: tape.value(y).clone(),
        grid: (k * seq.grid.0, k * seq.grid.1),
        provenance: Provenance::Plain,
    })
}

/// Inverse of [`res_rearrange`]; `lr_grid` is the sub-field token grid.
pub fn res_restore(
    seq: &TokenSequence,
    layout: &SimeLayout,
    lr_grid: (usize, usize),
) -> Result<TokenSequence> {
    let k = layout.k;
    let n = lr_grid.0 * lr_grid.1;
    let (b, d) = match *seq.values.shape() {
        [b, kn, d] if kn == k * k * n && seq.grid == (k * lr_grid.0, k * lr_grid.1) => (b, d),
        ref s => {
            return Err(GhrError::invalid(format!(
                "HR token sequence {s:?} inconsistent with layout"
            )))
        }
    };
    let inv = invert(&rearrange_order(lr_grid, k));
    let mut tape = Tape::new();
    let x = tape.constant(seq.values.clone());
    let y = tape.gather(x, token_gather(b, &inv, d), &[b * k * k, n, d])?;
    Ok(TokenSequence {
        values: tape.value(y).clone(),
        grid: lr_grid,
        provenance: Provenance::Sime { k },
    })
}

/// RES module `j` on `[B·k², N, D]` sub-field tokens: rearrange to HR token
/// positions and partition into windows in one gather, pre-norm attention
/// with residual, then the inverse gather.
#[allow(clippy::too_many_arguments)]
pub fn res_module_graph(
    tape: &mut Tape,
    x: Var,
    params: &Bindings,
    j: usize,
    grid: (usize, usize),
    k: usize,
    window: Window,
    heads: usize,
    probe: Option<&mut AttentionProbe>,
) -> Result<Var> {
    let (bk, n, d) = match *tape.shape(x) {
        [bk, n, d] if bk % (k * k) == 0 && n == grid.0 * grid.1 => (bk, n, d),
        ref s => {
            return Err(GhrError::invalid(format!(
                "RES input {s:?} is not a factor-{k} SIME batch"
            )))
        }
    };
    let b = bk / (k * k);
    let hr_grid = (k * grid.0, k * grid.1);
    let rearr = rearrange_order(grid, k);
    let composite: Vec<usize> = partition_order(hr_grid, window)?
        .into_iter()
        .map(|t| rearr[t])
        .collect();
    let s = window.size();
    let groups = b * k * k * n / s;
    let fwd: Arc<[usize]> = token_gather(b, &composite, d);
    let parts = tape.gather(x, fwd, &[groups, s, d])?;
    let p = res_prefix(j);
    let h = tape.layer_norm(
        parts,
        params.get(&format!("{p}.norm.gain"))?,
        params.get(&format!("{p}.norm.offset"))?,
    )?;
    let a = mhsa(
        tape,
        h,
        AttnVars::bound(params, &format!("{p}.attn"))?,
        heads,
        probe,
        &p,
    )?;
    let y = tape.add(parts, a)?;
    let back = token_gather(b, &invert(&composite), d);
    Ok(tape.gather(y, back, &[bk, n, d])?)
}

/// Value-level RES module on a SIME-decomposed token sequence.
pub fn res_module(
    seq: &TokenSequence,
    layout: &SimeLayout,
    params: &ResParams,
    j: usize,
    rc: &ResConfig,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    check_sime(seq, layout.k)?;
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &params.0, false);
    let x = tape.constant(seq.values.clone());
    let y = res_module_graph(
        &mut tape, x, &bound, j, seq.grid, layout.k, rc.window, cfg.heads, None,
    )?;
    Ok(TokenSequence {
        values: tape.value(y).clone(),
        ..seq.clone()
    })
}

/// HR single-step validation loss with meta + RES parameters merged in `params`.
pub fn hr_step_loss(
    cfg: &ModelConfig,
    params: &ParamStore,
    rc: Option<&ResConfig>,
    layout: &SimeLayout,
    data: &Dataset,
    starts: &[usize],
    batch: usize,
) -> Result<f64> {
    let weights = latitude_weights(&data.grid).0;
    let mut total = 0.0;
    for chunk in starts.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let bound = Bindings::bind(&mut tape, params, false);
        let x = tape.constant(data.batch(chunk)?);
        let next: Vec<usize> = chunk.iter().map(|i| i + 1).collect();
        let y = data.batch(&next)?;
        let pred = hr_forward_graph(&mut tape, cfg, &bound, layout, x, rc, None)?;
        total += weighted_mse_value(tape.value(pred), &y, &weights) * chunk.len() as f64;
    }
    Ok(total / starts.len() as f64)
}

#[derive(Clone, Debug)]
pub struct DctlReport {
    /// HR validation loss of plain SIME (no RES).
    pub sime_baseline: f64,
    pub train: TrainReport,
    pub trained_params: usize,
    pub total_params: usize,
    pub meta_checksum_before: u64,
    pub meta_checksum_after: u64,
}

impl DctlReport {
    pub fn trained_fraction(&self) -> f64 {
        self.trained_params as f64 / self.total_params as f64
    }
}

/// Trains the RES modules on HR six-hour pairs; the meta model is bound as
/// constants and must receive no gradient.
#[allow(clippy::too_many_arguments)]
pub fn dctl_train(
    cfg: &ModelConfig,
    meta: &MetaModelParams,
    res: &mut ResParams,
    rc: &ResConfig,
    layout: &SimeLayout,
    train: &Dataset,
    val: &Dataset,
    hp: &TrainConfig,
    val_samples: usize,
) -> Result<DctlReport> {
    let v = rc.violations(cfg, layout.k);
    if !v.is_empty() {
        return Err(GhrError::Config(v));
    }
    let starts = train.windows(1);
    let val_starts = spread(&val.windows(1), val_samples);
    if starts.is_empty() || val_starts.is_empty() {
        return Err(GhrError::invalid(
            "HR splits need consecutive six-hour pairs",
        ));
    }
    let before = meta.0.checksum();
    let sime_baseline = hr_step_loss(cfg, &meta.0, None, layout, val, &val_starts, hp.batch)?;
    let weights = latitude_weights(&train.grid).0;
    let report = fit(
        "dctl",
        &mut res.0,
        &meta.0,
        hp,
        |tape, bound, rng| {
            let idx: Vec<usize> = (0..hp.batch)
                .map(|_| starts[rng.below(starts.len())])
                .collect();
            let next: Vec<usize> = idx.iter().map(|i| i + 1).collect();
            let x = tape.constant(train.batch(&idx)?);
            let y = tape.constant(train.batch(&next)?);
            let pred = hr_forward_graph(tape, cfg, bound, layout, x, Some(rc), None)?;
            weighted_mse(tape, pred, y, &weights)
        },
        |r| {
            let mut all = meta.0.clone();
            all.extend(r.clone());
            hr_step_loss(cfg, &all, Some(rc), layout, val, &val_starts, hp.batch)
        },
    )?;
    Ok(DctlReport {
        sime_baseline,
        trained_params: res.0.numel(),
        total_params: res.0.numel() + meta.count(),
        train: report,
        meta_checksum_before: before,
        meta_checksum_after: meta.0.checksum(),
    })
}
