use ghr_tensor::{Tape, Tensor, Var};

use super::attention::{transformer_block, AttentionProbe};
use super::config::{AttentionMode, ModelConfig};
use super::params::{block_prefix, Bindings, MetaModelParams};
use crate::error::{GhrError, Result};
use crate::res::{res_module_graph, ResConfig};
use crate::state::WeatherState;
use crate::time;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Plain,
    /// Batch of `k²` sub-field sequences per HR sample, sub-field index fastest.
    Sime {
        k: usize,
    },
}

/// Embedded tokens `[B, N, D]` on a `grid.0 × grid.1` token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub values: Tensor,
    pub grid: (usize, usize),
    pub provenance: Provenance,
}

/// Patch embedding: `[B, C, H, W]` → `[B, N, D]` plus bias and position embedding.
pub fn embed_graph(tape: &mut Tape, cfg: &ModelConfig, params: &Bindings, x: Var) -> Result<Var> {
    let (b, c, h, w) = match *tape.shape(x) {
        [b, c, h, w] => (b, c, h, w),
        ref s => {
            return Err(GhrError::invalid(format!(
                "model input must be [B,C,H,W], got {s:?}"
            )))
        }
    };
    if (c, h, w) != (cfg.channels, cfg.n_lat, cfg.n_lon) {
        return Err(GhrError::Grid(format!(
            "input {c}×{h}×{w} does not match the model's {}×{}×{}",
            cfg.channels, cfg.n_lat, cfg.n_lon
        )));
    }
    let (d, n) = (cfg.dim, cfg.tokens());
    let e = tape.patch_conv(x, params.get("embed.kernel")?)?;
    let e = tape.reshape(e, &[b, d, n])?;
    let e = tape.permute(e, &[0, 2, 1])?;
    let e = tape.add(e, params.get("embed.bias")?)?;
    Ok(tape.add(e, params.get("pos")?)?)
}

/// Final norm and deconvolution back to `[B, C, H, W]` increments.
fn head_graph(tape: &mut Tape, cfg: &ModelConfig, params: &Bindings, s: Var) -> Result<Var> {
    let b = tape.shape(s)[0];
    let (th, tw) = cfg.token_grid();
    let s = tape.layer_norm(
        s,
        params.get("head.norm.gain")?,
        params.get("head.norm.offset")?,
    )?;
    let s = tape.permute(s, &[0, 2, 1])?;
    let s = tape.reshape(s, &[b, cfg.dim, th, tw])?;
    let y = tape.patch_deconv(s, params.get("head.kernel")?)?;
    let bias = tape.reshape(params.get("head.bias")?, &[cfg.channels, 1, 1])?;
    Ok(tape.add(y, bias)?)
}

/// One 6-hour step on `[B, C, H, W]` normalised fields: `x + increment(x)`.
///
/// With `res = Some((config, k))` the batch must be a SIME-decomposed stack
/// of `k²` sub-fields per sample, and the RES modules run after their blocks.
pub fn forward_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &Bindings,
    x: Var,
    res: Option<(&ResConfig, usize)>,
    mut probe: Option<&mut AttentionProbe>,
) -> Result<Var> {
    let grid = cfg.token_grid();
    let mut s = embed_graph(tape, cfg, params, x)?;
    for (i, mode) in cfg.schedule().into_iter().enumerate() {
        s = transformer_block(
            tape,
            s,
            params,
            &block_prefix(i),
            grid,
            mode,
            cfg.heads,
            probe.as_deref_mut(),
        )?;
        if let Some((rc, k)) = res {
            if let Some(j) = rc.positions.iter().position(|&p| p == i + 1) {
                s = res_module_graph(
                    tape,
                    s,
                    params,
                    j,
                    grid,
                    k,
                    rc.window,
                    cfg.heads,
                    probe.as_deref_mut(),
                )?;
            }
        }
    }
    let inc = head_graph(tape, cfg, params, s)?;
    Ok(tape.add(x, inc)?)
}

fn state_input(state: &WeatherState, cfg: &ModelConfig) -> Result<Tensor> {
    if state.normalization.is_none() {
        return Err(GhrError::invalid("model input must be normalised"));
    }
    let [c, h, w] = [state.channels(), state.grid.n_lat, state.grid.n_lon];
    if (c, h, w) != (cfg.channels, cfg.n_lat, cfg.n_lon) {
        return Err(GhrError::Grid(format!(
            "state {c}×{h}×{w} does not match the model's {}×{}×{}",
            cfg.channels, cfg.n_lat, cfg.n_lon
        )));
    }
    Ok(state.values.reshape([1, c, h, w])?)
}

pub fn embed(
    state: &WeatherState,
    params: &MetaModelParams,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    let (h, w, p) = (state.grid.n_lat, state.grid.n_lon, cfg.patch);
    if h % p != 0 || w % p != 0 {
        return Err(GhrError::Grid(format!(
            "{h}×{w} grid is not divisible by patch {p}"
        )));
    }
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &params.0, false);
    let x = tape.constant(state_input(state, cfg)?);
    let s = embed_graph(&mut tape, cfg, &bound, x)?;
    Ok(TokenSequence {
        values: tape.value(s).clone(),
        grid: cfg.token_grid(),
        provenance: Provenance::Plain,
    })
}

/// One block applied to a token sequence.
pub fn attention_block(
    seq: &TokenSequence,
    params: &MetaModelParams,
    block: usize,
    mode: AttentionMode,
    cfg: &ModelConfig,
    probe: Option<&mut AttentionProbe>,
) -> Result<TokenSequence> {
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &params.0, false);
    let x = tape.constant(seq.values.clone());
    let y = transformer_block(
        &mut tape,
        x,
        &bound,
        &block_prefix(block),
        seq.grid,
        mode,
        cfg.heads,
        probe,
    )?;
    Ok(TokenSequence {
        values: tape.value(y).clone(),
        ..seq.clone()
    })
}

/// The state six hours after `state`.
pub fn forward(
    state: &WeatherState,
    params: &MetaModelParams,
    cfg: &ModelConfig,
    probe: Option<&mut AttentionProbe>,
) -> Result<WeatherState> {
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &params.0, false);
    let x = tape.constant(state_input(state, cfg)?);
    let y = forward_graph(&mut tape, cfg, &bound, x, None, probe)?;
    let values = tape.value(y).reshape(state.values.shape())?;
    Ok(WeatherState {
        values,
        valid_time: state.valid_time + time::step(),
        ..state.clone()
    })
}
