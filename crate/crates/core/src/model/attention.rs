use ghr_tensor::{Tape, Var};

use super::config::AttentionMode;
use super::params::{Bindings, LowRank};
use super::window;
use crate::error::{GhrError, Result};

/// Shape of one batch of attention score matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreRecord {
    pub label: String,
    /// Independent attention groups (batch × windows).
    pub groups: usize,
    pub heads: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ScoreRecord {
    pub fn entries(&self) -> u64 {
        (self.groups * self.heads * self.rows * self.cols) as u64
    }
}

/// Collects the score-matrix shapes of every attention call on its way through.
#[derive(Clone, Debug, Default)]
pub struct AttentionProbe {
    pub records: Vec<ScoreRecord>,
}

/// Projection weights of one attention layer, `[D, D]` each.
#[derive(Clone, Copy, Debug)]
pub struct AttnVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    /// Unmerged updates for `wq, wk, wv, wo`.
    pub low_rank: [Option<LowRank>; 4],
}

impl AttnVars {
    pub fn bound(b: &Bindings, prefix: &str) -> Result<Self> {
        let name = |m: &str| format!("{prefix}.{m}");
        Ok(Self {
            wq: b.get(&name("wq"))?,
            wk: b.get(&name("wk"))?,
            wv: b.get(&name("wv"))?,
            wo: b.get(&name("wo"))?,
            low_rank: ["wq", "wk", "wv", "wo"].map(|m| b.low_rank(&name(m))),
        })
    }
}

fn project(tape: &mut Tape, x: Var, w: Var, low_rank: Option<LowRank>) -> Result<Var> {
    let y = tape.linear(x, w, None)?;
    let Some(lr) = low_rank else {
        return Ok(y);
    };
    let h = tape.linear(x, lr.a, None)?;
    let d = tape.linear(h, lr.b, None)?;
    let d = tape.scale(d, lr.beta);
    Ok(tape.add(y, d)?)
}

/// Multi-head self-attention over `[G, S, D]` groups, without biases.
pub fn mhsa(
    tape: &mut Tape,
    x: Var,
    w: AttnVars,
    heads: usize,
    probe: Option<&mut AttentionProbe>,
    label: &str,
) -> Result<Var> {
    let (g, s, d) = match *tape.shape(x) {
        [g, s, d] if d % heads == 0 => (g, s, d),
        ref sh => {
            return Err(GhrError::invalid(format!(
                "attention input {sh:?} with {heads} heads"
            )))
        }
    };
    let hd = d / heads;
    let split = |tape: &mut Tape, v: Var| -> Result<Var> {
        let r = tape.reshape(v, &[g, s, heads, hd])?;
        Ok(tape.permute(r, &[0, 2, 1, 3])?)
    };
    let q = project(tape, x, w.wq, w.low_rank[0])?;
    let k = project(tape, x, w.wk, w.low_rank[1])?;
    let v = project(tape, x, w.wv, w.low_rank[2])?;
    let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, (hd as f32).sqrt().recip());
    if let Some(p) = probe {
        p.records.push(ScoreRecord {
            label: label.to_string(),
            groups: g,
            heads,
            rows: s,
            cols: s,
        });
    }
    let attn = tape.softmax(scores, 3)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[g, s, d])?;
    project(tape, ctx, w.wo, w.low_rank[3])
}

/// Pre-norm block on `[B, N, D]` tokens: windowed attention with residual,
/// then a GELU feed-forward with residual.
pub fn transformer_block(
    tape: &mut Tape,
    x: Var,
    params: &Bindings,
    prefix: &str,
    grid: (usize, usize),
    mode: AttentionMode,
    heads: usize,
    probe: Option<&mut AttentionProbe>,
) -> Result<Var> {
    let p = |s: &str| params.get(&format!("{prefix}.{s}"));
    let h = tape.layer_norm(x, p("norm1.gain")?, p("norm1.offset")?)?;
    let attn = AttnVars::bound(params, &format!("{prefix}.attn"))?;
    let a = match mode {
        AttentionMode::Global => mhsa(tape, h, attn, heads, probe, &format!("{prefix}/global"))?,
        AttentionMode::Local(win) => {
            let parts = window::partition(tape, h, grid, win)?;
            let label = format!("{prefix}/local {win}");
            let out = mhsa(tape, parts, attn, heads, probe, &label)?;
            window::reverse(tape, out, grid, win)?
        }
    };
    let x = tape.add(x, a)?;
    let h = tape.layer_norm(x, p("norm2.gain")?, p("norm2.offset")?)?;
    let h = tape.linear(h, p("mlp.w1")?, Some(p("mlp.b1")?))?;
    let h = tape.gelu(h);
    let h = tape.linear(h, p("mlp.w2")?, Some(p("mlp.b2")?))?;
    Ok(tape.add(x, h)?)
}
