//! Token-grid window partitioning as index permutations.

use std::sync::Arc;

use ghr_tensor::{Tape, Tensor, Var};

use super::config::Window;
use crate::error::{GhrError, Result};

/// `order[g·S + s]` is the row-major token index of token `s` in window `g`.
/// Windows are numbered row-major over the window grid, tokens row-major within.
pub fn partition_order(grid: (usize, usize), window: Window) -> Result<Vec<usize>> {
    window.check_tiles(grid)?;
    let (h, w) = grid;
    let (r, c) = (window.rows, window.cols);
    let mut order = Vec::with_capacity(h * w);
    for wi in 0..h / r {
        for wj in 0..w / c {
            for ri in 0..r {
                for ci in 0..c {
                    order.push((wi * r + ri) * w + wj * c + ci);
                }
            }
        }
    }
    Ok(order)
}

pub fn invert(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

/// Expands a per-group token permutation to a flat gather index over
/// `[groups, tokens, dim]` values.
pub fn token_gather(groups: usize, order: &[usize], dim: usize) -> Arc<[usize]> {
    let n = order.len();
    let mut idx = Vec::with_capacity(groups * n * dim);
    for g in 0..groups {
        for &t in order {
            let base = (g * n + t) * dim;
            idx.extend(base..base + dim);
        }
    }
    idx.into()
}

fn tokens_shape(tape: &Tape, x: Var, grid: (usize, usize)) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [b, n, d] if n == grid.0 * grid.1 => Ok((b, n, d)),
        ref s => Err(GhrError::invalid(format!(
            "expected [B, {}, D] tokens, got {s:?}",
            grid.0 * grid.1
        ))),
    }
}

/// `[B, N, D]` → `[B·G, S, D]`.
pub fn partition(tape: &mut Tape, x: Var, grid: (usize, usize), window: Window) -> Result<Var> {
    let (b, n, d) = tokens_shape(tape, x, grid)?;
    let order = partition_order(grid, window)?;
    let g = n / window.size();
    Ok(tape.gather(x, token_gather(b, &order, d), &[b * g, window.size(), d])?)
}

/// `[B·G, S, D]` → `[B, N, D]`; exact inverse of [`partition`].
pub fn reverse(tape: &mut Tape, x: Var, grid: (usize, usize), window: Window) -> Result<Var> {
    let order = partition_order(grid, window)?;
    let n = order.len();
    let s = window.size();
    let (bg, d) = match *tape.shape(x) {
        [bg, ss, d] if ss == s && bg % (n / s) == 0 => (bg, d),
        ref sh => {
            return Err(GhrError::invalid(format!(
                "expected [B·{}, {s}, D] windows, got {sh:?}",
                n / s
            )))
        }
    };
    let b = bg / (n / s);
    Ok(tape.gather(x, token_gather(b, &invert(&order), d), &[b, n, d])?)
}

/// Value-level partition of `[B, N, D]`.
pub fn window_partition(x: &Tensor, grid: (usize, usize), window: Window) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = partition(&mut tape, v, grid, window)?;
    Ok(tape.value(out).clone())
}

pub fn window_reverse(x: &Tensor, grid: (usize, usize), window: Window) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = reverse(&mut tape, v, grid, window)?;
    Ok(tape.value(out).clone())
}
