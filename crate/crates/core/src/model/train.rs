//! Latitude-weighted MSE, AdamW, and the shared optimisation loop.

use std::collections::HashMap;

use ghr_tensor::{Rng, Tape, Tensor, Var};

use super::config::ModelConfig;
use super::meta::forward_graph;
use super::params::{init_meta, Bindings, MetaModelParams};
use crate::dataset::Dataset;
use crate::error::{GhrError, Result};
use crate::params::ParamStore;
use crate::verify::weights::latitude_weights;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub min_lr_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; zero disables.
    pub clip: f64,
    pub seed: u64,
    /// Validation cadence in steps; zero evaluates only at the start and end.
    pub eval_every: usize,
    /// Restore the parameters with the lowest validation loss at the end.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 8,
            lr: 2e-3,
            warmup: 25,
            min_lr_frac: 0.05,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 1.0,
            seed: 0,
            eval_every: 50,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let p = ((step - self.warmup) as f64 / span).min(1.0);
        let floor = self.lr * self.min_lr_frac;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Adam with decoupled weight decay on tensors of rank ≥ 2.
#[derive(Clone, Debug, Default)]
pub struct AdamW {
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &[(String, Tensor)],
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let decay = if p.rank() >= 2 { cfg.weight_decay } else { 0.0 };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.numel()]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi as f64;
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
                let wv = *w as f64;
                *w = (wv - lr * (update + decay * wv)) as f32;
            }
        }
        Ok(())
    }
}

/// Latitude-weighted mean squared error of `[B, C, H, W]` fields.
pub fn weighted_mse(tape: &mut Tape, pred: Var, target: Var, weights: &[f64]) -> Result<Var> {
    let h = weights.len();
    let shape = tape.shape(pred).to_vec();
    if shape.len() != 4 || shape[2] != h {
        return Err(GhrError::invalid(format!(
            "loss over {shape:?} with {h} latitude weights"
        )));
    }
    let w = tape.constant(Tensor::new(
        [h, 1],
        weights.iter().map(|&x| x as f32).collect(),
    )?);
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let wsq = tape.mul(sq, w)?;
    Ok(tape.mean(wsq))
}

/// Same quantity computed directly in 64-bit.
pub fn weighted_mse_value(pred: &Tensor, target: &Tensor, weights: &[f64]) -> f64 {
    let s = pred.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut acc = 0.0;
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p as f64 - t as f64;
        acc += weights[i / w % h] * d * d;
    }
    acc / pred.numel() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub initial_val: f64,
    pub final_val: f64,
    pub best_val: f64,
    pub best_step: usize,
    pub trained_params: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,val_loss\n");
        for p in &self.curve {
            let v = p.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.9e},{v}\n", p.step, p.train_loss));
        }
        s
    }
}

fn global_norm(grads: &[(String, Tensor)]) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Minimises `loss_fn` over `trainable` with `frozen` bound as constants.
///
/// `loss_fn` builds one step's loss on a fresh tape; `eval_fn` returns the
/// validation loss of the current trainable parameters. Any gradient on a
/// frozen parameter fails with [`GhrError::FrozenGradient`].
pub fn fit(
    stage: &'static str,
    trainable: &mut ParamStore,
    frozen: &ParamStore,
    cfg: &TrainConfig,
    mut loss_fn: impl FnMut(&mut Tape, &Bindings, &mut Rng) -> Result<Var>,
    mut eval_fn: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<TrainReport> {
    let mut rng = Rng::derived(cfg.seed, 0x7472_6169);
    let mut opt = AdamW::new();
    let initial_val = eval_fn(trainable)?;
    let mut report = TrainReport {
        initial_val,
        best_val: initial_val,
        trained_params: trainable.numel(),
        ..TrainReport::default()
    };
    let mut best = trainable.clone();
    let mut last_val = initial_val;
    report.curve.push(CurvePoint {
        step: 0,
        train_loss: f64::NAN,
        val_loss: Some(initial_val),
    });
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let mut bound = Bindings::bind(&mut tape, frozen, false);
        let frozen_vars: Vec<(String, Var)> =
            bound.iter().map(|(n, v)| (n.to_string(), v)).collect();
        bound.add(&mut tape, trainable, true);
        let loss = loss_fn(&mut tape, &bound, &mut rng)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(GhrError::NonFinite {
                stage,
                step: step + 1,
                detail: format!("training loss {value}"),
            });
        }
        tape.backward(loss)?;
        for (name, v) in &frozen_vars {
            if tape.requires_grad(*v) || tape.grad(*v).is_some() {
                return Err(GhrError::FrozenGradient(name.clone()));
            }
        }
        let mut grads = bound.grads(&tape, trainable)?;
        let norm = global_norm(&grads);
        if !norm.is_finite() {
            return Err(GhrError::NonFinite {
                stage,
                step: step + 1,
                detail: format!("gradient norm {norm}"),
            });
        }
        if cfg.clip > 0.0 && norm > cfg.clip {
            let s = (cfg.clip / norm) as f32;
            for (_, g) in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
        opt.step(trainable, &grads, cfg.lr_at(step), cfg)?;
        let done = step + 1;
        let eval_now = done == cfg.steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        let val = if eval_now {
            let v = eval_fn(trainable)?;
            if !v.is_finite() {
                return Err(GhrError::NonFinite {
                    stage,
                    step: done,
                    detail: format!("validation loss {v}"),
                });
            }
            if v < report.best_val {
                report.best_val = v;
                report.best_step = done;
                if cfg.keep_best {
                    best = trainable.clone();
                }
            }
            last_val = v;
            Some(v)
        } else {
            None
        };
        report.curve.push(CurvePoint {
            step: done,
            train_loss: value,
            val_loss: val,
        });
    }
    report.final_val = last_val;
    if cfg.keep_best {
        *trainable = best;
        report.final_val = report.best_val;
    }
    Ok(report)
}

/// Evenly spaced subset of at most `n` indices.
pub fn spread(indices: &[usize], n: usize) -> Vec<usize> {
    if indices.len() <= n {
        return indices.to_vec();
    }
    (0..n).map(|i| indices[i * indices.len() / n]).collect()
}

/// Validation loss of single-step forecasts on `(x_t, x_{t+1})` pairs.
pub fn single_step_loss(
    cfg: &ModelConfig,
    params: &ParamStore,
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
        let pred = forward_graph(&mut tape, cfg, &bound, x, None, None)?;
        total += weighted_mse_value(tape.value(pred), &y, &weights) * chunk.len() as f64;
    }
    Ok(total / starts.len() as f64)
}

/// Trains the meta model on six-hour pairs of the LR training split.
pub fn pretrain(
    cfg: &ModelConfig,
    train: &Dataset,
    val: &Dataset,
    hp: &TrainConfig,
    val_samples: usize,
) -> Result<(MetaModelParams, TrainReport)> {
    let mut params = init_meta(cfg, hp.seed)?.0;
    let starts = train.windows(1);
    if starts.is_empty() {
        return Err(GhrError::invalid("training split has no consecutive pairs"));
    }
    let val_starts = spread(&val.windows(1), val_samples);
    if val_starts.is_empty() {
        return Err(GhrError::invalid(
            "validation split has no consecutive pairs",
        ));
    }
    let weights = latitude_weights(&train.grid).0;
    let report = fit(
        "pretrain",
        &mut params,
        &ParamStore::new(),
        hp,
        |tape, bound, rng| {
            let idx: Vec<usize> = (0..hp.batch)
                .map(|_| starts[rng.below(starts.len())])
                .collect();
            let next: Vec<usize> = idx.iter().map(|i| i + 1).collect();
            let x = tape.constant(train.batch(&idx)?);
            let y = tape.constant(train.batch(&next)?);
            let pred = forward_graph(tape, cfg, bound, x, None, None)?;
            weighted_mse(tape, pred, y, &weights)
        },
        |p| single_step_loss(cfg, p, val, &val_starts, hp.batch),
    )?;
    Ok((MetaModelParams(params), report))
}
