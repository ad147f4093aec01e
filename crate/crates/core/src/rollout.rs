//! Autoregressive multi-step forecasts and per-step adapter fine-tuning.

use ghr_tensor::{Tape, Tensor, Var};

use crate::dataset::{stack, Dataset};
use crate::error::{GhrError, Result};
use crate::lora::{a_name, b_name, merge_graph, LoraSet};
use crate::model::train::{
    fit, spread, weighted_mse, weighted_mse_value, TrainConfig, TrainReport,
};
use crate::model::{forward_graph, Bindings, MetaModelParams, ModelConfig};
use crate::params::ParamStore;
use crate::res::{ResConfig, ResParams};
use crate::sime::{hr_forward_graph, SimeLayout};
use crate::state::WeatherState;
use crate::time;
use crate::verify::weights::latitude_weights;

/// The frozen single-step model: meta parameters, optional RES modules and
/// the SIME factor. With `k = 1` and no RES it is the plain meta model.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub res: Option<ResConfig>,
    pub k: usize,
}

impl ForecastModel {
    pub fn new(
        cfg: &ModelConfig,
        meta: &MetaModelParams,
        res: Option<(&ResParams, &ResConfig)>,
        k: usize,
    ) -> Self {
        let mut params = meta.0.clone();
        if let Some((r, _)) = res {
            params.extend(r.0.clone());
        }
        Self {
            cfg: cfg.clone(),
            params,
            res: res.map(|(_, rc)| rc.clone()),
            k,
        }
    }

    fn plain(&self) -> bool {
        self.k == 1 && self.res.is_none()
    }

    /// One six-hour step on `[B, C, H, W]` normalised fields.
    pub fn step_graph(&self, tape: &mut Tape, bound: &Bindings, x: Var) -> Result<Var> {
        if self.plain() {
            return forward_graph(tape, &self.cfg, bound, x, None, None);
        }
        let (h, w) = match *tape.shape(x) {
            [_, _, h, w] => (h, w),
            ref s => {
                return Err(GhrError::invalid(format!(
                    "model input must be [B,C,H,W], got {s:?}"
                )))
            }
        };
        let layout = SimeLayout::new(self.k, (h, w))?;
        hr_forward_graph(tape, &self.cfg, bound, &layout, x, self.res.as_ref(), None)
    }

    /// Step without a gradient, using `params` in place of the stored ones.
    pub fn step_with(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = Bindings::bind(&mut tape, params, false);
        let xv = tape.constant(x.clone());
        let y = self.step_graph(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Unmerged-adapter step: `W0·x + β·B·(A·x)` inside every adapted projection.
    pub fn step_unmerged(&self, lora: &LoraSet, t: usize, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut bound = Bindings::bind(&mut tape, &self.params, false);
        lora.bind_unmerged(&mut tape, &mut bound, t)?;
        let xv = tape.constant(x.clone());
        let y = self.step_graph(&mut tape, &bound, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Parameters for rollout step `t` with its adapters merged.
    pub fn params_for(&self, lora: Option<&LoraSet>, t: usize) -> Result<ParamStore> {
        match lora {
            Some(l) => l.merged(&self.params, t),
            None => Ok(self.params.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RolloutPlan {
    /// Normalised initial state.
    pub initial: WeatherState,
    pub steps: usize,
    /// Emit every `cadence`-th step.
    pub cadence: usize,
}

#[derive(Clone, Debug)]
pub struct LeadState {
    pub step: usize,
    pub lead_hours: u32,
    pub state: WeatherState,
}

/// Rolls a batch `[B, C, H, W]` forward `steps` times, calling `emit(t, x_t)`
/// after every step.
pub fn rollout_batch(
    model: &ForecastModel,
    lora: Option<&LoraSet>,
    x0: &Tensor,
    steps: usize,
    mut emit: impl FnMut(usize, &Tensor) -> Result<()>,
) -> Result<()> {
    let mut cached: Option<(usize, ParamStore)> = None;
    let mut x = x0.clone();
    for t in 1..=steps {
        let key = lora.map_or(0, |l| t.min(l.t_max()));
        if cached.as_ref().map(|(k, _)| *k) != Some(key) {
            cached = Some((key, model.params_for(lora, t)?));
        }
        let params = &cached.as_ref().expect("cached above").1;
        x = model.step_with(params, &x)?;
        if !x.all_finite() {
            return Err(GhrError::NonFinite {
                stage: "rollout",
                step: t,
                detail: "non-finite value in forecast state".into(),
            });
        }
        emit(t, &x)?;
    }
    Ok(())
}

/// `X^{t+1} = model(X^t)` with step `t`'s adapters merged.
pub fn rollout(
    plan: &RolloutPlan,
    model: &ForecastModel,
    lora: Option<&LoraSet>,
) -> Result<Vec<LeadState>> {
    if plan.steps == 0 || plan.cadence == 0 {
        return Err(GhrError::invalid(
            "rollout needs at least one step and a positive cadence",
        ));
    }
    if plan.initial.normalization.is_none() {
        return Err(GhrError::invalid("rollout input must be normalised"));
    }
    let s = &plan.initial;
    let shape = [1, s.channels(), s.grid.n_lat, s.grid.n_lon];
    let mut out = Vec::new();
    rollout_batch(
        model,
        lora,
        &s.values.reshape(shape)?,
        plan.steps,
        |t, x| {
            if t % plan.cadence == 0 {
                out.push(LeadState {
                    step: t,
                    lead_hours: (t * time::STEP_HOURS as usize) as u32,
                    state: WeatherState {
                        values: x.reshape(s.values.shape())?,
                        valid_time: s.valid_time + time::step() * t as i32,
                        ..s.clone()
                    },
                });
            }
            Ok(())
        },
    )?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub step: usize,
    pub train: TrainReport,
    /// Checksum of every step's adapters once this stage is done.
    pub adapter_checksums: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct LoraReport {
    pub stages: Vec<StageReport>,
    pub base_checksum_before: u64,
    pub base_checksum_after: u64,
}

impl LoraReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,initial_val,final_val,best_step\n");
        for st in &self.stages {
            s.push_str(&format!(
                "{},{:.9e},{:.9e},{}\n",
                st.step, st.train.initial_val, st.train.final_val, st.train.best_step
            ));
        }
        s
    }
}

/// Rolled-forward samples of one split: current states and their start indices.
struct Pool<'a> {
    data: &'a Dataset,
    starts: Vec<usize>,
    states: Vec<Tensor>,
}

impl<'a> Pool<'a> {
    fn new(data: &'a Dataset, starts: Vec<usize>) -> Self {
        let states = starts.iter().map(|&i| data.values[i].clone()).collect();
        Self {
            data,
            starts,
            states,
        }
    }

    fn inputs(&self, rows: &[usize]) -> Result<Tensor> {
        stack(rows.iter().map(|&r| &self.states[r]))
    }

    fn targets(&self, rows: &[usize], t: usize) -> Result<Tensor> {
        self.data
            .batch(&rows.iter().map(|&r| self.starts[r] + t).collect::<Vec<_>>())
    }

    fn advance(&mut self, model: &ForecastModel, params: &ParamStore, batch: usize) -> Result<()> {
        let rows: Vec<usize> = (0..self.states.len()).collect();
        let mut next = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(batch.max(1)) {
            let y = model.step_with(params, &self.inputs(chunk)?)?;
            let per = y.numel() / chunk.len();
            let shape = self.states[0].shape().to_vec();
            for (i, _) in chunk.iter().enumerate() {
                next.push(Tensor::new(
                    shape.clone(),
                    y.data()[i * per..(i + 1) * per].to_vec(),
                )?);
            }
        }
        self.states = next;
        Ok(())
    }

    fn loss(
        &self,
        model: &ForecastModel,
        params: &ParamStore,
        t: usize,
        batch: usize,
    ) -> Result<f64> {
        let weights = latitude_weights(&self.data.grid).0;
        let rows: Vec<usize> = (0..self.states.len()).collect();
        let mut total = 0.0;
        for chunk in rows.chunks(batch.max(1)) {
            let y = model.step_with(params, &self.inputs(chunk)?)?;
            total +=
                weighted_mse_value(&y, &self.targets(chunk, t)?, &weights) * chunk.len() as f64;
        }
        Ok(total / rows.len() as f64)
    }
}

/// Tunes each step's adapters in turn on the step-`t` target, with earlier
/// steps rolled forward through their tuned adapters outside the gradient
/// tape. Only `(A^t, B^t)` is trainable; each stage keeps the best
/// validation candidate, the zero update included.
#[allow(clippy::too_many_arguments)]
pub fn lora_finetune(
    model: &ForecastModel,
    lora: &mut LoraSet,
    train: &Dataset,
    val: &Dataset,
    hp: &TrainConfig,
    pool_size: usize,
    val_samples: usize,
) -> Result<LoraReport> {
    let t_max = lora.t_max();
    let starts = spread(&train.windows(t_max), pool_size);
    let val_starts = spread(&val.windows(t_max), val_samples);
    if starts.is_empty() || val_starts.is_empty() {
        return Err(GhrError::invalid(format!(
            "fine-tuning needs trajectories of at least {} states in both splits",
            t_max + 1
        )));
    }
    let before = model.params.checksum();
    let mut pool = Pool::new(train, starts);
    let mut vpool = Pool::new(val, val_starts);
    let weights = latitude_weights(&train.grid).0;
    let beta = lora.config.beta();
    let matrices = lora.matrices();
    let hp = TrainConfig {
        keep_best: true,
        ..hp.clone()
    };
    let mut stages = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        if !lora.is_zero(t) {
            return Err(GhrError::invalid(format!(
                "adapters of step {t} are not zero before their stage"
            )));
        }
        let mut trainable = lora.steps[t - 1].clone();
        let stage_hp = TrainConfig {
            seed: hp.seed.wrapping_add(t as u64),
            ..hp.clone()
        };
        let n = pool.states.len();
        let report = fit(
            "lora-tune",
            &mut trainable,
            &model.params,
            &stage_hp,
            |tape, bound, rng| {
                let rows: Vec<usize> = (0..hp.batch).map(|_| rng.below(n)).collect();
                let x = tape.constant(pool.inputs(&rows)?);
                let y = tape.constant(pool.targets(&rows, t)?);
                let mut bound = bound.clone();
                for m in &matrices {
                    let w = merge_graph(
                        tape,
                        bound.get(m)?,
                        bound.get(&a_name(m))?,
                        bound.get(&b_name(m))?,
                        beta,
                    )?;
                    bound.set(m.clone(), w);
                }
                let pred = model.step_graph(tape, &bound, x)?;
                weighted_mse(tape, pred, y, &weights)
            },
            |cand| {
                let mut trial = lora.clone();
                trial.steps[t - 1] = cand.clone();
                vpool.loss(model, &trial.merged(&model.params, t)?, t, hp.batch)
            },
        )?;
        lora.steps[t - 1] = trainable;
        if t < t_max {
            let merged = lora.merged(&model.params, t)?;
            pool.advance(model, &merged, hp.batch)?;
            vpool.advance(model, &merged, hp.batch)?;
        }
        stages.push(StageReport {
            step: t,
            train: report,
            adapter_checksums: lora.steps.iter().map(ParamStore::checksum).collect(),
        });
    }
    Ok(LoraReport {
        stages,
        base_checksum_before: before,
        base_checksum_after: model.params.checksum(),
    })
}

/// Latitude-weighted RMSE in normalised units at each step `1..=steps`,
/// averaged over start indices.
pub fn rollout_rmse(
    model: &ForecastModel,
    lora: Option<&LoraSet>,
    data: &Dataset,
    starts: &[usize],
    steps: usize,
    batch: usize,
) -> Result<Vec<f64>> {
    if starts.is_empty() {
        return Err(GhrError::invalid("no start indices"));
    }
    let weights = latitude_weights(&data.grid).0;
    let mut sums = vec![0.0; steps];
    for chunk in starts.chunks(batch.max(1)) {
        let x0 = data.batch(chunk)?;
        let per = x0.numel() / chunk.len();
        rollout_batch(model, lora, &x0, steps, |t, x| {
            for (i, &s) in chunk.iter().enumerate() {
                let p = Tensor::new(
                    data.values[0].shape().to_vec(),
                    x.data()[i * per..(i + 1) * per].to_vec(),
                )?;
                sums[t - 1] += weighted_mse_value(&p, &data.values[s + t], &weights).sqrt();
            }
            Ok(())
        })?;
    }
    Ok(sums.into_iter().map(|s| s / starts.len() as f64).collect())
}
