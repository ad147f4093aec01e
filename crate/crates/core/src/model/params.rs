use std::collections::HashMap;

use ghr_tensor::{Rng, Tape, Tensor, Var};

use super::config::ModelConfig;
use crate::error::{GhrError, Result};
use crate::params::ParamStore;

/// Pretrained backbone weights. Linear weights are stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaModelParams(pub ParamStore);

pub fn block_prefix(i: usize) -> String {
    format!("blocks.{i}")
}

/// Expected shape of every meta-model parameter, in name order.
pub fn meta_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, p, d, h) = (cfg.channels, cfg.patch, cfg.dim, cfg.hidden());
    let mut v = vec![
        ("embed.kernel".to_string(), vec![d, c, p, p]),
        ("embed.bias".to_string(), vec![d]),
        ("pos".to_string(), vec![cfg.tokens(), d]),
        ("head.norm.gain".to_string(), vec![d]),
        ("head.norm.offset".to_string(), vec![d]),
        ("head.kernel".to_string(), vec![d, c, p, p]),
        ("head.bias".to_string(), vec![c]),
    ];
    for i in 0..cfg.blocks {
        let b = block_prefix(i);
        for (name, shape) in [
            ("norm1.gain", vec![d]),
            ("norm1.offset", vec![d]),
            ("attn.wq", vec![d, d]),
            ("attn.wk", vec![d, d]),
            ("attn.wv", vec![d, d]),
            ("attn.wo", vec![d, d]),
            ("norm2.gain", vec![d]),
            ("norm2.offset", vec![d]),
            ("mlp.w1", vec![h, d]),
            ("mlp.b1", vec![h]),
            ("mlp.w2", vec![d, h]),
            ("mlp.b2", vec![d]),
        ] {
            v.push((format!("{b}.{name}"), shape));
        }
    }
    v
}

/// Random initial weights. The head kernel and bias start at zero, so the
/// untrained model is the persistence forecast.
pub fn init_meta(cfg: &ModelConfig, seed: u64) -> Result<MetaModelParams> {
    cfg.validate()?;
    let mut rng = Rng::derived(seed, 0x4d45_5441);
    let depth = (2.0 * cfg.blocks as f32).sqrt();
    let fan_embed = (cfg.channels * cfg.patch * cfg.patch) as f32;
    let mut store = ParamStore::new();
    for (name, shape) in meta_shapes(cfg) {
        let t = if name.ends_with(".gain") {
            Tensor::ones(shape)
        } else if name.ends_with(".offset")
            || name.ends_with("bias")
            || name.ends_with(".b1")
            || name.ends_with(".b2")
            || name.starts_with("head.")
        {
            Tensor::zeros(shape)
        } else if name == "embed.kernel" {
            rng.normal_tensor(shape, fan_embed.sqrt().recip())
        } else if name == "pos" {
            rng.normal_tensor(shape, 0.02)
        } else {
            let fan_in = shape[1] as f32;
            let mut std = fan_in.sqrt().recip();
            if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                std /= depth;
            }
            rng.normal_tensor(shape, std)
        };
        store.insert(name, t);
    }
    Ok(MetaModelParams(store))
}

impl MetaModelParams {
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        for (name, shape) in meta_shapes(cfg) {
            let t = self.0.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(GhrError::invalid(format!(
                    "{name} has shape {:?}, config needs {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.0.numel()
    }
}

/// Parameter names bound to tape leaves for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
    low_rank: HashMap<String, LowRank>,
}

/// Unmerged low-rank update `β·B·A` applied next to a bound weight.
#[derive(Clone, Copy, Debug)]
pub struct LowRank {
    /// `[r, K]`
    pub a: Var,
    /// `[D, r]`
    pub b: Var,
    pub beta: f32,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore, requires_grad: bool) -> Self {
        let mut b = Self::new();
        b.add(tape, store, requires_grad);
        b
    }

    pub fn add(&mut self, tape: &mut Tape, store: &ParamStore, requires_grad: bool) {
        for (name, t) in store.iter() {
            self.vars
                .insert(name.to_string(), tape.leaf(t.clone(), requires_grad));
        }
    }

    /// Binds `name` to an arbitrary tape value, replacing any earlier binding.
    pub fn set(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| GhrError::invalid(format!("parameter {name} is not bound")))
    }

    /// Attaches an unmerged low-rank update to the weight bound as `name`.
    pub fn set_low_rank(&mut self, name: impl Into<String>, update: LowRank) {
        self.low_rank.insert(name.into(), update);
    }

    pub fn low_rank(&self, name: &str) -> Option<LowRank> {
        self.low_rank.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients of the leaves bound for `store`, keyed by name.
    pub fn grads(&self, tape: &Tape, store: &ParamStore) -> Result<Vec<(String, Tensor)>> {
        store
            .iter()
            .map(|(name, t)| {
                let v = self.get(name)?;
                let g = tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                Ok((name.to_string(), g))
            })
            .collect()
    }
}
