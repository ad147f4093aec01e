//! Per-step low-rank adapters `ΔW^t = B^t·A^t` on frozen weight matrices.

use std::collections::BTreeMap;

use ghr_tensor::{Rng, Tape, Tensor, Var};

use crate::error::{GhrError, Result};
use crate::model::params::block_prefix;
use crate::model::{Bindings, LowRank, ModelConfig};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
    /// Number of individually adapted rollout steps; later steps reuse the last.
    pub t_max: usize,
    /// Per-block matrix suffixes, e.g. `attn.wq`.
    pub matrices: Vec<String>,
    pub init_std: f32,
}

impl LoraConfig {
    pub fn toy() -> Self {
        Self {
            rank: 4,
            alpha: 4.0,
            t_max: 8,
            matrices: vec!["attn.wq".into(), "attn.wv".into()],
            init_std: 0.02,
        }
    }

    pub fn beta(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    /// Full parameter names of the adapted matrices.
    pub fn targets(&self, cfg: &ModelConfig) -> Vec<String> {
        (0..cfg.blocks)
            .flat_map(|i| {
                self.matrices
                    .iter()
                    .map(move |m| format!("{}.{m}", block_prefix(i)))
            })
            .collect()
    }

    pub fn violations(&self, cfg: &ModelConfig) -> Vec<String> {
        let mut v = Vec::new();
        if self.rank == 0 {
            v.push("lora.rank must be at least 1".to_string());
        }
        if self.rank * 4 > cfg.dim {
            v.push(format!(
                "lora.rank {} exceeds a quarter of the model dim {}",
                self.rank, cfg.dim
            ));
        }
        if self.t_max == 0 {
            v.push("lora.t_max must be at least 1".to_string());
        }
        if self.matrices.is_empty() {
            v.push("lora.matrices must name at least one matrix".to_string());
        }
        for m in &self.matrices {
            if !["attn.wq", "attn.wk", "attn.wv", "attn.wo"].contains(&m.as_str()) {
                v.push(format!("lora.matrices: {m} is not an attention projection"));
            }
        }
        if !self.alpha.is_finite() || !self.init_std.is_finite() || self.init_std < 0.0 {
            v.push(
                "lora.alpha and lora.init_std must be finite, init_std non-negative".to_string(),
            );
        }
        v
    }
}

/// One adapter pair per adapted matrix and rollout step.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraSet {
    pub config: LoraConfig,
    /// `steps[t - 1]` holds `{matrix}/A` `[r, K]` and `{matrix}/B` `[D, r]`.
    pub steps: Vec<ParamStore>,
}

pub fn a_name(matrix: &str) -> String {
    format!("{matrix}/A")
}

pub fn b_name(matrix: &str) -> String {
    format!("{matrix}/B")
}

impl LoraSet {
    /// Gaussian `A`, zero `B` for every step, so every `ΔW^t` starts at zero.
    pub fn init(
        cfg: &ModelConfig,
        base: &ParamStore,
        config: LoraConfig,
        seed: u64,
    ) -> Result<Self> {
        let v = config.violations(cfg);
        if !v.is_empty() {
            return Err(GhrError::Config(v));
        }
        let targets = config.targets(cfg);
        let mut steps = Vec::with_capacity(config.t_max);
        for t in 1..=config.t_max {
            let mut rng = Rng::derived(seed, 0x4c4f_5241_0000 + t as u64);
            let mut store = ParamStore::new();
            for m in &targets {
                let (d, k) = match *base.get(m)?.shape() {
                    [d, k] => (d, k),
                    ref s => {
                        return Err(GhrError::invalid(format!(
                            "{m} has shape {s:?}, not a matrix"
                        )))
                    }
                };
                if config.rank * 4 > d.min(k) {
                    return Err(GhrError::Config(vec![format!(
                        "lora.rank {} exceeds a quarter of min({d}, {k}) for {m}",
                        config.rank
                    )]));
                }
                store.insert(
                    a_name(m),
                    rng.normal_tensor([config.rank, k], config.init_std),
                );
                store.insert(b_name(m), Tensor::zeros([d, config.rank]));
            }
            steps.push(store);
        }
        Ok(Self { config, steps })
    }

    pub fn t_max(&self) -> usize {
        self.steps.len()
    }

    /// Adapters used at rollout step `t` (1-based); steps past `t_max` reuse the last.
    pub fn for_step(&self, t: usize) -> &ParamStore {
        assert!(t >= 1, "rollout steps are 1-based");
        &self.steps[t.min(self.steps.len()) - 1]
    }

    /// Adapted matrix names, in a fixed order.
    pub fn matrices(&self) -> Vec<String> {
        self.steps[0]
            .names()
            .filter_map(|n| n.strip_suffix("/A").map(str::to_string))
            .collect()
    }

    pub fn is_zero(&self, t: usize) -> bool {
        self.for_step(t)
            .iter()
            .filter(|(n, _)| n.ends_with("/B"))
            .all(|(_, b)| b.data().iter().all(|&v| v == 0.0))
    }

    /// `base` with step `t`'s updates merged into the adapted matrices.
    pub fn merged(&self, base: &ParamStore, t: usize) -> Result<ParamStore> {
        let adapters = self.for_step(t);
        let mut out = base.clone();
        for m in self.matrices() {
            let w = merge_lora(
                base.get(&m)?,
                adapters.get(&a_name(&m))?,
                adapters.get(&b_name(&m))?,
                self.config.beta(),
            )?;
            out.insert(m, w);
        }
        Ok(out)
    }

    /// Flattened as `lora/{t}/{matrix}/A|B`.
    pub fn to_store(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (i, step) in self.steps.iter().enumerate() {
            for (name, t) in step.iter() {
                out.insert(format!("lora/{}/{name}", i + 1), t.clone());
            }
        }
        out
    }

    pub fn from_store(store: &ParamStore, config: LoraConfig) -> Result<Self> {
        let mut by_step: BTreeMap<usize, ParamStore> = BTreeMap::new();
        for (name, t) in store.iter() {
            let rest = name
                .strip_prefix("lora/")
                .ok_or_else(|| GhrError::invalid(format!("{name} is not a LoRA parameter")))?;
            let (step, inner) = rest
                .split_once('/')
                .ok_or_else(|| GhrError::invalid(format!("{name} has no step index")))?;
            let step: usize = step
                .parse()
                .map_err(|_| GhrError::invalid(format!("{name} has a non-numeric step")))?;
            by_step
                .entry(step)
                .or_default()
                .insert(inner.to_string(), t.clone());
        }
        let n = by_step.len();
        if n == 0 || by_step.keys().copied().ne(1..=n) {
            return Err(GhrError::invalid(
                "LoRA steps must be numbered 1..T without gaps",
            ));
        }
        if n != config.t_max {
            return Err(GhrError::invalid(format!(
                "stored {n} LoRA steps, config expects {}",
                config.t_max
            )));
        }
        Ok(Self {
            config,
            steps: by_step.into_values().collect(),
        })
    }

    /// Binds step `t`'s adapters on `tape` as unmerged updates beside the frozen weights.
    pub fn bind_unmerged(&self, tape: &mut Tape, bound: &mut Bindings, t: usize) -> Result<()> {
        let adapters = self.for_step(t);
        for m in self.matrices() {
            let a = tape.constant(adapters.get(&a_name(&m))?.clone());
            let b = tape.constant(adapters.get(&b_name(&m))?.clone());
            bound.set_low_rank(
                m,
                LowRank {
                    a,
                    b,
                    beta: self.config.beta(),
                },
            );
        }
        Ok(())
    }
}

/// `w + β·(b·a)` on the tape.
pub fn merge_graph(tape: &mut Tape, w: Var, a: Var, b: Var, beta: f32) -> Result<Var> {
    let delta = tape.matmul(b, a)?;
    let delta = tape.scale(delta, beta);
    Ok(tape.add(w, delta)?)
}

/// `W0 + β·B·A` with `β = α / r`.
pub fn merge_lora(w0: &Tensor, a: &Tensor, b: &Tensor, beta: f32) -> Result<Tensor> {
    check_shapes(w0, a, b)?;
    let mut tape = Tape::new();
    let (w, a, b) = (
        tape.constant(w0.clone()),
        tape.constant(a.clone()),
        tape.constant(b.clone()),
    );
    let y = merge_graph(&mut tape, w, a, b, beta)?;
    Ok(tape.value(y).clone())
}

fn check_shapes(w0: &Tensor, a: &Tensor, b: &Tensor) -> Result<usize> {
    match (w0.shape(), a.shape(), b.shape()) {
        ([d, k], [r, ka], [db, rb]) if ka == k && db == d && rb == r && *r >= 1 => Ok(*r),
        (w, a, b) => Err(GhrError::invalid(format!(
            "LoRA shapes W0 {w:?}, A {a:?}, B {b:?} do not conform"
        ))),
    }
}

/// `(W0 + (α/r)·B·A)·x` for `x` of shape `[..., K]`, either through the merged
/// matrix or as `W0·x + β·B·(A·x)`.
pub fn apply_lora(
    w0: &Tensor,
    a: &Tensor,
    b: &Tensor,
    alpha: f32,
    x: &Tensor,
    merged: bool,
) -> Result<Tensor> {
    let r = check_shapes(w0, a, b)?;
    let beta = alpha / r as f32;
    let mut tape = Tape::new();
    let vector = x.rank() == 1;
    let xv = tape.constant(if vector {
        x.reshape([1, x.numel()])?
    } else {
        x.clone()
    });
    let w = tape.constant(w0.clone());
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let y = if merged {
        let m = merge_graph(&mut tape, w, av, bv, beta)?;
        tape.linear(xv, m, None)?
    } else {
        let y = tape.linear(xv, w, None)?;
        let h = tape.linear(xv, av, None)?;
        let d = tape.linear(h, bv, None)?;
        let d = tape.scale(d, beta);
        tape.add(y, d)?
    };
    let y = tape.value(y);
    Ok(if vector {
        y.reshape([y.numel()])?
    } else {
        y.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_meta;

    fn plain(w0: &Tensor, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let (xv, w) = (tape.constant(x.clone()), tape.constant(w0.clone()));
        let y = tape.linear(xv, w, None).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_b_and_zero_alpha_are_exact() {
        let mut rng = Rng::seed(1);
        let w0 = rng.normal_tensor([16, 12], 0.3);
        let a = rng.normal_tensor([3, 12], 0.3);
        let x = rng.normal_tensor([5, 12], 1.0);
        let base = plain(&w0, &x);
        for merged in [false, true] {
            assert_eq!(
                apply_lora(&w0, &a, &Tensor::zeros([16, 3]), 3.0, &x, merged).unwrap(),
                base
            );
            let b = rng.normal_tensor([16, 3], 0.3);
            assert_eq!(apply_lora(&w0, &a, &b, 0.0, &x, merged).unwrap(), base);
        }
    }

    #[test]
    fn merged_matches_unmerged() {
        let mut rng = Rng::seed(2);
        let w0 = rng.normal_tensor([64, 64], 0.125);
        let a = rng.normal_tensor([4, 64], 0.2);
        let b = rng.normal_tensor([64, 4], 0.2);
        let x = rng.normal_tensor([64], 1.0);
        let m = apply_lora(&w0, &a, &b, 8.0, &x, true).unwrap();
        let u = apply_lora(&w0, &a, &b, 8.0, &x, false).unwrap();
        assert!(m.max_abs_diff(&u) < 1e-5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let w0 = Tensor::zeros([8, 6]);
        assert!(apply_lora(
            &w0,
            &Tensor::zeros([2, 5]),
            &Tensor::zeros([8, 2]),
            1.0,
            &Tensor::zeros([6]),
            true
        )
        .is_err());
        assert!(apply_lora(
            &w0,
            &Tensor::zeros([2, 6]),
            &Tensor::zeros([8, 3]),
            1.0,
            &Tensor::zeros([6]),
            false
        )
        .is_err());
    }

    #[test]
    fn init_store_roundtrip_and_reuse() {
        let cfg = ModelConfig::toy();
        let base = init_meta(&cfg, 0).unwrap().0;
        let set = LoraSet::init(&cfg, &base, LoraConfig::toy(), 5).unwrap();
        assert_eq!(set.matrices().len(), 2 * cfg.blocks);
        assert!((1..=12).all(|t| set.is_zero(t)));
        assert_eq!(set.merged(&base, 3).unwrap(), base);
        assert!(std::ptr::eq(set.for_step(20), set.for_step(8)));
        let store = set.to_store();
        assert!(store.contains("lora/8/blocks.7.attn.wv/B"));
        assert_eq!(LoraSet::from_store(&store, LoraConfig::toy()).unwrap(), set);
    }

    #[test]
    fn rank_limit_enforced() {
        let cfg = ModelConfig::toy();
        let base = init_meta(&cfg, 0).unwrap().0;
        let cfgl = LoraConfig {
            rank: 9,
            ..LoraConfig::toy()
        };
        assert!(matches!(
            LoraSet::init(&cfg, &base, cfgl, 0),
            Err(GhrError::Config(_))
        ));
    }
}
