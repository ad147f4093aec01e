//! Runs every acceptance criterion and prints one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ghr_cli::pipeline::eval_inits;
use ghr_cli::{Pipeline, RunConfig, STAGES};
use ghr_core::dataset::Dataset;
use ghr_core::grid::GridSpec;
use ghr_core::lora::{apply_lora, LoraConfig, LoraSet};
use ghr_core::model::attention::{mhsa, AttnVars};
use ghr_core::model::train::{pretrain, weighted_mse, weighted_mse_value, TrainConfig};
use ghr_core::model::window::{
    partition, partition_order, reverse, window_partition, window_reverse,
};
use ghr_core::model::{
    forward, forward_graph, init_meta, Bindings, MetaModelParams, ModelConfig, Window,
};
use ghr_core::normalize::{NormStats, StatsAccumulator};
use ghr_core::params::ParamStore;
use ghr_core::res::{init_res, ResConfig};
use ghr_core::rollout::{lora_finetune, rollout_rmse, ForecastModel};
use ghr_core::sime::{decompose, recompose, sime_forward};
use ghr_core::state::WeatherState;
use ghr_core::stations::{StationRecord, StationVariable};
use ghr_core::synth::{Generator, SynthOptions};
use ghr_core::time::{self, utc, Timestamp};
use ghr_core::variables::VariableSet;
use ghr_core::verify::{
    acc, activity, bias, latitude_weights, rmse, station_eval, ActivityMode, ForecastRun,
};
use ghr_tensor::gradcheck::{central_difference, relative_error};
use ghr_tensor::{Rng, Tape, Tensor, Var};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn normalised(grid: GridSpec, values: Tensor, at: Timestamp) -> WeatherState {
    let c = values.shape()[0];
    let mut s = WeatherState::new(grid, VariableSet::toy(), values, at).unwrap();
    s.normalization = Some(NormStats {
        mean: vec![0.0; c],
        std: vec![1.0; c],
    });
    s
}

fn random_state(rng: &mut Rng, n_lat: usize) -> WeatherState {
    let grid = GridSpec::global(n_lat, 2 * n_lat).unwrap();
    normalised(
        grid,
        rng.normal_tensor([8, n_lat, 2 * n_lat], 1.0),
        utc(2021, 1, 1, 0),
    )
}

fn live_meta(cfg: &ModelConfig, seed: u64) -> MetaModelParams {
    let mut p = init_meta(cfg, seed).unwrap();
    let shape = p.0.get("head.kernel").unwrap().shape().to_vec();
    *p.0.get_mut("head.kernel").unwrap() = Rng::seed(seed ^ 0x99).normal_tensor(shape, 0.05);
    p
}

// 1

fn oracle_scores(f: &[Vec<f32>], t: &[Vec<f32>], c: &[Vec<f32>], h: usize, w: usize) -> [f64; 4] {
    let lat = |i: usize| {
        (90.0 - (i as f64 + 0.5) * 180.0 / h as f64)
            .to_radians()
            .cos()
    };
    let total: f64 = (0..h).map(lat).sum();
    let a: Vec<f64> = (0..h).map(|i| h as f64 * lat(i) / total).collect();
    let n = (h * w) as f64;
    let mut out = [0.0; 4];
    for k in 0..f.len() {
        let (mut se, mut b, mut num, mut ff, mut tt, mut fm) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let x = i * w + j;
                let (fv, tv, cv) = (f[k][x] as f64, t[k][x] as f64, c[k][x] as f64);
                se += a[i] * (tv - fv) * (tv - fv);
                b += a[i] * (tv - fv);
                num += a[i] * (fv - cv) * (tv - cv);
                ff += a[i] * (fv - cv) * (fv - cv);
                tt += a[i] * (tv - cv) * (tv - cv);
                fm += a[i] * (fv - cv);
            }
        }
        let mean = fm / n;
        let mut var = 0.0;
        for i in 0..h {
            for j in 0..w {
                let x = i * w + j;
                let d = f[k][x] as f64 - c[k][x] as f64 - mean;
                var += a[i] * d * d;
            }
        }
        out[0] += (se / n).sqrt();
        out[1] += num / (ff * tt).sqrt();
        out[2] += b / n;
        out[3] += (var / n).sqrt();
    }
    out.map(|v| v / f.len() as f64)
}

fn slices(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(Vec::as_slice).collect()
}

fn metric_oracle() -> Outcome {
    let t0 = Instant::now();
    let (h, w, steps) = (8, 16, 3);
    let weights = latitude_weights(&GridSpec::global(h, w).map_err(err)?);
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = Rng::seed(1000 + seed);
        let mut draw = |mean: f64, std: f64| -> Vec<Vec<f32>> {
            (0..steps)
                .map(|_| (0..h * w).map(|_| rng.normal(mean, std) as f32).collect())
                .collect()
        };
        let (f, t, c) = (draw(280.0, 3.0), draw(280.0, 3.0), draw(279.0, 1.0));
        let want = oracle_scores(&f, &t, &c, h, w);
        let (fr, tr, cr) = (slices(&f), slices(&t), slices(&c));
        let got = [
            rmse(&fr, &tr, &weights).map_err(err)?,
            acc(&fr, &tr, &cr, &weights).map_err(err)?.value,
            bias(&fr, &tr, &weights).map_err(err)?,
            activity(&fr, &tr, &cr, &weights, ActivityMode::Anomaly).map_err(err)?,
        ];
        for (g, o) in got.iter().zip(want) {
            worst = worst.max((g - o).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "max deviation {worst:.1e} over 50 instances in {secs:.2} s"
    ))
}

// 2

fn latitude_weight_sums() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 8..=720 {
        let g = GridSpec::global(n, 2 * n).map_err(err)?;
        let w = latitude_weights(&g);
        worst = worst.max((w.0.iter().sum::<f64>() - n as f64).abs());
        for i in 0..n / 2 {
            ensure(w.0[i] == w.0[n - 1 - i], || {
                format!("{n} latitudes: rows {i} and {} differ", n - 1 - i)
            })?;
        }
    }
    ensure(worst < 1e-6, || format!("sum deviates by {worst:e}"))?;
    Ok(format!(
        "8..=720 latitudes, max |Σα − H| = {worst:.1e}, mirror rows equal"
    ))
}

// 3

fn sime_bijection() -> Outcome {
    let mut rng = Rng::seed(3);
    for (k, n_lat) in [(1, 48), (3, 48), (5, 45)] {
        for trial in 0..1000 {
            let s = random_state(&mut rng, n_lat);
            let (parts, layout) = decompose(&s, k).map_err(err)?;
            ensure(parts.len() == k * k, || {
                format!("k={k}: {} parts", parts.len())
            })?;
            let back = recompose(&parts, &layout, &s.grid).map_err(err)?;
            ensure(back.values == s.values, || {
                format!("k={k} trial {trial}: roundtrip differs")
            })?;
        }
    }
    let cfg = ModelConfig::toy();
    let p = live_meta(&cfg, 3);
    for _ in 0..4 {
        let s = random_state(&mut rng, 16);
        let a = sime_forward(&s, &p, &cfg, 1).map_err(err)?.state.values;
        let b = forward(&s, &p, &cfg, None).map_err(err)?.values;
        ensure(a == b, || "k=1 SIME differs from the plain forward".into())?;
    }
    Ok("1000 bitwise roundtrips each for k=1, 3 (48×96) and 5 (45×90); k=1 equals forward".into())
}

// 4

fn sime_cost_law() -> Outcome {
    let cfg = ModelConfig::toy();
    let p = init_meta(&cfg, 4).map_err(err)?;
    let mut rng = Rng::seed(4);
    let mut seen = Vec::new();
    for k in [1usize, 3, 5] {
        let s = random_state(&mut rng, 16 * k);
        let cost = sime_forward(&s, &p, &cfg, k).map_err(err)?.cost;
        ensure(cost.naive == cost.sime * (k * k) as u64, || {
            format!("k={k}: naive {} sime {}", cost.naive, cost.sime)
        })?;
        seen.push(format!("k={k} {}/{}", cost.naive, cost.sime));
    }
    Ok(seen.join(", "))
}

// 5

fn dense_attention(x: &[f64], s: usize, d: usize, heads: usize, w: &[Tensor]) -> Vec<f64> {
    let proj = |x: &[f64], w: &Tensor| -> Vec<f64> {
        (0..s * d)
            .map(|i| {
                (0..d)
                    .map(|e| x[(i / d) * d + e] * w.data()[(i % d) * d + e] as f64)
                    .sum()
            })
            .collect()
    };
    let (q, k, v) = (proj(x, &w[0]), proj(x, &w[1]), proj(x, &w[2]));
    let hd = d / heads;
    let mut ctx = vec![0.0; s * d];
    for h in 0..heads {
        for i in 0..s {
            let sc: Vec<f64> = (0..s)
                .map(|j| {
                    (0..hd)
                        .map(|e| q[i * d + h * hd + e] * k[j * d + h * hd + e])
                        .sum::<f64>()
                        / (hd as f64).sqrt()
                })
                .collect();
            let m = sc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = sc.iter().map(|a| (a - m).exp()).sum();
            for j in 0..s {
                let p = (sc[j] - m).exp() / z;
                for e in 0..hd {
                    ctx[i * d + h * hd + e] += p * v[j * d + h * hd + e];
                }
            }
        }
    }
    proj(&ctx, &w[3])
}

fn window_attention() -> Outcome {
    let (grid, d, heads, b) = ((4, 8), 8, 2, 2);
    let mut rng = Rng::seed(5);
    let x = rng.normal_tensor([b, 32, d], 1.0);
    let ws: Vec<Tensor> = (0..4).map(|_| rng.normal_tensor([d, d], 0.5)).collect();
    let mut worst: f64 = 0.0;
    let shapes = [Window::new(2, 2), Window::new(2, 4), Window::new(4, 2)];
    for window in shapes {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let [wq, wk, wv, wo] = [0, 1, 2, 3].map(|i| tape.constant(ws[i].clone()));
        let attn = AttnVars {
            wq,
            wk,
            wv,
            wo,
            low_rank: [None; 4],
        };
        let parts = partition(&mut tape, xv, grid, window).map_err(err)?;
        let out = mhsa(&mut tape, parts, attn, heads, None, "local").map_err(err)?;
        let out = reverse(&mut tape, out, grid, window).map_err(err)?;
        let got = tape.value(out).data().to_vec();
        let order = partition_order(grid, window).map_err(err)?;
        let s = window.size();
        for bi in 0..b {
            for g in 0..32 / s {
                let toks = &order[g * s..(g + 1) * s];
                let xs: Vec<f64> = toks
                    .iter()
                    .flat_map(|&t| {
                        x.data()[(bi * 32 + t) * d..(bi * 32 + t + 1) * d]
                            .iter()
                            .map(|&v| v as f64)
                    })
                    .collect();
                let y = dense_attention(&xs, s, d, heads, &ws);
                for (r, &t) in toks.iter().enumerate() {
                    for e in 0..d {
                        worst = worst.max((got[(bi * 32 + t) * d + e] as f64 - y[r * d + e]).abs());
                    }
                }
            }
        }
        for scale in 1..=3 {
            let g = (4 * scale, 8 * scale);
            let t = rng.normal_tensor([2, g.0 * g.1, 5], 1.0);
            let back = window_reverse(&window_partition(&t, g, window).map_err(err)?, g, window)
                .map_err(err)?;
            ensure(back == t, || {
                format!("{window} on {g:?}: roundtrip differs")
            })?;
        }
    }
    ensure(worst < 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "square, zonal, meridional: max deviation {worst:.1e}, roundtrips bitwise"
    ))
}

// 6

type Build = dyn Fn(&mut Tape, &[Var]) -> ghr_tensor::Result<Var>;

fn op_error(build: &Build, inputs: &[Tensor], seed: u64) -> f64 {
    let project = |xs: &[Tensor], w: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = build(&mut tape, &vars).unwrap();
        tape.value(y)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = build(&mut tape, &vars).unwrap();
    let w = Rng::seed(seed).uniform_tensor(tape.shape(y).to_vec(), -1.0, 1.0);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(y, wv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let g = tape.grad(*v).unwrap().clone();
        let scale = g.data().iter().fold(1e-6f64, |m, &a| m.max(a.abs() as f64));
        for i in 0..inputs[k].numel() {
            let fd = central_difference(
                |x| {
                    let mut probe = inputs.to_vec();
                    probe[k] = x.clone();
                    project(&probe, &w)
                },
                &inputs[k],
                i,
                1e-3,
            );
            worst = worst.max(relative_error(g.data()[i] as f64, fd, scale));
        }
    }
    worst
}

fn gradient_integrity() -> Outcome {
    let mut rng = Rng::seed(6);
    let mut r = |s: &[usize]| rng.normal_tensor(s.to_vec(), 1.0);
    let cases: Vec<(&str, Vec<Tensor>, Box<Build>)> = vec![
        (
            "matmul",
            vec![r(&[3, 4]), r(&[4, 5])],
            Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])),
        ),
        (
            "add",
            vec![r(&[2, 3, 4]), r(&[4])],
            Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
        ),
        (
            "mul",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
        ),
        (
            "gelu",
            vec![r(&[3, 5])],
            Box::new(|t: &mut Tape, v: &[Var]| Ok(t.gelu(v[0]))),
        ),
        (
            "softmax",
            vec![r(&[2, 3, 5])],
            Box::new(|t: &mut Tape, v: &[Var]| t.softmax(v[0], 2)),
        ),
        (
            "layer_norm",
            vec![r(&[3, 6]), r(&[6]), r(&[6])],
            Box::new(|t: &mut Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2])),
        ),
        (
            "permute",
            vec![r(&[2, 3, 4])],
            Box::new(|t: &mut Tape, v: &[Var]| t.permute(v[0], &[1, 2, 0])),
        ),
        (
            "gather",
            vec![r(&[5])],
            Box::new(|t: &mut Tape, v: &[Var]| {
                t.gather(v[0], Arc::from(vec![4, 0, 0, 2, 3, 1]), &[2, 3])
            }),
        ),
        (
            "linear",
            vec![r(&[2, 3, 4]), r(&[5, 4]), r(&[5])],
            Box::new(|t: &mut Tape, v: &[Var]| t.linear(v[0], v[1], Some(v[2]))),
        ),
        (
            "patch_conv",
            vec![r(&[2, 2, 4, 6]), r(&[3, 2, 2, 2])],
            Box::new(|t: &mut Tape, v: &[Var]| t.patch_conv(v[0], v[1])),
        ),
        (
            "patch_deconv",
            vec![r(&[2, 3, 2, 3]), r(&[3, 2, 2, 2])],
            Box::new(|t: &mut Tape, v: &[Var]| t.patch_deconv(v[0], v[1])),
        ),
    ];
    let mut op_worst: f64 = 0.0;
    for (i, (name, inputs, build)) in cases.iter().enumerate() {
        let e = op_error(build.as_ref(), inputs, 60 + i as u64);
        ensure(e < 1e-3, || format!("{name}: rel {e:e}"))?;
        op_worst = op_worst.max(e);
    }

    let cfg = ModelConfig::toy();
    let p = live_meta(&cfg, 6);
    let x = rng.normal_tensor([1, cfg.channels, cfg.n_lat, cfg.n_lon], 1.0);
    let target = rng.normal_tensor([1, cfg.channels, cfg.n_lat, cfg.n_lon], 1.0);
    let weights = latitude_weights(&GridSpec::global(cfg.n_lat, cfg.n_lon).map_err(err)?).0;
    let loss_at = |store: &ParamStore| {
        let mut tape = Tape::new();
        let bound = Bindings::bind(&mut tape, store, false);
        let xv = tape.constant(x.clone());
        let y = forward_graph(&mut tape, &cfg, &bound, xv, None, None).unwrap();
        weighted_mse_value(tape.value(y), &target, &weights)
    };
    let mut tape = Tape::new();
    let bound = Bindings::bind(&mut tape, &p.0, true);
    let (xv, tv) = (tape.constant(x.clone()), tape.constant(target.clone()));
    let y = forward_graph(&mut tape, &cfg, &bound, xv, None, None).map_err(err)?;
    let loss = weighted_mse(&mut tape, y, tv, &weights).map_err(err)?;
    tape.backward(loss).map_err(err)?;
    let grads: BTreeMap<String, Tensor> =
        bound.grads(&tape, &p.0).map_err(err)?.into_iter().collect();
    let names: Vec<&String> = grads.keys().collect();
    let mut full_worst: f64 = 0.0;
    let h = 1e-2f32;
    for _ in 0..10 {
        let name = names[rng.below(names.len())];
        let g = &grads[name];
        let i = rng.below(g.numel());
        let (mut plus, mut minus) = (p.0.clone(), p.0.clone());
        plus.get_mut(name).map_err(err)?.data_mut()[i] += h;
        minus.get_mut(name).map_err(err)?.data_mut()[i] -= h;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h as f64);
        let scale = g.data().iter().fold(1e-12f64, |m, v| m.max(v.abs() as f64));
        let e = relative_error(g.data()[i] as f64, fd, scale);
        ensure(e < 1e-2, || format!("{name}[{i}]: rel {e:e}"))?;
        full_worst = full_worst.max(e);
    }
    Ok(format!(
        "{} ops max rel {op_worst:.1e}; full model 10 params max rel {full_worst:.1e}",
        cases.len()
    ))
}

// 8

fn synthetic_lr(split: &str, year: i32, n: usize) -> Dataset {
    let gen = Generator::new(
        8,
        GridSpec::global(48, 96).unwrap(),
        3,
        VariableSet::toy(),
        SynthOptions::default(),
    )
    .unwrap();
    let states: Vec<_> = (0..n)
        .map(|s| {
            gen.lr_state(utc(year, 1, 1, 0) + time::step() * s as i32)
                .unwrap()
        })
        .collect();
    let mut acc = StatsAccumulator::new(8);
    states.iter().for_each(|s| acc.push_state(s).unwrap());
    let mut stats = acc.finish().unwrap();
    stats.std.iter_mut().for_each(|s| *s = s.max(1.0));
    Dataset::from_states(split, &states, &stats).unwrap()
}

fn lora_contracts() -> Outcome {
    let cfg = ModelConfig::toy();
    let model = ForecastModel::new(&cfg, &live_meta(&cfg, 8), None, 1);
    let mut rng = Rng::seed(8);
    let x = rng.normal_tensor([1, 8, 16, 32], 1.0);
    let zero = LoraSet::init(&cfg, &model.params, LoraConfig::toy(), 8).map_err(err)?;
    let base = model.step_with(&model.params, &x).map_err(err)?;
    for t in 1..=zero.t_max() {
        let merged = model
            .step_with(&zero.merged(&model.params, t).map_err(err)?, &x)
            .map_err(err)?;
        ensure(merged == base, || {
            format!("B=0 step {t}: merged output differs")
        })?;
        ensure(
            model.step_unmerged(&zero, t, &x).map_err(err)? == base,
            || format!("B=0 step {t}: unmerged differs"),
        )?;
    }

    let (d, k, r) = (64, 64, 4);
    let w0 = rng.normal_tensor([d, k], 0.1);
    let a = rng.normal_tensor([r, k], 0.1);
    let b = rng.normal_tensor([d, r], 0.1);
    let xs = rng.normal_tensor([8, k], 1.0);
    let m = apply_lora(&w0, &a, &b, 4.0, &xs, true).map_err(err)?;
    let u = apply_lora(&w0, &a, &b, 4.0, &xs, false).map_err(err)?;
    let gap = m.max_abs_diff(&u);
    ensure(gap < 1e-5, || format!("merged vs unmerged {gap:e}"))?;

    let train = synthetic_lr("lr_train", 2016, 40);
    let val = synthetic_lr("lr_val", 2017, 14);
    let config = LoraConfig {
        t_max: 3,
        ..LoraConfig::toy()
    };
    let mut lora = LoraSet::init(&cfg, &model.params, config, 9).map_err(err)?;
    let init: Vec<u64> = lora.steps.iter().map(ParamStore::checksum).collect();
    let before = model.params.checksum();
    let hp = TrainConfig {
        steps: 6,
        batch: 2,
        lr: 1e-2,
        warmup: 1,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let report = lora_finetune(&model, &mut lora, &train, &val, &hp, 8, 4).map_err(err)?;
    for st in &report.stages {
        let t = st.step;
        for s in 0..t - 1 {
            ensure(
                st.adapter_checksums[s] == report.stages[s].adapter_checksums[s],
                || format!("stage {t} changed the adapters of step {}", s + 1),
            )?;
        }
        for s in t..3 {
            ensure(st.adapter_checksums[s] == init[s], || {
                format!("stage {t} touched step {}", s + 1)
            })?;
        }
    }
    ensure(
        report.base_checksum_before == before && report.base_checksum_after == before,
        || "base checksum changed".into(),
    )?;
    ensure(model.params.checksum() == before, || {
        "base parameters changed".into()
    })?;
    Ok(format!("B=0 bitwise at 8 steps, merged/unmerged gap {gap:.1e}, isolation over 3 stages, base checksum fixed"))
}

// 12

fn analytic_t2m(lat: f64, lon: f64) -> f64 {
    280.0 + 10.0 * lat.to_radians().cos() + 3.0 * (2.0 * lon.to_radians()).sin()
}

fn analytic_state(grid: &GridSpec, at: Timestamp, offset: f64) -> WeatherState {
    let vars = VariableSet::toy();
    let (t2m, u, v) = (
        vars.index_of("t2m").unwrap(),
        vars.index_of("u10").unwrap(),
        vars.index_of("v10").unwrap(),
    );
    let n = grid.cells();
    let values = Tensor::from_fn([vars.len(), grid.n_lat, grid.n_lon], |idx| {
        let (c, cell) = (idx / n, idx % n);
        let (la, lo) = (
            grid.lat_degrees[cell / grid.n_lon],
            grid.lon_degrees[cell % grid.n_lon],
        );
        match c {
            c if c == t2m => (analytic_t2m(la, lo) + offset) as f32,
            c if c == u => 3.0,
            c if c == v => 4.0,
            _ => 0.0,
        }
    });
    WeatherState::new(grid.clone(), vars, values, at).unwrap()
}

/// Nearest cell centre by chord length between unit vectors.
fn hand_nearest(grid: &GridSpec, lat: f64, lon: f64) -> (usize, usize) {
    let unit = |la: f64, lo: f64| {
        let (p, l) = (la.to_radians(), lo.to_radians());
        [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
    };
    let s = unit(lat, lon);
    let mut best = (f64::INFINITY, 0, 0);
    for (i, &a) in grid.lat_degrees.iter().enumerate() {
        for (j, &b) in grid.lon_degrees.iter().enumerate() {
            let c = unit(a, b);
            let d: f64 = (0..3).map(|k| (s[k] - c[k]).powi(2)).sum();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    (best.1, best.2)
}

fn station_criterion() -> Outcome {
    let grid = GridSpec::global(16, 32).map_err(err)?;
    let mut rng = Rng::seed(12);
    let stations: Vec<(String, f64, f64)> = (0..20)
        .map(|i| {
            (
                format!("S{i:02}"),
                rng.uniform(-80.0, 80.0),
                rng.uniform(0.0, 360.0),
            )
        })
        .collect();
    let inits: Vec<Timestamp> = (0..4).map(|h| utc(2021, 1, 31, 6 * h)).collect();
    let excluded = |i: usize| i % 2 == 1;
    let mut runs = Vec::new();
    let mut records = Vec::new();
    for (n, &init) in inits.iter().enumerate() {
        let mut run = ForecastRun {
            init,
            leads: Vec::new(),
        };
        for day in 1..=2u32 {
            let at = init + time::step() * (4 * day as i32);
            // 06Z and 18Z runs carry a large error that would show if they were used.
            run.leads.push((
                24 * day,
                analytic_state(&grid, at, if excluded(n) { 50.0 } else { 0.0 }),
            ));
            for (id, lat, lon) in &stations {
                records.push(StationRecord {
                    station_id: id.clone(),
                    lat: *lat,
                    lon: *lon,
                    valid_time: at,
                    variable: StationVariable::T2m,
                    value: analytic_t2m(*lat, *lon),
                });
                records.push(StationRecord {
                    station_id: id.clone(),
                    lat: *lat,
                    lon: *lon,
                    valid_time: at,
                    variable: StationVariable::WindSpeed,
                    value: 4.5,
                });
            }
        }
        runs.push(run);
    }
    let table = station_eval(&runs, &records).map_err(err)?;
    let used: Vec<Timestamp> = inits
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded(*i))
        .map(|(_, t)| *t)
        .collect();
    ensure(table.inits_used == used, || {
        format!("inits used {:?}", table.inits_used)
    })?;
    ensure(table.inits_skipped == 2, || {
        format!("{} inits skipped", table.inits_skipped)
    })?;
    for m in &table.matches {
        ensure(m.cell == hand_nearest(&grid, m.lat, m.lon), || {
            format!("{} matched {:?}", m.station_id, m.cell)
        })?;
    }
    let t2m = VariableSet::toy().index_of("t2m").unwrap();
    let mut worst: f64 = 0.0;
    ensure(table.rows.len() == 4, || {
        format!("{} rows", table.rows.len())
    })?;
    for row in &table.rows {
        let (mut sq, mut n) = (0.0, 0usize);
        for init in &used {
            let s = analytic_state(
                &grid,
                *init + time::step() * (4 * row.lead_days as i32),
                0.0,
            );
            for (_, lat, lon) in &stations {
                let (i, j) = hand_nearest(&grid, *lat, *lon);
                let e = match row.variable {
                    StationVariable::T2m => {
                        s.plane(t2m)[i * grid.n_lon + j] as f64 - analytic_t2m(*lat, *lon)
                    }
                    StationVariable::WindSpeed => 5.0 - 4.5,
                };
                sq += e * e;
                n += 1;
            }
        }
        ensure(row.n_pairs == n && row.n_stations == 20, || {
            format!("{row:?}")
        })?;
        worst = worst.max((row.rmse - (sq / n as f64).sqrt()).abs());
    }
    ensure(worst < 1e-9, || {
        format!("station RMSE deviates by {worst:e}")
    })?;
    Ok(format!(
        "20 stations, max deviation {worst:.1e}, inits used 00Z/12Z only, 2 skipped"
    ))
}

// 7, 9, 10, 11 share one pipeline run.

struct Run {
    _root: tempfile::TempDir,
    config: PathBuf,
    overrides: Vec<String>,
    pipeline: Pipeline,
    seconds: BTreeMap<&'static str, f64>,
    failure: Option<String>,
}

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn run_pipeline() -> Run {
    let root = tempfile::tempdir().expect("temporary directory");
    let dir = root.path();
    let overrides = vec![
        format!("paths.data={}", dir.join("data").display()),
        format!("paths.checkpoints={}", dir.join("checkpoints").display()),
        format!("paths.outputs={}", dir.join("outputs").display()),
    ];
    let config = toy_config();
    let pipeline = Pipeline::new(RunConfig::load(&config, &overrides).expect("toy config loads"));
    let mut seconds = BTreeMap::new();
    let mut failure = None;
    for stage in STAGES {
        let t0 = Instant::now();
        eprintln!("acceptance: running {stage}");
        if let Err(e) = pipeline.run(stage) {
            failure = Some(format!("{stage}: {e}"));
            break;
        }
        seconds.insert(stage, t0.elapsed().as_secs_f64());
    }
    Run {
        _root: root,
        config,
        overrides,
        pipeline,
        seconds,
        failure,
    }
}

fn pipeline_ok(run: &Run) -> Result<(), String> {
    match &run.failure {
        Some(f) => Err(format!("pipeline failed at {f}")),
        None => Ok(()),
    }
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn end_to_end(run: &Run) -> Outcome {
    pipeline_ok(run)?;
    let total: f64 = run.seconds.values().sum();
    ensure(total < 1800.0, || format!("pipeline took {total:.0} s"))?;
    let eval = run.pipeline.layout.evaluate_dir();
    let text = std::fs::read_to_string(eval.join("comparison.csv")).map_err(err)?;
    let mut leads: BTreeMap<(String, String, String), BTreeSet<u32>> = BTreeMap::new();
    let mut rmse_of: BTreeMap<(String, String, u32), f64> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let lead: u32 = f[2].parse().map_err(err)?;
        leads
            .entry((f[0].into(), f[1].into(), f[3].into()))
            .or_default()
            .insert(lead);
        if f[3] == "rmse" {
            rmse_of.insert((f[0].into(), f[1].into(), lead), f[4].parse().map_err(err)?);
        }
    }
    let want: BTreeSet<u32> = (1..=40).map(|t| 6 * t).collect();
    let variables: BTreeSet<String> = VariableSet::toy().names().map(String::from).collect();
    for series in ["model", "persistence", "climatology"] {
        for v in &variables {
            for m in ["rmse", "acc", "bias", "activity"] {
                let got = leads.get(&(series.into(), v.clone(), m.into()));
                ensure(got == Some(&want), || {
                    format!("{series} {v} {m}: leads {got:?}")
                })?;
            }
        }
    }
    for m in ["rmse", "acc", "bias", "activity"] {
        let p = eval.join(format!("{m}.svg"));
        ensure(p.exists(), || format!("{} missing", p.display()))?;
    }
    let mut worst_ratio: f64 = 0.0;
    for v in &variables {
        for lead in [6, 12, 18, 24] {
            let model = rmse_of[&("model".into(), v.clone(), lead)];
            let pers = rmse_of[&("persistence".into(), v.clone(), lead)];
            ensure(model < pers, || {
                format!("{v} at {lead} h: model {model} vs persistence {pers}")
            })?;
            worst_ratio = worst_ratio.max(model / pers);
        }
    }
    let stages: Vec<String> = run
        .seconds
        .iter()
        .map(|(s, t)| format!("{s} {t:.0}s"))
        .collect();
    Ok(format!(
        "{total:.0} s total ({}); model/persistence RMSE ≤ {worst_ratio:.2} at leads ≤ 24 h",
        stages.join(", ")
    ))
}

fn res_criterion(run: &Run) -> Outcome {
    let cfg = ModelConfig::toy();
    let rc = ResConfig::toy(&cfg);
    let meta = live_meta(&cfg, 7);
    let fresh = init_res(&cfg, &rc, 7);
    let model = ForecastModel::new(&cfg, &meta, Some((&fresh, &rc)), 3);
    let mut rng = Rng::seed(7);
    for _ in 0..3 {
        let s = random_state(&mut rng, 48);
        let with_res = model
            .step_with(
                &model.params,
                &s.values.reshape([1, 8, 48, 96]).map_err(err)?,
            )
            .map_err(err)?;
        let plain = sime_forward(&s, &meta, &cfg, 3).map_err(err)?.state.values;
        ensure(with_res.data() == plain.data(), || {
            "untrained RES changes the SIME forecast".into()
        })?;
    }
    pipeline_ok(run)?;
    let kv = read_kv(&run.pipeline.layout.outputs.join("dctl_report.csv"))?;
    let num = |k: &str| {
        kv.get(k)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("dctl report lacks {k}"))
    };
    let (baseline, last) = (num("sime_baseline_val")?, num("final_val")?);
    let gain = 1.0 - last / baseline;
    let secs = run.seconds["dctl"];
    ensure(gain >= 0.05, || {
        format!("HR validation improved only {:.1}%", 100.0 * gain)
    })?;
    ensure(secs < 600.0, || format!("dctl took {secs:.0} s"))?;
    ensure(
        kv.get("meta_checksum_before") == kv.get("meta_checksum_after"),
        || "meta checksum changed".into(),
    )?;
    Ok(format!(
        "untrained RES bitwise; HR val {baseline:.4} → {last:.4} ({:.1}% better) in {secs:.0} s",
        100.0 * gain
    ))
}

fn rollout_benefit(run: &Run) -> Outcome {
    pipeline_ok(run)?;
    let p = &run.pipeline;
    let (model, lora) = p.load_model().map_err(err)?;
    let stats = p.load_stats().map_err(err)?;
    let test = p.load_split("hr_test", &stats).map_err(err)?;
    let t_max = lora.t_max();
    let starts = eval_inits(&test, p.cfg.eval.inits, p.cfg.eval.init_stride, t_max).map_err(err)?;
    let tuned =
        rollout_rmse(&model, Some(&lora), &test, &starts, t_max, p.cfg.eval.batch).map_err(err)?;
    let plain = rollout_rmse(&model, None, &test, &starts, t_max, p.cfg.eval.batch).map_err(err)?;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for t in 1..=t_max {
        let (a, b) = (tuned[t - 1], plain[t - 1]);
        cells.push(format!("t{t} {:+.1}%", 100.0 * (a / b - 1.0)));
        if a > b || (t >= 4 && a >= b) {
            failures.push(format!("t={t}: tuned {a:.5} vs base {b:.5}"));
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "held-out hr_test, {} inits: {}",
        starts.len(),
        cells.join(" ")
    ))
}

fn trainability(run: &Run) -> Outcome {
    pipeline_ok(run)?;
    let p = &run.pipeline;
    let curve = std::fs::read_to_string(p.layout.outputs.join("pretrain_loss.csv")).map_err(err)?;
    let vals: Vec<(usize, f64)> = curve
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Some((f[0].parse().ok()?, f.get(2)?.parse().ok()?))
        })
        .collect();
    let (first, last) = (
        vals.first().ok_or("empty curve")?,
        vals.last().ok_or("empty curve")?,
    );
    ensure(last.0 <= 500, || format!("curve runs to step {}", last.0))?;
    ensure(last.1 <= 0.5 * first.1, || {
        format!("val {} → {}", first.1, last.1)
    })?;

    let again = run._root.path().join("repeat");
    let mut overrides = run.overrides.clone();
    overrides.push(format!(
        "paths.checkpoints={}",
        again.join("checkpoints").display()
    ));
    overrides.push(format!("paths.outputs={}", again.join("outputs").display()));
    let repeat = Pipeline::new(RunConfig::load(&run.config, &overrides).map_err(err)?);
    repeat.run("pretrain").map_err(err)?;
    let a = std::fs::read(p.layout.meta()).map_err(err)?;
    let b = std::fs::read(repeat.layout.meta()).map_err(err)?;
    ensure(a == b, || {
        "repeated pretraining gave different parameters".into()
    })?;

    let ds = synthetic_lr("lr_train", 2016, 24);
    let hp = TrainConfig {
        steps: 6,
        batch: 2,
        eval_every: 3,
        seed: 10,
        ..TrainConfig::default()
    };
    let (m1, r1) = pretrain(&ModelConfig::toy(), &ds, &ds, &hp, 4).map_err(err)?;
    let (m2, r2) = pretrain(&ModelConfig::toy(), &ds, &ds, &hp, 4).map_err(err)?;
    ensure(m1 == m2 && r1.final_val == r2.final_val, || {
        "short pretraining is not deterministic".into()
    })?;
    Ok(format!(
        "val {:.5} → {:.5} ({:.1}×) by step {}; repeat under the same seed identical",
        first.1,
        last.1,
        first.1 / last.1,
        last.0
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())),
    }
}

fn main() {
    let mut results: BTreeMap<u32, (&str, Outcome)> = BTreeMap::new();
    let quick: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "metric-oracle equivalence", metric_oracle),
        (2, "latitude weights", latitude_weight_sums),
        (3, "SIME bijection", sime_bijection),
        (4, "SIME cost law", sime_cost_law),
        (5, "window attention", window_attention),
        (6, "gradient integrity", gradient_integrity),
        (8, "LoRA contracts", lora_contracts),
        (12, "station evaluation", station_criterion),
    ];
    for (id, name, f) in quick {
        results.insert(id, (name, guarded(f)));
    }
    let t0 = Instant::now();
    let run = run_pipeline();
    eprintln!(
        "acceptance: pipeline finished in {:.0} s",
        t0.elapsed().as_secs_f64()
    );
    results.insert(
        7,
        ("RES non-destructiveness", guarded(|| res_criterion(&run))),
    );
    results.insert(
        9,
        (
            "rollout fine-tuning benefit",
            guarded(|| rollout_benefit(&run)),
        ),
    );
    results.insert(10, ("trainability", guarded(|| trainability(&run))));
    results.insert(11, ("end-to-end", guarded(|| end_to_end(&run))));

    let mut failed = 0;
    for (id, (name, r)) in &results {
        match r {
            Ok(d) => println!("PASS {id:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
