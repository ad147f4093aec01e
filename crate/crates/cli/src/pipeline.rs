//! Pipeline stages and their on-disk artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ghr_core::climatology::{Climatology, ClimatologyBuilder};
use ghr_core::dataset::Dataset;
use ghr_core::format::{read_params, write_params, write_state};
use ghr_core::grid::GridSpec;
use ghr_core::lora::LoraSet;
use ghr_core::manifest::DatasetManifest;
use ghr_core::model::train::{pretrain, TrainConfig};
use ghr_core::model::MetaModelParams;
use ghr_core::normalize::{denormalize, normalize, NormStats, StatsAccumulator};
use ghr_core::res::{dctl_train, init_res, ResParams};
use ghr_core::rollout::{rollout, rollout_batch, ForecastModel, RolloutPlan};
use ghr_core::sime::SimeLayout;
use ghr_core::state::{subsample_centers, WeatherState};
use ghr_core::stations::{ingest_stations, write_stations, StationRecord, StationVariable};
use ghr_core::synth::Generator;
use ghr_core::time::{self, Timestamp};
use ghr_core::verify::{
    emit_report, nearest_cell, station_eval, ActivityMode, ForecastRun, ScoreAccumulator,
    ScoreReport,
};
use ghr_core::{GhrError, Result};
use ghr_tensor::{Rng, Tensor};

use crate::config::{RunConfig, SPLITS};

pub const STAGES: [&str; 8] = [
    "gen-data",
    "pretrain",
    "dctl",
    "lora-tune",
    "forecast",
    "evaluate",
    "station-eval",
    "report",
];

/// `20210103T00`, used in file names.
pub fn stamp(t: &Timestamp) -> String {
    t.format("%Y%m%dT%H").to_string()
}

pub fn lead_file(lead_hours: u32) -> String {
    format!("lead_{lead_hours:03}h.ghr")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| GhrError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| GhrError::io(path, e))
}

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(GhrError::MissingArtifact { stage, path })
    }
}

pub fn stats_csv(stats: &NormStats) -> String {
    let mut s = String::from("channel,mean,std\n");
    for (c, (m, sd)) in stats.mean.iter().zip(&stats.std).enumerate() {
        let _ = writeln!(s, "{c},{m},{sd}");
    }
    s
}

pub fn parse_stats_csv(text: &str) -> Result<NormStats> {
    let mut stats = NormStats {
        mean: Vec::new(),
        std: Vec::new(),
    };
    for (i, line) in text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
    {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match f.as_slice() {
            [c, m, s] => c
                .parse::<usize>()
                .ok()
                .filter(|&c| c == i)
                .and(m.parse().ok().zip(s.parse().ok())),
            _ => None,
        };
        let (m, s) = parsed.ok_or_else(|| {
            GhrError::invalid(format!("stats CSV line {}: expected {i},mean,std", i + 2))
        })?;
        stats.mean.push(m);
        stats.std.push(s);
    }
    Ok(stats)
}

/// `[1, 2, 3, 7]` as `1-3, 7`.
fn day_ranges(days: &[u16]) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < days.len() {
        let mut j = i;
        while j + 1 < days.len() && days[j + 1] == days[j] + 1 {
            j += 1;
        }
        out.push(if i == j {
            days[i].to_string()
        } else {
            format!("{}-{}", days[i], days[j])
        });
        i = j + 1;
    }
    out.join(", ")
}

/// Artifact locations under the configured roots.
pub struct Layout {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            data: cfg.data_path(),
            checkpoints: cfg.checkpoint_path(),
            outputs: cfg.output_path(),
        }
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.data.join(format!("{split}.manifest"))
    }

    pub fn stats(&self) -> PathBuf {
        self.data.join("stats.csv")
    }

    pub fn climatology(&self) -> PathBuf {
        self.data.join("climatology")
    }

    pub fn stations(&self) -> PathBuf {
        self.data.join("stations.csv")
    }

    pub fn meta(&self) -> PathBuf {
        self.checkpoints.join("meta.ghrp")
    }

    pub fn res(&self) -> PathBuf {
        self.checkpoints.join("res.ghrp")
    }

    pub fn lora(&self) -> PathBuf {
        self.checkpoints.join("lora.ghrp")
    }

    pub fn forecast_dir(&self, init: &Timestamp) -> PathBuf {
        self.outputs.join("forecast").join(stamp(init))
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.outputs.join("evaluate")
    }

    pub fn station_dir(&self) -> PathBuf {
        self.outputs.join("stations")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.outputs.join("report")
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
}

/// Station positions drawn away from the poles.
pub fn synthetic_stations(seed: u64, n: usize) -> Vec<(String, f64, f64)> {
    let mut rng = Rng::derived(seed, 0x5747);
    (0..n)
        .map(|i| {
            (
                format!("ST{i:03}"),
                rng.uniform(-60.0, 60.0),
                rng.uniform(0.0, 360.0),
            )
        })
        .collect()
}

/// Station value of `var` at `cell` of a physical-unit state.
pub fn cell_value(state: &WeatherState, var: StationVariable, cell: (usize, usize)) -> f64 {
    let at = |name: &str| {
        let c = state
            .variables
            .index_of(name)
            .expect("toy and canonical sets carry surface fields");
        state.plane(c)[cell.0 * state.grid.n_lon + cell.1] as f64
    };
    match var {
        StationVariable::T2m => at("t2m"),
        StationVariable::WindSpeed => at("u10").hypot(at("v10")),
    }
}

/// A physical-unit state from normalised values.
fn physical(data: &Dataset, values: Tensor, valid_time: Timestamp) -> Result<WeatherState> {
    let s = WeatherState {
        grid: data.grid.clone(),
        variables: data.variables.clone(),
        values,
        valid_time,
        normalization: Some(data.stats.clone()),
    };
    denormalize(&s)
}

/// Init indices into `data`: every `stride` steps from the start, each with
/// `lead_steps` verifying states after it.
pub fn eval_inits(
    data: &Dataset,
    inits: usize,
    stride: usize,
    lead_steps: usize,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..inits).map(|i| i * stride).collect();
    let windows = data.windows(lead_steps);
    if let Some(bad) = idx.iter().find(|i| windows.binary_search(i).is_err()) {
        return Err(GhrError::invalid(format!(
            "init {bad} of split {} has no {lead_steps} consecutive verifying states",
            data.manifest.split
        )));
    }
    Ok(idx)
}

/// Rolls the model out from each init and hands every physical-unit lead
/// state to `emit(init_index, step, state)`.
pub fn model_leads(
    model: &ForecastModel,
    lora: Option<&LoraSet>,
    data: &Dataset,
    inits: &[usize],
    lead_steps: usize,
    batch: usize,
    mut emit: impl FnMut(usize, usize, WeatherState) -> Result<()>,
) -> Result<()> {
    for chunk in inits.chunks(batch.max(1)) {
        let x0 = data.batch(chunk)?;
        let per = x0.numel() / chunk.len();
        let shape = data.values[0].shape().to_vec();
        rollout_batch(model, lora, &x0, lead_steps, |t, x| {
            for (i, &s) in chunk.iter().enumerate() {
                let v = Tensor::new(shape.clone(), x.data()[i * per..(i + 1) * per].to_vec())?;
                emit(s, t, physical(data, v, data.time(s + t))?)?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn lead_hours(step: usize) -> u32 {
    (step as i64 * time::STEP_HOURS) as u32
}

fn accumulator(series: &str, data: &Dataset, mode: ActivityMode) -> ScoreAccumulator {
    ScoreAccumulator::new(
        series,
        &data.grid,
        data.variables.names().map(str::to_string).collect(),
        mode,
    )
}

fn target(data: &Dataset, i: usize) -> Result<WeatherState> {
    physical(data, data.values[i].clone(), data.time(i))
}

/// Scores the init state carried forward unchanged.
pub fn score_persistence(
    data: &Dataset,
    clim: &Climatology,
    inits: &[usize],
    lead_steps: usize,
    mode: ActivityMode,
) -> Result<ScoreReport> {
    let mut acc = accumulator("persistence", data, mode);
    for &s in inits {
        let init = target(data, s)?;
        for t in 1..=lead_steps {
            let truth = target(data, s + t)?;
            let f = WeatherState {
                valid_time: truth.valid_time,
                ..init.clone()
            };
            acc.push(lead_hours(t), &f, &truth, clim.at(&truth.valid_time))?;
        }
    }
    Ok(acc.finish())
}

/// Scores the day-of-year climatology as a forecast.
pub fn score_climatology(
    data: &Dataset,
    clim: &Climatology,
    inits: &[usize],
    lead_steps: usize,
    mode: ActivityMode,
) -> Result<ScoreReport> {
    let mut acc = accumulator("climatology", data, mode);
    for &s in inits {
        for t in 1..=lead_steps {
            let truth = target(data, s + t)?;
            let c = clim.at(&truth.valid_time);
            let f = WeatherState {
                values: c.clone(),
                ..truth.clone()
            };
            acc.push(lead_hours(t), &f, &truth, c)?;
        }
    }
    Ok(acc.finish())
}

#[allow(clippy::too_many_arguments)]
pub fn score_model(
    model: &ForecastModel,
    lora: Option<&LoraSet>,
    data: &Dataset,
    clim: &Climatology,
    inits: &[usize],
    lead_steps: usize,
    batch: usize,
    mode: ActivityMode,
) -> Result<ScoreReport> {
    let mut acc = accumulator("model", data, mode);
    model_leads(model, lora, data, inits, lead_steps, batch, |s, t, f| {
        let truth = target(data, s + t)?;
        acc.push(lead_hours(t), &f, &truth, clim.at(&truth.valid_time))
    })?;
    Ok(acc.finish())
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let layout = Layout::new(&cfg);
        Self { cfg, layout }
    }

    pub fn run(&self, stage: &str) -> Result<()> {
        match stage {
            "gen-data" => self.gen_data(),
            "pretrain" => self.pretrain(),
            "dctl" => self.dctl(),
            "lora-tune" => self.lora_tune(),
            "forecast" => self.forecast(),
            "evaluate" => self.evaluate(),
            "station-eval" => self.station_eval(),
            "report" => self.report(),
            other => Err(GhrError::invalid(format!("unknown stage {other:?}"))),
        }
    }

    fn hr_grid(&self) -> Result<GridSpec> {
        GridSpec::global(self.cfg.data.hr_lat, self.cfg.data.hr_lon)
    }

    fn train_config(&self, base: &TrainConfig, offset: u64) -> TrainConfig {
        TrainConfig {
            seed: self.cfg.seed.wrapping_add(offset),
            ..base.clone()
        }
    }

    pub fn gen_data(&self) -> Result<()> {
        let cfg = &self.cfg;
        let variables = cfg.variable_set()?;
        let grid = self.hr_grid()?;
        let k = cfg.data.k;
        let gen = Generator::new(
            cfg.seed,
            grid.clone(),
            k,
            variables.clone(),
            cfg.data.synth.clone(),
        )?;
        let mut stats = StatsAccumulator::new(variables.len());
        let mut clim = ClimatologyBuilder::new();
        let names: Vec<String> = variables.names().map(str::to_string).collect();
        let mut test_states = Vec::new();
        for split in SPLITS {
            let spec = cfg.split(split);
            let hr = split.starts_with("hr_");
            let dir = self.layout.data.join(split);
            let (n_lat, n_lon) = if hr {
                (grid.n_lat, grid.n_lon)
            } else {
                (grid.n_lat / k, grid.n_lon / k)
            };
            let mut entries = Vec::with_capacity(spec.steps);
            for s in 0..spec.steps {
                let t = spec.start + time::step() * s as i32;
                let full = gen.hr_state(t)?;
                if split == "lr_train" || split == "hr_train" {
                    clim.push(&full)?;
                }
                let state = if hr {
                    full
                } else {
                    subsample_centers(&full, k)?
                };
                if split == "lr_train" {
                    stats.push_state(&state)?;
                }
                let path = dir.join(format!("{}.ghr", stamp(&t)));
                write_state(&state, &path)?;
                entries.push((t, path));
                if split == "hr_test" {
                    test_states.push(state);
                }
            }
            DatasetManifest::new(split, n_lat, n_lon, names.clone(), entries)?
                .write(&self.layout.manifest(split))?;
            eprintln!("gen-data: {split} {} states on {n_lat}×{n_lon}", spec.steps);
        }
        write_text(&self.layout.stats(), &stats_csv(&stats.finish()?))?;
        let clim = clim.finish("HR states of the lr_train and hr_train periods").map_err(|e| match e {
            GhrError::MissingDays(d) => GhrError::Config(vec![format!(
                "the lr_train and hr_train periods leave days of year {} without climatology samples",
                day_ranges(&d)
            )]),
            e => e,
        })?;
        clim.write(&self.layout.climatology())?;
        let records = self.station_records(&test_states, &grid)?;
        write_stations(&records, &self.layout.stations())?;
        eprintln!(
            "gen-data: climatology and {} station records written",
            records.len()
        );
        Ok(())
    }

    /// Truth at the nearest HR cell plus Gaussian observation noise.
    fn station_records(
        &self,
        states: &[WeatherState],
        grid: &GridSpec,
    ) -> Result<Vec<StationRecord>> {
        let mut rng = Rng::derived(self.cfg.seed, 0x0b5);
        let mut out = Vec::new();
        let stations = synthetic_stations(self.cfg.seed, self.cfg.data.stations);
        for state in states {
            for (id, lat, lon) in &stations {
                let cell = nearest_cell(grid, *lat, *lon)
                    .ok_or_else(|| GhrError::invalid(format!("station {id} is off the grid")))?;
                for var in [StationVariable::T2m, StationVariable::WindSpeed] {
                    let truth = cell_value(state, var, cell);
                    let noise = rng.normal(0.0, self.cfg.data.station_noise);
                    let value = match var {
                        StationVariable::WindSpeed => (truth + noise).abs(),
                        StationVariable::T2m => truth + noise,
                    };
                    out.push(StationRecord {
                        station_id: id.clone(),
                        lat: *lat,
                        lon: *lon,
                        valid_time: state.valid_time,
                        variable: var,
                        value,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn load_stats(&self) -> Result<NormStats> {
        let path = require(self.layout.stats(), "gen-data")?;
        let text = fs::read_to_string(&path).map_err(|e| GhrError::io(&path, e))?;
        parse_stats_csv(&text)
    }

    pub fn load_split(&self, split: &str, stats: &NormStats) -> Result<Dataset> {
        let path = require(self.layout.manifest(split), "gen-data")?;
        Dataset::load(DatasetManifest::read(&path)?, stats)
    }

    pub fn load_climatology(&self) -> Result<Climatology> {
        let dir = require(self.layout.climatology().join("source.txt"), "gen-data")?;
        Climatology::read(dir.parent().expect("file inside a directory"))
    }

    pub fn load_meta(&self) -> Result<MetaModelParams> {
        let meta = MetaModelParams(read_params(&require(self.layout.meta(), "pretrain")?)?);
        meta.check(&self.cfg.model)?;
        Ok(meta)
    }

    fn load_res(&self) -> Result<ResParams> {
        Ok(ResParams(read_params(&require(
            self.layout.res(),
            "dctl",
        )?)?))
    }

    pub fn load_model(&self) -> Result<(ForecastModel, LoraSet)> {
        let meta = self.load_meta()?;
        let res = self.load_res()?;
        let model = ForecastModel::new(
            &self.cfg.model,
            &meta,
            Some((&res, &self.cfg.res)),
            self.cfg.data.k,
        );
        let store = read_params(&require(self.layout.lora(), "lora-tune")?)?;
        let lora = LoraSet::from_store(&store, self.cfg.lora.clone())?;
        Ok((model, lora))
    }

    pub fn pretrain(&self) -> Result<()> {
        let stats = self.load_stats()?;
        let train = self.load_split("lr_train", &stats)?;
        let val = self.load_split("lr_val", &stats)?;
        let hp = self.train_config(&self.cfg.pretrain.train, 0);
        let (meta, report) = pretrain(
            &self.cfg.model,
            &train,
            &val,
            &hp,
            self.cfg.pretrain.val_samples,
        )?;
        write_params(&meta.0, &self.layout.meta())?;
        write_text(
            &self.layout.outputs.join("pretrain_loss.csv"),
            &report.to_csv(),
        )?;
        eprintln!(
            "pretrain: validation loss {:.6} -> {:.6} over {} steps",
            report.initial_val, report.final_val, hp.steps
        );
        Ok(())
    }

    pub fn dctl(&self) -> Result<()> {
        let meta = self.load_meta()?;
        let stats = self.load_stats()?;
        let train = self.load_split("hr_train", &stats)?;
        let val = self.load_split("hr_val", &stats)?;
        let mut res = init_res(
            &self.cfg.model,
            &self.cfg.res,
            self.cfg.seed.wrapping_add(1),
        );
        let layout = SimeLayout::new(
            self.cfg.data.k,
            (self.cfg.data.hr_lat, self.cfg.data.hr_lon),
        )?;
        let hp = self.train_config(&self.cfg.dctl.train, 1);
        let r = dctl_train(
            &self.cfg.model,
            &meta,
            &mut res,
            &self.cfg.res,
            &layout,
            &train,
            &val,
            &hp,
            self.cfg.dctl.val_samples,
        )?;
        write_params(&res.0, &self.layout.res())?;
        let gain = 1.0 - r.train.final_val / r.sime_baseline;
        let rows = [
            ("sime_baseline_val", format!("{}", r.sime_baseline)),
            ("initial_val", format!("{}", r.train.initial_val)),
            ("final_val", format!("{}", r.train.final_val)),
            ("best_val", format!("{}", r.train.best_val)),
            ("best_step", r.train.best_step.to_string()),
            ("relative_improvement", format!("{gain}")),
            ("trained_params", r.trained_params.to_string()),
            ("total_params", r.total_params.to_string()),
            ("trained_fraction", format!("{}", r.trained_fraction())),
            (
                "meta_checksum_before",
                format!("{:016x}", r.meta_checksum_before),
            ),
            (
                "meta_checksum_after",
                format!("{:016x}", r.meta_checksum_after),
            ),
        ];
        let mut csv = String::from("key,value\n");
        for (k, v) in rows {
            let _ = writeln!(csv, "{k},{v}");
        }
        write_text(&self.layout.outputs.join("dctl_report.csv"), &csv)?;
        write_text(
            &self.layout.outputs.join("dctl_curve.csv"),
            &r.train.to_csv(),
        )?;
        eprintln!(
            "dctl: HR validation loss {:.6} (frozen SIME) -> {:.6}, {:.1}% better",
            r.sime_baseline,
            r.train.final_val,
            100.0 * gain
        );
        Ok(())
    }

    pub fn lora_tune(&self) -> Result<()> {
        let meta = self.load_meta()?;
        let res = self.load_res()?;
        let stats = self.load_stats()?;
        let train = self.load_split("hr_train", &stats)?;
        let val = self.load_split("hr_val", &stats)?;
        let model = ForecastModel::new(
            &self.cfg.model,
            &meta,
            Some((&res, &self.cfg.res)),
            self.cfg.data.k,
        );
        let mut lora = LoraSet::init(
            &self.cfg.model,
            &model.params,
            self.cfg.lora.clone(),
            self.cfg.seed.wrapping_add(2),
        )?;
        let hp = self.train_config(&self.cfg.lora_tune.train, 2);
        let report = ghr_core::rollout::lora_finetune(
            &model,
            &mut lora,
            &train,
            &val,
            &hp,
            self.cfg.lora_pool,
            self.cfg.lora_tune.val_samples,
        )?;
        write_params(&lora.to_store(), &self.layout.lora())?;
        write_text(&self.layout.outputs.join("lora_tune.csv"), &report.to_csv())?;
        for s in &report.stages {
            eprintln!(
                "lora-tune: step {} validation loss {:.6} -> {:.6}",
                s.step, s.train.initial_val, s.train.final_val
            );
        }
        Ok(())
    }

    /// The HR split holding `t`.
    fn find_hr_state(&self, t: &Timestamp) -> Result<WeatherState> {
        for split in ["hr_test", "hr_val", "hr_train"] {
            let m = DatasetManifest::read(&require(self.layout.manifest(split), "gen-data")?)?;
            if let Some(i) = m.find(t) {
                return m.load(i);
            }
        }
        Err(GhrError::Config(vec![format!(
            "forecast.init {} is not in any HR split",
            time::iso(t)
        )]))
    }

    pub fn forecast(&self) -> Result<()> {
        let (model, lora) = self.load_model()?;
        let stats = self.load_stats()?;
        let init = self.cfg.forecast_init;
        let state = normalize(&self.find_hr_state(&init)?, &stats)?;
        let plan = RolloutPlan {
            initial: state,
            steps: self.cfg.forecast_steps,
            cadence: 1,
        };
        let leads = rollout(&plan, &model, Some(&lora))?;
        let dir = self.layout.forecast_dir(&init);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| GhrError::io(&dir, e))?;
        }
        for l in &leads {
            write_state(&denormalize(&l.state)?, &dir.join(lead_file(l.lead_hours)))?;
        }
        eprintln!("forecast: {} lead states in {}", leads.len(), dir.display());
        Ok(())
    }

    fn eval_setup(&self) -> Result<(Dataset, Vec<usize>)> {
        let stats = self.load_stats()?;
        let test = self.load_split("hr_test", &stats)?;
        let e = &self.cfg.eval;
        let inits = eval_inits(&test, e.inits, e.init_stride, e.lead_steps)?;
        Ok((test, inits))
    }

    pub fn evaluate(&self) -> Result<()> {
        let (model, lora) = self.load_model()?;
        let clim = self.load_climatology()?;
        let (test, inits) = self.eval_setup()?;
        let e = &self.cfg.eval;
        let reports = [
            score_model(
                &model,
                Some(&lora),
                &test,
                &clim,
                &inits,
                e.lead_steps,
                e.batch,
                e.activity,
            )?,
            score_persistence(&test, &clim, &inits, e.lead_steps, e.activity)?,
            score_climatology(&test, &clim, &inits, e.lead_steps, e.activity)?,
        ];
        let files = emit_report(&self.layout.evaluate_dir(), &reports)?;
        eprintln!(
            "evaluate: {} inits × {} leads, {} files",
            inits.len(),
            e.lead_steps,
            files.len()
        );
        Ok(())
    }

    pub fn station_eval(&self) -> Result<()> {
        let (model, lora) = self.load_model()?;
        let (test, inits) = self.eval_setup()?;
        let path = require(self.layout.stations(), "gen-data")?;
        let ingest = ingest_stations(&path, false)?;
        let mut runs: BTreeMap<usize, ForecastRun> = inits
            .iter()
            .map(|&s| {
                (
                    s,
                    ForecastRun {
                        init: test.time(s),
                        leads: Vec::new(),
                    },
                )
            })
            .collect();
        model_leads(
            &model,
            Some(&lora),
            &test,
            &inits,
            self.cfg.eval.lead_steps,
            self.cfg.eval.batch,
            |s, t, state| {
                let lead = lead_hours(t);
                if lead.is_multiple_of(24) {
                    runs.get_mut(&s)
                        .expect("known init")
                        .leads
                        .push((lead, state));
                }
                Ok(())
            },
        )?;
        let runs: Vec<ForecastRun> = runs.into_values().collect();
        let table = station_eval(&runs, &ingest.records)?;
        let dir = self.layout.station_dir();
        write_text(&dir.join("station_rmse.csv"), &table.to_csv())?;
        let mut m = String::from("station_id,lat,lon,cell_row,cell_col\n");
        for s in &table.matches {
            let _ = writeln!(
                m,
                "{},{},{},{},{}",
                s.station_id, s.lat, s.lon, s.cell.0, s.cell.1
            );
        }
        write_text(&dir.join("station_matches.csv"), &m)?;
        let mut inits_csv = String::from("init,used\n");
        for r in &runs {
            let used = table.inits_used.contains(&r.init);
            let _ = writeln!(inits_csv, "{},{}", time::iso(&r.init), used);
        }
        write_text(&dir.join("station_inits.csv"), &inits_csv)?;
        eprintln!(
            "station-eval: {} stations matched ({} off-grid), {} inits used, {} skipped, {} malformed rows",
            table.matches.len(),
            table.out_of_bounds,
            table.inits_used.len(),
            table.inits_skipped,
            ingest.malformed
        );
        Ok(())
    }

    pub fn report(&self) -> Result<()> {
        let eval_dir = self.layout.evaluate_dir();
        let rows = ghr_core::verify::report::read_scores_csv(&require(
            eval_dir.join("scores_model.csv"),
            "evaluate",
        )?)?;
        let pers = ghr_core::verify::report::read_scores_csv(&require(
            eval_dir.join("scores_persistence.csv"),
            "evaluate",
        )?)?;
        let clim = ghr_core::verify::report::read_scores_csv(&require(
            eval_dir.join("scores_climatology.csv"),
            "evaluate",
        )?)?;
        let station = require(
            self.layout.station_dir().join("station_rmse.csv"),
            "station-eval",
        )?;
        let dctl = require(self.layout.outputs.join("dctl_report.csv"), "dctl")?;
        let key =
            |r: &ghr_core::verify::ScoreRow| (r.variable.clone(), r.lead_hours, r.metric.clone());
        let pers: BTreeMap<_, f64> = pers.iter().map(|r| (key(r), r.value)).collect();
        let clim: BTreeMap<_, f64> = clim.iter().map(|r| (key(r), r.value)).collect();
        let mut csv = String::from("variable,lead_hours,metric,model,persistence,climatology\n");
        let (mut beat_p, mut beat_c, mut total) = (0, 0, 0);
        for r in &rows {
            let k = key(r);
            let (p, c) = (
                pers.get(&k).copied().unwrap_or(f64::NAN),
                clim.get(&k).copied().unwrap_or(f64::NAN),
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{p},{c}",
                r.variable, r.lead_hours, r.metric, r.value
            );
            if r.metric == "rmse" {
                total += 1;
                beat_p += usize::from(r.value < p);
                beat_c += usize::from(r.value < c);
            }
        }
        let dir = self.layout.report_dir();
        write_text(&dir.join("summary.csv"), &csv)?;
        let mut md = String::from("# Run summary\n\n");
        let _ = writeln!(
            md,
            "Model RMSE below persistence in {beat_p} of {total} (variable, lead) pairs."
        );
        let _ = writeln!(
            md,
            "Model RMSE below climatology in {beat_c} of {total} (variable, lead) pairs.\n"
        );
        md.push_str("## Transfer learning\n\n```\n");
        md.push_str(&fs::read_to_string(&dctl).map_err(|e| GhrError::io(&dctl, e))?);
        md.push_str("```\n\n## Station RMSE\n\n```\n");
        md.push_str(&fs::read_to_string(&station).map_err(|e| GhrError::io(&station, e))?);
        md.push_str("```\n\nCurves: ");
        md.push_str(
            &["rmse", "acc", "bias", "activity"]
                .map(|m| format!("../evaluate/{m}.svg"))
                .join(", "),
        );
        md.push('\n');
        write_text(&dir.join("summary.md"), &md)?;
        eprintln!("report: model beats persistence in {beat_p}/{total} and climatology in {beat_c}/{total} RMSE entries");
        Ok(())
    }
}
