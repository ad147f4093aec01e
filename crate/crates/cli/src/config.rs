//! Run configuration: a flat dotted-key TOML schema plus `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ghr_core::lora::LoraConfig;
use ghr_core::model::train::TrainConfig;
use ghr_core::model::{ModelConfig, Window};
use ghr_core::res::ResConfig;
use ghr_core::synth::SynthOptions;
use ghr_core::time::{self, utc, Timestamp};
use ghr_core::variables::VariableSet;
use ghr_core::verify::ActivityMode;
use ghr_core::{GhrError, Result};

/// A contiguous run of six-hourly states.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub start: Timestamp,
    pub steps: usize,
}

impl SplitSpec {
    pub fn end(&self) -> Timestamp {
        self.start + time::step() * (self.steps.saturating_sub(1)) as i32
    }
}

pub const SPLITS: [&str; 5] = ["lr_train", "lr_val", "hr_train", "hr_val", "hr_test"];

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub hr_lat: usize,
    pub hr_lon: usize,
    pub k: usize,
    /// `toy` or `canonical`.
    pub variables: String,
    pub synth: SynthOptions,
    pub splits: BTreeMap<String, SplitSpec>,
    pub stations: usize,
    /// Standard deviation of the observation noise added to station values.
    pub station_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub train: TrainConfig,
    pub val_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub inits: usize,
    /// Steps between consecutive init times.
    pub init_stride: usize,
    pub lead_steps: usize,
    pub activity: ActivityMode,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory that relative paths are resolved against.
    pub base: PathBuf,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub res: ResConfig,
    pub lora: LoraConfig,
    pub pretrain: StageConfig,
    pub dctl: StageConfig,
    pub lora_tune: StageConfig,
    pub lora_pool: usize,
    pub eval: EvalConfig,
    pub forecast_init: Timestamp,
    pub forecast_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let split = |start: Timestamp, steps: usize| SplitSpec { start, steps };
        let splits = [
            ("lr_train", split(utc(2016, 1, 1, 0), 2920)),
            ("lr_val", split(utc(2020, 1, 1, 0), 80)),
            ("hr_train", split(utc(2018, 1, 1, 0), 1460)),
            ("hr_val", split(utc(2019, 1, 1, 0), 120)),
            ("hr_test", split(utc(2021, 1, 1, 0), 100)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let model = ModelConfig::toy();
        let res = ResConfig::toy(&model);
        Self {
            seed: 7,
            base: PathBuf::from("."),
            data_dir: PathBuf::from("run/data"),
            checkpoint_dir: PathBuf::from("run/checkpoints"),
            output_dir: PathBuf::from("run/outputs"),
            data: DataConfig {
                hr_lat: 48,
                hr_lon: 96,
                k: 3,
                variables: "toy".into(),
                synth: SynthOptions::default(),
                splits,
                stations: 20,
                station_noise: 0.5,
            },
            model,
            res,
            lora: LoraConfig::toy(),
            pretrain: StageConfig {
                train: TrainConfig::default(),
                val_samples: 32,
            },
            dctl: StageConfig {
                train: TrainConfig {
                    steps: 400,
                    batch: 4,
                    warmup: 10,
                    keep_best: true,
                    ..TrainConfig::default()
                },
                val_samples: 24,
            },
            lora_tune: StageConfig {
                train: TrainConfig {
                    steps: 40,
                    batch: 4,
                    lr: 1e-3,
                    warmup: 5,
                    eval_every: 10,
                    keep_best: true,
                    ..TrainConfig::default()
                },
                val_samples: 16,
            },
            lora_pool: 96,
            eval: EvalConfig {
                inits: 24,
                init_stride: 2,
                lead_steps: 40,
                activity: ActivityMode::Anomaly,
                batch: 4,
            },
            forecast_init: utc(2021, 1, 3, 0),
            forecast_steps: 40,
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses the right-hand side of a `key=value` override as a TOML value,
/// falling back to a bare string.
fn parse_override(raw: &str) -> std::result::Result<(String, toml::Value), String> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| format!("override {raw:?} is not of the form key=value"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(format!("override {raw:?} has an empty key"));
    }
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn as_usize(v: &toml::Value) -> std::result::Result<usize, String> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(format!("expected a non-negative integer, got {other}")),
    }
}

fn as_f64(v: &toml::Value) -> std::result::Result<f64, String> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn as_bool(v: &toml::Value) -> std::result::Result<bool, String> {
    v.as_bool()
        .ok_or_else(|| format!("expected true or false, got {v}"))
}

fn as_str(v: &toml::Value) -> std::result::Result<&str, String> {
    v.as_str()
        .ok_or_else(|| format!("expected a string, got {v}"))
}

fn as_time(v: &toml::Value) -> std::result::Result<Timestamp, String> {
    let s = match v {
        toml::Value::Datetime(d) => d.to_string(),
        other => as_str(other)?.to_string(),
    };
    time::parse_iso(&s).ok_or_else(|| format!("{s:?} is not an ISO-8601 UTC time"))
}

fn as_window(v: &toml::Value) -> std::result::Result<Window, String> {
    let s = as_str(v)?;
    let (r, c) = s
        .split_once(['x', '×'])
        .ok_or_else(|| format!("window {s:?} is not of the form RxC"))?;
    match (r.trim().parse(), c.trim().parse()) {
        (Ok(r), Ok(c)) => Ok(Window::new(r, c)),
        _ => Err(format!("window {s:?} is not of the form RxC")),
    }
}

fn as_usize_list(v: &toml::Value) -> std::result::Result<Vec<usize>, String> {
    v.as_array()
        .ok_or_else(|| format!("expected an array, got {v}"))?
        .iter()
        .map(as_usize)
        .collect()
}

fn as_str_list(v: &toml::Value) -> std::result::Result<Vec<String>, String> {
    v.as_array()
        .ok_or_else(|| format!("expected an array, got {v}"))?
        .iter()
        .map(|x| as_str(x).map(str::to_string))
        .collect()
}

fn set_train(
    t: &mut TrainConfig,
    field: &str,
    v: &toml::Value,
) -> Option<std::result::Result<(), String>> {
    let r = (|| -> std::result::Result<(), String> {
        match field {
            "steps" => t.steps = as_usize(v)?,
            "batch" => t.batch = as_usize(v)?,
            "lr" => t.lr = as_f64(v)?,
            "warmup" => t.warmup = as_usize(v)?,
            "min_lr_frac" => t.min_lr_frac = as_f64(v)?,
            "weight_decay" => t.weight_decay = as_f64(v)?,
            "clip" => t.clip = as_f64(v)?,
            "eval_every" => t.eval_every = as_usize(v)?,
            "keep_best" => t.keep_best = as_bool(v)?,
            _ => return Err(String::new()),
        }
        Ok(())
    })();
    match r {
        Err(e) if e.is_empty() => None,
        r => Some(r),
    }
}

impl RunConfig {
    /// Reads `path`, applies `overrides` and validates; relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GhrError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str_with(&text, &base, overrides)
    }

    pub fn from_str_with(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            GhrError::Config(vec![format!("config syntax: {}", e.message())])
        })?;
        let mut keys = BTreeMap::new();
        flatten("", &table, &mut keys);
        let mut errors = Vec::new();
        for raw in overrides {
            match parse_override(raw) {
                Ok((k, v)) => {
                    keys.insert(k, v);
                }
                Err(e) => errors.push(e),
            }
        }
        let mut cfg = RunConfig {
            base: base.to_path_buf(),
            ..RunConfig::default()
        };
        for (k, v) in &keys {
            if let Err(e) = cfg.set(k, v) {
                errors.push(format!("{k}: {e}"));
            }
        }
        cfg.derive_model();
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(GhrError::Config(errors))
        }
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> std::result::Result<(), String> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match (section, field) {
            ("", "seed") => {
                self.seed = as_usize(v)? as u64;
            }
            ("paths", "data") => self.data_dir = as_str(v)?.into(),
            ("paths", "checkpoints") => self.checkpoint_dir = as_str(v)?.into(),
            ("paths", "outputs") => self.output_dir = as_str(v)?.into(),
            ("data", "hr_lat") => self.data.hr_lat = as_usize(v)?,
            ("data", "hr_lon") => self.data.hr_lon = as_usize(v)?,
            ("data", "k") => self.data.k = as_usize(v)?,
            ("data", "variables") => self.data.variables = as_str(v)?.to_string(),
            ("data", "stations") => self.data.stations = as_usize(v)?,
            ("data", "station_noise") => self.data.station_noise = as_f64(v)?,
            ("data", f) if f.starts_with("synth.") => {
                let s = &mut self.data.synth;
                match &f["synth.".len()..] {
                    "modes" => s.modes = as_usize(v)?,
                    "time_scale" => s.time_scale = as_f64(v)?,
                    "small_scale" => s.small_scale = as_f64(v)?,
                    "small_scale_rate" => s.small_scale_rate = as_f64(v)?,
                    "coupling" => s.coupling = as_f64(v)?,
                    _ => return Err("unknown key".into()),
                }
            }
            ("data", f) => {
                let (split, what) = f.split_once('.').ok_or("unknown key")?;
                let spec = self.data.splits.get_mut(split).ok_or("unknown key")?;
                match what {
                    "start" => spec.start = as_time(v)?,
                    "steps" => spec.steps = as_usize(v)?,
                    _ => return Err("unknown key".into()),
                }
            }
            ("model", f) => {
                let m = &mut self.model;
                match f {
                    "patch" => m.patch = as_usize(v)?,
                    "dim" => m.dim = as_usize(v)?,
                    "blocks" => m.blocks = as_usize(v)?,
                    "period" => m.period = as_usize(v)?,
                    "heads" => m.heads = as_usize(v)?,
                    "mlp_ratio" => m.mlp_ratio = as_usize(v)?,
                    "square" => m.square = as_window(v)?,
                    "zonal" => m.zonal = as_window(v)?,
                    "meridional" => m.meridional = as_window(v)?,
                    _ => return Err("unknown key".into()),
                }
            }
            ("res", "positions") => self.res.positions = as_usize_list(v)?,
            ("res", "window") => self.res.window = as_window(v)?,
            ("lora", f) => {
                let l = &mut self.lora;
                match f {
                    "rank" => l.rank = as_usize(v)?,
                    "alpha" => l.alpha = as_f64(v)? as f32,
                    "t_max" => l.t_max = as_usize(v)?,
                    "matrices" => l.matrices = as_str_list(v)?,
                    "init_std" => l.init_std = as_f64(v)? as f32,
                    "pool" => self.lora_pool = as_usize(v)?,
                    _ => return Err("unknown key".into()),
                }
            }
            (stage @ ("pretrain" | "dctl" | "lora_tune"), f) => {
                let st = match stage {
                    "pretrain" => &mut self.pretrain,
                    "dctl" => &mut self.dctl,
                    _ => &mut self.lora_tune,
                };
                if f == "val_samples" {
                    st.val_samples = as_usize(v)?;
                } else {
                    set_train(&mut st.train, f, v).ok_or("unknown key")??;
                }
            }
            ("eval", f) => {
                let e = &mut self.eval;
                match f {
                    "inits" => e.inits = as_usize(v)?,
                    "init_stride" => e.init_stride = as_usize(v)?,
                    "lead_steps" => e.lead_steps = as_usize(v)?,
                    "batch" => e.batch = as_usize(v)?,
                    "activity" => {
                        e.activity = match as_str(v)? {
                            "anomaly" => ActivityMode::Anomaly,
                            "literal" => ActivityMode::Literal,
                            other => {
                                return Err(format!(
                                    "activity mode {other:?} is not anomaly or literal"
                                ))
                            }
                        }
                    }
                    _ => return Err("unknown key".into()),
                }
            }
            ("forecast", "init") => self.forecast_init = as_time(v)?,
            ("forecast", "steps") => self.forecast_steps = as_usize(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Fills the model's input shape from the data section.
    fn derive_model(&mut self) {
        if let Ok(v) = self.variable_set() {
            self.model.channels = v.len();
        }
        if self.data.k > 0 {
            self.model.n_lat = self.data.hr_lat / self.data.k;
            self.model.n_lon = self.data.hr_lon / self.data.k;
        }
    }

    pub fn variable_set(&self) -> Result<VariableSet> {
        match self.data.variables.as_str() {
            "toy" => Ok(VariableSet::toy()),
            "canonical" => Ok(VariableSet::canonical()),
            other => Err(GhrError::Config(vec![format!(
                "data.variables {other:?} is not toy or canonical"
            )])),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let d = &self.data;
        if d.k.is_multiple_of(2) {
            v.push(format!("data.k = {} must be odd", d.k));
        }
        if d.k == 0 || !d.hr_lat.is_multiple_of(d.k.max(1)) || !d.hr_lon.is_multiple_of(d.k.max(1))
        {
            v.push(format!(
                "HR grid {}×{} is not divisible by k = {}",
                d.hr_lat, d.hr_lon, d.k
            ));
        }
        if d.hr_lon != 2 * d.hr_lat {
            v.push(format!(
                "HR grid {}×{} must have square cells (hr_lon = 2·hr_lat)",
                d.hr_lat, d.hr_lon
            ));
        }
        if let Err(GhrError::Config(e)) = self.variable_set() {
            v.extend(e);
        }
        for (name, s) in &d.splits {
            if s.steps < 2 {
                v.push(format!("data.{name}.steps must be at least 2"));
            }
            if !time::is_step_aligned(&s.start) {
                v.push(format!("data.{name}.start is not on a six-hour boundary"));
            }
        }
        let mut spans: Vec<(&String, &SplitSpec)> = d.splits.iter().collect();
        spans.sort_by_key(|(_, s)| s.start);
        for w in spans.windows(2) {
            if w[1].1.start <= w[0].1.end() {
                v.push(format!("data.{} overlaps data.{}", w[0].0, w[1].0));
            }
        }
        v.extend(self.model.violations());
        v.extend(
            self.res
                .violations(&self.model, d.k)
                .into_iter()
                .map(|e| format!("res: {e}")),
        );
        v.extend(
            self.lora
                .violations(&self.model)
                .into_iter()
                .map(|e| format!("lora: {e}")),
        );
        for (name, st) in [
            ("pretrain", &self.pretrain),
            ("dctl", &self.dctl),
            ("lora_tune", &self.lora_tune),
        ] {
            if st.train.batch == 0 {
                v.push(format!("{name}.batch must be positive"));
            }
            if st.val_samples == 0 {
                v.push(format!("{name}.val_samples must be positive"));
            }
            if !(st.train.lr > 0.0 && st.train.lr.is_finite()) {
                v.push(format!("{name}.lr must be positive"));
            }
        }
        if self.lora_pool == 0 {
            v.push("lora.pool must be positive".into());
        }
        let e = &self.eval;
        if e.inits == 0 || e.init_stride == 0 || e.lead_steps == 0 || e.batch == 0 {
            v.push(
                "eval.inits, eval.init_stride, eval.lead_steps and eval.batch must be positive"
                    .into(),
            );
        }
        if let Some(test) = d.splits.get("hr_test") {
            let need = (e.inits.max(1) - 1) * e.init_stride + e.lead_steps + 1;
            if test.steps < need {
                v.push(format!(
                    "data.hr_test.steps = {} cannot hold {} inits every {} steps with {} leads (need {need})",
                    test.steps, e.inits, e.init_stride, e.lead_steps
                ));
            }
            if test.steps <= self.lora.t_max {
                v.push("data.hr_test is shorter than lora.t_max".into());
            }
        }
        if self.forecast_steps == 0 {
            v.push("forecast.steps must be positive".into());
        }
        if !time::is_step_aligned(&self.forecast_init) {
            v.push("forecast.init is not on a six-hour boundary".into());
        }
        for (key, p) in [
            ("paths.data", &self.data_dir),
            ("paths.checkpoints", &self.checkpoint_dir),
            ("paths.outputs", &self.output_dir),
        ] {
            if !resolvable(&self.base.join(p)) {
                v.push(format!(
                    "{key} = {} has no existing ancestor directory",
                    p.display()
                ));
            }
        }
        v
    }

    pub fn data_path(&self) -> PathBuf {
        self.base.join(&self.data_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.base.join(&self.checkpoint_dir)
    }

    pub fn output_path(&self) -> PathBuf {
        self.base.join(&self.output_dir)
    }

    pub fn split(&self, name: &str) -> &SplitSpec {
        &self.data.splits[name]
    }
}

/// A path that exists, or whose nearest existing ancestor is a directory.
fn resolvable(p: &Path) -> bool {
    let mut cur = Some(p);
    while let Some(c) = cur {
        if c.as_os_str().is_empty() {
            return true;
        }
        if c.exists() {
            return c.is_dir();
        }
        cur = c.parent();
    }
    true
}
