//! Run configuration: one flat `section.key = value` text file covering every
//! component, with a single root seed fanned out to named sub-seeds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{NoiseSchedule, SamplerConfig, SamplerVariant, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::geometry::SceneBounds;
use crate::metrics::{RcdConfig, DEFAULT_FSCORE_THRESHOLD};
use crate::scenegen::SceneSpec;
use crate::seed::derive_seed;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSection {
    pub steps: usize,
    /// Must be set in the file or on the command line before sampling.
    pub guidance_scale: Option<f64>,
    pub variant: SamplerVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub scenes: usize,
    pub n_cond: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub fscore_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSection,
    pub rcd: RcdConfig,
    pub metrics: MetricsSection,
    pub scene: SceneSpec,
    pub data: DataSection,
}

/// Sub-seeds are derived from the root seed and may not be set directly.
const DERIVED_KEYS: [&str; 3] = ["train.seed", "rcd.seed", "scene.seed"];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleSection { steps: DEFAULT_STEPS, beta_start: DEFAULT_BETA_START, beta_end: DEFAULT_BETA_END },
            denoiser: DenoiserConfig::desk(SceneBounds::default()),
            train: TrainConfig::default(),
            sampler: SamplerSection { steps: 50, guidance_scale: None, variant: SamplerVariant::LocalDdim },
            rcd: RcdConfig::default(),
            metrics: MetricsSection { fscore_threshold: DEFAULT_FSCORE_THRESHOLD },
            scene: SceneSpec { density: 30.0, ..SceneSpec::default() },
            data: DataSection { scenes: 4, n_cond: 1024 },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(render).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn parse_scalar(raw: &str, like: &Value) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    let number = |raw: &str| -> std::result::Result<Value, String> {
        if let Ok(u) = raw.parse::<u64>() {
            return Ok(Value::from(u));
        }
        if let Ok(i) = raw.parse::<i64>() {
            return Ok(Value::from(i));
        }
        raw.parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected a number, got {raw:?}"))
    };
    match like {
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(format!("expected true or false, got {raw:?}")),
        },
        Value::Number(n) if n.is_f64() => raw
            .parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected a finite number, got {raw:?}")),
        Value::Number(_) => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected a non-negative integer, got {raw:?}")),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Null => {
            if raw == "none" {
                Ok(Value::Null)
            } else {
                number(raw)
            }
        }
        Value::Array(items) => {
            let parts: Vec<&str> = raw.split(',').collect();
            if parts.len() != items.len() {
                return Err(format!("expected {} comma-separated values, got {}", items.len(), parts.len()));
            }
            parts.iter().zip(items).map(|(p, it)| parse_scalar(p, it)).collect::<std::result::Result<_, _>>().map(Value::Array)
        }
        Value::Object(_) => Err("expected a section, not a value".into()),
    }
}

fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(root, |node, part| node.as_object_mut()?.get_mut(part))
}

impl RunConfig {
    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut flat = Vec::new();
        flatten("", &tree, &mut flat);
        let mut out = String::new();
        for (k, v) in flat {
            if DERIVED_KEYS.contains(&k.as_str()) {
                continue;
            }
            let _ = writeln!(out, "{k} = {}", render(&v));
        }
        out
    }

    /// Overrides defaults with the entries in `text`; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut tree = serde_json::to_value(Self::default()).expect("config serializes");
        for (n, line) in text.lines().enumerate() {
            let loc = || format!("{origin}:{}", n + 1);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { location: loc(), message: "expected `key = value`".into() })?;
            let key = key.trim();
            if DERIVED_KEYS.contains(&key) {
                return Err(Error::config(key, "derived from the root `seed`; set `seed` instead"));
            }
            let slot = lookup(&mut tree, key)
                .filter(|v| !v.is_object())
                .ok_or_else(|| Error::config(key, "unknown key"))?;
            *slot = parse_scalar(raw, slot).map_err(|m| Error::config(key, m))?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Parse { location: origin.into(), message: e.to_string() })?;
        Ok(cfg.with_derived_seeds())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Re-derives every component seed from the root seed.
    pub fn with_derived_seeds(mut self) -> Self {
        self.train.seed = derive_seed(self.seed, "train");
        self.rcd.seed = derive_seed(self.seed, "rcd");
        self.scene.seed = derive_seed(self.seed, "scene");
        self
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        *self = self.clone().with_derived_seeds();
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, "model")
    }

    pub fn sampler_seed(&self) -> u64 {
        derive_seed(self.seed, "sampler")
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)
    }

    /// Sampler settings; fails when no guidance scale has been given.
    pub fn sampler(&self) -> Result<SamplerConfig> {
        let s = self
            .sampler
            .guidance_scale
            .ok_or_else(|| Error::config("sampler.guidance_scale", "no default; set it in the config or pass --guidance"))?;
        Ok(SamplerConfig::new(self.sampler.steps, s, self.sampler.variant, self.sampler_seed()))
    }

    /// Field-level and cross-field checks. Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let sched = self.schedule()?;
        self.denoiser.validate()?;
        self.train.validate()?;
        self.rcd.validate()?;
        self.scene.validate()?;
        if self.sampler.steps == 0 || self.sampler.steps > sched.len() {
            return Err(Error::config(
                "sampler.steps",
                format!("must lie in 1..={} (schedule.steps), got {}", sched.len(), self.sampler.steps),
            ));
        }
        if let Some(s) = self.sampler.guidance_scale {
            if !s.is_finite() {
                return Err(Error::config("sampler.guidance_scale", "must be finite"));
            }
        }
        if !(self.metrics.fscore_threshold.is_finite() && self.metrics.fscore_threshold > 0.0) {
            return Err(Error::config("metrics.fscore_threshold", "must be positive"));
        }
        if self.data.scenes == 0 {
            return Err(Error::config("data.scenes", "must be positive"));
        }
        if self.data.n_cond == 0 {
            return Err(Error::config("data.n_cond", "must be positive"));
        }
        let mut warnings = Vec::new();
        let n_in = self.data.n_cond * self.train.rate;
        if self.denoiser.grid_smaller_than(n_in) {
            warnings.push(format!(
                "grid has {} voxels, not more than the {n_in} input points",
                self.denoiser.grid.num_voxels()
            ));
        }
        Ok(warnings)
    }
}
