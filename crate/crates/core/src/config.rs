//! Run configuration read from TOML with dotted keys.
//!
//! ```toml
//! schedule.kind = "ot"
//! schedule.T = 200
//! space.K = 16
//! space.m = 16
//! train.r = 0.5
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::data::SourceKind;
use crate::denoiser::NetConfig;
use crate::error::{Error, Result};
use crate::schedules::{Schedule, ScheduleKind, VE_SIGMA0, VE_SIGMA_T};
use crate::space::{EmbeddingTable, Representation};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub sigma0: f64,
    pub sigma_t: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Vp,
            steps: 2000,
            sigma0: VE_SIGMA0,
            sigma_t: VE_SIGMA_T,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        match self.kind {
            ScheduleKind::Ve => Schedule::ve(self.steps, self.sigma0, self.sigma_t),
            kind => Schedule::new(kind, self.steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceConfig {
    pub states: usize,
    pub dim: usize,
    pub trainable: bool,
    pub repr: Representation,
    /// Multiplier on the uniform `1/sqrt(m)` init bound.
    pub scale: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            states: 16,
            dim: 16,
            trainable: true,
            repr: Representation::Embedding,
            scale: 1.0,
        }
    }
}

impl SpaceConfig {
    /// Embedding table for the representation. Binary representations
    /// ignore `K`, `m` and `trainable`.
    pub fn build_table<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EmbeddingTable> {
        match self.repr {
            Representation::Embedding => {
                let table = EmbeddingTable::random(self.states, self.dim, self.trainable, rng)?;
                EmbeddingTable::new(table.weights() * self.scale, self.trainable)
            }
            Representation::FixedBinary => Ok(EmbeddingTable::fixed_binary()),
            Representation::BinaryBits => Ok(EmbeddingTable::binary_bits()),
        }
    }

    /// Embedding dimension actually used by the representation.
    pub fn effective_dim(&self) -> usize {
        match self.repr {
            Representation::Embedding => self.dim,
            Representation::FixedBinary => 8,
            Representation::BinaryBits => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: SourceKind,
    /// Sequence length, or grid side for grid sources.
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    /// Load items from this file instead of generating them.
    pub path: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::MarkovTokens,
            size: 8,
            count: 4096,
            seed: 7,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub space: SpaceConfig,
    pub data: DataConfig,
    pub window: usize,
    pub pool: bool,
    pub hidden: usize,
    pub time_dim: usize,
    /// Confidence factor used to rescale training trajectories.
    pub r: f64,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    pub seed: u64,
    pub mse_weight: f64,
    pub round_weight: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            space: SpaceConfig::default(),
            data: DataConfig::default(),
            window: 1,
            pool: true,
            hidden: 128,
            time_dim: 32,
            r: 0.5,
            batch: 64,
            steps: 20_000,
            lr: 1e-3,
            momentum: 0.9,
            clip: 1.0,
            seed: 0,
            mse_weight: 1.0,
            round_weight: 1.0,
            log_every: 100,
        }
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("`{key}` must be a number"))),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::Config(format!("`{key}` must be true or false")))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Config(format!("`{key}` must be a string")))
}

/// Flattens nested tables into `(dotted.key, value)` pairs.
pub fn flatten(table: &toml::Table) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                other => out.push((key, other.clone())),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

/// Parses a flag-style `key=value` override into a TOML value.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let parsed: toml::Table = format!("v = {raw}")
        .parse()
        .unwrap_or_else(|_| toml::Table::from_iter([("v".to_string(), toml::Value::String(raw.to_string()))]));
    Ok((key.trim().to_string(), parsed["v"].clone()))
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut cfg = Self::default();
        for (k, v) in flatten(&table) {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "schedule.kind" => self.schedule.kind = as_str(key, v)?.parse()?,
            "schedule.T" => self.schedule.steps = as_usize(key, v)?,
            "schedule.sigma0" => self.schedule.sigma0 = as_f64(key, v)?,
            "schedule.sigmaT" => self.schedule.sigma_t = as_f64(key, v)?,
            "space.K" => self.space.states = as_usize(key, v)?,
            "space.m" => self.space.dim = as_usize(key, v)?,
            "space.trainable" => self.space.trainable = as_bool(key, v)?,
            "space.scale" => self.space.scale = as_f64(key, v)?,
            "space.repr" => self.space.repr = as_str(key, v)?.parse()?,
            "data.source" => self.data.source = as_str(key, v)?.parse()?,
            "data.size" => self.data.size = as_usize(key, v)?,
            "data.count" => self.data.count = as_usize(key, v)?,
            "data.seed" => self.data.seed = as_usize(key, v)? as u64,
            "data.path" => self.data.path = Some(as_str(key, v)?.to_string()),
            "net.window" => self.window = as_usize(key, v)?,
            "net.pool" => self.pool = as_bool(key, v)?,
            "net.hidden" => self.hidden = as_usize(key, v)?,
            "net.time_dim" => self.time_dim = as_usize(key, v)?,
            "train.r" => self.r = as_f64(key, v)?,
            "train.batch" => self.batch = as_usize(key, v)?,
            "train.steps" => self.steps = as_usize(key, v)?,
            "train.lr" => self.lr = as_f64(key, v)?,
            "train.momentum" => self.momentum = as_f64(key, v)?,
            "train.clip" => self.clip = as_f64(key, v)?,
            "train.seed" => self.seed = as_usize(key, v)? as u64,
            "train.mse_weight" => self.mse_weight = as_f64(key, v)?,
            "train.round_weight" => self.round_weight = as_f64(key, v)?,
            "train.log_every" => self.log_every = as_usize(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::range("train.r", self.r, 0.0, 1.0));
        }
        if self.batch == 0 || self.data.size == 0 || self.data.count == 0 || self.log_every == 0 {
            return Err(Error::Config("batch, data.size, data.count and log_every must be positive".into()));
        }
        if self.schedule.steps < 2 {
            return Err(Error::Config(format!("schedule.T must be at least 2, got {}", self.schedule.steps)));
        }
        if self.space.repr == Representation::Embedding && (self.space.states < 2 || self.space.dim == 0) {
            return Err(Error::Config("space.K must be >= 2 and space.m >= 1".into()));
        }
        if !(self.space.scale > 0.0 && self.space.scale.is_finite()) {
            return Err(Error::Config("space.scale must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.clip >= 0.0) {
            return Err(Error::Config("lr, momentum and clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            dim: self.space.effective_dim(),
            window: self.window,
            pool: self.pool,
            hidden: self.hidden,
            time_dim: self.time_dim,
        }
    }

    /// Canonical TOML text; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schedule.kind = \"{}\"", self.schedule.kind);
        let _ = writeln!(s, "schedule.T = {}", self.schedule.steps);
        let _ = writeln!(s, "schedule.sigma0 = {:?}", self.schedule.sigma0);
        let _ = writeln!(s, "schedule.sigmaT = {:?}", self.schedule.sigma_t);
        let _ = writeln!(s, "space.K = {}", self.space.states);
        let _ = writeln!(s, "space.m = {}", self.space.dim);
        let _ = writeln!(s, "space.trainable = {}", self.space.trainable);
        let _ = writeln!(s, "space.scale = {:?}", self.space.scale);
        let _ = writeln!(s, "space.repr = \"{}\"", self.space.repr);
        let _ = writeln!(s, "data.source = \"{}\"", self.data.source);
        let _ = writeln!(s, "data.size = {}", self.data.size);
        let _ = writeln!(s, "data.count = {}", self.data.count);
        let _ = writeln!(s, "data.seed = {}", self.data.seed);
        if let Some(p) = &self.data.path {
            let _ = writeln!(s, "data.path = {}", toml::Value::String(p.clone()));
        }
        let _ = writeln!(s, "net.window = {}", self.window);
        let _ = writeln!(s, "net.pool = {}", self.pool);
        let _ = writeln!(s, "net.hidden = {}", self.hidden);
        let _ = writeln!(s, "net.time_dim = {}", self.time_dim);
        let _ = writeln!(s, "train.r = {:?}", self.r);
        let _ = writeln!(s, "train.batch = {}", self.batch);
        let _ = writeln!(s, "train.steps = {}", self.steps);
        let _ = writeln!(s, "train.lr = {:?}", self.lr);
        let _ = writeln!(s, "train.momentum = {:?}", self.momentum);
        let _ = writeln!(s, "train.clip = {:?}", self.clip);
        let _ = writeln!(s, "train.seed = {}", self.seed);
        let _ = writeln!(s, "train.mse_weight = {:?}", self.mse_weight);
        let _ = writeln!(s, "train.round_weight = {:?}", self.round_weight);
        let _ = writeln!(s, "train.log_every = {}", self.log_every);
        s
    }
}
