//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::ValueEnum;
use dispersion_core::noise::FlowStatistics;
use dispersion_core::sde::Scheme;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Lambda,
    Spectrum,
    Density,
    SphereCheck,
    VerifySpan,
    VerifyControl,
    VerifyCertificate,
    Mixing,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Lambda => "lambda",
            Command::Spectrum => "spectrum",
            Command::Density => "density",
            Command::SphereCheck => "sphere-check",
            Command::VerifySpan => "verify-span",
            Command::VerifyControl => "verify-control",
            Command::VerifyCertificate => "verify-certificate",
            Command::Mixing => "mixing",
        }
    }

    /// Commands whose result can also be written as a CSV table.
    pub fn has_table(self) -> bool {
        !matches!(self, Command::Lambda | Command::Spectrum | Command::SphereCheck | Command::VerifySpan)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config error in `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Everything a run needs. Field names in the echo match the config keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub d: usize,
    pub tau: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub ensemble: usize,
    pub seed: u64,
    pub x_cut: f64,
    pub bins: usize,
    /// 0 means one worker per available core.
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub timing: bool,
    pub scheme: Scheme,
    pub record_every: u64,
    pub burn_in: f64,
    /// Tail fit window; `d = 2` defaults to `[20, 500]`, `d >= 3` to `[10, 60]`
    /// because the steeper tail leaves the far bins empty.
    pub tail_lo: f64,
    pub tail_hi: f64,
    pub points: usize,
    pub zero_points: usize,
    pub pairs: usize,
    pub steps: usize,
    pub samples: u64,
    pub nx: usize,
    pub ny: usize,
    pub x_max: f64,
    pub y_max: f64,
    pub rays: usize,
    pub r_max: f64,
    pub sequences: usize,
    pub sample_every: u64,
    pub max_lag: usize,
}

pub const KEYS: &[&str] = &[
    "d", "tau", "A", "B", "dt", "T", "ensemble", "seed", "x_cut", "bins", "workers", "output", "format", "timing",
    "scheme", "record_every", "burn_in", "tail_lo", "tail_hi", "points", "zero_points", "pairs", "steps", "samples",
    "nx", "ny", "x_max", "y_max", "rays", "r_max", "sequences", "sample_every", "max_lag",
];

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            d: 1,
            tau: 1.0,
            a: 1.0,
            b: 0.0,
            dt: 0.01,
            t_total: 1000.0,
            ensemble: 64,
            seed: 1,
            x_cut: 1e4,
            bins: 40,
            workers: 0,
            output: None,
            format: Format::Json,
            timing: true,
            scheme: Scheme::Strang,
            record_every: 100,
            burn_in: 10.0,
            tail_lo: 20.0,
            tail_hi: 500.0,
            points: 1000,
            zero_points: 100,
            pairs: 100,
            steps: 10_000,
            samples: 1_000_000,
            nx: 40,
            ny: 20,
            x_max: 4.0,
            y_max: 2.0,
            rays: 64,
            r_max: 1e3,
            sequences: 32,
            sample_every: 2,
            max_lag: 400,
        }
    }

    /// Defaults, then the file pairs, then the overrides.
    pub fn build(command: Command, file: &[(String, String)], overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(command);
        for (k, v) in file.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        let given = |key: &str| file.iter().chain(overrides).any(|(k, _)| k == key);
        if cfg.d >= 3 {
            if !given("tail_lo") {
                cfg.tail_lo = 10.0;
            }
            if !given("tail_hi") {
                cfg.tail_hi = 60.0;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "d" => self.d = int(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "A" => self.a = num(key, v)?,
            "B" => self.b = num(key, v)?,
            "dt" => self.dt = num(key, v)?,
            "T" => self.t_total = num(key, v)?,
            "ensemble" => self.ensemble = int(key, v)?,
            "seed" => self.seed = int(key, v)?,
            "x_cut" => self.x_cut = num(key, v)?,
            "bins" => self.bins = int(key, v)?,
            "workers" => self.workers = int(key, v)?,
            "output" => self.output = (!v.is_empty() && v != "-").then(|| PathBuf::from(v)),
            "format" => {
                self.format = match v {
                    "json" => Format::Json,
                    "csv" => Format::Csv,
                    _ => return Err(ConfigError::new(key, format!("expected json or csv, got `{v}`"))),
                }
            }
            "timing" => {
                self.timing = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(ConfigError::new(key, format!("expected true or false, got `{v}`"))),
                }
            }
            "scheme" => {
                self.scheme = match v {
                    "strang" => Scheme::Strang,
                    "em" | "euler-maruyama" => Scheme::EulerMaruyama,
                    _ => return Err(ConfigError::new(key, format!("expected strang or em, got `{v}`"))),
                }
            }
            "record_every" => self.record_every = int(key, v)?,
            "burn_in" => self.burn_in = num(key, v)?,
            "tail_lo" => self.tail_lo = num(key, v)?,
            "tail_hi" => self.tail_hi = num(key, v)?,
            "points" => self.points = int(key, v)?,
            "zero_points" => self.zero_points = int(key, v)?,
            "pairs" => self.pairs = int(key, v)?,
            "steps" => self.steps = int(key, v)?,
            "samples" => self.samples = int(key, v)?,
            "nx" => self.nx = int(key, v)?,
            "ny" => self.ny = int(key, v)?,
            "x_max" => self.x_max = num(key, v)?,
            "y_max" => self.y_max = num(key, v)?,
            "rays" => self.rays = int(key, v)?,
            "r_max" => self.r_max = num(key, v)?,
            "sequences" => self.sequences = int(key, v)?,
            "sample_every" => self.sample_every = int(key, v)?,
            "max_lag" => self.max_lag = int(key, v)?,
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(key, format!("must be positive, got {v}")))
            }
        };
        let nonzero = |key: &str, v: u64| {
            if v > 0 {
                Ok(())
            } else {
                Err(ConfigError::new(key, "must be at least 1"))
            }
        };
        nonzero("d", self.d as u64)?;
        positive("tau", self.tau)?;
        positive("dt", self.dt)?;
        positive("T", self.t_total)?;
        if self.t_total < self.dt {
            return Err(ConfigError::new("T", "must be at least dt"));
        }
        positive("x_cut", self.x_cut)?;
        if !(self.burn_in >= 0.0) {
            return Err(ConfigError::new("burn_in", "must be nonnegative"));
        }
        positive("tail_lo", self.tail_lo)?;
        if !(self.tail_hi > self.tail_lo) {
            return Err(ConfigError::new("tail_hi", "must exceed tail_lo"));
        }
        positive("x_max", self.x_max)?;
        positive("y_max", self.y_max)?;
        positive("r_max", self.r_max)?;
        for (k, v) in [
            ("ensemble", self.ensemble as u64),
            ("bins", self.bins as u64),
            ("record_every", self.record_every),
            ("points", self.points as u64),
            ("pairs", self.pairs as u64),
            ("steps", self.steps as u64),
            ("samples", self.samples),
            ("nx", self.nx as u64),
            ("ny", self.ny as u64),
            ("rays", self.rays as u64),
            ("sample_every", self.sample_every),
            ("max_lag", self.max_lag as u64),
        ] {
            nonzero(k, v)?;
        }
        if self.zero_points > self.points {
            return Err(ConfigError::new("zero_points", "cannot exceed points"));
        }
        if self.format == Format::Csv && !self.command.has_table() {
            return Err(ConfigError::new("format", format!("{} has no CSV form", self.command)));
        }
        let needs_stats = !matches!(self.command, Command::SphereCheck);
        if needs_stats {
            if let Err(e) = FlowStatistics::new(self.d, self.tau, self.a, self.b) {
                return Err(ConfigError::new("A", e.to_string()));
            }
        }
        let min_d = if matches!(self.command, Command::SphereCheck | Command::VerifyCertificate | Command::Mixing) {
            2
        } else {
            1
        };
        if self.d < min_d {
            return Err(ConfigError::new("d", format!("{} needs d >= {min_d}", self.command)));
        }
        Ok(())
    }

    pub fn stats(&self) -> FlowStatistics {
        FlowStatistics {
            d: self.d,
            tau: self.tau,
            a: self.a,
            b: self.b,
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64, ConfigError> {
    f64::from_str(v).map_err(|_| ConfigError::new(key, format!("expected a number, got `{v}`")))
}

/// Integers also accept exact float spellings such as `1e7`.
fn int<T: TryFrom<u64>>(key: &str, v: &str) -> Result<T, ConfigError> {
    let bad = || ConfigError::new(key, format!("expected a nonnegative integer, got `{v}`"));
    let n = match v.parse::<u64>() {
        Ok(n) => n,
        Err(_) => {
            let f = num(key, v)?;
            if !(f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(63)) {
                return Err(bad());
            }
            f as u64
        }
    };
    T::try_from(n).map_err(|_| bad())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=').filter(|(k, _)| !k.trim().is_empty()) else {
            return Err(ConfigError::new(&format!("line {}", i + 1), format!("expected key = value, got `{line}`")));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Turns `--key value` / `--key=value` words into pairs.
pub fn parse_overrides(words: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut it = words.iter();
    while let Some(w) = it.next() {
        let Some(body) = w.strip_prefix("--") else {
            return Err(ConfigError::new(w, "expected --key value"));
        };
        match body.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| ConfigError::new(body, "missing value"))?;
                out.push((body.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

/// The resolved configuration as ordered `key -> value` strings.
pub fn echo(cfg: &RunConfig) -> BTreeMap<String, serde_json::Value> {
    match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}
