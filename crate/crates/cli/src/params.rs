//! Parameter resolution: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Map, Value};
use sofi_rgl::blinking::EmitterModel;
use sofi_rgl::model::{DetectorGeometry, DEFAULT_HALF_EXTENT};
use sofi_rgl::summary::SchemeSpec;

use crate::error::CliError;
use crate::grid::{self, Grid};

/// Every key accepted in a config file or as a `--flag`.
pub const KEYS: &[&str] = &[
    "command", "model", "alpha", "p", "pbar", "nbar", "tau_on", "tau_off", "tau", "dx", "extent", "mu_b", "theta",
    "scheme", "schemes", "metric", "axis", "range", "tau_min", "tau_max", "frames", "samples", "seed", "out",
    "format", "threads",
];

pub fn normalise_key(k: &str) -> String {
    let k = k.trim().to_ascii_lowercase().replace('-', "_");
    if k == "mu_b" || k == "mub" {
        "mu_b".into()
    } else {
        k
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Usage(m) => CliError::Usage(format!("config {}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("line {}: expected `key = value`", no + 1)))?;
        let key = normalise_key(k);
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("line {}: unknown key `{}`", no + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Simplified,
    Markov,
}

/// Physical parameters before validation; sweeps override one field.
#[derive(Debug, Clone, PartialEq)]
pub struct Physics {
    pub kind: ModelKind,
    pub alpha: f64,
    pub p: f64,
    pub pbar: f64,
    pub tau_on: f64,
    pub tau_off: f64,
    pub tau: f64,
    pub dx: f64,
    pub extent: f64,
    pub mu_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Theta,
    Tau,
    Pbar,
    Nbar,
    Alpha,
    Dx,
    P,
    MuB,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::Tau => "tau",
            Axis::Pbar => "pbar",
            Axis::Nbar => "nbar",
            Axis::Alpha => "alpha",
            Axis::Dx => "dx",
            Axis::P => "p",
            Axis::MuB => "mu_b",
        }
    }
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match normalise_key(s).as_str() {
            "theta" => Axis::Theta,
            "tau" => Axis::Tau,
            "pbar" => Axis::Pbar,
            "nbar" => Axis::Nbar,
            "alpha" => Axis::Alpha,
            "dx" => Axis::Dx,
            "p" => Axis::P,
            "mu_b" => Axis::MuB,
            _ => return Err(CliError::Usage(format!("axis: unknown axis `{s}`"))),
        })
    }
}

impl Physics {
    pub fn nbar(&self) -> f64 {
        self.pbar * self.tau
    }

    pub fn with(&self, axis: Axis, value: f64) -> Physics {
        let mut out = self.clone();
        match axis {
            Axis::Theta => {}
            Axis::Tau => out.tau = value,
            Axis::Pbar => out.pbar = value,
            Axis::Nbar => out.pbar = value / self.tau,
            Axis::Alpha => out.alpha = value,
            Axis::Dx => out.dx = value,
            Axis::P => out.p = value,
            Axis::MuB => out.mu_b = value,
        }
        out
    }

    pub fn model(&self) -> Result<EmitterModel, CliError> {
        Ok(match self.kind {
            ModelKind::Simplified => EmitterModel::simplified(self.alpha, self.p, self.pbar)?,
            ModelKind::Markov => EmitterModel::markov(self.alpha, self.tau_on, self.tau_off, self.pbar)?,
        })
    }

    pub fn geometry(&self) -> Result<DetectorGeometry, CliError> {
        Ok(DetectorGeometry::with_extent(self.dx, self.extent, self.tau, self.mu_b)?)
    }

    pub fn to_json(&self) -> Value {
        let mut m = json!({
            "model": match self.kind { ModelKind::Simplified => "simplified", ModelKind::Markov => "markov" },
            "alpha": self.alpha,
            "pbar": self.pbar,
            "tau": self.tau,
            "nbar": self.nbar(),
            "dx": self.dx,
            "extent": self.extent,
            "mu_b": self.mu_b,
        });
        let obj = m.as_object_mut().expect("object literal");
        match self.kind {
            ModelKind::Simplified => {
                obj.insert("p".into(), json!(self.p));
            }
            ModelKind::Markov => {
                obj.insert("tau_on".into(), json!(self.tau_on));
                obj.insert("tau_off".into(), json!(self.tau_off));
            }
        }
        m
    }
}

/// A column of a sweep: an estimation scheme or the full-data bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Scheme(SchemeSpec),
    FullData,
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Scheme(s) => write!(f, "{s}"),
            Target::FullData => write!(f, "MAX"),
        }
    }
}

impl FromStr for Target {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        if s.trim().eq_ignore_ascii_case("max") {
            return Ok(Target::FullData);
        }
        s.parse::<SchemeSpec>()
            .map(Target::Scheme)
            .map_err(|e| CliError::Usage(format!("scheme: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Zeta,
    ZetaPix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub physics: Physics,
    pub theta: Option<f64>,
    pub targets: Option<Vec<Target>>,
    pub metric: Metric,
    pub axis: Option<Axis>,
    pub range: Option<Grid>,
    pub tau_bounds: (f64, f64),
    pub frames: usize,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<String>,
    pub format: Format,
    pub threads: Option<usize>,
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl Lookup<'_> {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("{key}: cannot parse `{raw}`"))),
        }
    }

    fn number(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.get::<f64>(key)?.unwrap_or(default);
        if !v.is_finite() {
            return Err(CliError::Usage(format!("{key}: must be finite")));
        }
        Ok(v)
    }

    /// Integers also accept float notation such as `1e6`.
    fn count(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get::<f64>(key)? {
            None => Ok(default),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63) => Ok(v as u64),
            Some(v) => Err(CliError::Usage(format!("{key}: expected a non-negative integer, got {v}"))),
        }
    }
}

impl Settings {
    pub fn resolve(raw: &BTreeMap<String, String>) -> Result<Settings, CliError> {
        let l = Lookup(raw);
        let kind = match raw.get("model").map(|s| s.to_ascii_lowercase()) {
            None => ModelKind::Simplified,
            Some(m) if m == "simplified" => ModelKind::Simplified,
            Some(m) if m == "markov" => ModelKind::Markov,
            Some(m) => return Err(CliError::Usage(format!("model: expected simplified or markov, got `{m}`"))),
        };
        let tau = l.number("tau", 1.0)?;
        let pbar = match (l.get::<f64>("pbar")?, l.get::<f64>("nbar")?) {
            (Some(_), Some(_)) => return Err(CliError::Usage("pbar and nbar are mutually exclusive".into())),
            (Some(p), None) => p,
            (None, Some(n)) => n / tau,
            (None, None) => 1000.0,
        };
        let physics = Physics {
            kind,
            alpha: l.number("alpha", 1.0)?,
            p: l.number("p", 0.5)?,
            pbar,
            tau_on: l.number("tau_on", 1.0)?,
            tau_off: l.number("tau_off", 1.0)?,
            tau,
            dx: l.number("dx", 0.5)?,
            extent: l.number("extent", DEFAULT_HALF_EXTENT)?,
            mu_b: l.number("mu_b", 0.0)?,
        };
        physics.model()?;
        physics.geometry()?;

        let mut targets: Option<Vec<Target>> = None;
        if let Some(list) = raw.get("schemes") {
            targets = Some(list.split(',').map(str::parse).collect::<Result<_, _>>()?);
        }
        if let Some(one) = raw.get("scheme") {
            if targets.is_some() {
                return Err(CliError::Usage("scheme and schemes are mutually exclusive".into()));
            }
            targets = Some(vec![one.parse()?]);
        }
        let metric = match raw.get("metric").map(|s| normalise_key(s)) {
            None => Metric::Zeta,
            Some(m) if m == "zeta" => Metric::Zeta,
            Some(m) if m == "zeta_pix" => Metric::ZetaPix,
            Some(m) => return Err(CliError::Usage(format!("metric: expected zeta or zeta-pix, got `{m}`"))),
        };
        let format = match raw.get("format").map(|s| s.to_ascii_lowercase()) {
            None => Format::Csv,
            Some(f) if f == "csv" => Format::Csv,
            Some(f) if f == "json" => Format::Json,
            Some(f) => return Err(CliError::Usage(format!("format: expected csv or json, got `{f}`"))),
        };
        let threads = match l.count("threads", 0)? {
            0 => None,
            n => Some(n as usize),
        };
        let theta = l.get::<f64>("theta")?;
        if let Some(t) = theta {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(CliError::Usage(format!("theta: must be non-negative, got {t}")));
            }
        }
        Ok(Settings {
            physics,
            theta,
            targets,
            metric,
            axis: raw.get("axis").map(|a| a.parse()).transpose()?,
            range: raw.get("range").map(|r| grid::parse("range", r)).transpose()?,
            tau_bounds: (l.number("tau_min", 1e-3)?, l.number("tau_max", 1e3)?),
            frames: l.count("frames", 1_000_000)? as usize,
            samples: l.count("samples", 1_000_000)? as usize,
            seed: l.count("seed", 1)?,
            out: raw.get("out").cloned(),
            format,
            threads,
        })
    }

    pub fn targets_or(&self, default: &[Target]) -> Vec<Target> {
        self.targets.clone().unwrap_or_else(|| default.to_vec())
    }

    /// Parameters echoed into output headers.
    pub fn header(&self, command: &str, extra: Map<String, Value>) -> Value {
        let mut v = self.physics.to_json();
        let obj = v.as_object_mut().expect("object");
        obj.insert("command".into(), json!(command));
        if let Ok(g) = self.physics.geometry() {
            obj.insert("n_pixels".into(), json!(g.n_pixels));
        }
        obj.extend(extra);
        v
    }
}
