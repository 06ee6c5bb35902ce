//! Run configuration: TOML with one section per component, `--set`
//! overrides and a canonical digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::VesselGeometry;
use crate::grid::Grid;
use crate::growth::{GrowthParams, MacroScheme};
use crate::microflow::{FluidParams, PressureProfile, WssWindow};
use crate::multiscale::MacroSchedule;
use crate::periodic::{PeriodicMode, DEFAULT_EPS_P};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 140, ny: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallConfig {
    /// Uniform initial growth value.
    pub initial_c: f64,
    pub window: WssWindow,
}

impl Default for WallConfig {
    fn default() -> Self {
        Self { initial_c: 0.0, window: WssWindow::Axial }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicConfig {
    pub mode: PeriodicMode,
    pub eps_p: f64,
    pub max_cycles: usize,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        Self { mode: PeriodicMode::Forward, eps_p: DEFAULT_EPS_P, max_cycles: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub macro_scheme: MacroScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Micro steps between map rebuilds; unset means once per period.
    pub map_refresh: Option<usize>,
    pub max_steps: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { map_refresh: None, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single-threaded linear algebra for bit-identical reruns.
    pub deterministic: bool,
    pub geometry: VesselGeometry,
    pub grid: GridConfig,
    pub fluid: FluidParams,
    pub pressure: PressureProfile,
    pub growth: GrowthParams,
    pub wall: WallConfig,
    pub schedule: MacroSchedule,
    pub periodic: PeriodicConfig,
    pub scheme: SchemeConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            deterministic: true,
            geometry: VesselGeometry::default(),
            grid: GridConfig::default(),
            fluid: FluidParams::default(),
            pressure: PressureProfile::default(),
            growth: GrowthParams::default(),
            wall: WallConfig::default(),
            schedule: MacroSchedule::default(),
            periodic: PeriodicConfig::default(),
            scheme: SchemeConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads an optional file and applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?,
            None => String::new(),
        };
        // Parsing the file on its own first keeps line numbers in errors.
        toml::from_str::<Self>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.geometry.domain.validate().map_err(|e| inv(&e))?;
        if self.geometry.domain.dimension != 2 {
            return Err(ConfigError::Invalid("flow runs use the planar domain (dimension = 2)".into()));
        }
        self.growth.validate().map_err(|e| inv(&e))?;
        self.schedule.validate().map_err(|e| inv(&e))?;
        self.fluid.validate(self.schedule.micro_step).map_err(|e| inv(&e))?;
        self.pressure.validate().map_err(|e| inv(&e))?;
        self.channel_grid()?;
        if !(0.0..crate::geometry::C_MAX).contains(&self.wall.initial_c) {
            return Err(ConfigError::Invalid(format!("wall.initial_c {} outside [0, C_MAX)", self.wall.initial_c)));
        }
        if !(self.periodic.eps_p > 0.0) || self.periodic.max_cycles == 0 {
            return Err(ConfigError::Invalid("periodic.eps_p must be positive and max_cycles ≥ 1".into()));
        }
        if self.oracle.map_refresh == Some(0) {
            return Err(ConfigError::Invalid("oracle.map_refresh must be at least 1".into()));
        }
        Ok(())
    }

    pub fn channel_grid(&self) -> Result<Grid, ConfigError> {
        let d = &self.geometry.domain;
        if self.grid.nx % 2 != 0 || self.grid.ny % 4 != 0 {
            return Err(ConfigError::Invalid("grid.nx must be even and grid.ny a multiple of 4".into()));
        }
        Grid::channel(d.length, d.diameter, self.grid.nx, self.grid.ny).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults expanded).
    pub fn hash(&self) -> String {
        digest(&serde_json::to_value(self).expect("serialisable"))
    }

    /// Digest of everything except scheme selection: the macro step count,
    /// periodic solver settings, macro scheme, oracle cadence and the
    /// determinism flag. Runs that should agree in the limit share it.
    pub fn physics_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serialisable");
        let obj = v.as_object_mut().expect("object");
        for k in ["periodic", "scheme", "oracle", "deterministic"] {
            obj.remove(k);
        }
        if let Some(s) = obj.get_mut("schedule").and_then(|s| s.as_object_mut()) {
            s.remove("steps");
        }
        digest(&v)
    }
}

fn digest(v: &serde_json::Value) -> String {
    let text = serde_json::to_string(v).expect("serialisable");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for p in &path[..path.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
