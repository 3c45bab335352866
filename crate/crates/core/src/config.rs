//! Run configuration: one JSON document with sections `manifold`,
//! `integration`, `generator`, `scan`, `simulate` and `output`, plus
//! dot-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conjugacy::ScanConfig;
use crate::error::{GeoError, Result};
use crate::generator::{DecayFit, GeneratorConfig, TestField};
use crate::levy::SimConfig;
use crate::manifold::ManifoldConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    /// chart depth beyond which the integrator changes charts
    pub switch_fraction: f64,
    /// when set, replaces the `step` of the generator, scan and simulate
    /// sections
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            switch_fraction: 0.8,
            step: None,
        }
    }
}

/// Eigenfunction families for spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `cos(2 pi j <d, x / L>)` for `j` in `from..=to`
    TorusModes { direction: Vec<f64>, from: usize, to: usize },
    /// `P_l(<p, axis>)` for `l` in `from..=to`
    Zonal { axis: Vec<f64>, from: usize, to: usize },
}

impl FamilySpec {
    pub fn fields(&self) -> Vec<TestField> {
        match self {
            FamilySpec::TorusModes { direction, from, to } => (*from..=*to)
                .map(|j| TestField::torus_mode(&direction.iter().map(|d| d * j as f64).collect::<Vec<_>>()))
                .collect(),
            FamilySpec::Zonal { axis, from, to } => (*from..=*to).map(|l| TestField::zonal(l, axis)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceName {
    Full,
    Local,
    Far,
    Remainder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSection {
    #[serde(flatten)]
    pub params: GeneratorConfig,
    pub field: Option<TestField>,
    /// evaluation points in chart-0 coordinates; the field's reference
    /// point if empty
    pub points: Vec<Vec<f64>>,
    pub family: Option<FamilySpec>,
    pub piece: PieceName,
    pub fit: DecayFit,
    pub window: [f64; 2],
    /// atlas CSV for `pieces`
    pub atlas: Option<PathBuf>,
    pub margin: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            params: GeneratorConfig::default(),
            field: None,
            points: Vec::new(),
            family: None,
            piece: PieceName::Full,
            fit: DecayFit::Magnitude,
            window: [0.0, f64::MAX],
            atlas: None,
            margin: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub params: SimConfig,
    pub field: Option<TestField>,
    /// start point in chart-0 coordinates
    pub point: Option<Vec<f64>>,
    /// time step of the generator estimate; `0.05 / rate` if unset
    pub delta: Option<f64>,
    /// number of paths (of length `t_end`) dumped as CSV
    pub dump_paths: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            params: SimConfig::default(),
            field: None,
            point: None,
            delta: None,
            dump_paths: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            prefix: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifold: ManifoldConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub output: OutputConfig,
}

fn config_err(e: impl std::fmt::Display) -> GeoError {
    GeoError::Config(e.to_string())
}

/// Sets `path` (dot separated) in `doc` to `raw`, parsed as JSON when
/// possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        if k.is_empty() {
            return Err(GeoError::Config(format!("bad override path {path:?}")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| GeoError::Config(format!("override {path:?}: {k:?} is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_value(doc: Value) -> Result<Self> {
        serde_json::from_value(doc).map_err(config_err)
    }

    /// Reads `path` and applies `overrides` (`(dot.path, value)` pairs).
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GeoError::Config(format!("{}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text).map_err(config_err)?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let mut cfg = Self::from_value(doc)?;
        if let Some(h) = cfg.integration.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(GeoError::Config(format!("integration.step must be positive, got {h}")));
            }
            cfg.generator.params.step = h;
            cfg.scan.step = h;
            cfg.simulate.params.step = h;
        }
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON text, as 16 hex digits.
    pub fn run_id(&self) -> String {
        let text = self.to_value().to_string();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
