//! Experiment config files: JSON, schema-checked, with line-anchored errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use blowup_core::mc::{validate_spec, CampaignSpec, FaultInjection, Pipeline};
use blowup_core::noise::TimeGrid;
use blowup_core::pde::{SolverControls, SpatialMesh};
use blowup_core::validation::ValidationProfile;
use blowup_core::SystemParams;
use serde::Deserialize;

/// Top-level config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by `bounds` and `simulate`.
    pub params: Option<SystemParams>,
    #[serde(default)]
    pub campaigns: Vec<CampaignConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    /// Sizes for `validate`.
    pub validation: Option<ValidationProfile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Subdirectory name under the output directory.
    pub name: String,
    pub grid: TimeGrid,
    pub n_paths: u64,
    pub seed: u64,
    pub pipelines: Vec<Pipeline>,
    pub mesh: Option<SpatialMesh>,
    #[serde(default)]
    pub solver: SolverControls,
    pub bound_horizon: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma_oracle_paths: Option<u64>,
    /// Write one row per path and pipeline.
    #[serde(default)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
    /// Aligned text tables next to the CSV files.
    pub text: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: true,
            json: true,
            text: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// Horizon `T` of the tail bounds.
    pub horizon: f64,
    /// Exponent of the Malliavin lower bound; omitted rows when absent.
    pub alpha: Option<f64>,
    /// Heat-kernel constant of the sharp global-existence bound.
    pub sharp_c: Option<f64>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            alpha: None,
            sharp_c: None,
        }
    }
}

/// Config problem, anchored to a line of the file when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.file, self.message),
            (Some(l), None) => write!(f, "{}:{l}: {}", self.file, self.message),
            _ => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed config with its source text kept for error anchoring.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub file: String,
    text: String,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: file.clone(),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, &file)
    }

    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Err(ConfigError {
                file: file.into(),
                line: None,
                column: None,
                message: "config is empty".into(),
            });
        }
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            file: file.into(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
        })?;
        let loaded = Self {
            config,
            file: file.into(),
            text: text.into(),
        };
        if loaded.is_empty() {
            return Err(loaded.error_at(None, "config is empty: nothing to run"));
        }
        Ok(loaded)
    }

    fn is_empty(&self) -> bool {
        let c = &self.config;
        c.params.is_none() && c.campaigns.is_empty() && c.validation.is_none()
    }

    /// First line containing `needle`, 1-based.
    fn line_of(&self, needle: &str) -> Option<usize> {
        self.text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
    }

    fn error_at(&self, needle: Option<&str>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: needle.and_then(|n| self.line_of(n)),
            column: None,
            message: message.into(),
        }
    }

    pub fn params(&self) -> Result<&SystemParams, ConfigError> {
        let p = self
            .config
            .params
            .as_ref()
            .ok_or_else(|| self.error_at(None, "missing `params` block"))?;
        p.validate()
            .map_err(|e| self.error_at(Some("\"params\""), format!("params: {e}")))?;
        Ok(p)
    }

    /// Campaign specs with the seed override applied (`seed + index`),
    /// each checked against the params before anything runs.
    pub fn campaign_specs(
        &self,
        seed: Option<u64>,
        fault: Option<FaultInjection>,
    ) -> Result<Vec<(CampaignConfig, CampaignSpec)>, ConfigError> {
        let params = self.params()?;
        if self.config.campaigns.is_empty() {
            return Err(self.error_at(None, "no `campaigns` to simulate"));
        }
        let mut names = BTreeSet::new();
        let mut out = Vec::new();
        for (i, c) in self.config.campaigns.iter().enumerate() {
            let anchor = format!("\"{}\"", c.name);
            let err = |m: String| self.error_at(Some(&anchor), format!("campaign `{}`: {m}", c.name));
            let valid_name = !c.name.is_empty()
                && c.name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-' || ch == '.')
                && !c.name.starts_with('.');
            if !valid_name {
                return Err(err("name must be non-empty and use only [A-Za-z0-9_.-]".into()));
            }
            if !names.insert(c.name.clone()) {
                return Err(err("duplicate campaign name".into()));
            }
            let spec = CampaignSpec {
                params: params.clone(),
                grid: c.grid,
                mesh: c.mesh,
                solver: c.solver,
                n_paths: c.n_paths,
                master_seed: seed.map_or(c.seed, |s| s.wrapping_add(i as u64)),
                pipelines: c.pipelines.clone(),
                bound_horizon: c.bound_horizon,
                alpha: c.alpha,
                gamma_oracle_paths: c.gamma_oracle_paths,
                fault,
            };
            validate_spec(&spec).map_err(|e| err(e.to_string()))?;
            out.push((c.clone(), spec));
        }
        Ok(out)
    }

    pub fn bounds_config(&self) -> Result<&BoundsConfig, ConfigError> {
        let b = &self.config.bounds;
        if !(b.horizon > 0.0 && b.horizon.is_finite()) {
            return Err(self.error_at(
                Some("\"horizon\""),
                format!("bounds.horizon must be positive, got {}", b.horizon),
            ));
        }
        if let Some(c) = b.sharp_c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(self.error_at(Some("\"sharp_c\""), format!("bounds.sharp_c must be ≥ 0, got {c}")));
            }
        }
        Ok(b)
    }
}
