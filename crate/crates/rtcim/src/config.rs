//! Device configuration: geometry, array shape and cost parameters, loaded
//! from one JSON file.
//!
//! Schema (all fields optional; omitted fields take the defaults shown):
//!
//! ```json
//! {
//!   "geometry": {
//!     "data_domains": 32,        // domains per nanowire holding data (16|32|64)
//!     "trd": 7,                  // transverse-read distance; CIM programs need 7
//!     "tile_rows": 512,          // rows per tile
//!     "tile_cols": 512,          // columns per tile = nanowires per DBC
//!     "dbcs_per_subarray": 16    // tile_rows / data_domains
//!   },
//!   "parallel_dbcs": 12,         // DBCs working one workload in parallel
//!   "params": { "e_write_pj": { "value": 0.1, "provenance": "..." }, ... }
//! }
//! ```
//!
//! `params` carries a [`DeviceParams`] table: per-event times (ns), energies
//! (pJ) and static power (W), each `{value, provenance}` — the provenance
//! note is mandatory so every figure in a report can be traced to a source.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::DeviceParams;
use crate::device::Geometry;
use crate::error::ConfigError;

/// Array geometry: nanowire depth, TR window and tile shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub data_domains: u32,
    pub trd: u32,
    pub tile_rows: u32,
    pub tile_cols: u32,
    pub dbcs_per_subarray: u32,
}

impl Default for GeometryConfig {
    fn default() -> GeometryConfig {
        GeometryConfig {
            data_domains: 32,
            trd: 7,
            tile_rows: 512,
            tile_cols: 512,
            dbcs_per_subarray: 16,
        }
    }
}

impl GeometryConfig {
    pub fn geometry(&self) -> Result<Geometry, ConfigError> {
        Geometry::new(self.data_domains, self.trd)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Full device configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub geometry: GeometryConfig,
    pub parallel_dbcs: u32,
    pub params: DeviceParams,
}

impl Default for DeviceConfig {
    fn default() -> DeviceConfig {
        DeviceConfig {
            geometry: GeometryConfig::default(),
            // Calibrated so the modeled Lenet-5 ternary throughput sits at
            // its reference figure (~32 kFPS) under the default parameters.
            parallel_dbcs: 12,
            params: DeviceParams::default(),
        }
    }
}

impl DeviceConfig {
    pub fn load(path: &Path) -> Result<DeviceConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: DeviceConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json {
                path: path.display().to_string(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        g.geometry()?;
        if g.tile_cols != 512 {
            return Err(ConfigError::Invalid(format!(
                "tile_cols must be 512 (one DBC of 512 nanowires), got {}",
                g.tile_cols
            )));
        }
        if g.tile_rows == 0 || g.tile_rows % g.data_domains != 0 {
            return Err(ConfigError::Invalid(format!(
                "tile_rows ({}) must be a positive multiple of data_domains ({})",
                g.tile_rows, g.data_domains
            )));
        }
        if g.dbcs_per_subarray != g.tile_rows / g.data_domains {
            return Err(ConfigError::Invalid(format!(
                "dbcs_per_subarray must be tile_rows / data_domains = {}, got {}",
                g.tile_rows / g.data_domains,
                g.dbcs_per_subarray
            )));
        }
        if self.parallel_dbcs == 0 {
            return Err(ConfigError::Invalid(
                "parallel_dbcs must be at least 1".to_string(),
            ));
        }
        self.params.validate()
    }

    /// CIM microprograms assume a 7-row TR window; reject anything else
    /// before trying to run one.
    pub fn require_cim(&self) -> Result<(), ConfigError> {
        if self.geometry.trd != 7 {
            return Err(ConfigError::Invalid(format!(
                "compute-in-memory programs need trd = 7, configuration has {}",
                self.geometry.trd
            )));
        }
        Ok(())
    }
}
