//! Declarative fixture files: battery pack scenarios and device identities,
//! both stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::DeviceIdentity;
use crate::crypto::MasterKey;
use crate::device::{BatteryPackState, Scenario, DEFAULT_WAKE_LATENCY_MS};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture parse error: {0}")]
    Parse(String),
    #[error("invalid fixture: {0}")]
    Invalid(String),
}

fn default_wake_latency() -> u64 {
    DEFAULT_WAKE_LATENCY_MS
}

/// A battery pack scenario: cell/probe readings, health, and power model.
///
/// ```toml
/// scenario = "on-rest"
/// cells_mv = [3700, 3710, 3695, 3705, 3690, 3700]
/// temps_dc = [250, 251]
/// state_of_health = 83
/// cycle_count = 412
/// wake_latency_ms = 20
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackFixture {
    pub scenario: String,
    pub cells_mv: Vec<u16>,
    /// Probe readings in 0.1 °C units.
    pub temps_dc: Vec<i16>,
    pub state_of_health: u8,
    pub cycle_count: u32,
    #[serde(default = "default_wake_latency")]
    pub wake_latency_ms: u64,
}

impl PackFixture {
    /// The built-in six-cell demonstration pack.
    pub fn default_demo() -> Self {
        PackFixture {
            scenario: "active".to_string(),
            cells_mv: vec![3700, 3710, 3695, 3705, 3690, 3700],
            temps_dc: vec![250, 251],
            state_of_health: 83,
            cycle_count: 412,
            wake_latency_ms: DEFAULT_WAKE_LATENCY_MS,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        toml::from_str(text).map_err(|e| FixtureError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pack fixture serializes")
    }

    pub fn scenario(&self) -> Result<Scenario, FixtureError> {
        Scenario::from_name(&self.scenario)
            .ok_or_else(|| FixtureError::Invalid(format!("unknown scenario {:?}", self.scenario)))
    }

    pub fn build_pack(&self) -> Result<BatteryPackState, FixtureError> {
        BatteryPackState::new(
            self.cells_mv.clone(),
            self.temps_dc.clone(),
            self.state_of_health,
            self.cycle_count,
        )
        .map_err(|e| FixtureError::Invalid(e.to_string()))
    }
}

/// Shared identity material for one reader/device pair.
///
/// ```toml
/// serial = "1122334455667788"
/// master_key = "000102030405060708090a0b0c0d0e0f"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityFixture {
    /// 8-byte device serial, hex.
    pub serial: String,
    /// 16-byte master key, hex. Keep fixture files out of version control.
    pub master_key: String,
}

impl IdentityFixture {
    /// Fixed demonstration identity used when no fixture file is given.
    pub fn default_demo() -> Self {
        IdentityFixture {
            serial: "1122334455667788".to_string(),
            master_key: "6b65792d64656d6f2d6f6e6c792d3031".to_string(),
        }
    }

    pub fn new(serial: [u8; 8], master_key: [u8; 16]) -> Self {
        IdentityFixture {
            serial: hex::encode(serial),
            master_key: hex::encode(master_key),
        }
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        toml::from_str(text).map_err(|e| FixtureError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("identity fixture serializes")
    }

    pub fn to_identity(&self) -> Result<DeviceIdentity, FixtureError> {
        let serial: [u8; 8] = hex::decode(&self.serial)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| FixtureError::Invalid("serial must be 8 bytes of hex".to_string()))?;
        let key: [u8; 16] = hex::decode(&self.master_key)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| {
                FixtureError::Invalid("master_key must be 16 bytes of hex".to_string())
            })?;
        Ok(DeviceIdentity::new(serial, MasterKey::new(key)))
    }
}
