//! Simulated battery pack and processing unit: status registers, lifetime
//! envelopes, a whitelisted configuration store, and the Active/On-Rest
//! power states.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub const MIN_CELLS: usize = 6;
pub const MAX_CELLS: usize = 14;
pub const MIN_PROBES: usize = 2;
pub const MAX_PROBES: usize = 4;
pub const MAX_VOLTAGE_MV: u16 = 5000;
pub const MIN_TEMP_DC: i16 = -400;
pub const MAX_TEMP_DC: i16 = 1500;
pub const MAX_CONFIG_VALUE_LEN: usize = 64;

/// Fault flag bits.
pub mod fault {
    pub const OVER_TEMP: u16 = 0x0001;
    pub const UNDER_VOLTAGE: u16 = 0x0002;
    pub const COMMS_FAULT: u16 = 0x0004;
}

/// Whitelisted configuration keys. Writes outside this set are rejected,
/// which keeps configuration updates confined to the allowed memory space.
pub mod config_key {
    /// Over-temperature fault threshold, i16 in 0.1 °C (2 bytes BE).
    pub const OVER_TEMP_THRESHOLD: u16 = 0x0001;
    /// Under-voltage fault threshold, u16 in mV (2 bytes BE).
    pub const UNDER_VOLTAGE_THRESHOLD: u16 = 0x0002;
    /// Cell balancing trigger delta, u16 in mV (2 bytes BE).
    pub const BALANCE_THRESHOLD: u16 = 0x0003;
    /// Free-form asset label, up to 64 bytes.
    pub const ASSET_TAG: u16 = 0x0010;
}

pub const DEFAULT_OVER_TEMP_THRESHOLD_DC: i16 = 600;
pub const DEFAULT_UNDER_VOLTAGE_THRESHOLD_MV: u16 = 3000;
pub const DEFAULT_BALANCE_THRESHOLD_MV: u16 = 50;
pub const DEFAULT_WAKE_LATENCY_MS: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device is not powered")]
    DeviceUnpowered,
    #[error("config value too long: {0} bytes exceeds {MAX_CONFIG_VALUE_LEN}")]
    ValueTooLong(usize),
    #[error("config key {0:#06x} is not in the write whitelist")]
    UnknownConfigKey(u16),
    #[error("config key {key:#06x} expects a {expected_len}-byte value")]
    InvalidValue { key: u16, expected_len: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("value out of range: {0}")]
    ValueOutOfRange(&'static str),
    #[error("malformed status payload: {0}")]
    MalformedStatus(&'static str),
}

/// Snapshot of the pack's sensor and lifetime registers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatteryPackState {
    pub cell_voltages_mv: Vec<u16>,
    /// Probe readings in 0.1 °C units.
    pub temperatures_dc: Vec<i16>,
    /// Percent, 0..=100.
    pub state_of_health: u8,
    pub cycle_count: u32,
    pub fault_flags: u16,
    pub lifetime_min_voltage_mv: u16,
    pub lifetime_max_temp_dc: i16,
}

impl BatteryPackState {
    pub fn new(
        cell_voltages_mv: Vec<u16>,
        temperatures_dc: Vec<i16>,
        state_of_health: u8,
        cycle_count: u32,
    ) -> Result<Self, DeviceError> {
        if !(MIN_CELLS..=MAX_CELLS).contains(&cell_voltages_mv.len()) {
            return Err(DeviceError::ValueOutOfRange("cell count must be 6..=14"));
        }
        if !(MIN_PROBES..=MAX_PROBES).contains(&temperatures_dc.len()) {
            return Err(DeviceError::ValueOutOfRange("probe count must be 2..=4"));
        }
        if cell_voltages_mv.iter().any(|&v| v > MAX_VOLTAGE_MV) {
            return Err(DeviceError::ValueOutOfRange("cell voltage above 5000 mV"));
        }
        if temperatures_dc
            .iter()
            .any(|&t| !(MIN_TEMP_DC..=MAX_TEMP_DC).contains(&t))
        {
            return Err(DeviceError::ValueOutOfRange(
                "temperature outside -40.0..=150.0 °C",
            ));
        }
        if state_of_health > 100 {
            return Err(DeviceError::ValueOutOfRange("state of health above 100%"));
        }
        let lifetime_min_voltage_mv = *cell_voltages_mv.iter().min().unwrap();
        let lifetime_max_temp_dc = *temperatures_dc.iter().max().unwrap();
        Ok(BatteryPackState {
            cell_voltages_mv,
            temperatures_dc,
            state_of_health,
            cycle_count,
            fault_flags: 0,
            lifetime_min_voltage_mv,
            lifetime_max_temp_dc,
        })
    }

    /// Serialized size of [`BmsDevice::read_status`] output for this pack.
    pub fn status_len(&self) -> usize {
        13 + 2 * self.cell_voltages_mv.len() + 2 * self.temperatures_dc.len()
    }

    /// Reader-side parser for the status payload; inverse of
    /// [`BmsDevice::read_status`].
    pub fn parse_status(bytes: &[u8]) -> Result<Self, DeviceError> {
        let fail = DeviceError::MalformedStatus("truncated");
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], DeviceError> {
            let slice = bytes.get(*pos..*pos + n).ok_or(fail)?;
            *pos += n;
            Ok(slice)
        };

        let n_cells = take(&mut pos, 1)?[0] as usize;
        if !(MIN_CELLS..=MAX_CELLS).contains(&n_cells) {
            return Err(DeviceError::MalformedStatus("cell count out of range"));
        }
        let mut cell_voltages_mv = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let v = take(&mut pos, 2)?;
            cell_voltages_mv.push(u16::from_be_bytes([v[0], v[1]]));
        }

        let n_temps = take(&mut pos, 1)?[0] as usize;
        if !(MIN_PROBES..=MAX_PROBES).contains(&n_temps) {
            return Err(DeviceError::MalformedStatus("probe count out of range"));
        }
        let mut temperatures_dc = Vec::with_capacity(n_temps);
        for _ in 0..n_temps {
            let t = take(&mut pos, 2)?;
            temperatures_dc.push(i16::from_be_bytes([t[0], t[1]]));
        }

        let state_of_health = take(&mut pos, 1)?[0];
        let c = take(&mut pos, 4)?;
        let cycle_count = u32::from_be_bytes([c[0], c[1], c[2], c[3]]);
        let f = take(&mut pos, 2)?;
        let fault_flags = u16::from_be_bytes([f[0], f[1]]);
        let v = take(&mut pos, 2)?;
        let lifetime_min_voltage_mv = u16::from_be_bytes([v[0], v[1]]);
        let t = take(&mut pos, 2)?;
        let lifetime_max_temp_dc = i16::from_be_bytes([t[0], t[1]]);

        if pos != bytes.len() {
            return Err(DeviceError::MalformedStatus("trailing bytes"));
        }
        Ok(BatteryPackState {
            cell_voltages_mv,
            temperatures_dc,
            state_of_health,
            cycle_count,
            fault_flags,
            lifetime_min_voltage_mv,
            lifetime_max_temp_dc,
        })
    }
}

/// Readout use case: powered system vs stored pack woken by the NFC field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    Active,
    OnRest,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Active => "active",
            Scenario::OnRest => "on-rest",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "active" => Some(Scenario::Active),
            "on-rest" | "on_rest" | "onrest" => Some(Scenario::OnRest),
            _ => None,
        }
    }
}

/// Key/value configuration with a monotone version counter.
#[derive(Debug, Clone)]
pub struct ConfigStore {
    entries: BTreeMap<u16, Vec<u8>>,
    version: u32,
}

impl ConfigStore {
    fn with_defaults() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            config_key::OVER_TEMP_THRESHOLD,
            DEFAULT_OVER_TEMP_THRESHOLD_DC.to_be_bytes().to_vec(),
        );
        entries.insert(
            config_key::UNDER_VOLTAGE_THRESHOLD,
            DEFAULT_UNDER_VOLTAGE_THRESHOLD_MV.to_be_bytes().to_vec(),
        );
        entries.insert(
            config_key::BALANCE_THRESHOLD,
            DEFAULT_BALANCE_THRESHOLD_MV.to_be_bytes().to_vec(),
        );
        entries.insert(config_key::ASSET_TAG, Vec::new());
        ConfigStore {
            entries,
            version: 0,
        }
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn get(&self, key: u16) -> Option<&[u8]> {
        self.entries.get(&key).map(Vec::as_slice)
    }

    fn apply(&mut self, key: u16, value: &[u8]) -> Result<u32, DeviceError> {
        if value.len() > MAX_CONFIG_VALUE_LEN {
            return Err(DeviceError::ValueTooLong(value.len()));
        }
        match key {
            config_key::OVER_TEMP_THRESHOLD
            | config_key::UNDER_VOLTAGE_THRESHOLD
            | config_key::BALANCE_THRESHOLD => {
                if value.len() != 2 {
                    return Err(DeviceError::InvalidValue {
                        key,
                        expected_len: 2,
                    });
                }
            }
            config_key::ASSET_TAG => {}
            other => return Err(DeviceError::UnknownConfigKey(other)),
        }
        self.entries.insert(key, value.to_vec());
        self.version += 1;
        Ok(self.version)
    }

    fn over_temp_threshold_dc(&self) -> i16 {
        self.get(config_key::OVER_TEMP_THRESHOLD)
            .and_then(|v| v.try_into().ok().map(i16::from_be_bytes))
            .unwrap_or(DEFAULT_OVER_TEMP_THRESHOLD_DC)
    }

    fn under_voltage_threshold_mv(&self) -> u16 {
        self.get(config_key::UNDER_VOLTAGE_THRESHOLD)
            .and_then(|v| v.try_into().ok().map(u16::from_be_bytes))
            .unwrap_or(DEFAULT_UNDER_VOLTAGE_THRESHOLD_MV)
    }
}

/// The simulated BMS endpoint state: pack registers, config store, and the
/// power model.
#[derive(Debug, Clone)]
pub struct BmsDevice {
    pack: BatteryPackState,
    config: ConfigStore,
    scenario: Scenario,
    powered: bool,
    wake_latency_ms: u64,
}

impl BmsDevice {
    pub fn new(pack: BatteryPackState, scenario: Scenario, wake_latency_ms: u64) -> Self {
        let mut device = BmsDevice {
            pack,
            config: ConfigStore::with_defaults(),
            scenario,
            powered: scenario == Scenario::Active,
            wake_latency_ms,
        };
        device.recompute_faults();
        device
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn is_powered(&self) -> bool {
        self.powered
    }

    pub fn wake_latency_ms(&self) -> u64 {
        self.wake_latency_ms
    }

    /// Wake completion; a no-op when already powered.
    pub fn power_on(&mut self) {
        self.powered = true;
    }

    /// Field tear. Only On-Rest devices lose power; an Active system keeps
    /// running from its own supply.
    pub fn field_lost(&mut self) {
        if self.scenario == Scenario::OnRest {
            self.powered = false;
        }
    }

    pub fn pack(&self) -> &BatteryPackState {
        &self.pack
    }

    pub fn config(&self) -> &ConfigStore {
        &self.config
    }

    /// Serialize the status registers:
    ///
    /// ```text
    /// [n_cells:1][voltages:2×N][n_temps:1][temps:2×M][soh:1]
    /// [cycle_count:4][fault_flags:2][lifetime_min_v:2][lifetime_max_t:2]
    /// ```
    pub fn read_status(&self) -> Result<Vec<u8>, DeviceError> {
        if !self.powered {
            return Err(DeviceError::DeviceUnpowered);
        }
        let pack = &self.pack;
        let mut out = Vec::with_capacity(pack.status_len());
        out.push(pack.cell_voltages_mv.len() as u8);
        for v in &pack.cell_voltages_mv {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.push(pack.temperatures_dc.len() as u8);
        for t in &pack.temperatures_dc {
            out.extend_from_slice(&t.to_be_bytes());
        }
        out.push(pack.state_of_health);
        out.extend_from_slice(&pack.cycle_count.to_be_bytes());
        out.extend_from_slice(&pack.fault_flags.to_be_bytes());
        out.extend_from_slice(&pack.lifetime_min_voltage_mv.to_be_bytes());
        out.extend_from_slice(&pack.lifetime_max_temp_dc.to_be_bytes());
        debug_assert_eq!(out.len(), pack.status_len());
        Ok(out)
    }

    /// Store a configuration value and return the new version.
    pub fn apply_config(&mut self, key: u16, value: &[u8]) -> Result<u32, DeviceError> {
        if !self.powered {
            return Err(DeviceError::DeviceUnpowered);
        }
        let version = self.config.apply(key, value)?;
        self.recompute_faults();
        Ok(version)
    }

    /// Control plane: overwrite one cell voltage reading.
    pub fn inject_measurement(
        &mut self,
        cell_index: usize,
        millivolts: u16,
    ) -> Result<(), DeviceError> {
        let len = self.pack.cell_voltages_mv.len();
        if cell_index >= len {
            return Err(DeviceError::IndexOutOfRange {
                index: cell_index,
                len,
            });
        }
        if millivolts > MAX_VOLTAGE_MV {
            return Err(DeviceError::ValueOutOfRange("cell voltage above 5000 mV"));
        }
        self.pack.cell_voltages_mv[cell_index] = millivolts;
        self.pack.lifetime_min_voltage_mv = self.pack.lifetime_min_voltage_mv.min(millivolts);
        self.recompute_faults();
        Ok(())
    }

    /// Control plane: overwrite one temperature probe reading.
    pub fn inject_temperature(
        &mut self,
        probe_index: usize,
        value_dc: i16,
    ) -> Result<(), DeviceError> {
        let len = self.pack.temperatures_dc.len();
        if probe_index >= len {
            return Err(DeviceError::IndexOutOfRange {
                index: probe_index,
                len,
            });
        }
        if !(MIN_TEMP_DC..=MAX_TEMP_DC).contains(&value_dc) {
            return Err(DeviceError::ValueOutOfRange(
                "temperature outside -40.0..=150.0 °C",
            ));
        }
        self.pack.temperatures_dc[probe_index] = value_dc;
        self.pack.lifetime_max_temp_dc = self.pack.lifetime_max_temp_dc.max(value_dc);
        self.recompute_faults();
        Ok(())
    }

    fn recompute_faults(&mut self) {
        let over_temp = self.config.over_temp_threshold_dc();
        let under_voltage = self.config.under_voltage_threshold_mv();
        let mut flags = self.pack.fault_flags & fault::COMMS_FAULT;
        if self.pack.temperatures_dc.iter().any(|&t| t > over_temp) {
            flags |= fault::OVER_TEMP;
        }
        if self.pack.cell_voltages_mv.iter().any(|&v| v < under_voltage) {
            flags |= fault::UNDER_VOLTAGE;
        }
        self.pack.fault_flags = flags;
    }
}
