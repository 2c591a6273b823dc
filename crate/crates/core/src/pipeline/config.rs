//! Pipeline configuration and its on-disk TOML form.
//!
//! ```toml
//! max_blocks = 8
//! compile_limit_blocks = 24
//! rounds_per_pass = 1
//! source_pps_cap = 2970000      # omit for no limit
//! source_burst = 32
//! recirc_pass_rate = 148400000  # omit for no limit
//! recirc_burst = 320
//!
//! [ports]
//! 0 = "egress 1"
//! 1 = "egress 0"
//! 2 = "cpu"
//! 3 = "drop"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Action, ForwardingTable, PortId};
use crate::aes_core::ROUNDS;

/// Ingress packet rate that reproduces the small-payload plateau.
pub const DEFAULT_SOURCE_PPS_CAP: u64 = 2_970_000;
/// Recirculation passes per second; binds first at 128-byte payloads.
pub const DEFAULT_RECIRC_PASS_RATE: u64 = 148_400_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error(
        "traffic of {blocks} blocks exceeds pipeline resources (compile limit {limit} blocks)"
    )]
    ExceedsResources { blocks: u32, limit: u32 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Largest payload, in 16-byte blocks, that is encrypted. Larger
    /// encryptable packets are dropped.
    #[serde(default = "defaults::max_blocks")]
    pub max_blocks: u32,
    /// Block count at which the program no longer fits the switch.
    #[serde(default = "defaults::compile_limit_blocks")]
    pub compile_limit_blocks: u32,
    /// Payload size the program is built to parse. Defaults to `max_blocks`.
    #[serde(default)]
    pub declared_blocks: Option<u32>,
    #[serde(default = "defaults::rounds_per_pass")]
    pub rounds_per_pass: u32,
    /// Packets per second admitted at ingress. `None` is unlimited.
    #[serde(default)]
    pub source_pps_cap: Option<u64>,
    #[serde(default = "defaults::source_burst")]
    pub source_burst: u64,
    /// Recirculation passes per second. `None` is unlimited.
    #[serde(default)]
    pub recirc_pass_rate: Option<u64>,
    #[serde(default = "defaults::recirc_burst")]
    pub recirc_burst: u64,
}

mod defaults {
    pub fn max_blocks() -> u32 {
        8
    }
    pub fn compile_limit_blocks() -> u32 {
        24
    }
    pub fn rounds_per_pass() -> u32 {
        1
    }
    pub fn source_burst() -> u64 {
        32
    }
    pub fn recirc_burst() -> u64 {
        320
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_blocks: defaults::max_blocks(),
            compile_limit_blocks: defaults::compile_limit_blocks(),
            declared_blocks: None,
            rounds_per_pass: defaults::rounds_per_pass(),
            source_pps_cap: None,
            source_burst: defaults::source_burst(),
            recirc_pass_rate: None,
            recirc_burst: defaults::recirc_burst(),
        }
    }
}

impl PipelineConfig {
    /// Default limits with the shipped capacity calibration.
    pub fn calibrated() -> Self {
        Self {
            source_pps_cap: Some(DEFAULT_SOURCE_PPS_CAP),
            recirc_pass_rate: Some(DEFAULT_RECIRC_PASS_RATE),
            ..Self::default()
        }
    }

    pub fn declared_blocks(&self) -> u32 {
        self.declared_blocks.unwrap_or(self.max_blocks)
    }

    /// Recirculation passes needed for one block.
    pub fn passes_per_block(&self) -> u32 {
        (ROUNDS as u32).div_ceil(self.rounds_per_pass)
    }

    pub fn passes_for(&self, blocks: u32) -> u32 {
        blocks * self.passes_per_block()
    }

    /// The same program declared for traffic of `blocks` blocks.
    pub fn for_traffic(&self, blocks: u32) -> Self {
        Self {
            declared_blocks: Some(blocks),
            ..self.clone()
        }
    }

    /// Short stable fingerprint for reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..4])
    }
}

/// Rejects configurations the modeled switch cannot run, including traffic
/// declarations at or above the compile limit.
pub fn validate_config(cfg: &PipelineConfig) -> Result<(), ConfigError> {
    let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
    if !(1..=ROUNDS as u32).contains(&cfg.rounds_per_pass) {
        return invalid("rounds_per_pass must be in 1..=10");
    }
    if cfg.max_blocks == 0 {
        return invalid("max_blocks must be at least 1");
    }
    if cfg.max_blocks > u8::MAX as u32 {
        return invalid("max_blocks does not fit the progress header");
    }
    if cfg.max_blocks >= cfg.compile_limit_blocks {
        return Err(ConfigError::ExceedsResources {
            blocks: cfg.max_blocks,
            limit: cfg.compile_limit_blocks,
        });
    }
    let declared = cfg.declared_blocks();
    if declared >= cfg.compile_limit_blocks {
        return Err(ConfigError::ExceedsResources {
            blocks: declared,
            limit: cfg.compile_limit_blocks,
        });
    }
    if cfg.source_pps_cap == Some(0) || cfg.recirc_pass_rate == Some(0) {
        return invalid("capacity rates must be positive");
    }
    if cfg.source_burst == 0 {
        return invalid("source_burst must be at least 1");
    }
    if cfg.recirc_pass_rate.is_some() && cfg.recirc_burst < cfg.passes_for(1) as u64 {
        return invalid("recirc_burst cannot hold a single-block packet");
    }
    Ok(())
}

/// Everything a configuration file describes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineFile {
    pub config: PipelineConfig,
    pub forwarding: ForwardingTable,
}

impl PipelineFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse(e.to_string());
        let mut table: toml::Table = toml::from_str(text).map_err(parse_err)?;
        let ports: BTreeMap<String, String> = match table.remove("ports") {
            Some(v) => v.try_into().map_err(parse_err)?,
            None => BTreeMap::new(),
        };
        let config: PipelineConfig = table.try_into().map_err(parse_err)?;
        let mut forwarding = ForwardingTable::default();
        for (port, action) in &ports {
            let port: PortId = port
                .parse()
                .map_err(|e| ConfigError::Parse(format!("port {port:?}: {e}")))?;
            let action: Action = action
                .parse()
                .map_err(|e| ConfigError::Parse(format!("action {action:?}: {e}")))?;
            forwarding
                .insert(port, action)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(Self { config, forwarding })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.config).expect("config serializes");
        let ports: toml::Table = self
            .forwarding
            .entries()
            .map(|(p, a)| (p.to_string(), toml::Value::String(a.to_string())))
            .collect();
        table.insert("ports".into(), toml::Value::Table(ports));
        toml::to_string(&table).expect("config serializes")
    }
}
