//! Scenario configuration: a TOML document with one table per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackSpec;
use crate::baselines::StackVariant;
use crate::energy::EnergyParams;
use crate::reassembly::BufferParams;
use crate::trust::TrustParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

/// Burst-loss channel: alternating good and bad periods with exponential
/// sojourn times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceParams {
    pub mean_good: f64,
    pub mean_bad: f64,
    /// Frame loss probability while the link is in the bad state.
    pub bad_loss: f64,
}

impl Default for InterferenceParams {
    fn default() -> Self {
        Self {
            mean_good: 600.0,
            mean_bad: 60.0,
            bad_loss: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub senders: u16,
    /// Whether an attacker node exists (it stays silent without an attack).
    pub attacker: bool,
    /// Independent per-frame loss probability on every link.
    pub loss: f64,
    pub propagation_delay: f64,
    /// Radio bit rate, bit/s.
    pub bitrate: f64,
    pub interference: Option<InterferenceParams>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            senders: 8,
            attacker: true,
            loss: 0.0,
            propagation_delay: 1e-6,
            bitrate: 250_000.0,
            interference: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    pub send_interval: f64,
    pub payload_size: usize,
    pub duration: f64,
    pub convergence: f64,
    /// Gap between fragments of one legitimate datagram.
    pub fragment_gap: f64,
    /// Period of the receiver's timeout sweep.
    pub tick_interval: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            send_interval: 90.0,
            payload_size: 200,
            duration: 1800.0,
            convergence: 50.0,
            fragment_gap: 0.1,
            tick_interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedParams {
    pub count: u32,
    pub base: u64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self { count: 15, base: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: PathBuf,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub stack: StackVariant,
    /// Network-wide shared key, hex encoded.
    #[serde(default = "default_key")]
    pub key: String,
    #[serde(default)]
    pub topology: TopologyParams,
    #[serde(default)]
    pub traffic: TrafficParams,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub buffer: BufferParams,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub seeds: SeedParams,
    #[serde(default)]
    pub output: OutputParams,
}

fn default_key() -> String {
    "000102030405060708090a0b0c0d0e0f".to_owned()
}

fn check(ok: bool, field: &'static str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            field,
            message: message(),
        })
    }
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn probability(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ScenarioConfig {
    pub fn new(name: impl Into<String>, stack: StackVariant) -> Self {
        Self {
            name: name.into(),
            stack,
            key: default_key(),
            topology: TopologyParams::default(),
            traffic: TrafficParams::default(),
            trust: TrustParams::default(),
            buffer: BufferParams::default(),
            energy: EnergyParams::default(),
            attack: None,
            seeds: SeedParams::default(),
            output: OutputParams::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn key_bytes(&self) -> Result<Vec<u8>, ConfigError> {
        let bytes = hex::decode(&self.key).map_err(|e| ConfigError::Invalid {
            field: "key",
            message: e.to_string(),
        })?;
        check(!bytes.is_empty(), "key", || "must not be empty".into())?;
        Ok(bytes)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.trust;
        check(unit_open(t.lambda), "trust.lambda", || format!("{} not in (0, 1)", t.lambda))?;
        check(unit_open(t.theta), "trust.theta", || format!("{} not in (0, 1)", t.theta))?;
        check(t.anomaly_threshold > 0.0, "trust.anomaly_threshold", || "must be positive".into())?;
        check(t.block_duration >= 0.0, "trust.block_duration", || "must be nonnegative".into())?;
        check(unit_open(t.ewma_alpha), "trust.ewma_alpha", || format!("{} not in (0, 1)", t.ewma_alpha))?;
        check(t.rate_window > 0.0, "trust.rate_window", || "must be positive".into())?;
        check(t.nominal_interval > 0.0, "trust.nominal_interval", || "must be positive".into())?;
        check(probability(t.unknown_score), "trust.unknown_score", || "must be in [0, 1]".into())?;
        check(probability(t.joined_score), "trust.joined_score", || "must be in [0, 1]".into())?;

        let b = &self.buffer;
        check(b.slots >= 1, "buffer.slots", || "need at least one slot".into())?;
        check(b.timeout > 0.0, "buffer.timeout", || "must be positive".into())?;
        check(b.replay_horizon >= 0.0, "buffer.replay_horizon", || "must be nonnegative".into())?;
        check(b.replay_capacity >= 1, "buffer.replay_capacity", || "must be at least 1".into())?;
        check(b.csm_failure_limit >= 1, "buffer.csm_failure_limit", || "must be at least 1".into())?;
        check(b.csm_block_duration >= 0.0, "buffer.csm_block_duration", || "must be nonnegative".into())?;

        let topo = &self.topology;
        check(topo.senders >= 1, "topology.senders", || "need at least one sender".into())?;
        check(probability(topo.loss), "topology.loss", || format!("{} not in [0, 1]", topo.loss))?;
        check(topo.propagation_delay >= 0.0, "topology.propagation_delay", || "must be nonnegative".into())?;
        check(topo.bitrate > 0.0, "topology.bitrate", || "must be positive".into())?;
        if let Some(i) = &topo.interference {
            check(i.mean_good > 0.0, "topology.interference.mean_good", || "must be positive".into())?;
            check(i.mean_bad > 0.0, "topology.interference.mean_bad", || "must be positive".into())?;
            check(probability(i.bad_loss), "topology.interference.bad_loss", || "must be in [0, 1]".into())?;
        }

        let tr = &self.traffic;
        check(tr.send_interval > 0.0, "traffic.send_interval", || "must be positive".into())?;
        check(
            (1..=crate::codec::MAX_DATAGRAM_SIZE).contains(&tr.payload_size),
            "traffic.payload_size",
            || format!("must be 1..={}", crate::codec::MAX_DATAGRAM_SIZE),
        )?;
        check(tr.duration >= 0.0, "traffic.duration", || "must be nonnegative".into())?;
        check(tr.convergence >= 0.0, "traffic.convergence", || "must be nonnegative".into())?;
        check(tr.fragment_gap >= 0.0, "traffic.fragment_gap", || "must be nonnegative".into())?;
        check(tr.tick_interval > 0.0, "traffic.tick_interval", || "must be positive".into())?;

        if let Some(a) = &self.attack {
            check(topo.attacker, "topology.attacker", || "an attack needs an attacker node".into())?;
            check(a.start_time >= tr.convergence, "attack.start_time", || {
                format!("{} precedes the convergence period ({})", a.start_time, tr.convergence)
            })?;
            check(
                (1..=crate::codec::MAX_DATAGRAM_SIZE).contains(&a.datagram_size),
                "attack.datagram_size",
                || "out of range".into(),
            )?;
            check(probability(a.early_target_fraction), "attack.early_target_fraction", || "must be in [0, 1]".into())?;
            check(probability(a.replay_fraction), "attack.replay_fraction", || "must be in [0, 1]".into())?;
            check(a.flood_interval > 0.0, "attack.flood_interval", || "must be positive".into())?;
            check(a.burst_rate > 0.0, "attack.burst_rate", || "must be positive".into())?;
            check(a.burst_period > 0.0, "attack.burst_period", || "must be positive".into())?;
            check(a.fragment_spacing >= 0.0, "attack.fragment_spacing", || "must be nonnegative".into())?;
            check(a.target == 0, "attack.target", || "only the root can be targeted".into())?;
        }

        check(self.seeds.count >= 1, "seeds.count", || "need at least one run".into())?;
        self.key_bytes()?;
        Ok(())
    }
}
