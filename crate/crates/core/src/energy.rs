//! Per-node energy accounting in the Energest style: time spent in each
//! hardware state, converted to average power with fixed currents.

use serde::{Deserialize, Serialize};

/// Supply voltage and state currents, plus the CPU cost of protocol work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub voltage: f64,
    /// Currents in mA.
    pub cpu_ma: f64,
    pub lpm_ma: f64,
    pub tx_ma: f64,
    pub rx_ma: f64,
    /// CPU time to handle one frame, seconds.
    pub frame_cpu: f64,
    /// CPU time for one chained hash, seconds.
    pub hash_cpu: f64,
    /// CPU time for one independent per-fragment MAC, seconds.
    pub mac_cpu: f64,
    /// Fraction of time the radio listens for channel activity while idle.
    pub listen_duty: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            voltage: 3.0,
            cpu_ma: 1.8,
            lpm_ma: 0.0545,
            tx_ma: 17.7,
            rx_ma: 20.0,
            frame_cpu: 0.001,
            hash_cpu: 0.055_56,
            mac_cpu: 0.444_4,
            listen_duty: 0.002,
        }
    }
}

/// Accumulated seconds per state for one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub cpu: f64,
    pub tx: f64,
    pub rx: f64,
}

impl EnergyLedger {
    pub fn charge_cpu(&mut self, seconds: f64) {
        self.cpu += seconds;
    }

    pub fn charge_tx(&mut self, seconds: f64) {
        self.tx += seconds;
    }

    pub fn charge_rx(&mut self, seconds: f64) {
        self.rx += seconds;
    }

    /// Average power over `elapsed` seconds. Time not spent active counts
    /// as low-power mode; idle channel checks are added to receive time.
    pub fn energy_mw(&self, elapsed: f64, p: &EnergyParams) -> f64 {
        if elapsed <= 0.0 {
            return 0.0;
        }
        // A saturated CPU cannot be busy for longer than wall time.
        let cpu = self.cpu.min(elapsed);
        let rx = self.rx + p.listen_duty * elapsed;
        let lpm = elapsed - cpu;
        p.voltage * (p.cpu_ma * cpu + p.lpm_ma * lpm + p.tx_ma * self.tx + p.rx_ma * rx) / elapsed
    }
}

/// Seconds on air for `bytes` at `bitrate` bit/s.
pub fn airtime(bytes: usize, bitrate: f64) -> f64 {
    bytes as f64 * 8.0 / bitrate
}
