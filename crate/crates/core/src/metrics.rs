//! Per-run metrics and their aggregation over seeds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackKind;
use crate::baselines::StackVariant;
use crate::reassembly::{CryptoWork, DropCounts, DropReason};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty set of runs")]
    EmptyInput,
}

/// Everything measured in one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub stack: StackVariant,
    pub attack: Option<AttackKind>,
    pub seed: u64,
    pub duration: f64,

    pub legit_sent: u64,
    pub legit_delivered: u64,
    /// Percent of legitimate packets reassembled intact at the root.
    pub pdr: f64,

    pub fragments_received: u64,
    pub fragments_buffered: u64,
    pub fragments_dropped: u64,
    /// Drops per 100 fragments received at the root.
    pub fragment_drop_rate: f64,
    pub drops: DropCounts,

    pub legit_fragments_received: u64,
    pub legit_fragments_dropped: u64,
    /// Legitimate-fragment drops per 100 legitimate fragments received.
    pub legit_drop_rate: f64,
    /// Percent of legitimate fragments rejected by a security gate.
    pub false_positive_rate: f64,
    pub legit_drops: DropCounts,

    pub attacker_emissions: u64,
    pub attacker_fragments_received: u64,
    /// Forged datagrams the root reassembled in full.
    pub attacker_datagrams_delivered: u64,
    pub detection_latency_s: Option<f64>,

    /// Mean over the root and legitimate senders.
    pub avg_power_mw: f64,
    pub root_power_mw: f64,

    pub buffer_slots: usize,
    pub buffer_peak: usize,
    /// Time-averaged fraction of free reassembly slots.
    pub buffer_availability: f64,
    pub sessions_allocated: u64,
    pub mean_hold_time_s: Option<f64>,

    pub trust_min: Option<f64>,
    pub trust_max: Option<f64>,
    pub crypto: CryptoWork,
    pub events: u64,
}

impl RunMetrics {
    /// `received = buffered + dropped at admission`.
    pub fn conserves_fragments(&self) -> bool {
        self.fragments_received == self.fragments_buffered + self.drops.admission_total()
            && self.fragments_dropped == self.drops.admission_total()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

pub fn compute_pdr(sent: u64, delivered: u64) -> f64 {
    if sent == 0 {
        return 100.0;
    }
    100.0 * delivered as f64 / sent as f64
}

/// `100 * part / whole`, zero when nothing was received.
pub fn per_hundred(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// What happened to one attacker fragment at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackerOutcome {
    Buffered,
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerEvent {
    pub time: f64,
    pub outcome: AttackerOutcome,
}

/// Time from `attack_start` until the receiver has identified the attacker
/// and keeps every later attacker fragment out of the buffer.
///
/// `t*` is the first identity-gate drop after the last buffered attacker
/// fragment. `None` if there is no such drop.
pub fn compute_detection_latency(events: &[AttackerEvent], attack_start: f64) -> Option<f64> {
    let resume = events
        .iter()
        .rposition(|e| e.outcome == AttackerOutcome::Buffered)
        .map_or(0, |i| i + 1);
    events[resume..]
        .iter()
        .find(|e| matches!(e.outcome, AttackerOutcome::Dropped(r) if r.is_identity_gate()))
        .map(|e| (e.time - attack_start).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(Stat {
            mean,
            stddev: var.sqrt(),
            min: sorted[0],
            max: sorted[n - 1],
            median,
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub stack: StackVariant,
    pub attack: Option<AttackKind>,
    pub runs: usize,
    pub pdr: Stat,
    pub fragment_drop_rate: Stat,
    pub legit_drop_rate: Stat,
    pub false_positive_rate: Stat,
    pub avg_power_mw: Stat,
    pub buffer_availability: Stat,
    /// Over runs where detection happened.
    pub detection_latency_s: Option<Stat>,
    /// Fraction of runs that reported a detection.
    pub detection_rate: f64,
}

impl Summary {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// Fold runs of one scenario into summary statistics.
pub fn aggregate(runs: &[RunMetrics]) -> Result<Summary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::EmptyInput)?;
    let stat = |f: &dyn Fn(&RunMetrics) -> f64| {
        Stat::of(&runs.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    let latencies: Vec<f64> = runs.iter().filter_map(|r| r.detection_latency_s).collect();
    Ok(Summary {
        scenario: first.scenario.clone(),
        stack: first.stack,
        attack: first.attack,
        runs: runs.len(),
        pdr: stat(&|r| r.pdr),
        fragment_drop_rate: stat(&|r| r.fragment_drop_rate),
        legit_drop_rate: stat(&|r| r.legit_drop_rate),
        false_positive_rate: stat(&|r| r.false_positive_rate),
        avg_power_mw: stat(&|r| r.avg_power_mw),
        buffer_availability: stat(&|r| r.buffer_availability),
        detection_rate: latencies.len() as f64 / runs.len() as f64,
        detection_latency_s: Stat::of(&latencies),
    })
}

fn fmt_latency(s: &Summary) -> String {
    match &s.detection_latency_s {
        Some(l) => format!("{:.2}", l.median),
        None => "none".to_owned(),
    }
}

/// Plain-text table, one row per (scenario, stack).
pub fn render_table(summaries: &[Summary]) -> String {
    let mut out = format!(
        "{:<20} {:<15} {:>8} {:>8} {:>9} {:>9} {:>10} {:>6}\n",
        "attack", "stack", "pdr%", "drop/100", "legit/100", "power_mw", "latency_s", "det%"
    );
    for s in summaries {
        let attack = s.attack.map_or("none", AttackKind::name);
        out.push_str(&format!(
            "{:<20} {:<15} {:>8.2} {:>8.2} {:>9.2} {:>9.4} {:>10} {:>6.0}\n",
            attack,
            s.stack.name(),
            s.pdr.mean,
            s.fragment_drop_rate.mean,
            s.legit_drop_rate.mean,
            s.avg_power_mw.mean,
            fmt_latency(s),
            100.0 * s.detection_rate,
        ));
    }
    out
}
