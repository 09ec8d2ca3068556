//! Seeded batch execution and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::metrics::{aggregate, RunMetrics, Stat, Summary};
use crate::netsim::{self, SimError};

/// Seeds `base .. base + count`.
pub fn seeds(cfg: &ScenarioConfig) -> Vec<u64> {
    (0..cfg.seeds.count as u64).map(|i| cfg.seeds.base + i).collect()
}

/// Run every seed of `cfg` in parallel. Results come back sorted by seed.
pub fn run_seeds(cfg: &ScenarioConfig) -> Result<Vec<RunMetrics>, SimError> {
    cfg.validate()?;
    let mut runs = seeds(cfg)
        .into_par_iter()
        .map(|seed| netsim::run(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|r| r.seed);
    Ok(runs)
}

pub fn run_and_summarize(cfg: &ScenarioConfig) -> Result<(Vec<RunMetrics>, Summary), SimError> {
    let runs = run_seeds(cfg)?;
    let summary = aggregate(&runs).expect("at least one seed");
    Ok((runs, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub lambda: f64,
    pub theta: f64,
    pub detection_latency_s: Option<Stat>,
    pub detection_rate: f64,
    pub false_positive_rate: Stat,
    pub pdr: Stat,
}

pub const DEFAULT_LAMBDAS: [f64; 4] = [0.7, 0.8, 0.9, 0.95];
pub const DEFAULT_THETAS: [f64; 3] = [0.2, 0.3, 0.4];

/// A copy of `base` with the trust parameters replaced.
pub fn with_trust(base: &ScenarioConfig, lambda: f64, theta: f64) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.trust.lambda = lambda;
    cfg.trust.theta = theta;
    cfg.name = format!("{}_l{lambda}_t{theta}", base.name);
    cfg
}

/// Sweep `lambdas x thetas` over `base`, returning each cell with its runs.
pub fn sensitivity(
    base: &ScenarioConfig,
    lambdas: &[f64],
    thetas: &[f64],
) -> Result<Vec<(SensitivityCell, Vec<RunMetrics>)>, SimError> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for &theta in thetas {
            let (runs, s) = run_and_summarize(&with_trust(base, lambda, theta))?;
            let cell = SensitivityCell {
                lambda,
                theta,
                detection_latency_s: s.detection_latency_s,
                detection_rate: s.detection_rate,
                false_positive_rate: s.false_positive_rate,
                pdr: s.pdr,
            };
            out.push((cell, runs));
        }
    }
    Ok(out)
}

pub fn render_sensitivity(cells: &[SensitivityCell]) -> String {
    let mut out = format!(
        "{:>6} {:>6} {:>10} {:>6} {:>8} {:>8}\n",
        "lambda", "theta", "latency_s", "det%", "fp%", "pdr%"
    );
    for c in cells {
        let latency = c
            .detection_latency_s
            .map_or_else(|| "none".to_owned(), |l| format!("{:.3}", l.median));
        out.push_str(&format!(
            "{:>6.2} {:>6.2} {:>10} {:>6.0} {:>8.3} {:>8.2}\n",
            c.lambda,
            c.theta,
            latency,
            100.0 * c.detection_rate,
            c.false_positive_rate.mean,
            c.pdr.mean
        ));
    }
    out
}
