//! Closed-form companions to the simulator: trust trajectories, steps to
//! blacklisting and reassembly-buffer occupancy.

use serde::Serialize;
use thiserror::Error;

use crate::trust::{Outcome, TrustParams, TrustState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("theta ({theta}) must lie strictly between 0 and t0 ({t0})")]
    ThetaNotBelowT0 { theta: f64, t0: f64 },
    #[error("lambda must lie in (0, 1), got {0}")]
    LambdaOutOfRange(f64),
}

/// Iterate the trust recurrence from `t0`, returning the score after each
/// outcome. Shares the update with [`TrustState`].
pub fn trust_trajectory(t0: f64, lambda: f64, outcomes: &[Outcome]) -> Vec<f64> {
    let params = TrustParams {
        lambda,
        ..TrustParams::default()
    };
    let mut state = TrustState::new(t0, &params);
    outcomes.iter().map(|&o| state.update_trust(o)).collect()
}

/// Score after `k` identical outcomes `c`: `c + (t0 - c) * lambda^k`.
pub fn closed_form(t0: f64, lambda: f64, constant: Outcome, k: u32) -> f64 {
    let c = match constant {
        Outcome::Success => 1.0,
        Outcome::Failure => 0.0,
    };
    c + (t0 - c) * lambda.powi(k as i32)
}

/// Smallest `k` with `t0 * lambda^k < theta` under an all-failure stream.
pub fn steps_to_blacklist(t0: f64, lambda: f64, theta: f64) -> Result<u32, AnalyticError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(AnalyticError::LambdaOutOfRange(lambda));
    }
    if !(theta > 0.0 && theta < t0 && t0 <= 1.0) {
        return Err(AnalyticError::ThetaNotBelowT0 { theta, t0 });
    }
    let estimate = ((theta / t0).ln() / lambda.ln()).ceil().max(1.0) as u32;
    // The logarithm can land a hair either side of an integer; settle the
    // strict inequality exactly.
    let mut k = estimate.saturating_sub(1).max(1);
    while t0 * lambda.powi(k as i32) >= theta {
        k += 1;
    }
    while k > 1 && t0 * lambda.powi(k as i32 - 1) < theta {
        k -= 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BufferModelParams {
    /// Arrival rate of valid fragments (or sessions), per second.
    pub legit_rate: f64,
    /// Arrival rate of malicious fragments, per second.
    pub attack_rate: f64,
    pub slots: u32,
    /// Reassembly timeout, seconds.
    pub timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BufferModel {
    /// `min(1, (lambda + A) / (B * tau))`, as printed.
    pub rho: f64,
    pub p_buffer: f64,
    /// `min(1, (lambda + A) * tau / B)`: offered load per slot.
    pub occupancy_standard: f64,
    pub p_buffer_standard: f64,
}

pub fn buffer_availability_model(p: &BufferModelParams) -> BufferModel {
    let load = p.legit_rate + p.attack_rate;
    let slots = p.slots as f64;
    let rho = (load / (slots * p.timeout)).min(1.0);
    let occupancy_standard = (load * p.timeout / slots).min(1.0);
    BufferModel {
        rho,
        p_buffer: 1.0 - rho,
        occupancy_standard,
        p_buffer_standard: 1.0 - occupancy_standard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ten_failures_from_point_eight() {
        let traj = trust_trajectory(0.8, 0.9, &[Outcome::Failure; 10]);
        assert!((traj[9] - 0.278_942_752_8).abs() < 1e-9);
        assert!(traj[8] >= 0.3 && traj[9] < 0.3);
    }

    #[test]
    fn steps_examples() {
        assert_eq!(steps_to_blacklist(0.8, 0.9, 0.3), Ok(10));
        assert_eq!(steps_to_blacklist(1.0, 0.5, 0.5), Ok(2));
        assert!(matches!(
            steps_to_blacklist(0.3, 0.9, 0.3),
            Err(AnalyticError::ThetaNotBelowT0 { .. })
        ));
    }

    #[test]
    fn successes_never_exceed_one() {
        let traj = trust_trajectory(0.5, 0.7, &[Outcome::Success; 200]);
        assert!(traj.windows(2).all(|w| w[1] >= w[0]));
        assert!(traj.iter().all(|&s| s <= 1.0));
    }

    #[test]
    fn closed_form_matches_iteration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t0: f64 = rng.gen();
            let lambda: f64 = rng.gen_range(0.01..0.99);
            let k: u32 = rng.gen_range(0..=100);
            let c = if rng.gen() { Outcome::Success } else { Outcome::Failure };
            let iter = trust_trajectory(t0, lambda, &vec![c; k as usize]).last().copied().unwrap_or(t0);
            assert!((iter - closed_form(t0, lambda, c, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn buffer_examples() {
        let zero = buffer_availability_model(&BufferModelParams { legit_rate: 0.0, attack_rate: 0.0, slots: 2, timeout: 10.0 });
        assert_eq!((zero.rho, zero.p_buffer), (0.0, 1.0));
        let m = buffer_availability_model(&BufferModelParams { legit_rate: 0.1, attack_rate: 0.3, slots: 2, timeout: 10.0 });
        assert!((m.rho - 0.02).abs() < 1e-12);
        assert!((m.p_buffer - 0.98).abs() < 1e-12);
        assert!((m.occupancy_standard - 1.0).abs() < 1e-12);
        let sat = buffer_availability_model(&BufferModelParams { legit_rate: 15.0, attack_rate: 5.0, slots: 2, timeout: 10.0 });
        assert_eq!((sat.rho, sat.p_buffer), (1.0, 0.0));
    }

    proptest! {
        #[test]
        fn steps_agree_with_trajectory(t0 in 0.05f64..=1.0, lambda in 0.05f64..0.99, frac in 0.01f64..0.99) {
            let theta = t0 * frac;
            let k = steps_to_blacklist(t0, lambda, theta).unwrap();
            let traj = trust_trajectory(t0, lambda, &vec![Outcome::Failure; k as usize]);
            let first = traj.iter().position(|&s| s < theta).map(|i| i as u32 + 1);
            prop_assert_eq!(first, Some(k));
        }

        #[test]
        fn rho_monotone(l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, a in 0.0f64..5.0, b in 1u32..8, tau in 0.1f64..30.0) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let m1 = buffer_availability_model(&BufferModelParams { legit_rate: lo, attack_rate: a, slots: b, timeout: tau });
            let m2 = buffer_availability_model(&BufferModelParams { legit_rate: hi, attack_rate: a, slots: b, timeout: tau });
            prop_assert!(m1.rho <= m2.rho);
            prop_assert!(m1.occupancy_standard <= m2.occupancy_standard);
            prop_assert_eq!(m1.p_buffer, 1.0 - m1.rho);
        }
    }
}
