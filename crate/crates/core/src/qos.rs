//! Statistical queuing-delay bounds from effective bandwidth, and the
//! end-to-end delay budget.
//!
//! All delays are in seconds and all rates in bit/s.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum QosError {
    #[error("QoS exponent must be positive, got {0}")]
    Exponent(f64),
    #[error("violation probability must lie in (0, 1), got {0}")]
    Probability(f64),
    #[error("a zero {0} demands an infinite rate or delay")]
    Infeasible(&'static str),
}

fn check_theta(theta: f64) -> Result<(), QosError> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(QosError::Exponent(theta))
    }
}

fn check_delta(delta: f64) -> Result<(), QosError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(QosError::Probability(delta))
    }
}

/// `Λ (e^θ - 1) / θ` for a Poisson source of rate `Λ`.
pub fn effective_bandwidth(arrival_rate: f64, theta: f64) -> Result<f64, QosError> {
    check_theta(theta)?;
    Ok(arrival_rate * theta.exp_m1() / theta)
}

/// Probability that the uplink queuing delay exceeds `delay`.
pub fn ul_queue_violation(arrival_rate: f64, theta: f64, delay: f64, nonempty_prob: f64) -> f64 {
    nonempty_prob * (-arrival_rate * theta.exp_m1() * delay).exp()
}

/// Bits of "virtual backlog" `ln(1/δ) / (e^θ - 1)`: the minimum rate for a
/// queuing delay `D` is this quantity divided by `D`.
pub fn queue_bits(delta: f64, theta: f64) -> Result<f64, QosError> {
    check_theta(theta)?;
    check_delta(delta)?;
    Ok(-delta.ln() / theta.exp_m1())
}

/// Smallest service rate keeping the queuing-delay violation below `delta`.
pub fn min_rate_for_queue(delta: f64, theta: f64, delay: f64) -> Result<f64, QosError> {
    let kappa = queue_bits(delta, theta)?;
    if delay > 0.0 {
        Ok(kappa / delay)
    } else {
        Err(QosError::Infeasible("queuing delay"))
    }
}

/// Inverse of [`min_rate_for_queue`] in the delay argument.
pub fn min_q_delay_for_rate(delta: f64, theta: f64, rate: f64) -> Result<f64, QosError> {
    let kappa = queue_bits(delta, theta)?;
    if rate > 0.0 {
        Ok(kappa / rate)
    } else {
        Err(QosError::Infeasible("rate"))
    }
}

pub fn transmission_delay(payload_bits: f64, rate: f64) -> Result<f64, QosError> {
    if payload_bits == 0.0 {
        Ok(0.0)
    } else if rate > 0.0 {
        Ok(payload_bits / rate)
    } else {
        Err(QosError::Infeasible("rate"))
    }
}

/// Per-user split of the end-to-end budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBudget {
    pub t_ul: f64,
    pub t_dl: f64,
    pub q_ul: f64,
    pub q_dl: f64,
    pub nfs: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E2eCheck {
    pub feasible: bool,
    /// `cap - total`; negative when the budget is exceeded.
    pub residual: f64,
}

impl DelayBudget {
    pub fn total(&self) -> f64 {
        self.t_ul + self.t_dl + self.q_ul + self.q_dl + self.nfs
    }

    pub fn components(&self) -> [f64; 5] {
        [self.t_ul, self.t_dl, self.q_ul, self.q_dl, self.nfs]
    }
}

/// C6 with an absolute tolerance of one femtosecond for rounding.
pub fn check_e2e(budget: &DelayBudget) -> E2eCheck {
    let residual = budget.cap - budget.total();
    E2eCheck {
        feasible: residual >= -1e-15 && budget.components().iter().all(|&c| c >= 0.0),
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn effective_bandwidth_limits() {
        assert!((effective_bandwidth(1.0, 1e-8).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(effective_bandwidth(0.0, 11.0).unwrap(), 0.0);
        assert!(effective_bandwidth(1.0, 0.0).is_err());
    }

    #[test]
    fn violation_probability() {
        assert_eq!(ul_queue_violation(5.0, 2.0, 0.0, 0.7), 0.7);
        let delta: f64 = 1e-3;
        let theta: f64 = 3.0;
        let lambda = 2.0;
        let d = -delta.ln() / (lambda * theta.exp_m1());
        assert!((ul_queue_violation(lambda, theta, d, 1.0) - delta).abs() < 1e-15);
    }

    #[test]
    fn rate_floor_examples() {
        assert!((min_rate_for_queue(1.0 / E, LN_2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((min_rate_for_queue(E.powi(-2), LN_2, 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((min_q_delay_for_rate(1.0 / E, LN_2, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(min_rate_for_queue(0.1, 1.0, 0.0).is_err());
        assert!(min_q_delay_for_rate(0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn transmission() {
        assert!((transmission_delay(1000.0, 1e6).unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(transmission_delay(0.0, 0.0).unwrap(), 0.0);
        assert!(transmission_delay(1.0, 0.0).is_err());
    }

    #[test]
    fn e2e() {
        let zero = DelayBudget {
            t_ul: 0.0,
            t_dl: 0.0,
            q_ul: 0.0,
            q_dl: 0.0,
            nfs: 0.0,
            cap: 1e-3,
        };
        let c = check_e2e(&zero);
        assert!(c.feasible);
        assert_eq!(c.residual, 1e-3);
        let tight = DelayBudget {
            t_ul: 0.2e-3,
            t_dl: 0.2e-3,
            q_ul: 0.2e-3,
            q_dl: 0.2e-3,
            nfs: 0.2e-3,
            cap: 1e-3,
        };
        let c = check_e2e(&tight);
        assert!(c.feasible);
        assert!(c.residual.abs() < 1e-18);
        let over = DelayBudget { nfs: 0.3e-3, ..tight };
        assert!(!check_e2e(&over).feasible);
    }
}
