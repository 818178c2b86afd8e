//! Delay adjustment.
//!
//! With rates and makespans fixed, every delay constraint bounds a single
//! component from below: `t ≥ C/r` for transmission, `q ≥ κ/r` for queuing
//! (with `κ = ln(1/δ)/(e^θ - 1)`), `nfs ≥ makespan`. The feasibility problem
//! is therefore feasible exactly when the bounds sum to at most the cap.
//! Among the feasible budgets we return the one that scales all four radio
//! components by the same factor `λ = (cap - nfs) / Σ bounds`, which is the
//! unique maximizer of `λ` subject to `d_i ≥ λ·bound_i` and the cap.
//!
//! That budget certifies the current rates; it does not move delay between
//! uplink and downlink. The floors handed to the next power step come from
//! [`model_split`] instead, which divides the room left by the NFs so that a
//! water-filling power model with interference frozen at the current powers
//! is cheapest.

use serde::{Deserialize, Serialize};

use crate::qos::DelayBudget;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum DelayError {
    #[error("delay bounds exceed the cap by {excess_s:e} s; largest component {component}")]
    Infeasible { component: String, excess_s: f64 },
}

/// Lower bounds `[t_ul, t_dl, q_ul, q_dl]` implied by the rates (bit/s).
/// A zero downlink rate with `paired == false` contributes nothing.
pub fn radio_bounds(payload_bits: f64, kappa_ul: f64, kappa_dl: f64, r_ul_bps: f64, r_dl_bps: f64, paired: bool) -> [f64; 4] {
    let div = |a: f64, r: f64| if r > 0.0 { a / r } else { f64::INFINITY };
    let (t_dl, q_dl) = if paired {
        (div(payload_bits, r_dl_bps), div(kappa_dl, r_dl_bps))
    } else {
        (0.0, 0.0)
    };
    [div(payload_bits, r_ul_bps), t_dl, div(kappa_ul, r_ul_bps), q_dl]
}

const NAMES: [&str; 5] = ["t_ul", "t_dl", "q_ul", "q_dl", "nfs"];

/// Splits `cap` given radio lower bounds and the NF execution delay.
pub fn split_budget(bounds: [f64; 4], nfs: f64, cap: f64) -> Result<DelayBudget, DelayError> {
    let radio: f64 = bounds.iter().sum();
    let excess = radio + nfs - cap;
    if !(excess <= 0.0) {
        let all = [bounds[0], bounds[1], bounds[2], bounds[3], nfs];
        let (i, _) = all
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("five components");
        return Err(DelayError::Infeasible {
            component: NAMES[i].to_string(),
            excess_s: excess,
        });
    }
    let lambda = if radio > 0.0 { (cap - nfs) / radio } else { 1.0 };
    Ok(scaled(bounds, lambda, nfs, cap))
}

/// Budget with every radio component at `λ` times its bound.
pub fn scaled(bounds: [f64; 4], lambda: f64, nfs: f64, cap: f64) -> DelayBudget {
    DelayBudget {
        t_ul: lambda * bounds[0],
        t_dl: lambda * bounds[1],
        q_ul: lambda * bounds[2],
        q_dl: lambda * bounds[3],
        nfs,
        cap,
    }
}

/// Minimum total power to carry `rate` (bit/s/Hz summed over subcarriers)
/// on subcarriers with effective gains `gains` (SINR per watt) by water
/// filling. Returns the power and its derivative with respect to `rate`.
pub fn water_fill_power(gains: &[f64], rate: f64) -> (f64, f64) {
    let mut g: Vec<f64> = gains.iter().copied().filter(|&g| g > 0.0).collect();
    if g.is_empty() {
        return if rate > 0.0 { (f64::INFINITY, f64::INFINITY) } else { (0.0, 0.0) };
    }
    if !(rate > 0.0) {
        return (0.0, 0.0);
    }
    g.sort_by(|a, b| b.total_cmp(a));
    let mut log_sum = 0.0;
    let mut inv_sum = 0.0;
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (m, &gm) in g.iter().enumerate() {
        log_sum += gm.log2();
        inv_sum += 1.0 / gm;
        let n = (m + 1) as f64;
        let level = ((rate - log_sum) / n).exp2();
        // The water level must clear every active subcarrier's floor.
        if level >= 1.0 / gm {
            best = (n * level - inv_sum, level * std::f64::consts::LN_2);
        }
        if g.get(m + 1).is_none_or(|&next| level <= 1.0 / next) && best.0.is_finite() {
            break;
        }
    }
    best
}

/// Radio side of one user for [`model_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    /// Effective gain per assigned subcarrier, SINR per watt.
    pub gains: Vec<f64>,
    /// Subcarrier bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Power the link may use, W.
    pub cap_w: f64,
    /// Queue bits κ.
    pub kappa: f64,
}

impl LinkModel {
    /// Power needed to deliver `payload_bits` plus the queue bound within
    /// `time_s` of transmission plus queuing delay.
    fn power(&self, payload_bits: f64, time_s: f64) -> (f64, f64) {
        let a = (payload_bits + self.kappa) / self.bandwidth_hz;
        let (p, dp) = water_fill_power(&self.gains, a / time_s);
        (p, -dp * a / (time_s * time_s))
    }

    fn split(&self, payload_bits: f64, time_s: f64) -> (f64, f64) {
        let total = payload_bits + self.kappa;
        (time_s * payload_bits / total, time_s * self.kappa / total)
    }
}

/// Splits `cap - nfs` between uplink and downlink so that the modeled power
/// `P_ul + P_dl` is minimal, keeping each direction within its power cap when
/// possible. Within a direction the time is divided between transmission and
/// queuing so that both bounds ask for the same rate.
pub fn model_split(
    payload_bits: f64,
    ul: &LinkModel,
    dl: Option<&LinkModel>,
    nfs: f64,
    cap: f64,
) -> Option<DelayBudget> {
    let room = cap - nfs;
    if !(room > 0.0) {
        return None;
    }
    let t_ul_total = match dl {
        None => room,
        Some(dl) => {
            // Convex in the uplink share: bisect on the derivative.
            let slope = |x: f64| ul.power(payload_bits, x).1 - dl.power(payload_bits, room - x).1;
            let over = |x: f64| ul.power(payload_bits, x).0 / ul.cap_w - dl.power(payload_bits, room - x).0 / dl.cap_w;
            let bisect = |f: &dyn Fn(f64) -> f64| {
                let (mut lo, mut hi) = (0.0, room);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let v = f(mid);
                    if v.is_nan() || v < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * room {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            let x = bisect(&slope);
            let within = |x: f64| ul.power(payload_bits, x).0 <= ul.cap_w && dl.power(payload_bits, room - x).0 <= dl.cap_w;
            if within(x) {
                x
            } else {
                // Trade the cheaper optimum for the point that overloads both
                // directions equally; it is inside the caps whenever any is.
                bisect(&|x: f64| -over(x))
            }
        }
    };
    let (t_ul, q_ul) = ul.split(payload_bits, t_ul_total);
    let (t_dl, q_dl) = dl.map_or((0.0, 0.0), |dl| dl.split(payload_bits, room - t_ul_total));
    Some(DelayBudget {
        t_ul,
        t_dl,
        q_ul,
        q_dl,
        nfs,
        cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos::check_e2e;

    #[test]
    fn slack_example() {
        let b = split_budget([0.2e-3, 0.2e-3, 0.2e-3, 0.2e-3], 0.1e-3, 1e-3).unwrap();
        assert!((b.total() - 1e-3).abs() < 1e-15);
        assert!(b.t_ul >= 0.2e-3 && b.q_dl >= 0.2e-3);
        assert!(check_e2e(&b).feasible || check_e2e(&b).residual > -1e-15);
    }

    #[test]
    fn nfs_alone_too_large() {
        match split_budget([0.0; 4], 2e-3, 1e-3) {
            Err(DelayError::Infeasible { component, .. }) => assert_eq!(component, "nfs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn water_fill_single_carrier_is_closed_form() {
        let (p, dp) = water_fill_power(&[4.0], 3.0);
        assert!((p - 7.0 / 4.0).abs() < 1e-12);
        assert!((dp - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn water_fill_skips_weak_carrier() {
        // The second carrier is too weak to get any power at this rate.
        let (p, _) = water_fill_power(&[100.0, 1e-3], 1.0);
        assert!((p - 0.01).abs() < 1e-12);
    }

    #[test]
    fn water_fill_matches_brute_force() {
        let g = [3.0, 1.0, 0.4];
        let rate = 4.0;
        let (p, _) = water_fill_power(&g, rate);
        // Grid over the split of rate between carriers.
        let mut best = f64::INFINITY;
        let n = 400;
        for a in 0..=n {
            for b in 0..=(n - a) {
                let r = [rate * a as f64 / n as f64, rate * b as f64 / n as f64];
                let r3 = rate - r[0] - r[1];
                let cost = (r[0].exp2() - 1.0) / g[0] + (r[1].exp2() - 1.0) / g[1] + (r3.exp2() - 1.0) / g[2];
                best = best.min(cost);
            }
        }
        assert!(p <= best + 1e-12 && p >= best * (1.0 - 1e-3), "{p} vs {best}");
    }

    #[test]
    fn model_split_fills_room() {
        let ul = LinkModel { gains: vec![1e3], bandwidth_hz: 625e3, cap_w: 0.2, kappa: 1e-4 };
        let dl = LinkModel { gains: vec![1e3, 1e3], bandwidth_hz: 312.5e3, cap_w: 10.0, kappa: 1e-4 };
        let b = model_split(1000.0, &ul, Some(&dl), 1e-4, 1e-3).unwrap();
        assert!((b.total() - 1e-3).abs() < 1e-15);
        assert!(b.q_ul > 0.0 && b.q_ul < 1e-9);
        let room = 0.9e-3;
        let total = |x: f64| ul.power(1000.0, x).0 + dl.power(1000.0, room - x).0;
        let chosen = total(b.t_ul + b.q_ul);
        for i in 1..1000 {
            assert!(chosen <= total(room * i as f64 / 1000.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn unpaired_user_has_no_downlink_terms() {
        let b = radio_bounds(1000.0, 1.0, 1.0, 1e6, 0.0, false);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
        assert!((b[0] - 1e-3).abs() < 1e-18);
    }
}
