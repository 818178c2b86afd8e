//! Physical-layer model: interference, SINR, rates and the radio constraints
//! C1 to C4.
//!
//! Rates are spectral efficiencies in bit/s/Hz. Multiply by the per-subcarrier
//! bandwidth of the link direction to obtain bit/s.

use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;

/// Absolute tolerance for binary and exclusivity checks.
pub const BINARY_TOL: f64 = 1e-9;
/// Absolute tolerance for power budgets, in watts.
pub const POWER_TOL_W: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RadioError {
    #[error("{kind} index {index} out of range (size {size})")]
    Index {
        kind: &'static str,
        index: usize,
        size: usize,
    },
}

fn check_index(kind: &'static str, index: usize, size: usize) -> Result<(), RadioError> {
    if index < size {
        Ok(())
    } else {
        Err(RadioError::Index { kind, index, size })
    }
}

/// Uplink decision state: `assign[u][k]` and the substituted power
/// `power[u][k]`, which is zero wherever the subcarrier is not assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlAllocation {
    pub assign: Vec<Vec<bool>>,
    pub power: Vec<Vec<f64>>,
}

/// Downlink decision state indexed `[teleoperator][subcarrier]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlAllocation {
    pub assign: Vec<Vec<bool>>,
    pub power: Vec<Vec<f64>>,
}

macro_rules! link_allocation {
    ($t:ty) => {
        impl $t {
            pub fn empty(links: usize, carriers: usize) -> Self {
                Self {
                    assign: vec![vec![false; carriers]; links],
                    power: vec![vec![0.0; carriers]; links],
                }
            }

            pub fn links(&self) -> usize {
                self.assign.len()
            }

            pub fn carriers(&self) -> usize {
                self.assign.first().map_or(0, Vec::len)
            }

            pub fn assigned(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
                self.assign[link]
                    .iter()
                    .enumerate()
                    .filter_map(|(k, &a)| a.then_some(k))
            }

            pub fn total_power(&self) -> f64 {
                self.power.iter().flatten().sum()
            }

            pub fn link_power(&self, link: usize) -> f64 {
                self.power[link].iter().sum()
            }

            /// Powers stacked link-major, the vector used by the stopping rule.
            pub fn stacked_power(&self) -> Vec<f64> {
                self.power.iter().flatten().copied().collect()
            }
        }
    };
}

link_allocation!(UlAllocation);
link_allocation!(DlAllocation);

fn check_ul(scn: &Scenario, alloc: &UlAllocation, u: usize, k: usize) -> Result<(), RadioError> {
    check_index("user", u, scn.users.len().min(alloc.links()))?;
    check_index("UL subcarrier", k, scn.config.num_ul_subcarriers.min(alloc.carriers()))
}

fn check_dl(scn: &Scenario, alloc: &DlAllocation, o: usize, l: usize) -> Result<(), RadioError> {
    check_index("teleoperator", o, scn.teleoperators.len().min(alloc.links()))?;
    check_index("DL subcarrier", l, scn.config.num_dl_subcarriers.min(alloc.carriers()))
}

/// Interference received at the serving BS of `u` on uplink subcarrier `k`
/// from users of every other cell.
pub fn ul_interference(scn: &Scenario, alloc: &UlAllocation, u: usize, k: usize) -> Result<f64, RadioError> {
    check_ul(scn, alloc, u, k)?;
    let j = scn.users[u].bs;
    Ok(scn
        .users
        .iter()
        .filter(|v| v.bs != j)
        .map(|v| alloc.power[v.id][k] * scn.ul_gain.get(v.id, j, k))
        .sum())
}

pub fn ul_sinr(scn: &Scenario, alloc: &UlAllocation, u: usize, k: usize) -> Result<f64, RadioError> {
    let i = ul_interference(scn, alloc, u, k)?;
    let h = scn.ul_gain.get(u, scn.users[u].bs, k);
    Ok(alloc.power[u][k] * h / (scn.noise_ul_w() + i))
}

/// Uplink spectral efficiency of user `u`, summed over its assigned subcarriers.
pub fn ul_rate(scn: &Scenario, alloc: &UlAllocation, u: usize) -> Result<f64, RadioError> {
    check_ul(scn, alloc, u, 0)?;
    let mut r = 0.0;
    for k in alloc.assigned(u) {
        r += ul_sinr(scn, alloc, u, k)?.ln_1p() / std::f64::consts::LN_2;
    }
    Ok(r)
}

/// Interference at teleoperator `o` on downlink subcarrier `l` from the
/// transmissions of every other base station.
pub fn dl_interference(scn: &Scenario, alloc: &DlAllocation, o: usize, l: usize) -> Result<f64, RadioError> {
    check_dl(scn, alloc, o, l)?;
    let j = scn.teleoperators[o].bs;
    Ok(scn
        .teleoperators
        .iter()
        .filter(|p| p.bs != j)
        .map(|p| alloc.power[p.id][l] * scn.dl_gain.get(o, p.bs, l))
        .sum())
}

pub fn dl_sinr(scn: &Scenario, alloc: &DlAllocation, o: usize, l: usize) -> Result<f64, RadioError> {
    let i = dl_interference(scn, alloc, o, l)?;
    let h = scn.dl_gain.get(o, scn.teleoperators[o].bs, l);
    Ok(alloc.power[o][l] * h / (scn.noise_dl_w() + i))
}

pub fn dl_rate(scn: &Scenario, alloc: &DlAllocation, o: usize) -> Result<f64, RadioError> {
    check_dl(scn, alloc, o, 0)?;
    let mut r = 0.0;
    for l in alloc.assigned(o) {
        r += dl_sinr(scn, alloc, o, l)?.ln_1p() / std::f64::consts::LN_2;
    }
    Ok(r)
}

/// Downlink rate of the teleoperator paired with user `u`, or 0 when unpaired.
pub fn paired_dl_rate(scn: &Scenario, alloc: &DlAllocation, u: usize) -> Result<f64, RadioError> {
    check_index("user", u, scn.users.len())?;
    match scn.paired_teleoperator(u) {
        Some(o) => dl_rate(scn, alloc, o),
        None => Ok(0.0),
    }
}

/// Outcome of one constraint family. `worst_margin` is `rhs - lhs` of the
/// tightest instance, so a negative margin is a violation of that size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub violations: Vec<String>,
}

impl ConstraintCheck {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            worst_margin: f64::INFINITY,
            violations: Vec::new(),
        }
    }

    /// Records one instance with the given margin; it fails when the margin
    /// is below `-tol`.
    pub fn record(&mut self, margin: f64, tol: f64, what: impl FnOnce() -> String) {
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
        }
        if !(margin >= -tol) {
            self.passed = false;
            self.violations.push(what());
        }
    }

    /// Size of the worst violation, 0 when the constraint holds.
    pub fn residual(&self) -> f64 {
        if self.worst_margin.is_nan() {
            f64::INFINITY
        } else {
            (-self.worst_margin).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

fn exclusivity(
    name: &str,
    assign: &[Vec<bool>],
    power: &[Vec<f64>],
    cell_of: impl Fn(usize) -> usize,
    cells: usize,
) -> ConstraintCheck {
    let mut check = ConstraintCheck::new(name);
    let carriers = assign.first().map_or(0, Vec::len);
    for j in 0..cells {
        for k in 0..carriers {
            let n = (0..assign.len()).filter(|&u| cell_of(u) == j && assign[u][k]).count();
            check.record(1.0 - n as f64, BINARY_TOL, || {
                format!("subcarrier {k} at BS {j} assigned to {n} links")
            });
        }
    }
    for (u, row) in power.iter().enumerate() {
        for (k, &p) in row.iter().enumerate() {
            if !assign[u][k] {
                check.record(-p.abs(), BINARY_TOL, || {
                    format!("link {u} transmits {p} W on unassigned subcarrier {k}")
                });
            }
            if !(p >= 0.0) {
                check.record(p, BINARY_TOL, || format!("link {u} has negative power on {k}"));
            }
        }
    }
    check
}

/// Checks C1 to C4 and reports every family, passing or not.
pub fn check_radio_constraints(scn: &Scenario, ul: &UlAllocation, dl: &DlAllocation) -> ConstraintReport {
    let nb = scn.num_bs();
    let c1 = exclusivity("C1", &ul.assign, &ul.power, |u| scn.users[u].bs, nb);
    let c2 = exclusivity("C2", &dl.assign, &dl.power, |o| scn.teleoperators[o].bs, nb);

    let mut c3 = ConstraintCheck::new("C3");
    let p_max = scn.user_max_power_w();
    for u in 0..ul.links() {
        let total = ul.link_power(u);
        c3.record(p_max - total, POWER_TOL_W, || {
            format!("user {u} transmits {total} W above {p_max} W")
        });
    }

    let mut c4 = ConstraintCheck::new("C4");
    for bs in &scn.base_stations {
        let total: f64 = scn
            .teleoperators
            .iter()
            .filter(|o| o.bs == bs.id)
            .map(|o| dl.link_power(o.id))
            .sum();
        c4.record(bs.max_power_w - total, POWER_TOL_W, || {
            format!("BS {} transmits {total} W above {} W", bs.id, bs.max_power_w)
        });
    }
    ConstraintReport {
        checks: vec![c1, c2, c3, c4],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn scenario(num_sbs: usize, users: usize) -> Scenario {
        let config = ScenarioConfig {
            num_sbs,
            users_per_bs_per_service: users,
            ..ScenarioConfig::default()
        };
        Scenario::generate(&config, 4).unwrap()
    }

    #[test]
    fn rate_of_sinrs_one_three_seven_is_six() {
        let mut scn = scenario(1, 1);
        let sigma = scn.noise_ul_w();
        let mut ul = UlAllocation::empty(scn.users.len(), 8);
        for (k, s) in [1.0, 3.0, 7.0].into_iter().enumerate() {
            scn.ul_gain.set(0, 0, k, 1.0);
            ul.assign[0][k] = true;
            ul.power[0][k] = s * sigma;
        }
        assert!((ul_rate(&scn, &ul, 0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_power_zero_rate() {
        let scn = scenario(2, 2);
        let mut ul = UlAllocation::empty(scn.users.len(), 8);
        ul.assign[0][0] = true;
        assert_eq!(ul_rate(&scn, &ul, 0).unwrap(), 0.0);
    }

    #[test]
    fn one_interferer() {
        let mut scn = scenario(1, 1);
        let other = scn.users.iter().find(|u| u.bs == 1).unwrap().id;
        scn.ul_gain.set(other, 0, 3, 0.5);
        let mut ul = UlAllocation::empty(scn.users.len(), 8);
        ul.assign[other][3] = true;
        ul.power[other][3] = 1.0;
        assert_eq!(ul_interference(&scn, &ul, 0, 3).unwrap(), 0.5);
        assert_eq!(ul_interference(&scn, &ul, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_indices() {
        let scn = scenario(1, 1);
        let ul = UlAllocation::empty(scn.users.len(), 8);
        assert!(matches!(ul_interference(&scn, &ul, 99, 0), Err(RadioError::Index { .. })));
        assert!(matches!(ul_interference(&scn, &ul, 0, 8), Err(RadioError::Index { .. })));
    }

    #[test]
    fn c3_residual() {
        let scn = scenario(1, 1);
        let mut ul = UlAllocation::empty(scn.users.len(), 8);
        let dl = DlAllocation::empty(scn.teleoperators.len(), 16);
        ul.assign[0][0] = true;
        ul.power[0][0] = scn.user_max_power_w() + 0.1;
        let report = check_radio_constraints(&scn, &ul, &dl);
        let c3 = report.get("C3").unwrap();
        assert!(!c3.passed);
        assert!((c3.residual() - 0.1).abs() < 1e-12);
        assert!(report.get("C1").unwrap().passed);
    }

    #[test]
    fn shared_subcarrier_breaks_c1() {
        let scn = scenario(1, 2);
        let mut ul = UlAllocation::empty(scn.users.len(), 8);
        let dl = DlAllocation::empty(scn.teleoperators.len(), 16);
        let same: Vec<usize> = scn.users.iter().filter(|u| u.bs == 0).map(|u| u.id).collect();
        ul.assign[same[0]][2] = true;
        ul.assign[same[1]][2] = true;
        let report = check_radio_constraints(&scn, &ul, &dl);
        assert_eq!(report.failed(), vec!["C1"]);
    }

    #[test]
    fn empty_allocation_passes() {
        let scn = scenario(2, 3);
        let ul = UlAllocation::empty(scn.users.len(), 8);
        let dl = DlAllocation::empty(scn.teleoperators.len(), 16);
        assert!(check_radio_constraints(&scn, &ul, &dl).all_passed());
    }
}
