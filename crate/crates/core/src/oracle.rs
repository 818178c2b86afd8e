//! Exhaustive reference solutions for tiny instances.
//!
//! [`nfv_optimum`] enumerates every NF placement and, for each placement,
//! every chain-consistent execution order. The semi-active schedule of an
//! order is optimal for any regular objective, so the cheapest placement that
//! meets every deadline under some order is the exact optimum.
//!
//! [`joint_optimum`] also enumerates subcarrier assignments. It is restricted
//! to instances where every cell has exactly as many subcarriers as links, so
//! each link holds one subcarrier and its rate target is one SINR target. The
//! minimal powers meeting a set of SINR targets solve `(I - A) p = b`, so no
//! power grid is needed. The uplink/downlink split of each user's delay
//! budget is continuous and is searched on a grid refined by golden-section
//! coordinate descent.
//!
//! [`discrete_optimum`] drops the shape restriction and instead limits every
//! subcarrier power to a few levels, enumerating holder and level per
//! subcarrier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::nfv::{NfvError, NfvSchedule};
use crate::qos::{queue_bits, DelayBudget};
use crate::radio::{DlAllocation, UlAllocation};
use crate::scenario::Scenario;
use crate::solver::{self, delay, Allocation, CostBreakdown, SolverSettings};

/// Upper bound on enumerated discrete candidates.
pub const MAX_CANDIDATES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("instance needs {count} discrete candidates, above the limit of {limit}")]
    TooLarge { count: u64, limit: u64 },
    #[error("unsupported instance: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Schedule(#[from] NfvError),
}

fn processing(scn: &Scenario, u: usize, f: usize, n: usize) -> f64 {
    let s = scn.service_of(u);
    s.chain[f].coefficient(n) * s.payload_bits / scn.base_stations[n].processing_rate_bps
}

fn transfer(scn: &Scenario, u: usize, a: usize, b: usize) -> f64 {
    if a == b {
        0.0
    } else {
        scn.payload_bits(u) / scn.backhaul_bps[a][b]
    }
}

/// Saturates at `u64::MAX`.
fn factorial(n: usize) -> u64 {
    (1..=n as u64).fold(1u64, |acc, i| acc.saturating_mul(i))
}

/// Number of interleavings of chains with the given lengths, saturating at
/// `u64::MAX`.
fn multinomial(lens: &[usize]) -> u64 {
    let mut placed = 0u64;
    let mut acc = 1u128;
    for &l in lens {
        // Multiply by C(placed + l, l) one factor at a time; every prefix
        // is itself a binomial, so the division is exact.
        for i in 1..=l as u64 {
            placed += 1;
            acc = acc.saturating_mul(placed as u128) / i as u128;
            if acc > u64::MAX as u128 {
                return u64::MAX;
            }
        }
    }
    acc as u64
}

/// Every interleaving of the users' chains, as a sequence of user ids where
/// the k-th occurrence of `u` stands for its k-th NF.
fn interleavings(lens: &[usize]) -> Vec<Vec<usize>> {
    fn rec(left: &mut [usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.iter().all(|&l| l == 0) {
            out.push(cur.clone());
            return;
        }
        for u in 0..left.len() {
            if left[u] > 0 {
                left[u] -= 1;
                cur.push(u);
                rec(left, cur, out);
                cur.pop();
                left[u] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut lens.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// One NF placement with one execution order and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfvCandidate {
    /// BS of every NF of every user.
    pub placement: Vec<Vec<usize>>,
    /// `(user, nf)` pairs in the order they were list-scheduled.
    pub order: Vec<(usize, usize)>,
    pub exec_s: f64,
    pub makespans: Vec<f64>,
}

impl NfvCandidate {
    pub fn schedule(&self, scn: &Scenario) -> Result<NfvSchedule, NfvError> {
        let mut server_order = vec![Vec::new(); scn.num_bs()];
        for &(u, f) in &self.order {
            server_order[self.placement[u][f]].push((u, f));
        }
        NfvSchedule::from_sequences(scn, &self.placement, &server_order)
    }
}

struct NfvSpace {
    lens: Vec<usize>,
    placements: u64,
    orders: Vec<Vec<usize>>,
}

impl NfvSpace {
    fn new(scn: &Scenario) -> Result<Self, OracleError> {
        let lens: Vec<usize> = (0..scn.users.len()).map(|u| scn.service_of(u).chain.len()).collect();
        let jobs: usize = lens.iter().sum();
        let placements = (scn.num_bs() as u64).checked_pow(jobs as u32).unwrap_or(u64::MAX);
        let count = placements.saturating_mul(multinomial(&lens));
        if count > MAX_CANDIDATES {
            return Err(OracleError::TooLarge {
                count,
                limit: MAX_CANDIDATES,
            });
        }
        Ok(Self {
            orders: interleavings(&lens),
            lens,
            placements,
        })
    }

    fn count(&self) -> u64 {
        self.placements * self.orders.len() as u64
    }

    /// Placement number `index` in mixed radix over the base stations.
    fn placement(&self, scn: &Scenario, mut index: u64) -> Vec<Vec<usize>> {
        let nb = scn.num_bs() as u64;
        self.lens
            .iter()
            .map(|&len| {
                (0..len)
                    .map(|_| {
                        let n = (index % nb) as usize;
                        index /= nb;
                        n
                    })
                    .collect()
            })
            .collect()
    }

    fn exec(&self, scn: &Scenario, placement: &[Vec<usize>]) -> f64 {
        placement
            .iter()
            .enumerate()
            .flat_map(|(u, bss)| bss.iter().enumerate().map(move |(f, &n)| processing(scn, u, f, n)))
            .sum()
    }

    /// Semi-active list schedule of `placement` in interleaving `order`.
    fn simulate(&self, scn: &Scenario, placement: &[Vec<usize>], order: &[usize]) -> (Vec<(usize, usize)>, Vec<f64>) {
        let mut free = vec![0.0f64; scn.num_bs()];
        let mut next = vec![0usize; self.lens.len()];
        let mut ready: Vec<(f64, usize)> = scn.users.iter().map(|u| (0.0, u.bs)).collect();
        let mut jobs = Vec::with_capacity(order.len());
        for &u in order {
            let f = next[u];
            next[u] += 1;
            let n = placement[u][f];
            let start = (ready[u].0 + transfer(scn, u, ready[u].1, n)).max(free[n]);
            let end = start + processing(scn, u, f, n);
            free[n] = end;
            ready[u] = (end, n);
            jobs.push((u, f));
        }
        (jobs, ready.iter().map(|r| r.0).collect())
    }

    fn candidate(&self, scn: &Scenario, placement: Vec<Vec<usize>>, exec_s: f64, order: &[usize]) -> NfvCandidate {
        let (order, makespans) = self.simulate(scn, &placement, order);
        NfvCandidate {
            placement,
            order,
            exec_s,
            makespans,
        }
    }
}

fn meets(makespan: f64, deadline: f64) -> bool {
    makespan <= deadline * (1.0 + 1e-12)
}

/// Exact minimum NF execution time subject to `makespan[u] ≤ deadlines[u]`.
/// `Ok(None)` means no placement and order meets every deadline.
pub fn nfv_optimum(scn: &Scenario, deadlines: &[f64]) -> Result<Option<NfvCandidate>, OracleError> {
    let space = NfvSpace::new(scn)?;
    let mut by_cost: Vec<(f64, u64)> = (0..space.placements)
        .map(|i| (space.exec(scn, &space.placement(scn, i)), i))
        .collect();
    by_cost.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (exec, i) in by_cost {
        let placement = space.placement(scn, i);
        for order in &space.orders {
            let (_, spans) = space.simulate(scn, &placement, order);
            if spans.iter().zip(deadlines).all(|(&m, &d)| meets(m, d)) {
                return Ok(Some(space.candidate(scn, placement, exec, order)));
            }
        }
    }
    Ok(None)
}

/// Candidates not dominated in `(exec, makespan of every user)` among those
/// with every makespan strictly below `limits`.
pub fn nfv_frontier(scn: &Scenario, limits: &[f64]) -> Result<Vec<NfvCandidate>, OracleError> {
    let space = NfvSpace::new(scn)?;
    let dominates = |a: &NfvCandidate, exec: f64, spans: &[f64]| {
        a.exec_s <= exec && a.makespans.iter().zip(spans).all(|(x, y)| x <= y)
    };
    let mut front: Vec<NfvCandidate> = Vec::new();
    for i in 0..space.placements {
        let placement = space.placement(scn, i);
        let exec = space.exec(scn, &placement);
        for order in &space.orders {
            let (_, spans) = space.simulate(scn, &placement, order);
            if !spans.iter().zip(limits).all(|(m, l)| m < l) || front.iter().any(|c| dominates(c, exec, &spans)) {
                continue;
            }
            front.retain(|c| !(exec <= c.exec_s && spans.iter().zip(&c.makespans).all(|(x, y)| x <= y)));
            front.push(space.candidate(scn, placement.clone(), exec, order));
        }
    }
    Ok(front)
}

/// One link direction seen by the joint oracle.
struct Side<'a> {
    scn: &'a Scenario,
    uplink: bool,
    /// Links grouped by cell.
    cells: Vec<Vec<usize>>,
    carriers: usize,
}

impl<'a> Side<'a> {
    fn new(scn: &'a Scenario, uplink: bool) -> Self {
        let nb = scn.num_bs();
        let mut cells = vec![Vec::new(); nb];
        let carriers = if uplink {
            for u in &scn.users {
                cells[u.bs].push(u.id);
            }
            scn.config.num_ul_subcarriers
        } else {
            for o in &scn.teleoperators {
                cells[o.bs].push(o.id);
            }
            scn.config.num_dl_subcarriers
        };
        Self {
            scn,
            uplink,
            cells,
            carriers,
        }
    }

    fn one_carrier_per_link(self) -> Result<Self, OracleError> {
        for (j, links) in self.cells.iter().enumerate() {
            if !links.is_empty() && links.len() != self.carriers {
                return Err(OracleError::Unsupported(format!(
                    "BS {j} has {} {} links for {} subcarriers; the exact oracle needs one subcarrier per link",
                    links.len(),
                    if self.uplink { "uplink" } else { "downlink" },
                    self.carriers,
                )));
            }
        }
        Ok(self)
    }

    fn links(&self) -> usize {
        if self.uplink {
            self.scn.users.len()
        } else {
            self.scn.teleoperators.len()
        }
    }

    fn cell(&self, link: usize) -> usize {
        if self.uplink {
            self.scn.users[link].bs
        } else {
            self.scn.teleoperators[link].bs
        }
    }

    /// Gain from the transmitter of `from` into the receiver of `to`.
    fn gain(&self, to: usize, from: usize, k: usize) -> f64 {
        if self.uplink {
            self.scn.ul_gain.get(from, self.cell(to), k)
        } else {
            self.scn.dl_gain.get(to, self.cell(from), k)
        }
    }

    fn noise(&self) -> f64 {
        if self.uplink {
            self.scn.noise_ul_w()
        } else {
            self.scn.noise_dl_w()
        }
    }

    fn bandwidth(&self) -> f64 {
        if self.uplink {
            self.scn.config.ul_subcarrier_bandwidth_hz()
        } else {
            self.scn.config.dl_subcarrier_bandwidth_hz()
        }
    }

    fn assignment_count(&self) -> u64 {
        self.cells.iter().map(|c| factorial(c.len())).product()
    }

    /// Every assignment, as the subcarrier of each link.
    fn assignments(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![usize::MAX; self.links()]];
        for links in &self.cells {
            if links.is_empty() {
                continue;
            }
            let perms = permutations(self.carriers);
            out = out
                .into_iter()
                .flat_map(|base| {
                    perms.iter().map(move |p| {
                        let mut a = base.clone();
                        for (i, &l) in links.iter().enumerate() {
                            a[l] = p[i];
                        }
                        a
                    })
                })
                .collect();
        }
        out
    }

    /// Minimal powers for SINR targets `gamma` under `carrier`, or `None` when
    /// no non-negative solution exists or a power budget is exceeded.
    fn powers(&self, carrier: &[usize], gamma: &[f64]) -> Option<Vec<f64>> {
        let mut p = vec![0.0; self.links()];
        for k in 0..self.carriers {
            let group: Vec<usize> = (0..self.links()).filter(|&l| carrier[l] == k).collect();
            if group.is_empty() {
                continue;
            }
            let n = group.len();
            let mut m = DMatrix::<f64>::identity(n, n);
            let mut b = DVector::<f64>::zeros(n);
            for (a, &i) in group.iter().enumerate() {
                let h = self.gain(i, i, k);
                if !(h > 0.0) || !gamma[i].is_finite() {
                    return None;
                }
                b[a] = gamma[i] * self.noise() / h;
                for (c, &j) in group.iter().enumerate() {
                    if c != a {
                        m[(a, c)] = -gamma[i] * self.gain(i, j, k) / h;
                    }
                }
            }
            let x = m.lu().solve(&b)?;
            for (a, &i) in group.iter().enumerate() {
                // A positive solution exists only below the feasibility
                // boundary, where it is also the minimal one.
                if !(x[a] > 0.0) || !x[a].is_finite() {
                    return None;
                }
                p[i] = x[a];
            }
        }
        let ok = if self.uplink {
            p.iter().all(|&x| x <= self.scn.user_max_power_w())
        } else {
            self.scn.base_stations.iter().all(|bs| {
                let used: f64 = (0..self.links()).filter(|&o| self.cell(o) == bs.id).map(|o| p[o]).sum();
                used <= bs.max_power_w
            })
        };
        ok.then_some(p)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Exact joint optimum of a tiny instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOptimum {
    pub cost: CostBreakdown,
    pub allocation: Allocation,
    /// Discrete candidates examined (NF candidates × assignments).
    pub candidates: u64,
}

struct Timing {
    kappa_ul: f64,
    kappa_dl: f64,
}

/// Radio problem for fixed NF makespans and fixed assignments.
struct Radio<'s, 'a> {
    ul: &'s Side<'a>,
    dl: &'s Side<'a>,
    ul_carrier: &'s [usize],
    dl_carrier: &'s [usize],
    room: &'s [f64],
    timing: &'s Timing,
}

impl Radio<'_, '_> {
    fn gamma(side: &Side, bits: f64, time: f64) -> f64 {
        if time > 0.0 {
            (bits / (time * side.bandwidth())).exp2() - 1.0
        } else {
            f64::INFINITY
        }
    }

    /// Uplink and downlink powers for uplink shares `x` of each user's room.
    fn powers(&self, scn: &Scenario, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut g_ul = vec![0.0; self.ul.links()];
        let mut g_dl = vec![0.0; self.dl.links()];
        for u in 0..scn.users.len() {
            let bits = scn.payload_bits(u);
            g_ul[u] = Self::gamma(self.ul, bits + self.timing.kappa_ul, x[u] * self.room[u]);
            if let Some(o) = scn.paired_teleoperator(u) {
                g_dl[o] = Self::gamma(self.dl, bits + self.timing.kappa_dl, (1.0 - x[u]) * self.room[u]);
            }
        }
        Some((self.ul.powers(self.ul_carrier, &g_ul)?, self.dl.powers(self.dl_carrier, &g_dl)?))
    }

    fn objective(&self, scn: &Scenario, x: &[f64]) -> f64 {
        self.powers(scn, x)
            .map_or(f64::INFINITY, |(a, b)| a.iter().sum::<f64>() + b.iter().sum::<f64>())
    }

    /// Minimum total power over the uplink shares.
    fn optimize(&self, scn: &Scenario) -> Option<(f64, Vec<f64>)> {
        let free: Vec<usize> = (0..scn.users.len()).filter(|&u| scn.paired_teleoperator(u).is_some()).collect();
        let mut x = vec![1.0; scn.users.len()];
        // About 2000 grid points in total, between 3 and 12 per user.
        let grid = (2000f64.powf(1.0 / free.len().max(1) as f64) as usize).clamp(3, 12);
        let mut best = (f64::INFINITY, x.clone());
        let total = grid.pow(free.len() as u32);
        for mut idx in 0..total {
            for &u in &free {
                x[u] = ((idx % grid) as f64 + 0.5) / grid as f64;
                idx /= grid;
            }
            let f = self.objective(scn, &x);
            if f < best.0 {
                best = (f, x.clone());
            }
        }
        if !best.0.is_finite() {
            return None;
        }
        let (mut value, mut x) = best;
        for _ in 0..200 {
            let before = value;
            for &u in &free {
                let mut probe = x.clone();
                let mut f = |t: f64| {
                    probe[u] = t;
                    self.objective(scn, &probe)
                };
                let (t, v) = golden_section(&mut f, 0.0, 1.0);
                if v < value {
                    value = v;
                    x[u] = t;
                }
            }
            if !(before - value > 1e-14 * value) {
                break;
            }
        }
        Some((value, x))
    }
}

/// Minimizes a unimodal `f` on `(lo, hi)`.
fn golden_section(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        // Treat ties, including both infinite, by moving toward the middle.
        if fa < fb || (fa == fb && a + b > lo + hi) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    if fa < fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

/// Exact minimum-cost allocation of a tiny instance, or `Ok(None)` when the
/// instance is infeasible.
pub fn joint_optimum(scn: &Scenario) -> Result<Option<JointOptimum>, OracleError> {
    let ul = Side::new(scn, true).one_carrier_per_link()?;
    let dl = Side::new(scn, false).one_carrier_per_link()?;
    let nfv = NfvSpace::new(scn)?;
    let count = nfv
        .count()
        .saturating_mul(ul.assignment_count())
        .saturating_mul(dl.assignment_count());
    if count > MAX_CANDIDATES {
        return Err(OracleError::TooLarge {
            count,
            limit: MAX_CANDIDATES,
        });
    }
    let c = &scn.config;
    let kappa = |delta: f64, theta: f64| queue_bits(delta, theta).map_err(|e| OracleError::Unsupported(e.to_string()));
    let timing = Timing {
        kappa_ul: kappa(c.violation_prob_ul, c.qos_exponent_ul)?,
        kappa_dl: kappa(c.violation_prob_dl, c.qos_exponent_dl)?,
    };
    let caps: Vec<f64> = (0..scn.users.len()).map(|u| scn.e2e_delay_max(u)).collect();
    let front = nfv_frontier(scn, &caps)?;
    let ul_assign = ul.assignments();
    let dl_assign = dl.assignments();

    let mut best: Option<(f64, Allocation)> = None;
    for cand in &front {
        let room: Vec<f64> = caps.iter().zip(&cand.makespans).map(|(c, m)| c - m).collect();
        let exec_cost = c.cost_weight_exec * cand.exec_s * 1e3;
        if best.as_ref().is_some_and(|b| exec_cost >= b.0) {
            continue;
        }
        for ua in &ul_assign {
            for da in &dl_assign {
                let radio = Radio {
                    ul: &ul,
                    dl: &dl,
                    ul_carrier: ua,
                    dl_carrier: da,
                    room: &room,
                    timing: &timing,
                };
                let Some((power, x)) = radio.optimize(scn) else { continue };
                let total = c.cost_weight_power * power + exec_cost;
                if best.as_ref().is_some_and(|b| total >= b.0) {
                    continue;
                }
                let (p_ul, p_dl) = radio.powers(scn, &x).expect("optimum is feasible");
                let alloc = build_allocation(scn, &timing, cand, ua, da, &p_ul, &p_dl, &room, &x)?;
                best = Some((total, alloc));
            }
        }
    }
    Ok(best.map(|(_, allocation)| JointOptimum {
        cost: solver::total_cost(scn, &allocation),
        allocation,
        candidates: count,
    }))
}

#[allow(clippy::too_many_arguments)]
fn build_allocation(
    scn: &Scenario,
    timing: &Timing,
    cand: &NfvCandidate,
    ul_carrier: &[usize],
    dl_carrier: &[usize],
    p_ul: &[f64],
    p_dl: &[f64],
    room: &[f64],
    x: &[f64],
) -> Result<Allocation, OracleError> {
    let c = &scn.config;
    let mut ul = UlAllocation::empty(scn.users.len(), c.num_ul_subcarriers);
    for (u, &k) in ul_carrier.iter().enumerate() {
        ul.assign[u][k] = true;
        ul.power[u][k] = p_ul[u];
    }
    let mut dl = DlAllocation::empty(scn.teleoperators.len(), c.num_dl_subcarriers);
    for (o, &l) in dl_carrier.iter().enumerate() {
        dl.assign[o][l] = true;
        dl.power[o][l] = p_dl[o];
    }
    let delays = (0..scn.users.len())
        .map(|u| {
            let bits = scn.payload_bits(u);
            let split = |time: f64, kappa: f64| (time * bits / (bits + kappa), time * kappa / (bits + kappa));
            let (t_ul, q_ul) = split(x[u] * room[u], timing.kappa_ul);
            let (t_dl, q_dl) = if scn.paired_teleoperator(u).is_some() {
                split((1.0 - x[u]) * room[u], timing.kappa_dl)
            } else {
                (0.0, 0.0)
            };
            DelayBudget {
                t_ul,
                t_dl,
                q_ul,
                q_dl,
                nfs: cand.makespans[u],
                cap: scn.e2e_delay_max(u),
            }
        })
        .collect();
    Ok(Allocation {
        ul,
        dl,
        nfv: cand.schedule(scn)?,
        delays,
    })
}

/// Power levels tried per subcarrier by [`discrete_optimum`], spaced
/// geometrically from `p_max/100` up to `p_max`.
fn level(p_max: f64, i: usize, levels: usize) -> f64 {
    if levels == 1 {
        p_max
    } else {
        p_max * 100f64.powf(-((levels - 1 - i) as f64) / (levels - 1) as f64)
    }
}

/// One discrete power setting of a direction.
struct Setting {
    /// Link × subcarrier.
    power: Vec<Vec<f64>>,
    total: f64,
    rate_bps: Vec<f64>,
}

impl Side<'_> {
    fn max_power(&self, link: usize) -> f64 {
        if self.uplink {
            self.scn.user_max_power_w()
        } else {
            self.scn.base_stations[self.cell(link)].max_power_w
        }
    }

    fn needs_rate(&self, link: usize) -> bool {
        self.uplink || self.scn.paired_user(link).is_some()
    }

    /// Every subcarrier of an occupied cell is idle or held by one of the
    /// cell's links at one of `levels` powers.
    fn slots(&self, levels: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (j, links) in self.cells.iter().enumerate() {
            if !links.is_empty() {
                out.extend((0..self.carriers).map(|k| (j, k, 1 + links.len() * levels)));
            }
        }
        out
    }

    fn setting_count(&self, levels: usize) -> u64 {
        self.slots(levels)
            .iter()
            .fold(1u64, |acc, &(_, _, r)| acc.saturating_mul(r as u64))
    }

    /// Settings within the power budgets that give every link that needs
    /// one a positive rate.
    fn settings(&self, levels: usize) -> Vec<Setting> {
        let slots = self.slots(levels);
        let mut out = Vec::new();
        'next: for mut idx in 0..self.setting_count(levels) {
            let mut power = vec![vec![0.0; self.carriers]; self.links()];
            for &(j, k, radix) in &slots {
                let d = (idx % radix as u64) as usize;
                idx /= radix as u64;
                if d > 0 {
                    let link = self.cells[j][(d - 1) / levels];
                    power[link][k] = level(self.max_power(link), (d - 1) % levels, levels);
                }
            }
            for (j, links) in self.cells.iter().enumerate() {
                if self.uplink {
                    if links.iter().any(|&i| power[i].iter().sum::<f64>() > self.max_power(i)) {
                        continue 'next;
                    }
                } else if links.iter().map(|&i| power[i].iter().sum::<f64>()).sum::<f64>()
                    > self.scn.base_stations[j].max_power_w
                {
                    continue 'next;
                }
            }
            let mut rate_bps = vec![0.0; self.links()];
            for (i, rate) in rate_bps.iter_mut().enumerate() {
                for k in 0..self.carriers {
                    if power[i][k] > 0.0 {
                        let interference: f64 = (0..self.links())
                            .filter(|&j| j != i)
                            .map(|j| power[j][k] * self.gain(i, j, k))
                            .sum();
                        let sinr = power[i][k] * self.gain(i, i, k) / (self.noise() + interference);
                        *rate += self.bandwidth() * sinr.ln_1p() / std::f64::consts::LN_2;
                    }
                }
                if self.needs_rate(i) && !(*rate > 0.0) {
                    continue 'next;
                }
            }
            let total = power.iter().flatten().sum();
            out.push(Setting { power, total, rate_bps });
        }
        out
    }
}

fn discrete_count(scn: &Scenario, levels: usize) -> Result<u64, OracleError> {
    Ok(NfvSpace::new(scn)?
        .count()
        .saturating_mul(Side::new(scn, true).setting_count(levels))
        .saturating_mul(Side::new(scn, false).setting_count(levels)))
}

/// Minimum-cost allocation when every subcarrier power is restricted to
/// `levels` values, or `Ok(None)` when no such allocation is feasible.
/// Handles any number of subcarriers per link.
pub fn discrete_optimum(scn: &Scenario, levels: usize) -> Result<Option<JointOptimum>, OracleError> {
    if levels == 0 {
        return Err(OracleError::Unsupported("at least one power level is needed".into()));
    }
    let count = discrete_count(scn, levels)?;
    if count > MAX_CANDIDATES {
        return Err(OracleError::TooLarge {
            count,
            limit: MAX_CANDIDATES,
        });
    }
    let c = &scn.config;
    let kappa = |delta: f64, theta: f64| queue_bits(delta, theta).map_err(|e| OracleError::Unsupported(e.to_string()));
    let (kappa_ul, kappa_dl) = (
        kappa(c.violation_prob_ul, c.qos_exponent_ul)?,
        kappa(c.violation_prob_dl, c.qos_exponent_dl)?,
    );
    let caps: Vec<f64> = (0..scn.users.len()).map(|u| scn.e2e_delay_max(u)).collect();
    let mut front = nfv_frontier(scn, &caps)?;
    front.sort_by(|a, b| a.exec_s.total_cmp(&b.exec_s));
    let ul = Side::new(scn, true).settings(levels);
    let dl = Side::new(scn, false).settings(levels);

    let bounds = |a: &Setting, b: &Setting| -> Vec<[f64; 4]> {
        (0..scn.users.len())
            .map(|u| {
                let o = scn.paired_teleoperator(u);
                let r_dl = o.map_or(0.0, |o| b.rate_bps[o]);
                delay::radio_bounds(scn.payload_bits(u), kappa_ul, kappa_dl, a.rate_bps[u], r_dl, o.is_some())
            })
            .collect()
    };
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for (ia, a) in ul.iter().enumerate() {
        for (ib, b) in dl.iter().enumerate() {
            let power = c.cost_weight_power * (a.total + b.total);
            if best.is_some_and(|x| power >= x.0) {
                continue;
            }
            let bounds = bounds(a, b);
            let fits = |cand: &NfvCandidate| {
                (0..scn.users.len()).all(|u| delay::split_budget(bounds[u], cand.makespans[u], caps[u]).is_ok())
            };
            let Some(ic) = front.iter().position(fits) else { continue };
            let total = power + c.cost_weight_exec * front[ic].exec_s * 1e3;
            if best.is_none_or(|x| total < x.0) {
                best = Some((total, ia, ib, ic));
            }
        }
    }
    let Some((_, ia, ib, ic)) = best else {
        return Ok(None);
    };
    let (a, b, cand) = (&ul[ia], &dl[ib], &front[ic]);
    let assign = |p: &[Vec<f64>]| -> Vec<Vec<bool>> { p.iter().map(|r| r.iter().map(|&x| x > 0.0).collect()).collect() };
    let delays = bounds(a, b)
        .into_iter()
        .enumerate()
        .map(|(u, bd)| delay::split_budget(bd, cand.makespans[u], caps[u]).expect("checked above"))
        .collect();
    let allocation = Allocation {
        ul: UlAllocation {
            assign: assign(&a.power),
            power: a.power.clone(),
        },
        dl: DlAllocation {
            assign: assign(&b.power),
            power: b.power.clone(),
        },
        nfv: cand.schedule(scn)?,
        delays,
    };
    Ok(Some(JointOptimum {
        cost: solver::total_cost(scn, &allocation),
        allocation,
        candidates: count,
    }))
}

/// How the oracle treats transmit powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OraclePower {
    /// Continuous powers; one subcarrier per link ([`joint_optimum`]).
    Exact,
    /// This many levels per subcarrier ([`discrete_optimum`]).
    Levels(usize),
}

/// Oracle against heuristic on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub oracle_feasible: bool,
    pub oracle_cost: Option<f64>,
    /// Whether the oracle's own allocation passes the constraint audit.
    pub oracle_audit_passed: Option<bool>,
    pub heuristic_feasible: bool,
    pub heuristic_cost: Option<f64>,
    /// Heuristic cost over oracle cost when both are feasible.
    pub ratio: Option<f64>,
    pub candidates: u64,
}

/// Runs the joint heuristic and the joint oracle on `scn`.
pub fn run_oracle_comparison(scn: &Scenario, settings: &SolverSettings) -> Result<OracleComparison, OracleError> {
    run_oracle_comparison_with(scn, settings, OraclePower::Exact)
}

pub fn run_oracle_comparison_with(
    scn: &Scenario,
    settings: &SolverSettings,
    power: OraclePower,
) -> Result<OracleComparison, OracleError> {
    let oracle = match power {
        OraclePower::Exact => joint_optimum(scn)?,
        OraclePower::Levels(n) => discrete_optimum(scn, n)?,
    };
    let heuristic = solver::solve_joint(scn, settings);
    let oracle_cost = oracle.as_ref().map(|o| o.cost.total);
    let heuristic_cost = heuristic.feasible.then_some(heuristic.cost.total);
    let candidates = match (&oracle, power) {
        (Some(o), _) => o.candidates,
        (None, OraclePower::Exact) => {
            let (ul, dl) = (Side::new(scn, true), Side::new(scn, false));
            NfvSpace::new(scn)?
                .count()
                .saturating_mul(ul.assignment_count())
                .saturating_mul(dl.assignment_count())
        }
        (None, OraclePower::Levels(n)) => discrete_count(scn, n)?,
    };
    Ok(OracleComparison {
        oracle_feasible: oracle.is_some(),
        oracle_cost,
        oracle_audit_passed: oracle
            .as_ref()
            .map(|o| crate::audit::check_allocation(scn, &o.allocation, settings.audit_tolerance).all_passed()),
        heuristic_feasible: heuristic.feasible,
        heuristic_cost,
        ratio: oracle_cost.zip(heuristic_cost).map(|(o, h)| h / o),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{NfSpec, ScenarioConfig, TeleoperatorPlacement};

    fn tiny() -> Scenario {
        let mut c = ScenarioConfig {
            num_sbs: 1,
            num_ul_subcarriers: 1,
            num_dl_subcarriers: 1,
            users_per_bs_per_service: 1,
            teleoperator_placement: TeleoperatorPlacement::Home,
            ..ScenarioConfig::default()
        };
        c.services[0].chain.truncate(1);
        Scenario::generate(&c, 3).unwrap()
    }

    #[test]
    fn interleavings_are_counted_by_multinomial() {
        for lens in [vec![1, 1], vec![2, 1], vec![2, 2], vec![1, 2, 2]] {
            assert_eq!(interleavings(&lens).len() as u64, multinomial(&lens));
        }
    }

    #[test]
    fn isolated_links_need_closed_form_power() {
        let mut scn = tiny();
        for link in 0..2 {
            for bs in 0..2 {
                if scn.users[link].bs != bs {
                    scn.ul_gain.set(link, bs, 0, 0.0);
                }
                if scn.teleoperators[link].bs != bs {
                    scn.dl_gain.set(link, bs, 0, 0.0);
                }
            }
        }
        let side = Side::new(&scn, true).one_carrier_per_link().unwrap();
        let gamma = [3.0, 0.5];
        let p = side.powers(&[0, 0], &gamma).unwrap();
        for u in 0..2 {
            let h = scn.ul_gain.get(u, scn.users[u].bs, 0);
            let want = gamma[u] * scn.noise_ul_w() / h;
            assert!((p[u] - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn nfv_optimum_prefers_cheap_bs_when_deadline_allows() {
        let scn = tiny();
        let best = nfv_optimum(&scn, &[1.0, 1.0]).unwrap().unwrap();
        // Coefficient 1.0 at the MBS beats 1.5 at the SBS.
        assert!(best.placement.iter().all(|p| p == &vec![0]));
        assert!(nfv_optimum(&scn, &[1e-9, 1e-9]).unwrap().is_none());
    }

    #[test]
    fn oversized_instances_are_refused() {
        let mut c = ScenarioConfig::default();
        c.services[0].chain = (0..4)
            .map(|id| NfSpec {
                id,
                processing_coefficient_per_bs: vec![1.0],
            })
            .collect();
        let scn = Scenario::generate(&c, 1).unwrap();
        assert!(matches!(nfv_optimum(&scn, &[1.0; 25]), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn heuristic_never_beats_oracle() {
        let scn = tiny();
        let settings = SolverSettings::default();
        let cmp = run_oracle_comparison(&scn, &settings).unwrap();
        assert!(cmp.oracle_feasible);
        assert_eq!(cmp.oracle_audit_passed, Some(true));
        if let Some(r) = cmp.ratio {
            assert!(r >= 1.0 - 1e-6, "ratio {r}");
        }
    }
}
