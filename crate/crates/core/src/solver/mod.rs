//! Alternating minimization over subcarriers, powers, NF placement and the
//! delay split.
//!
//! Each outer iteration runs four stages in order: subcarrier assignment,
//! power allocation by SCA, NF placement and scheduling, and delay
//! adjustment. The loop stops when neither the uplink nor the downlink power
//! vector moves by more than `eps_threshold` (Euclidean norm), or after
//! `max_outer_iters` iterations. The best allocation that passes the
//! independent constraint audit is returned.

pub mod convex;
pub mod delay;
pub mod power;
pub mod subcarrier;

use serde::{Deserialize, Serialize};

use crate::audit;
use crate::nfv::{self, NfvError, NfvSchedule, PlacementPolicy};
use crate::qos::{self, DelayBudget};
use crate::radio::{ConstraintReport, DlAllocation, UlAllocation};
use crate::scenario::Scenario;

use self::convex::SubsolverSettings;
use self::delay::LinkModel;
use self::power::{LinkView, PowerSettings};
use self::subcarrier::KeyPowers;

/// The full decision state of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub ul: UlAllocation,
    pub dl: DlAllocation,
    pub nfv: NfvSchedule,
    pub delays: Vec<DelayBudget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Stopping threshold on the change of each stacked power vector, in W.
    pub eps_threshold: f64,
    pub max_outer_iters: usize,
    pub sca_max_iters: usize,
    /// Relative decrease of the power sum below which SCA stops.
    pub sca_tolerance: f64,
    /// Share of each power budget used for the initial uniform powers.
    pub initial_power_fraction: f64,
    pub nfv_policy: PlacementPolicy,
    pub subsolver: SubsolverSettings,
    /// Relative tolerance of the final constraint audit.
    pub audit_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_threshold: 1e-4,
            max_outer_iters: 100,
            sca_max_iters: 30,
            sca_tolerance: 1e-7,
            initial_power_fraction: 0.5,
            nfv_policy: PlacementPolicy::WholeChain,
            subsolver: SubsolverSettings::default(),
            audit_tolerance: audit::DEFAULT_TOLERANCE,
        }
    }
}

impl SolverSettings {
    fn power(&self) -> PowerSettings {
        PowerSettings {
            max_iterations: self.sca_max_iters,
            tolerance: self.sca_tolerance,
            initial_fraction: self.initial_power_fraction,
            subsolver: self.subsolver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    /// Radio and NF resources decided together.
    Joint,
    /// NF execution delay pinned to a fixed carve-out of the budget.
    Separate { nfv_delay_s: f64 },
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Joint => "ja",
            Mode::Separate { .. } => "sa",
        }
    }
}

/// Operation counts per stage, summed over all outer iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub subcarrier_ops: u64,
    pub sca_iterations: u64,
    pub newton_steps: u64,
    pub nfv_ops: u64,
    pub delay_constraints: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Weighted power term.
    pub power_cost: f64,
    /// Weighted NF execution term.
    pub exec_cost: f64,
    pub power_w: f64,
    pub exec_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub feasible: bool,
    pub cost: CostBreakdown,
    /// Best feasible allocation, or the last one attempted when none was.
    pub allocation: Option<Allocation>,
    /// Cost of the allocation produced by every outer iteration.
    pub cost_trace: Vec<f64>,
    /// Power-sum trace of every SCA run, uplink and downlink separately.
    pub sca_traces: Vec<Vec<f64>>,
    pub constraint_report: ConstraintReport,
    pub counters: Counters,
    pub outer_iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
    pub diagnostics: Vec<String>,
}

/// `ϱ1·(total power in W) + ϱ2·(total NF execution time in ms)`.
pub fn total_cost(scn: &Scenario, alloc: &Allocation) -> CostBreakdown {
    let power_w = alloc.ul.total_power() + alloc.dl.total_power();
    let exec_ms = nfv::exec_cost(&alloc.nfv, scn) * 1e3;
    let power_cost = scn.config.cost_weight_power * power_w;
    let exec_cost = scn.config.cost_weight_exec * exec_ms;
    CostBreakdown {
        total: power_cost + exec_cost,
        power_cost,
        exec_cost,
        power_w,
        exec_ms,
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }
    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Self
    }
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

/// Joint allocation.
pub fn solve_joint(scn: &Scenario, settings: &SolverSettings) -> RunResult {
    run(scn, settings, Mode::Joint)
}

/// Separate allocation: radio resources with the NF delay pinned to
/// `fixed_nfv_delay`, then NF placement against that same carve-out.
pub fn solve_separate(scn: &Scenario, settings: &SolverSettings, fixed_nfv_delay: f64) -> RunResult {
    run(scn, settings, Mode::Separate { nfv_delay_s: fixed_nfv_delay })
}

pub fn solve(scn: &Scenario, settings: &SolverSettings, mode: Mode) -> RunResult {
    run(scn, settings, mode)
}

fn euclidean_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

struct Rates {
    ul_bps: Vec<f64>,
    dl_bps: Vec<f64>,
}

fn rates(scn: &Scenario, ul: &UlAllocation, dl: &DlAllocation) -> Rates {
    let upv = LinkView::uplink(scn);
    let dnv = LinkView::downlink(scn);
    Rates {
        ul_bps: (0..scn.users.len())
            .map(|u| upv.rate(&ul.assign, &ul.power, u) * upv.bandwidth_hz())
            .collect(),
        dl_bps: (0..scn.teleoperators.len())
            .map(|o| dnv.rate(&dl.assign, &dl.power, o) * dnv.bandwidth_hz())
            .collect(),
    }
}

struct Kappa {
    ul: f64,
    dl: f64,
}

fn kappa(scn: &Scenario) -> Kappa {
    let c = &scn.config;
    Kappa {
        ul: qos::queue_bits(c.violation_prob_ul, c.qos_exponent_ul).expect("validated config"),
        dl: qos::queue_bits(c.violation_prob_dl, c.qos_exponent_dl).expect("validated config"),
    }
}

fn bounds_for(scn: &Scenario, k: &Kappa, r: &Rates, u: usize) -> [f64; 4] {
    let paired = scn.paired_teleoperator(u);
    delay::radio_bounds(
        scn.payload_bits(u),
        k.ul,
        k.dl,
        r.ul_bps[u],
        paired.map_or(0.0, |o| r.dl_bps[o]),
        paired.is_some(),
    )
}

/// Rate floors in bit/s/Hz implied by a delay budget.
fn floors(scn: &Scenario, k: &Kappa, delays: &[DelayBudget]) -> (Vec<f64>, Vec<f64>) {
    let w_ul = scn.config.ul_subcarrier_bandwidth_hz();
    let w_dl = scn.config.dl_subcarrier_bandwidth_hz();
    let mut ul = vec![0.0; scn.users.len()];
    let mut dl = vec![0.0; scn.teleoperators.len()];
    for (u, d) in delays.iter().enumerate() {
        let bits = scn.payload_bits(u);
        ul[u] = (bits / d.t_ul).max(k.ul / d.q_ul) / w_ul;
        if let Some(o) = scn.paired_teleoperator(u) {
            dl[o] = (bits / d.t_dl).max(k.dl / d.q_dl) / w_dl;
        }
    }
    (ul, dl)
}

fn uniform_powers(scn: &Scenario, ul_assign: &[Vec<bool>], dl_assign: &[Vec<bool>], fraction: f64) -> (UlAllocation, DlAllocation) {
    let mut ul = UlAllocation {
        assign: ul_assign.to_vec(),
        power: vec![vec![0.0; scn.config.num_ul_subcarriers]; scn.users.len()],
    };
    for u in 0..scn.users.len() {
        let n = ul.assign[u].iter().filter(|&&a| a).count();
        for k in 0..scn.config.num_ul_subcarriers {
            if ul.assign[u][k] {
                ul.power[u][k] = fraction * scn.user_max_power_w() / n as f64;
            }
        }
    }
    let mut dl = DlAllocation {
        assign: dl_assign.to_vec(),
        power: vec![vec![0.0; scn.config.num_dl_subcarriers]; scn.teleoperators.len()],
    };
    for bs in &scn.base_stations {
        let slots: Vec<(usize, usize)> = scn
            .teleoperators
            .iter()
            .filter(|o| o.bs == bs.id)
            .flat_map(|o| (0..scn.config.num_dl_subcarriers).filter(|&l| dl_assign[o.id][l]).map(move |l| (o.id, l)))
            .collect();
        for &(o, l) in &slots {
            dl.power[o][l] = fraction * bs.max_power_w / slots.len() as f64;
        }
    }
    (ul, dl)
}

/// Power models of user `u`'s uplink and of its teleoperator's downlink, with
/// interference frozen at the given powers.
fn link_models(scn: &Scenario, k: &Kappa, ul: &UlAllocation, dl: &DlAllocation, u: usize) -> (LinkModel, Option<LinkModel>) {
    let model = |view: &LinkView, assign: &[Vec<bool>], power: &[Vec<f64>], link: usize, cap_w: f64, kappa: f64| LinkModel {
        gains: (0..view.carriers())
            .filter(|&c| assign[link][c])
            .map(|c| view.direct_gain(link, c) / (view.noise() + view.interference(power, link, c)))
            .collect(),
        bandwidth_hz: view.bandwidth_hz(),
        cap_w,
        kappa,
    };
    let up = model(&LinkView::uplink(scn), &ul.assign, &ul.power, u, scn.user_max_power_w(), k.ul);
    let down = scn.paired_teleoperator(u).map(|o| {
        let bs = scn.teleoperators[o].bs;
        let sharing = scn.teleoperators.iter().filter(|t| t.bs == bs).count().max(1);
        let cap = scn.base_stations[bs].max_power_w / sharing as f64;
        model(&LinkView::downlink(scn), &dl.assign, &dl.power, o, cap, k.dl)
    });
    (up, down)
}

/// Delay budget the next power stage aims for.
fn target_split(scn: &Scenario, k: &Kappa, ul: &UlAllocation, dl: &DlAllocation, u: usize, nfs: f64) -> Option<DelayBudget> {
    let (up, down) = link_models(scn, k, ul, dl, u);
    delay::model_split(scn.payload_bits(u), &up, down.as_ref(), nfs, scn.e2e_delay_max(u))
}

/// NF stage: JA schedules against the budget left after the radio delays,
/// SA against the fixed carve-out.
fn schedule_nfs(
    scn: &Scenario,
    mode: Mode,
    radio: &[f64],
    order: &[usize],
    policy: PlacementPolicy,
) -> (NfvSchedule, Vec<usize>) {
    let deadlines: Vec<f64> = (0..scn.users.len())
        .map(|u| match mode {
            Mode::Joint => scn.e2e_delay_max(u) - radio[u],
            Mode::Separate { nfv_delay_s } => nfv_delay_s,
        })
        .collect();
    match nfv::schedule_from_order(scn, order.to_vec(), &deadlines, policy) {
        Ok(s) => (s, Vec::new()),
        Err(NfvError::DeadlinesMissed { users, best_effort }) => (*best_effort, users),
        Err(e) => unreachable!("list scheduling cannot fail with {e}"),
    }
}

fn makespans(scn: &Scenario, schedule: &NfvSchedule) -> Vec<f64> {
    (0..scn.users.len())
        .map(|u| nfv::makespan(schedule, u).unwrap_or(f64::INFINITY))
        .collect()
}

/// Moves `user` one place ahead of the previous user of the same cell.
fn boost(scn: &Scenario, order: &mut [usize], user: usize) -> bool {
    let pos = order.iter().position(|&x| x == user).expect("user in order");
    let home = scn.users[user].bs;
    if let Some(prev) = order[..pos].iter().rposition(|&w| scn.users[w].bs == home) {
        order.swap(prev, pos);
        true
    } else {
        false
    }
}

fn run(scn: &Scenario, settings: &SolverSettings, mode: Mode) -> RunResult {
    let clock = Clock::start();
    let mut result = RunResult {
        mode,
        feasible: false,
        cost: CostBreakdown::default(),
        allocation: None,
        cost_trace: Vec::new(),
        sca_traces: Vec::new(),
        constraint_report: ConstraintReport::default(),
        counters: Counters::default(),
        outer_iterations: 0,
        converged: false,
        wall_ms: 0.0,
        diagnostics: Vec::new(),
    };
    let n = scn.users.len();
    if let Mode::Separate { nfv_delay_s } = mode {
        let min_cap = (0..n).map(|u| scn.e2e_delay_max(u)).fold(f64::INFINITY, f64::min);
        if !(nfv_delay_s > 0.0 && nfv_delay_s < min_cap) {
            result
                .diagnostics
                .push(format!("NF carve-out {nfv_delay_s} s must lie in (0, {min_cap}) s"));
            result.wall_ms = clock.elapsed_ms();
            return result;
        }
    }
    let k = kappa(scn);
    let keys = KeyPowers::uniform(scn, settings.initial_power_fraction);
    let mut order = nfv::priority_order(scn);

    // NF delays charged in the first subcarrier pass.
    let (first_schedule, _) = schedule_nfs(scn, Mode::Joint, &vec![0.0; n], &order, settings.nfv_policy);
    result.counters.nfv_ops += first_schedule.ops;
    let mut nfs: Vec<f64> = match mode {
        Mode::Joint => makespans(scn, &first_schedule),
        Mode::Separate { nfv_delay_s } => vec![nfv_delay_s; n],
    };

    let mut sub = subcarrier::allocate_subcarriers(scn, &keys, &order, &nfs);
    result.counters.subcarrier_ops += sub.ops;
    order = sub.order.clone();

    let (ul0, dl0) = uniform_powers(scn, &sub.ul_assign, &sub.dl_assign, settings.initial_power_fraction);
    let mut targets = Vec::with_capacity(n);
    for u in 0..n {
        match target_split(scn, &k, &ul0, &dl0, u, nfs[u]) {
            Some(d) => targets.push(d),
            None => {
                result
                    .diagnostics
                    .push(format!("user {u}: no room for radio delays (NF delay {:e} s)", nfs[u]));
                result.wall_ms = clock.elapsed_ms();
                return result;
            }
        }
    }
    let mut delays = targets.clone();

    let power_settings = settings.power();
    let mut prev: Option<(UlAllocation, DlAllocation)> = None;
    let mut boosted = vec![false; n];
    let mut best: Option<(f64, Allocation, ConstraintReport)> = None;
    let mut last: Option<(Allocation, ConstraintReport)> = None;
    let mut reassign = false;

    for z in 1..=settings.max_outer_iters {
        result.outer_iterations = z;
        if reassign {
            sub = subcarrier::allocate_subcarriers(scn, &keys, &order, &nfs);
            result.counters.subcarrier_ops += sub.ops;
            order = sub.order.clone();
            reassign = false;
        }

        let (ul_floor, dl_floor) = floors(scn, &k, &targets);
        let same_assign = prev
            .as_ref()
            .is_some_and(|(u, d)| u.assign == sub.ul_assign && d.assign == sub.dl_assign);
        let warm_ul = prev.as_ref().filter(|_| same_assign).map(|(u, _)| u.power.clone());
        let warm_dl = prev.as_ref().filter(|_| same_assign).map(|(_, d)| d.power.clone());
        let ul_sol = power::solve_link_powers(
            &LinkView::uplink(scn),
            &sub.ul_assign,
            &ul_floor,
            warm_ul.as_deref(),
            &power_settings,
        );
        let dl_sol = power::solve_link_powers(
            &LinkView::downlink(scn),
            &sub.dl_assign,
            &dl_floor,
            warm_dl.as_deref(),
            &power_settings,
        );
        let (ul_sol, dl_sol) = match (ul_sol, dl_sol) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                result.diagnostics.push(format!("iteration {z}: power stage infeasible: {e}"));
                let power::PowerError::Infeasible { dir, link, .. } = &e;
                let user = match dir {
                    power::Direction::Uplink => Some(*link),
                    power::Direction::Downlink => scn.paired_user(*link),
                };
                // Retry once with the struggling user served earlier.
                if let Some(u) = user.filter(|&u| !boosted[u]) {
                    boosted[u] = true;
                    if boost(scn, &mut order, u) {
                        reassign = true;
                        prev = None;
                        continue;
                    }
                }
                break;
            }
        };
        for sol in [&ul_sol, &dl_sol] {
            result.counters.sca_iterations += sol.iterations as u64;
            result.counters.newton_steps += sol.newton_steps as u64;
            result.sca_traces.push(sol.trace.clone());
        }
        let ul = UlAllocation {
            assign: sub.ul_assign.clone(),
            power: ul_sol.power,
        };
        let dl = DlAllocation {
            assign: sub.dl_assign.clone(),
            power: dl_sol.power,
        };

        let r = rates(scn, &ul, &dl);
        let bounds: Vec<[f64; 4]> = (0..n).map(|u| bounds_for(scn, &k, &r, u)).collect();
        let radio: Vec<f64> = bounds.iter().map(|b| b.iter().sum()).collect();
        let (schedule, missed) = schedule_nfs(scn, mode, &radio, &order, settings.nfv_policy);
        result.counters.nfv_ops += schedule.ops;
        if !missed.is_empty() {
            result
                .diagnostics
                .push(format!("iteration {z}: NF deadlines missed by users {missed:?}"));
        }
        let spans = makespans(scn, &schedule);
        nfs = match mode {
            Mode::Joint => spans.clone(),
            Mode::Separate { nfv_delay_s } => vec![nfv_delay_s; n],
        };

        let mut next = Vec::with_capacity(n);
        let mut delay_failed = Vec::new();
        for u in 0..n {
            result.counters.delay_constraints += 6;
            match delay::split_budget(bounds[u], nfs[u], scn.e2e_delay_max(u)) {
                Ok(d) => next.push(d),
                Err(e) => {
                    delay_failed.push(u);
                    result.diagnostics.push(format!("iteration {z}: user {u}: {e}"));
                    next.push(delays[u]);
                }
            }
        }

        let alloc = Allocation {
            ul: ul.clone(),
            dl: dl.clone(),
            nfv: schedule,
            delays: next.clone(),
        };
        let report = audit::check_allocation(scn, &alloc, settings.audit_tolerance);
        let cost = total_cost(scn, &alloc);
        result.cost_trace.push(cost.total);
        if report.all_passed() && best.as_ref().is_none_or(|b| cost.total < b.0) {
            best = Some((cost.total, alloc.clone(), report.clone()));
        }
        last = Some((alloc, report));
        for u in 0..n {
            if let Some(t) = target_split(scn, &k, &ul, &dl, u, nfs[u]) {
                targets[u] = t;
            }
        }
        delays = next;

        let mut retry = false;
        for &u in &delay_failed {
            if !boosted[u] {
                boosted[u] = true;
                retry |= boost(scn, &mut order, u);
            }
        }
        if retry {
            reassign = true;
        }

        let moved = prev
            .as_ref()
            .map(|(pu, pd)| (euclidean_change(&pu.power, &ul.power), euclidean_change(&pd.power, &dl.power)));
        prev = Some((ul, dl));
        if let Some((du, dd)) = moved {
            if !retry && du <= settings.eps_threshold && dd <= settings.eps_threshold {
                result.converged = true;
                break;
            }
        }
    }

    match best {
        Some((_, alloc, report)) => {
            result.feasible = true;
            result.cost = total_cost(scn, &alloc);
            result.allocation = Some(alloc);
            result.constraint_report = report;
        }
        None => {
            if let Some((alloc, report)) = last {
                result.cost = total_cost(scn, &alloc);
                result.allocation = Some(alloc);
                result.constraint_report = report;
            }
            result.diagnostics.push("no allocation passed the constraint audit".into());
        }
    }
    result.wall_ms = clock.elapsed_ms();
    result
}
