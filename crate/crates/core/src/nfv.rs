//! VNF placement and scheduling on the base station servers.
//!
//! Every base station runs one NF at a time. A user's chain is executed in its
//! fixed order; moving data between two base stations costs `C / Ψ`. The end
//! time of an NF is the later of its chain predecessor's end (plus transfer)
//! and its server predecessor's end, plus its own processing time.

use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NfvError {
    #[error("user {user} has no placed NF")]
    EmptyPlacement { user: usize },
    #[error("precedence cycle through NF {nf} of user {user}")]
    Cycle { user: usize, nf: usize },
    #[error("NF {nf} of user {user} is not scheduled")]
    Unscheduled { user: usize, nf: usize },
    #[error("deadlines missed by users {users:?}")]
    DeadlinesMissed {
        users: Vec<usize>,
        /// Schedule with the fewest misses among the orders tried.
        best_effort: Box<NfvSchedule>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledNf {
    pub user: usize,
    pub nf: usize,
    pub bs: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NfvSchedule {
    pub jobs: Vec<ScheduledNf>,
    /// Job indices of each user's chain, in chain order. Empty when the user
    /// has nothing placed.
    pub chains: Vec<Vec<usize>>,
    /// Job indices in execution order on each base station.
    pub server_order: Vec<Vec<usize>>,
    /// Elementary placement evaluations spent building the schedule.
    pub ops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    /// The whole chain of a user runs on one base station.
    #[default]
    WholeChain,
    /// Each NF independently picks the base station finishing it earliest.
    PerNf,
}

/// `β C / Ω`.
pub fn nf_processing_time(payload_bits: f64, coefficient: f64, rate_bps: f64) -> f64 {
    coefficient * payload_bits / rate_bps
}

/// `C / Ψ[n1][n2]`, or 0 when both ends are the same base station.
pub fn transfer_time(payload_bits: f64, n1: usize, n2: usize, backhaul_bps: &[Vec<f64>]) -> f64 {
    if n1 == n2 {
        0.0
    } else {
        payload_bits / backhaul_bps[n1][n2]
    }
}

fn processing(scn: &Scenario, user: usize, nf: usize, bs: usize) -> f64 {
    let service = scn.service_of(user);
    nf_processing_time(
        service.payload_bits,
        service.chain[nf].coefficient(bs),
        scn.base_stations[bs].processing_rate_bps,
    )
}

fn transfer(scn: &Scenario, user: usize, n1: usize, n2: usize) -> f64 {
    transfer_time(scn.payload_bits(user), n1, n2, &scn.backhaul_bps)
}

impl NfvSchedule {
    /// Builds a schedule from per-user placements and per-server execution
    /// orders, then computes all start and end times.
    ///
    /// `placement[u]` lists the BS of each NF of user `u` (empty when the user
    /// is not scheduled); `server_order[n]` lists `(user, nf)` pairs.
    pub fn from_sequences(
        scn: &Scenario,
        placement: &[Vec<usize>],
        server_order: &[Vec<(usize, usize)>],
    ) -> Result<Self, NfvError> {
        let mut jobs = Vec::new();
        let mut chains = vec![Vec::new(); scn.users.len()];
        for (u, bss) in placement.iter().enumerate() {
            for (f, &bs) in bss.iter().enumerate() {
                chains[u].push(jobs.len());
                jobs.push(ScheduledNf {
                    user: u,
                    nf: f,
                    bs,
                    start_s: 0.0,
                    end_s: 0.0,
                });
            }
        }
        let mut order = vec![Vec::new(); scn.num_bs()];
        for (n, seq) in server_order.iter().enumerate() {
            for &(u, f) in seq {
                let job = *chains
                    .get(u)
                    .and_then(|c| c.get(f))
                    .ok_or(NfvError::Unscheduled { user: u, nf: f })?;
                order[n].push(job);
            }
        }
        let mut schedule = NfvSchedule {
            jobs,
            chains,
            server_order: order,
            ops: 0,
        };
        schedule.recompute(scn)?;
        Ok(schedule)
    }

    /// Chain predecessor and server predecessor of a job.
    pub fn predecessors(&self, job: usize) -> (Option<usize>, Option<usize>) {
        let j = &self.jobs[job];
        let chain = (j.nf > 0).then(|| self.chains[j.user][j.nf - 1]);
        let seq = &self.server_order[j.bs];
        let server = seq
            .iter()
            .position(|&x| x == job)
            .and_then(|p| p.checked_sub(1))
            .map(|p| seq[p]);
        (chain, server)
    }

    /// Recomputes every start and end time from the precedence relation.
    pub fn recompute(&mut self, scn: &Scenario) -> Result<(), NfvError> {
        let ends = self.solve_end_times(scn)?;
        for (job, end) in ends.into_iter().enumerate() {
            let j = &mut self.jobs[job];
            j.start_s = end - processing(scn, j.user, j.nf, j.bs);
            j.end_s = end;
        }
        Ok(())
    }

    fn solve_end_times(&self, scn: &Scenario) -> Result<Vec<f64>, NfvError> {
        for (job, j) in self.jobs.iter().enumerate() {
            if !self.server_order[j.bs].contains(&job) {
                return Err(NfvError::Unscheduled { user: j.user, nf: j.nf });
            }
        }
        // None = unvisited, Some(None) = on the current path, Some(Some(t)) = done.
        let mut memo: Vec<Option<Option<f64>>> = vec![None; self.jobs.len()];
        for job in 0..self.jobs.len() {
            self.visit(scn, job, &mut memo)?;
        }
        Ok(memo.into_iter().map(|m| m.flatten().expect("resolved")).collect())
    }

    fn visit(&self, scn: &Scenario, job: usize, memo: &mut [Option<Option<f64>>]) -> Result<f64, NfvError> {
        let j = self.jobs[job];
        match memo[job] {
            Some(Some(t)) => return Ok(t),
            Some(None) => return Err(NfvError::Cycle { user: j.user, nf: j.nf }),
            None => memo[job] = Some(None),
        }
        let (chain, server) = self.predecessors(job);
        let ready = match chain {
            Some(p) => self.visit(scn, p, memo)? + transfer(scn, j.user, self.jobs[p].bs, j.bs),
            None => transfer(scn, j.user, scn.users[j.user].bs, j.bs),
        };
        let free = match server {
            Some(p) => self.visit(scn, p, memo)?,
            None => 0.0,
        };
        let end = ready.max(free) + processing(scn, j.user, j.nf, j.bs);
        memo[job] = Some(Some(end));
        Ok(end)
    }

    pub fn job(&self, user: usize, nf: usize) -> Option<&ScheduledNf> {
        self.chains.get(user)?.get(nf).map(|&j| &self.jobs[j])
    }

    pub fn is_scheduled(&self, user: usize) -> bool {
        self.chains.get(user).is_some_and(|c| !c.is_empty())
    }

    /// `(user, nf, bs)` triples ordered by execution on each base station.
    pub fn timeline(&self, bs: usize) -> Vec<ScheduledNf> {
        self.server_order[bs].iter().map(|&j| self.jobs[j]).collect()
    }
}

/// End time of NF `nf` of user `u`, evaluated from the precedence relation
/// alone (stored times are ignored).
pub fn end_time(schedule: &NfvSchedule, scn: &Scenario, u: usize, nf: usize) -> Result<f64, NfvError> {
    let job = *schedule
        .chains
        .get(u)
        .and_then(|c| c.get(nf))
        .ok_or(NfvError::Unscheduled { user: u, nf })?;
    Ok(schedule.solve_end_times(scn)?[job])
}

/// End time of the last NF of user `u`.
pub fn makespan(schedule: &NfvSchedule, u: usize) -> Result<f64, NfvError> {
    schedule
        .chains
        .get(u)
        .and_then(|c| c.last())
        .map(|&j| schedule.jobs[j].end_s)
        .ok_or(NfvError::EmptyPlacement { user: u })
}

/// Sum of the processing times of every placed NF, in seconds.
pub fn exec_cost(schedule: &NfvSchedule, scn: &Scenario) -> f64 {
    schedule
        .jobs
        .iter()
        .map(|j| processing(scn, j.user, j.nf, j.bs))
        .sum()
}

/// Processing time of user `u`'s chain if it all ran on `bs`.
pub fn chain_processing(scn: &Scenario, u: usize, bs: usize) -> f64 {
    (0..scn.service_of(u).chain.len()).map(|f| processing(scn, u, f, bs)).sum()
}

/// Schedules users in `order` greedily on an initially idle network.
fn list_schedule(scn: &Scenario, order: &[usize], policy: PlacementPolicy, ops: &mut u64) -> NfvSchedule {
    let nb = scn.num_bs();
    let mut free = vec![0.0f64; nb];
    let mut jobs = Vec::new();
    let mut chains = vec![Vec::new(); scn.users.len()];
    let mut server_order = vec![Vec::new(); nb];
    let mut push = |jobs: &mut Vec<ScheduledNf>, job: ScheduledNf| {
        chains[job.user].push(jobs.len());
        server_order[job.bs].push(jobs.len());
        jobs.push(job);
    };
    for &u in order {
        let home = scn.users[u].bs;
        let chain_len = scn.service_of(u).chain.len();
        match policy {
            PlacementPolicy::WholeChain => {
                let mut best: Option<(f64, f64, usize)> = None;
                for n in 0..nb {
                    *ops += chain_len as u64;
                    let start = transfer(scn, u, home, n).max(free[n]);
                    let work = chain_processing(scn, u, n);
                    let key = (start + work, work, n);
                    if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                        best = Some(key);
                    }
                }
                let (_, _, n) = best.expect("at least one base station");
                let mut t = transfer(scn, u, home, n).max(free[n]);
                for f in 0..chain_len {
                    let p = processing(scn, u, f, n);
                    push(&mut jobs, ScheduledNf { user: u, nf: f, bs: n, start_s: t, end_s: t + p });
                    t += p;
                }
                free[n] = t;
            }
            PlacementPolicy::PerNf => {
                let (mut prev_bs, mut prev_end) = (home, 0.0);
                for f in 0..chain_len {
                    let mut best: Option<(f64, f64, usize)> = None;
                    for n in 0..nb {
                        *ops += 1;
                        let start = (prev_end + transfer(scn, u, prev_bs, n)).max(free[n]);
                        let p = processing(scn, u, f, n);
                        if best.is_none_or(|b| (start + p, p) < (b.0, b.1)) {
                            best = Some((start + p, p, n));
                        }
                    }
                    let (end, p, n) = best.expect("at least one base station");
                    push(&mut jobs, ScheduledNf { user: u, nf: f, bs: n, start_s: end - p, end_s: end });
                    free[n] = end;
                    prev_bs = n;
                    prev_end = end;
                }
            }
        }
    }
    NfvSchedule {
        jobs,
        chains,
        server_order,
        ops: 0,
    }
}

fn meets(makespan: f64, deadline: f64) -> bool {
    makespan <= deadline * (1.0 + 1e-12)
}

/// Priority order used by the heuristics: ascending end-to-end budget, ties
/// broken by home base station and then user id.
pub fn priority_order(scn: &Scenario) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scn.users.len()).collect();
    order.sort_by(|&a, &b| {
        scn.e2e_delay_max(a)
            .total_cmp(&scn.e2e_delay_max(b))
            .then(scn.users[a].bs.cmp(&scn.users[b].bs))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy placement: users in priority order each take the base station that
/// completes their chain earliest. When a user misses its deadline it swaps
/// places with the earliest user ahead of it whose slack covers the deficit,
/// at most `U` times per user.
///
/// `deadlines[u]` bounds the makespan of user `u`; pass `f64::INFINITY` for
/// users without a bound.
pub fn schedule_heuristic(
    scn: &Scenario,
    deadlines: &[f64],
    policy: PlacementPolicy,
) -> Result<NfvSchedule, NfvError> {
    schedule_from_order(scn, priority_order(scn), deadlines, policy)
}

/// [`schedule_heuristic`] starting from an explicit priority order.
pub fn schedule_from_order(
    scn: &Scenario,
    mut order: Vec<usize>,
    deadlines: &[f64],
    policy: PlacementPolicy,
) -> Result<NfvSchedule, NfvError> {
    let n_users = order.len();
    let mut retries = vec![0usize; scn.users.len()];
    let mut ops = 0u64;
    let mut best: Option<(usize, NfvSchedule, Vec<usize>)> = None;
    loop {
        let schedule = list_schedule(scn, &order, policy, &mut ops);
        let span = |u: usize| makespan(&schedule, u).unwrap_or(f64::INFINITY);
        let missed: Vec<usize> = order.iter().copied().filter(|&u| !meets(span(u), deadlines[u])).collect();
        if best.as_ref().is_none_or(|b| missed.len() < b.0) {
            best = Some((missed.len(), schedule.clone(), missed.clone()));
        }
        if missed.is_empty() {
            break;
        }
        let mut swapped = false;
        for &v in &missed {
            if retries[v] >= n_users {
                continue;
            }
            let pos_v = order.iter().position(|&x| x == v).expect("user in order");
            let deficit = span(v) - deadlines[v];
            let partner = order[..pos_v]
                .iter()
                .position(|&w| deadlines[w] - span(w) > deficit);
            ops += pos_v as u64;
            if let Some(pos_w) = partner {
                order.swap(pos_v, pos_w);
                retries[v] += 1;
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }
    let (_, mut schedule, missed) = best.expect("at least one pass");
    schedule.ops = ops;
    if missed.is_empty() {
        Ok(schedule)
    } else {
        let mut users = missed;
        users.sort_unstable();
        Err(NfvError::DeadlinesMissed {
            users,
            best_effort: Box::new(schedule),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{NfSpec, ScenarioConfig, ServiceSpec};

    fn config(num_sbs: usize, users: usize, chain: usize) -> ScenarioConfig {
        ScenarioConfig {
            num_sbs,
            users_per_bs_per_service: users,
            processing_rate_bps: vec![1e9, 2e9],
            backhaul_capacity_bps: 1e9,
            services: vec![ServiceSpec {
                id: 0,
                e2e_delay_max_s: 1e-3,
                payload_bits: 1e6,
                chain: (0..chain)
                    .map(|id| NfSpec {
                        id,
                        processing_coefficient_per_bs: vec![1.0],
                    })
                    .collect(),
            }],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn processing_and_transfer() {
        assert!((nf_processing_time(1e6, 1.0, 1e9) - 1e-3).abs() < 1e-18);
        assert_eq!(nf_processing_time(0.0, 1.0, 1e9), 0.0);
        assert!((nf_processing_time(1000.0, 2.0, 1e9) - 2e-6).abs() < 1e-20);
        let psi = vec![vec![0.0, 1e9], vec![1e9, 0.0]];
        assert_eq!(transfer_time(1e6, 1, 1, &psi), 0.0);
        assert!((transfer_time(1e6, 0, 1, &psi) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn first_nf_on_idle_home_server() {
        let scn = Scenario::generate(&config(1, 1, 2), 1).unwrap();
        let s = NfvSchedule::from_sequences(&scn, &[vec![0, 1], vec![]], &[vec![(0, 0)], vec![(0, 1)]]).unwrap();
        assert!((end_time(&s, &scn, 0, 0).unwrap() - 1e-3).abs() < 1e-15);
        // second NF hops to BS 1: transfer 1 ms plus 0.5 ms processing.
        assert!((end_time(&s, &scn, 0, 1).unwrap() - 2.5e-3).abs() < 1e-15);
        assert!((makespan(&s, 0).unwrap() - 2.5e-3).abs() < 1e-15);
        assert!(matches!(makespan(&s, 1), Err(NfvError::EmptyPlacement { user: 1 })));
    }

    #[test]
    fn cycles_are_detected() {
        let scn = Scenario::generate(&config(1, 1, 2), 1).unwrap();
        // user 0 NF1 before NF0 on the same server contradicts the chain.
        let err = NfvSchedule::from_sequences(&scn, &[vec![0, 0], vec![]], &[vec![(0, 1), (0, 0)], vec![]]);
        assert!(matches!(err, Err(NfvError::Cycle { .. })));
    }

    #[test]
    fn picks_faster_remote_server_when_it_pays() {
        // Home BS 0 at 1e9 bit/s, BS 1 at 2e9 bit/s, transfer 1 ms each way.
        let mut cfg = config(1, 1, 1);
        cfg.backhaul_capacity_bps = 1e10;
        let scn = Scenario::generate(&cfg, 1).unwrap();
        let s = schedule_heuristic(&scn, &[f64::INFINITY; 2], PlacementPolicy::WholeChain).unwrap();
        let options = [1e-3, 1e-4 + 0.5e-3];
        let best_bs = if options[0] <= options[1] { 0 } else { 1 };
        assert_eq!(s.job(0, 0).unwrap().bs, best_bs);
        assert!((makespan(&s, 0).unwrap() - options[best_bs]).abs() < 1e-15);
    }

    #[test]
    fn sequential_server() {
        let mut cfg = config(1, 2, 2);
        cfg.processing_rate_bps = vec![1e9];
        cfg.backhaul_capacity_bps = 1e3;
        let scn = Scenario::generate(&cfg, 3).unwrap();
        let home0: Vec<usize> = scn.users.iter().filter(|u| u.bs == 0).map(|u| u.id).collect();
        let s = schedule_heuristic(&scn, &vec![f64::INFINITY; scn.users.len()], PlacementPolicy::WholeChain).unwrap();
        let (a, b) = (home0[0], home0[1]);
        assert!(s.job(b, 0).unwrap().start_s >= s.job(a, 1).unwrap().end_s - 1e-15);
    }

    #[test]
    fn recompute_matches_stored_times() {
        let cfg = config(2, 3, 2);
        let scn = Scenario::generate(&cfg, 5).unwrap();
        for policy in [PlacementPolicy::WholeChain, PlacementPolicy::PerNf] {
            let s = schedule_heuristic(&scn, &vec![f64::INFINITY; scn.users.len()], policy).unwrap();
            for u in 0..scn.users.len() {
                for f in 0..2 {
                    let stored = s.job(u, f).unwrap().end_s;
                    assert!((end_time(&s, &scn, u, f).unwrap() - stored).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn exec_cost_recount() {
        let scn = Scenario::generate(&config(1, 1, 1), 1).unwrap();
        let s = NfvSchedule::from_sequences(&scn, &[vec![0], vec![]], &[vec![(0, 0)], vec![]]).unwrap();
        assert!((exec_cost(&s, &scn) - 1e-3).abs() < 1e-18);
        assert_eq!(exec_cost(&NfvSchedule::default(), &scn), 0.0);
    }

    #[test]
    fn impossible_deadline_reports_users() {
        let scn = Scenario::generate(&config(1, 1, 1), 1).unwrap();
        match schedule_heuristic(&scn, &[1e-9, f64::INFINITY], PlacementPolicy::WholeChain) {
            Err(NfvError::DeadlinesMissed { users, best_effort }) => {
                assert_eq!(users, vec![0]);
                assert!(best_effort.is_scheduled(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
