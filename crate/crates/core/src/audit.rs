//! Independent checker for every constraint C1 to C12.
//!
//! This module recomputes rates, interference, queue bounds and NF timings
//! directly from the scenario's raw fields. It deliberately does not call the
//! radio model, the QoS helpers, the NFV scheduler or any solver code, so a
//! bug in those cannot hide itself here.

use crate::radio::{ConstraintCheck, ConstraintReport};
use crate::scenario::Scenario;
use crate::solver::Allocation;

/// Relative tolerance used by the acceptance checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

fn log2_1p(x: f64) -> f64 {
    (1.0 + x).ln() / std::f64::consts::LN_2
}

/// Uplink rate in bit/s, by direct summation.
fn ul_rate_bps(scn: &Scenario, a: &Allocation, u: usize) -> f64 {
    let c = &scn.config;
    let bw = c.ul_bandwidth_hz / c.num_ul_subcarriers as f64;
    let sigma = 10f64.powf((c.noise_psd_dbm_hz - 30.0) / 10.0) * bw;
    let j = scn.users[u].bs;
    let mut r = 0.0;
    for k in 0..c.num_ul_subcarriers {
        if !a.ul.assign[u][k] {
            continue;
        }
        let mut interference = 0.0;
        for v in &scn.users {
            if v.bs != j {
                interference += a.ul.power[v.id][k] * scn.ul_gain.values[(v.id * scn.num_bs() + j) * c.num_ul_subcarriers + k];
            }
        }
        let h = scn.ul_gain.values[(u * scn.num_bs() + j) * c.num_ul_subcarriers + k];
        r += log2_1p(a.ul.power[u][k] * h / (sigma + interference));
    }
    r * bw
}

/// Downlink rate in bit/s of teleoperator `o`.
fn dl_rate_bps(scn: &Scenario, a: &Allocation, o: usize) -> f64 {
    let c = &scn.config;
    let bw = c.dl_bandwidth_hz / c.num_dl_subcarriers as f64;
    let sigma = 10f64.powf((c.noise_psd_dbm_hz - 30.0) / 10.0) * bw;
    let m = scn.teleoperators[o].bs;
    let idx = |op: usize, bs: usize, l: usize| (op * scn.num_bs() + bs) * c.num_dl_subcarriers + l;
    let mut r = 0.0;
    for l in 0..c.num_dl_subcarriers {
        if !a.dl.assign[o][l] {
            continue;
        }
        let mut interference = 0.0;
        for p in &scn.teleoperators {
            if p.bs != m {
                interference += a.dl.power[p.id][l] * scn.dl_gain.values[idx(o, p.bs, l)];
            }
        }
        r += log2_1p(a.dl.power[o][l] * scn.dl_gain.values[idx(o, m, l)] / (sigma + interference));
    }
    r * bw
}

fn exclusivity(name: &str, assign: &[Vec<bool>], power: &[Vec<f64>], cell: &[usize], cells: usize) -> ConstraintCheck {
    let mut check = ConstraintCheck::new(name);
    let carriers = assign.first().map_or(0, Vec::len);
    let mut count = vec![vec![0usize; carriers]; cells];
    for (i, row) in assign.iter().enumerate() {
        for (k, &x) in row.iter().enumerate() {
            if x {
                count[cell[i]][k] += 1;
            }
            let p = power[i][k];
            if p < 0.0 || (!x && p != 0.0) || !p.is_finite() {
                check.record(-p.abs().max(1.0), 0.0, || format!("link {i} power {p} on subcarrier {k} (assigned {x})"));
            }
        }
    }
    for (j, row) in count.iter().enumerate() {
        for (k, &n) in row.iter().enumerate() {
            check.record(1.0 - n as f64, 0.0, || format!("subcarrier {k} at BS {j} used {n} times"));
        }
    }
    check
}

/// Relative margin `(rhs - lhs) / |rhs|` for a `lhs ≤ rhs` constraint.
fn rel(lhs: f64, rhs: f64) -> f64 {
    let scale = rhs.abs().max(lhs.abs()).max(f64::MIN_POSITIVE);
    if lhs.is_nan() || rhs.is_nan() {
        f64::NEG_INFINITY
    } else if lhs == rhs {
        0.0
    } else {
        (rhs - lhs) / scale
    }
}

/// Checks `alloc` against C1 to C12 with relative tolerance `tol` on every
/// continuous constraint. Every user must have a delay budget and a
/// scheduled chain.
pub fn check_allocation(scn: &Scenario, alloc: &Allocation, tol: f64) -> ConstraintReport {
    let c = &scn.config;
    let nb = scn.num_bs();
    let user_cells: Vec<usize> = scn.users.iter().map(|u| u.bs).collect();
    let op_cells: Vec<usize> = scn.teleoperators.iter().map(|o| o.bs).collect();

    let c1 = exclusivity("C1", &alloc.ul.assign, &alloc.ul.power, &user_cells, nb);
    let c2 = exclusivity("C2", &alloc.dl.assign, &alloc.dl.power, &op_cells, nb);

    let mut c3 = ConstraintCheck::new("C3");
    let p_user = 10f64.powf((c.max_power_user_dbm - 30.0) / 10.0);
    for u in 0..scn.users.len() {
        let total: f64 = alloc.ul.power[u].iter().sum();
        c3.record(rel(total, p_user), tol, || format!("user {u} uses {total} W of {p_user} W"));
    }
    let mut c4 = ConstraintCheck::new("C4");
    for j in 0..nb {
        let dbm = if j == 0 { c.max_power_mbs_dbm } else { c.max_power_sbs_dbm };
        let cap = 10f64.powf((dbm - 30.0) / 10.0);
        let total: f64 = (0..scn.teleoperators.len())
            .filter(|&o| op_cells[o] == j)
            .map(|o| alloc.dl.power[o].iter().sum::<f64>())
            .sum();
        c4.record(rel(total, cap), tol, || format!("BS {j} uses {total} W of {cap} W"));
    }

    // C5: every NF of every chain placed exactly once, on an existing BS.
    let mut c5 = ConstraintCheck::new("C5");
    let sched = &alloc.nfv;
    for u in 0..scn.users.len() {
        let len = c.services[scn.users[u].service].chain.len();
        for f in 0..len {
            let n = sched.jobs.iter().filter(|j| j.user == u && j.nf == f).count();
            c5.record(if n == 1 { 0.0 } else { -1.0 }, 0.0, || format!("NF {f} of user {u} placed {n} times"));
        }
    }
    for j in &sched.jobs {
        if j.bs >= nb {
            c5.record(-1.0, 0.0, || format!("NF {} of user {} on unknown BS {}", j.nf, j.user, j.bs));
        }
    }

    let kappa = |delta: f64, theta: f64| (1.0 / delta).ln() / (theta.exp() - 1.0);
    let kappa_ul = kappa(c.violation_prob_ul, c.qos_exponent_ul);
    let kappa_dl = kappa(c.violation_prob_dl, c.qos_exponent_dl);

    // C9 and server exclusivity on the stored timeline.
    let mut c9 = ConstraintCheck::new("C9");
    let proc_time = |u: usize, f: usize, n: usize| -> f64 {
        let s = &c.services[scn.users[u].service];
        let coeffs = &s.chain[f].processing_coefficient_per_bs;
        let beta = *coeffs.get(n).unwrap_or_else(|| coeffs.last().expect("non-empty"));
        beta * s.payload_bits / scn.base_stations[n].processing_rate_bps
    };
    let hop = |u: usize, a: usize, b: usize| -> f64 {
        if a == b {
            0.0
        } else {
            c.services[scn.users[u].service].payload_bits / scn.backhaul_bps[a][b]
        }
    };
    let mut by_user: Vec<Vec<(usize, usize, f64, f64)>> = vec![Vec::new(); scn.users.len()];
    for j in &sched.jobs {
        if j.bs >= nb || j.user >= scn.users.len() {
            continue;
        }
        let p = proc_time(j.user, j.nf, j.bs);
        c9.record(rel(j.start_s + p, j.end_s), tol, || {
            format!("NF {} of user {} ends before its processing completes", j.nf, j.user)
        });
        c9.record(rel(0.0, j.start_s), tol, || format!("NF {} of user {} starts before 0", j.nf, j.user));
        by_user[j.user].push((j.nf, j.bs, j.start_s, j.end_s));
    }
    for (u, jobs) in by_user.iter_mut().enumerate() {
        jobs.sort_by_key(|j| j.0);
        let mut prev_bs = scn.users[u].bs;
        let mut prev_end = 0.0;
        for &(f, bs, start, end) in jobs.iter() {
            let ready = prev_end + hop(u, prev_bs, bs);
            c9.record(rel(ready, start), tol, || format!("NF {f} of user {u} starts before its input arrives"));
            prev_bs = bs;
            prev_end = end;
        }
    }
    for n in 0..nb {
        let mut on: Vec<(f64, f64)> = sched.jobs.iter().filter(|j| j.bs == n).map(|j| (j.start_s, j.end_s)).collect();
        on.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in on.windows(2) {
            c9.record(rel(w[0].1, w[1].0), tol, || format!("overlapping NFs on BS {n}"));
        }
    }

    let mut c6 = ConstraintCheck::new("C6");
    let mut c7 = ConstraintCheck::new("C7");
    let mut c8 = ConstraintCheck::new("C8");
    let mut c10 = ConstraintCheck::new("C10");
    let mut c11 = ConstraintCheck::new("C11");
    let mut c12 = ConstraintCheck::new("C12");
    for u in 0..scn.users.len() {
        let Some(d) = alloc.delays.get(u) else {
            c6.record(-1.0, 0.0, || format!("user {u} has no delay budget"));
            continue;
        };
        let service = &c.services[scn.users[u].service];
        let bits = service.payload_bits;
        let sum = d.t_ul + d.t_dl + d.q_ul + d.q_dl + d.nfs;
        c6.record(rel(sum, service.e2e_delay_max_s), tol, || format!("user {u} budget {sum} s"));
        if [d.t_ul, d.t_dl, d.q_ul, d.q_dl, d.nfs].iter().any(|&x| !(x >= 0.0)) {
            c6.record(-1.0, 0.0, || format!("user {u} has a negative delay component"));
        }
        let r_ul = ul_rate_bps(scn, alloc, u);
        c7.record(rel(bits, d.t_ul * r_ul), tol, || format!("user {u}: {bits} bits in {} s at {r_ul} bit/s", d.t_ul));
        c11.record(rel(kappa_ul, d.q_ul * r_ul), tol, || format!("user {u}: UL queue bound"));
        let paired: Vec<usize> = scn.users[u].teleoperator.into_iter().collect();
        let r_dl: f64 = paired.iter().map(|&o| dl_rate_bps(scn, alloc, o)).sum();
        if !paired.is_empty() {
            c8.record(rel(bits, d.t_dl * r_dl), tol, || format!("user {u}: DL transmission"));
            c12.record(rel(kappa_dl, d.q_dl * r_dl), tol, || format!("user {u}: DL queue bound"));
        }
        let last = by_user[u].iter().map(|j| j.3).fold(f64::NEG_INFINITY, f64::max);
        if by_user[u].len() == service.chain.len() && last.is_finite() {
            c10.record(rel(last, d.nfs), tol, || format!("user {u}: makespan {last} s over {} s", d.nfs));
        } else {
            c10.record(-1.0, 0.0, || format!("user {u}: chain not fully scheduled"));
        }
    }
    ConstraintReport {
        checks: vec![c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12],
    }
}
