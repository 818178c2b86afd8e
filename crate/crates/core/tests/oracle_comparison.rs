use tactile_ra::oracle::{self, OracleError, OraclePower};
use tactile_ra::scenario::{Scenario, ScenarioConfig, TeleoperatorPlacement};
use tactile_ra::SolverSettings;

fn config(num_sbs: usize, users: usize, carriers: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        num_sbs,
        users_per_bs_per_service: users,
        num_ul_subcarriers: carriers,
        num_dl_subcarriers: carriers,
        teleoperator_placement: TeleoperatorPlacement::Home,
        ..ScenarioConfig::default()
    };
    c.services[0].chain.truncate(1);
    c
}

/// Removes every cross-cell gain so each link sees only noise.
fn isolate(scn: &mut Scenario) {
    for u in 0..scn.users.len() {
        for bs in 0..scn.num_bs() {
            for k in 0..scn.config.num_ul_subcarriers {
                if scn.users[u].bs != bs {
                    scn.ul_gain.set(u, bs, k, 0.0);
                }
            }
            for l in 0..scn.config.num_dl_subcarriers {
                if scn.teleoperators[u].bs != bs {
                    scn.dl_gain.set(u, bs, l, 0.0);
                }
            }
        }
    }
}

/// Minimizes a convex function on (0, 1) by ternary search.
fn ternary(f: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    for _ in 0..300 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f((lo + hi) / 2.0)
}

#[test]
fn isolated_links_match_closed_form_optimum() {
    let mut scn = Scenario::generate(&config(1, 1, 1), 11).unwrap();
    isolate(&mut scn);
    let best = oracle::joint_optimum(&scn).unwrap().expect("feasible");

    // Independent optimum: both users are decoupled, so each picks its own
    // uplink share, and every NF placement/order is enumerated directly.
    let c = &scn.config;
    let noise = |bw: f64| 10f64.powf((c.noise_psd_dbm_hz - 30.0) / 10.0) * bw;
    let (w_ul, w_dl) = (c.ul_bandwidth_hz, c.dl_bandwidth_hz);
    let kappa = |d: f64, th: f64| -d.ln() / th.exp_m1();
    let (k_ul, k_dl) = (kappa(c.violation_prob_ul, c.qos_exponent_ul), kappa(c.violation_prob_dl, c.qos_exponent_dl));
    let bits = c.services[0].payload_bits;
    let cap = c.services[0].e2e_delay_max_s;
    let user_power = |u: usize, room: f64| {
        let h = scn.ul_gain.get(u, scn.users[u].bs, 0);
        let g = scn.dl_gain.get(u, scn.teleoperators[u].bs, 0);
        ternary(|x| {
            let p_ul = (((bits + k_ul) / (x * room * w_ul)).exp2() - 1.0) * noise(w_ul) / h;
            let p_dl = (((bits + k_dl) / ((1.0 - x) * room * w_dl)).exp2() - 1.0) * noise(w_dl) / g;
            p_ul + p_dl
        })
    };
    let proc_time = |bs: usize| c.services[0].chain[0].coefficient(bs) * bits / scn.base_stations[bs].processing_rate_bps;
    let hop = |a: usize, b: usize| if a == b { 0.0 } else { bits / scn.backhaul_bps[a][b] };
    let mut want = f64::INFINITY;
    for n0 in 0..2 {
        for n1 in 0..2 {
            let ready = [hop(scn.users[0].bs, n0), hop(scn.users[1].bs, n1)];
            let p = [proc_time(n0), proc_time(n1)];
            let orders: Vec<[f64; 2]> = if n0 == n1 {
                vec![
                    [ready[0] + p[0], (ready[0] + p[0]).max(ready[1]) + p[1]],
                    [(ready[1] + p[1]).max(ready[0]) + p[0], ready[1] + p[1]],
                ]
            } else {
                vec![[ready[0] + p[0], ready[1] + p[1]]]
            };
            for m in orders {
                let power = user_power(0, cap - m[0]) + user_power(1, cap - m[1]);
                let total = c.cost_weight_power * power + c.cost_weight_exec * (p[0] + p[1]) * 1e3;
                want = want.min(total);
            }
        }
    }
    assert!(
        (best.cost.total - want).abs() <= 1e-6 * want,
        "oracle {} vs closed form {want}",
        best.cost.total
    );
}

#[test]
fn infeasible_instance_is_infeasible_for_both() {
    let mut c = config(1, 1, 1);
    // Shorter than any NF processing time.
    c.set_e2e_delay(1e-7);
    let scn = Scenario::generate(&c, 2).unwrap();
    let r = oracle::run_oracle_comparison(&scn, &SolverSettings::default()).unwrap();
    assert!(!r.oracle_feasible);
    assert!(!r.heuristic_feasible);
    assert_eq!(r.ratio, None);
}

#[test]
fn heuristic_never_beats_the_oracle() {
    for (num_sbs, users, carriers) in [(1, 2, 2), (2, 1, 1)] {
        for seed in 0..4 {
            let scn = Scenario::generate(&config(num_sbs, users, carriers), seed).unwrap();
            let r = oracle::run_oracle_comparison(&scn, &SolverSettings::default()).unwrap();
            assert!(r.oracle_feasible, "seed {seed}");
            assert_eq!(r.oracle_audit_passed, Some(true), "seed {seed}");
            if let Some(ratio) = r.ratio {
                assert!(ratio >= 1.0 - 1e-6, "J={num_sbs} U={users} seed {seed}: ratio {ratio}");
            }
        }
    }
}

#[test]
fn unsupported_shapes_are_refused() {
    // Two users on three subcarriers per cell.
    let scn = Scenario::generate(&config(1, 2, 3), 0).unwrap();
    assert!(matches!(oracle::joint_optimum(&scn), Err(OracleError::Unsupported(_))));
}

#[test]
fn heuristic_is_close_to_three_level_oracle() {
    // Two cells, one user each, two subcarriers per direction.
    for seed in 0..10 {
        let scn = Scenario::generate(&config(1, 1, 2), seed).unwrap();
        let r = oracle::run_oracle_comparison_with(&scn, &SolverSettings::default(), OraclePower::Levels(3)).unwrap();
        if !r.oracle_feasible {
            continue;
        }
        assert_eq!(r.oracle_audit_passed, Some(true), "seed {seed}");
        assert!(r.heuristic_feasible, "seed {seed}");
        let ratio = r.ratio.unwrap();
        assert!(ratio <= 1.5, "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn power_levels_never_beat_exact_powers() {
    for seed in 0..3 {
        let scn = Scenario::generate(&config(1, 1, 1), seed).unwrap();
        let exact = oracle::joint_optimum(&scn).unwrap().expect("feasible").cost.total;
        let mut prev = f64::INFINITY;
        for levels in [2, 4, 8] {
            let Some(d) = oracle::discrete_optimum(&scn, levels).unwrap() else { continue };
            assert!(d.cost.total >= exact * (1.0 - 1e-9), "seed {seed}, {levels} levels");
            prev = prev.min(d.cost.total);
        }
        assert!(prev.is_finite(), "seed {seed}: no level grid was feasible");
    }
}
