use tactile_ra::experiment::{self, Axis, Format, ModeSel, SweepSpec, SweepTable, CSV_HEADER};
use tactile_ra::scenario::{ScenarioConfig, TeleoperatorPlacement};

fn small() -> ScenarioConfig {
    ScenarioConfig {
        num_sbs: 1,
        users_per_bs_per_service: 2,
        num_ul_subcarriers: 4,
        num_dl_subcarriers: 8,
        teleoperator_placement: TeleoperatorPlacement::Home,
        ..ScenarioConfig::default()
    }
}

fn sweep(values: Vec<f64>, mode: ModeSel, seeds: Vec<u64>) -> SweepTable {
    experiment::run_sweep(&small(), &SweepSpec::new(Axis::E2eDelay, values, mode, seeds)).unwrap()
}

#[test]
fn one_point_gives_one_row_per_mode() {
    assert_eq!(sweep(vec![2.0], ModeSel::Ja, vec![0]).records.len(), 1);
    let both = sweep(vec![2.0], ModeSel::Both, vec![0]);
    let modes: Vec<&str> = both.rows().map(|r| r.mode.as_str()).collect();
    assert_eq!(modes, ["ja", "sa"]);
}

#[test]
fn rows_are_ordered_and_costs_add_up() {
    let t = sweep(vec![5.0, 2.0], ModeSel::Both, vec![3, 1]);
    let keys: Vec<(f64, &str, u64)> = t.rows().map(|r| (r.axis, r.mode.as_str(), r.seed)).collect();
    assert_eq!(
        keys,
        [
            (2.0, "ja", 1),
            (2.0, "ja", 3),
            (2.0, "sa", 1),
            (2.0, "sa", 3),
            (5.0, "ja", 1),
            (5.0, "ja", 3),
            (5.0, "sa", 1),
            (5.0, "sa", 3)
        ]
    );
    for r in t.rows() {
        assert!((r.power_cost + r.exec_cost - r.cost).abs() <= 1e-9 * r.cost.abs());
        assert_eq!(r.wall_ms, 0.0);
    }
}

#[test]
fn empty_table_is_header_only() {
    let t = SweepTable {
        axis: Axis::NumBs,
        records: Vec::new(),
    };
    let text = experiment::emit_to_string(&t, Format::Table).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn one_row_is_two_lines_and_parses_back() {
    let t = sweep(vec![2.0], ModeSel::Ja, vec![0]);
    let text = experiment::emit_to_string(&t, Format::Table).unwrap();
    assert_eq!(text.lines().count(), 2);
    let rows = experiment::parse_table(&text).unwrap();
    assert_eq!(rows, t.rows().cloned().collect::<Vec<_>>());
}

#[test]
fn structured_output_round_trips() {
    let t = sweep(vec![1.0, 2.0], ModeSel::Both, vec![0]);
    let text = experiment::emit_to_string(&t, Format::Structured).unwrap();
    assert_eq!(experiment::parse_structured(&text).unwrap(), t);
}

#[test]
fn infeasible_points_are_recorded_not_fatal() {
    // A 0.4 ms budget leaves nothing once the 0.5 ms carve-out is taken.
    let t = sweep(vec![0.4], ModeSel::Sa, vec![0, 1]);
    assert_eq!(t.records.len(), 2);
    assert!(t.rows().all(|r| !r.feasible));
}

#[test]
fn bad_axis_values_abort_before_solving() {
    let spec = SweepSpec::new(Axis::UsersPerBs, vec![2.0, 0.0], ModeSel::Ja, vec![0]);
    assert!(experiment::run_sweep(&small(), &spec).is_err());
    let spec = SweepSpec::new(Axis::UsersPerBs, vec![], ModeSel::Ja, vec![0]);
    assert!(experiment::run_sweep(&small(), &spec).is_err());
}

#[test]
fn subcarrier_counters_grow_with_users() {
    let spec = SweepSpec::new(Axis::UsersPerBs, vec![1.0, 2.0, 3.0], ModeSel::Ja, vec![0]);
    let t = experiment::run_sweep(&small(), &spec).unwrap();
    let per_iter: Vec<f64> = t
        .records
        .iter()
        .map(|r| r.trace.counters.subcarrier_ops as f64)
        .collect();
    assert!(per_iter.windows(2).all(|w| w[1] > w[0]), "{per_iter:?}");
}
