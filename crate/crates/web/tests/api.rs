use serde_json::Value;
use tactile_ra_web::api;

#[test]
fn frame_lists_every_node() {
    let v: Value = serde_json::from_str(&api::frame(2, 3, 1.0, 7).unwrap()).unwrap();
    assert_eq!(v["base_stations"].as_array().unwrap().len(), 3);
    assert_eq!(v["users"].as_array().unwrap().len(), 9);
    assert_eq!(v["teleoperators"].as_array().unwrap().len(), 9);
}

#[test]
fn solve_returns_both_modes() {
    let v: Value = serde_json::from_str(&api::solve(1, 2, 5.0, 1, 0.5).unwrap()).unwrap();
    let runs = v.as_array().unwrap();
    assert_eq!(runs[0]["mode"], "ja");
    assert_eq!(runs[1]["mode"], "sa");
    assert_eq!(runs[0]["feasible"], true);
    assert_eq!(runs[0]["nf_host"].as_array().unwrap().len(), 4);
}

#[test]
fn invalid_input_is_an_error() {
    assert!(api::frame(0, 3, 1.0, 1).is_err());
    assert!(api::delay_sweep(1, 1, 1, &[]).is_err());
}

#[test]
fn sweep_has_a_point_per_delay_and_mode() {
    let v: Value = serde_json::from_str(&api::delay_sweep(1, 1, 2, &[2.0, 5.0]).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}
