//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes a handful of numbers and returns JSON. The same logic is
//! available natively through [`api`] so it can be tested without a browser.

use wasm_bindgen::prelude::*;

pub mod api {
    use serde::Serialize;
    use tactile_ra::experiment::{self, Axis, ModeSel, SweepSpec};
    use tactile_ra::scenario::{Scenario, ScenarioConfig};
    use tactile_ra::solver::{self, Mode, RunResult, SolverSettings};

    #[derive(Serialize)]
    struct Node {
        x: f64,
        y: f64,
        bs: usize,
    }

    #[derive(Serialize)]
    struct Frame {
        radius_km: f64,
        base_stations: Vec<[f64; 2]>,
        users: Vec<Node>,
        teleoperators: Vec<Node>,
    }

    #[derive(Serialize)]
    struct Run {
        mode: &'static str,
        feasible: bool,
        cost: f64,
        power_w: f64,
        exec_ms: f64,
        iterations: usize,
        /// Host BS of each user's first NF.
        nf_host: Vec<Option<usize>>,
        /// Per user: `[t_ul, t_dl, q_ul, q_dl, nfs]` in ms.
        delays_ms: Vec<[f64; 5]>,
        cost_trace: Vec<f64>,
        diagnostics: Vec<String>,
    }

    #[derive(Serialize)]
    struct SweepPoint {
        delay_ms: f64,
        mode: String,
        feasible: usize,
        runs: usize,
        mean_cost: Option<f64>,
    }

    fn config(num_sbs: u32, users_per_bs: u32, delay_ms: f64) -> ScenarioConfig {
        let mut c = ScenarioConfig {
            num_sbs: num_sbs as usize,
            users_per_bs_per_service: users_per_bs as usize,
            ..ScenarioConfig::default()
        };
        c.set_e2e_delay(delay_ms * 1e-3);
        c
    }

    fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
        serde_json::to_string(v).map_err(|e| e.to_string())
    }

    fn summarize(r: &RunResult) -> Run {
        let alloc = r.allocation.as_ref();
        Run {
            mode: r.mode.label(),
            feasible: r.feasible,
            cost: r.cost.total,
            power_w: r.cost.power_w,
            exec_ms: r.cost.exec_ms,
            iterations: r.outer_iterations,
            nf_host: alloc.map_or_else(Vec::new, |a| {
                a.nfv.chains.iter().map(|c| c.first().map(|&j| a.nfv.jobs[j].bs)).collect()
            }),
            delays_ms: alloc.map_or_else(Vec::new, |a| {
                a.delays.iter().map(|d| d.components().map(|x| x * 1e3)).collect()
            }),
            cost_trace: r.cost_trace.clone(),
            diagnostics: r.diagnostics.clone(),
        }
    }

    /// Node positions of one frame.
    pub fn frame(num_sbs: u32, users_per_bs: u32, delay_ms: f64, seed: u32) -> Result<String, String> {
        let c = config(num_sbs, users_per_bs, delay_ms);
        let scn = Scenario::generate(&c, seed.into()).map_err(|e| e.to_string())?;
        to_json(&Frame {
            radius_km: (c.coverage_area_km2 / std::f64::consts::PI).sqrt(),
            base_stations: scn.base_stations.iter().map(|b| b.position_km).collect(),
            users: scn
                .users
                .iter()
                .map(|u| Node {
                    x: u.position_km[0],
                    y: u.position_km[1],
                    bs: u.bs,
                })
                .collect(),
            teleoperators: scn
                .teleoperators
                .iter()
                .map(|o| Node {
                    x: o.position_km[0],
                    y: o.position_km[1],
                    bs: o.bs,
                })
                .collect(),
        })
    }

    /// Joint and separate allocation of one frame.
    pub fn solve(num_sbs: u32, users_per_bs: u32, delay_ms: f64, seed: u32, sa_nfv_delay_ms: f64) -> Result<String, String> {
        let scn = Scenario::generate(&config(num_sbs, users_per_bs, delay_ms), seed.into()).map_err(|e| e.to_string())?;
        let settings = SolverSettings::default();
        let runs: Vec<Run> = [
            Mode::Joint,
            Mode::Separate {
                nfv_delay_s: sa_nfv_delay_ms * 1e-3,
            },
        ]
        .into_iter()
        .map(|m| summarize(&solver::solve(&scn, &settings, m)))
        .collect();
        to_json(&runs)
    }

    /// Mean cost of both approaches over `seeds` frames at several delay
    /// budgets.
    pub fn delay_sweep(num_sbs: u32, users_per_bs: u32, seeds: u32, delays_ms: &[f64]) -> Result<String, String> {
        let spec = SweepSpec::new(
            Axis::E2eDelay,
            delays_ms.to_vec(),
            ModeSel::Both,
            (0..u64::from(seeds.max(1))).collect(),
        );
        let table = experiment::run_sweep(&config(num_sbs, users_per_bs, 1.0), &spec).map_err(|e| e.to_string())?;
        let points: Vec<SweepPoint> = experiment::summarize(table.rows())
            .into_iter()
            .map(|p| SweepPoint {
                delay_ms: p.axis,
                mode: p.mode,
                feasible: p.feasible,
                runs: p.runs,
                mean_cost: p.mean_cost,
            })
            .collect();
        to_json(&points)
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn frame(num_sbs: u32, users_per_bs: u32, delay_ms: f64, seed: u32) -> Result<String, JsError> {
    js(api::frame(num_sbs, users_per_bs, delay_ms, seed))
}

#[wasm_bindgen]
pub fn solve(num_sbs: u32, users_per_bs: u32, delay_ms: f64, seed: u32, sa_nfv_delay_ms: f64) -> Result<String, JsError> {
    js(api::solve(num_sbs, users_per_bs, delay_ms, seed, sa_nfv_delay_ms))
}

#[wasm_bindgen]
pub fn delay_sweep(num_sbs: u32, users_per_bs: u32, seeds: u32, delays_ms: Vec<f64>) -> Result<String, JsError> {
    js(api::delay_sweep(num_sbs, users_per_bs, seeds, &delays_ms))
}
