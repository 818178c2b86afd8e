//! Seeded parameter sweeps.
//!
//! A sweep is a pure function of its [`SweepSpec`] and base configuration:
//! rows come out sorted by `(axis value, mode, seed)` whatever order the
//! workers finish in, and wall-clock times are zeroed unless
//! [`SweepSpec::record_timing`] is set, so two runs give byte-identical
//! tables.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::radio::ConstraintReport;
use crate::scenario::{Scenario, ScenarioConfig, ScenarioError};
use crate::solver::{self, Counters, CostBreakdown, Mode, RunResult, SolverSettings};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("axis {axis} cannot take value {value}: {reason}")]
    BadValue { axis: Axis, value: f64, reason: &'static str },
    #[error("invalid sweep: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Tactile users per base station and service.
    UsersPerBs,
    /// Uplink subcarriers; the downlink gets twice as many.
    NumSubcarriers,
    /// End-to-end delay budget of every service, in ms.
    E2eDelay,
    /// Number of small base stations.
    NumBs,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::UsersPerBs, Axis::NumSubcarriers, Axis::E2eDelay, Axis::NumBs];

    pub fn name(self) -> &'static str {
        match self {
            Axis::UsersPerBs => "users_per_bs",
            Axis::NumSubcarriers => "num_subcarriers",
            Axis::E2eDelay => "e2e_delay",
            Axis::NumBs => "num_bs",
        }
    }

    /// Writes `value` into `config`.
    pub fn apply(self, config: &mut ScenarioConfig, value: f64) -> Result<(), ExperimentError> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(ExperimentError::BadValue {
                    axis: self,
                    value,
                    reason: "expected a positive integer",
                })
            }
        };
        match self {
            Axis::UsersPerBs => config.users_per_bs_per_service = count()?,
            Axis::NumSubcarriers => {
                let k = count()?;
                config.num_ul_subcarriers = k;
                config.num_dl_subcarriers = 2 * k;
            }
            Axis::E2eDelay => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(ExperimentError::BadValue {
                        axis: self,
                        value,
                        reason: "expected a positive delay in ms",
                    });
                }
                config.set_e2e_delay(value * 1e-3);
            }
            Axis::NumBs => config.num_sbs = count()?,
        }
        Ok(())
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown axis {s:?}; expected one of users_per_bs, num_subcarriers, e2e_delay, num_bs"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    Ja,
    Sa,
    Both,
}

impl ModeSel {
    pub fn modes(self, sa_nfv_delay_s: f64) -> Vec<Mode> {
        let sa = Mode::Separate {
            nfv_delay_s: sa_nfv_delay_s,
        };
        match self {
            ModeSel::Ja => vec![Mode::Joint],
            ModeSel::Sa => vec![sa],
            ModeSel::Both => vec![Mode::Joint, sa],
        }
    }
}

impl FromStr for ModeSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ja" => Ok(ModeSel::Ja),
            "sa" => Ok(ModeSel::Sa),
            "both" => Ok(ModeSel::Both),
            _ => Err(format!("unknown mode {s:?}; expected ja, sa or both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub mode: ModeSel,
    pub seeds: Vec<u64>,
    /// NF carve-out used by the separate approach.
    pub sa_nfv_delay_s: f64,
    /// Concurrent solver runs; 0 lets the pool decide.
    pub workers: usize,
    /// Keep measured wall times instead of zeroing them.
    pub record_timing: bool,
    pub settings: SolverSettings,
}

impl SweepSpec {
    pub fn new(axis: Axis, values: Vec<f64>, mode: ModeSel, seeds: Vec<u64>) -> Self {
        Self {
            axis,
            values,
            mode,
            seeds,
            sa_nfv_delay_s: 0.5e-3,
            workers: 0,
            record_timing: false,
            settings: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::Spec("at least one axis value is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Spec("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// One solver run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis: f64,
    pub mode: String,
    pub seed: u64,
    pub cost: f64,
    pub power_cost: f64,
    pub exec_cost: f64,
    pub feasible: bool,
    pub iters: usize,
    pub wall_ms: f64,
}

/// Outcome of one constraint family, without the per-instance messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub passed: bool,
    pub violations: usize,
    /// Worst violation; `None` when it is not a finite number.
    pub residual: Option<f64>,
}

/// Everything a run records except the allocation itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: Mode,
    pub cost: CostBreakdown,
    pub cost_trace: Vec<f64>,
    pub sca_traces: Vec<Vec<f64>>,
    pub checks: Vec<CheckSummary>,
    pub counters: Counters,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl RunTrace {
    fn from_result(r: &RunResult) -> Self {
        Self {
            mode: r.mode,
            cost: r.cost,
            cost_trace: r.cost_trace.clone(),
            sca_traces: r.sca_traces.clone(),
            checks: summarize_checks(&r.constraint_report),
            counters: r.counters,
            converged: r.converged,
            diagnostics: r.diagnostics.clone(),
        }
    }
}

fn summarize_checks(report: &ConstraintReport) -> Vec<CheckSummary> {
    report
        .checks
        .iter()
        .map(|c| {
            let r = c.residual();
            CheckSummary {
                name: c.name.clone(),
                passed: c.passed,
                violations: c.violations.len(),
                residual: r.is_finite().then_some(r),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub row: ResultRow,
    pub trace: RunTrace,
}

/// Result of [`run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub records: Vec<SweepRecord>,
}

impl SweepTable {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.records.iter().map(|r| &r.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// CSV with one line per row.
    Table,
    /// JSON carrying rows and run traces.
    Structured,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "structured" => Ok(Format::Structured),
            _ => Err(format!("unknown format {s:?}; expected table or structured")),
        }
    }
}

fn mode_rank(m: &Mode) -> u8 {
    match m {
        Mode::Joint => 0,
        Mode::Separate { .. } => 1,
    }
}

struct Job {
    value: f64,
    mode: Mode,
    seed: u64,
}

fn run_job(base: &ScenarioConfig, spec: &SweepSpec, job: &Job) -> Result<SweepRecord, ExperimentError> {
    let mut config = base.clone();
    spec.axis.apply(&mut config, job.value)?;
    let scn = Scenario::generate(&config, job.seed)?;
    let result = solver::solve(&scn, &spec.settings, job.mode);
    let wall_ms = if spec.record_timing { result.wall_ms } else { 0.0 };
    Ok(SweepRecord {
        row: ResultRow {
            axis: job.value,
            mode: job.mode.label().to_string(),
            seed: job.seed,
            cost: result.cost.total,
            power_cost: result.cost.power_cost,
            exec_cost: result.cost.exec_cost,
            feasible: result.feasible,
            iters: result.outer_iterations,
            wall_ms,
        },
        trace: RunTrace::from_result(&result),
    })
}

#[cfg(feature = "parallel")]
fn run_all(base: &ScenarioConfig, spec: &SweepSpec, jobs: &[Job]) -> Result<Vec<SweepRecord>, ExperimentError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| jobs.par_iter().map(|j| run_job(base, spec, j)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_all(base: &ScenarioConfig, spec: &SweepSpec, jobs: &[Job]) -> Result<Vec<SweepRecord>, ExperimentError> {
    jobs.iter().map(|j| run_job(base, spec, j)).collect()
}

/// Runs every `value × mode × seed` point. Solver infeasibility is recorded
/// in the row; only invalid configurations abort the sweep.
pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepTable, ExperimentError> {
    spec.validate()?;
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    // Reject bad axis values before spending time on any solve.
    for &v in &values {
        let mut c = base.clone();
        spec.axis.apply(&mut c, v)?;
        c.validate()?;
    }
    let mut modes = spec.mode.modes(spec.sa_nfv_delay_s);
    modes.sort_by_key(mode_rank);
    let mut jobs = Vec::with_capacity(values.len() * modes.len() * seeds.len());
    for &value in &values {
        for &mode in &modes {
            jobs.extend(seeds.iter().map(|&seed| Job { value, mode, seed }));
        }
    }
    let mut records = run_all(base, spec, &jobs)?;
    records.sort_by(|a, b| {
        a.row
            .axis
            .total_cmp(&b.row.axis)
            .then(mode_rank(&a.trace.mode).cmp(&mode_rank(&b.trace.mode)))
            .then(a.row.seed.cmp(&b.row.seed))
    });
    Ok(SweepTable { axis: spec.axis, records })
}

pub const CSV_HEADER: [&str; 9] = [
    "axis",
    "mode",
    "seed",
    "cost",
    "power_cost",
    "exec_cost",
    "feasible",
    "iters",
    "wall_ms",
];

/// Writes `table` in the given format.
pub fn emit(table: &SweepTable, format: Format, out: impl Write) -> Result<(), ExperimentError> {
    match format {
        Format::Table => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for row in table.rows() {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        Format::Structured => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, table)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn emit_to_string(table: &SweepTable, format: Format) -> Result<String, ExperimentError> {
    let mut buf = Vec::new();
    emit(table, format, &mut buf)?;
    Ok(String::from_utf8(buf).expect("emitters write UTF-8"))
}

/// Parses the structured format written by [`emit`].
pub fn parse_structured(text: &str) -> Result<SweepTable, ExperimentError> {
    Ok(serde_json::from_str(text)?)
}

/// Parses the table format back into rows.
pub fn parse_table(text: &str) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Ensemble statistics of one `(axis value, mode)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub axis: f64,
    pub mode: String,
    pub runs: usize,
    pub feasible: usize,
    /// Mean cost over feasible runs.
    pub mean_cost: Option<f64>,
}

pub fn summarize<'a>(rows: impl IntoIterator<Item = &'a ResultRow>) -> Vec<PointSummary> {
    let mut out: Vec<(PointSummary, f64)> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|(p, _)| p.axis == r.axis && p.mode == r.mode) {
            Some(i) => i,
            None => {
                out.push((
                    PointSummary {
                        axis: r.axis,
                        mode: r.mode.clone(),
                        runs: 0,
                        feasible: 0,
                        mean_cost: None,
                    },
                    0.0,
                ));
                out.len() - 1
            }
        };
        let (p, sum) = &mut out[idx];
        p.runs += 1;
        if r.feasible {
            p.feasible += 1;
            *sum += r.cost;
        }
    }
    out.into_iter()
        .map(|(mut p, sum)| {
            p.mean_cost = (p.feasible > 0).then(|| sum / p.feasible as f64);
            p
        })
        .collect()
}

/// One-sided paired sign test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs where the claimed direction holds strictly.
    pub wins: usize,
    pub losses: usize,
    /// Pairs equal within the tie tolerance; dropped from the test.
    pub ties: usize,
    /// `P[Binomial(wins + losses, 1/2) ≥ wins]`.
    pub p_value: f64,
}

impl SignTest {
    /// Counts pairs with `later > earlier` as wins. Pairs whose relative
    /// difference is at most `tie_tol` are ties.
    pub fn increasing(pairs: impl IntoIterator<Item = (f64, f64)>, tie_tol: f64) -> Self {
        let (mut wins, mut losses, mut ties) = (0, 0, 0);
        for (earlier, later) in pairs {
            let scale = earlier.abs().max(later.abs());
            if (later - earlier).abs() <= tie_tol * scale {
                ties += 1;
            } else if later > earlier {
                wins += 1;
            } else {
                losses += 1;
            }
        }
        Self {
            wins,
            losses,
            ties,
            p_value: binomial_upper_tail(wins + losses, wins),
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

/// `P[Binomial(n, 1/2) ≥ k]`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut term = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += term;
        }
        term *= (n - i) as f64 / (i + 1) as f64;
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_tail_small_cases() {
        assert_eq!(binomial_upper_tail(1, 1), 0.5);
        assert_eq!(binomial_upper_tail(2, 1), 0.75);
        assert!((binomial_upper_tail(20, 15) - 21700.0 / 1048576.0).abs() < 1e-15);
        assert_eq!(binomial_upper_tail(5, 0), 1.0);
    }

    #[test]
    fn sign_test_drops_ties() {
        let t = SignTest::increasing([(1.0, 2.0), (1.0, 1.0), (2.0, 1.0), (1.0, 3.0)], 1e-12);
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert_eq!(t.p_value, 0.5);
    }

    #[test]
    fn axis_names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(a.name().parse::<Axis>(), Ok(a));
        }
        assert!("users".parse::<Axis>().is_err());
    }

    #[test]
    fn subcarrier_axis_doubles_downlink() {
        let mut c = ScenarioConfig::default();
        Axis::NumSubcarriers.apply(&mut c, 12.0).unwrap();
        assert_eq!((c.num_ul_subcarriers, c.num_dl_subcarriers), (12, 24));
        assert!(Axis::UsersPerBs.apply(&mut c, 2.5).is_err());
        assert!(Axis::E2eDelay.apply(&mut c, -1.0).is_err());
    }
}
