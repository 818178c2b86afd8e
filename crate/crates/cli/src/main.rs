use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tactile_ra::experiment::{self, Axis, Format, ModeSel, SweepSpec};
use tactile_ra::oracle;
use tactile_ra::scenario::{self, Scenario, ScenarioConfig};
use tactile_ra::solver::{self, RunResult, SolverSettings};

#[derive(Parser)]
#[command(name = "tactile-ra", version, about = "Joint radio and NFV allocation for delay-bounded tactile services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one network frame from a configuration.
    Generate {
        #[command(flatten)]
        input: ConfigInput,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the resolved configuration as TOML instead of a frame.
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Solve one frame.
    Solve {
        #[command(flatten)]
        input: FrameInput,
        #[arg(long, value_enum, default_value_t = ModeArg::Ja)]
        mode: ModeArg,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Run a seeded parameter sweep.
    Sweep {
        #[command(flatten)]
        input: ConfigInput,
        /// users_per_bs, num_subcarriers (DL gets twice the UL count),
        /// e2e_delay or num_bs (small cells besides the macro cell)
        #[arg(long)]
        axis: Axis,
        /// Comma-separated axis values; delays are in ms.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Seed range `N..M` (half-open) or `N..=M`, or a single seed.
        #[arg(long, default_value = "0..20", value_parser = parse_seeds)]
        seeds: SeedRange,
        #[arg(long, value_enum, default_value_t = ModeArg::Ja)]
        mode: ModeArg,
        /// Concurrent solver runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Record wall-clock times; tables are then no longer reproducible.
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Compare the solver with exhaustive enumeration on a tiny frame.
    Oracle {
        #[command(flatten)]
        input: FrameInput,
        /// Restrict subcarrier powers to this many levels instead of solving
        /// for exact powers; allows several subcarriers per link.
        #[arg(long)]
        levels: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Check a configuration or frame file and list every problem.
    Validate {
        #[command(flatten)]
        input: FrameInput,
    },
}

#[derive(Args)]
struct ConfigInput {
    /// Scenario configuration (TOML); defaults to the built-in setup.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FrameInput {
    #[command(flatten)]
    config: ConfigInput,
    /// Previously generated frame (TOML); overrides --config and --seed.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SolverArgs {
    /// Solver settings (TOML); unspecified fields keep their defaults.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// NF delay carve-out of the separate approach, in ms.
    #[arg(long, default_value_t = 0.5)]
    sa_nfv_delay_ms: f64,
}

#[derive(Args)]
struct Output {
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ja,
    Sa,
    Both,
}

impl From<ModeArg> for ModeSel {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ja => ModeSel::Ja,
            ModeArg::Sa => ModeSel::Sa,
            ModeArg::Both => ModeSel::Both,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Table,
    Structured,
}

type Result<T> = std::result::Result<T, String>;

#[derive(Clone, Debug)]
struct SeedRange(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedRange> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(s)?]
    };
    if seeds.is_empty() {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(seeds))
}

fn load_config(input: &ConfigInput) -> Result<ScenarioConfig> {
    match &input.config {
        Some(p) => scenario::load(p).map_err(|e| e.to_string()),
        None => Ok(ScenarioConfig::default()),
    }
}

fn load_frame(input: &FrameInput) -> Result<Scenario> {
    match &input.scenario {
        Some(p) => Scenario::load(p).map_err(|e| e.to_string()),
        None => Scenario::generate(&load_config(&input.config)?, input.seed).map_err(|e| e.to_string()),
    }
}

fn load_settings(args: &SolverArgs) -> Result<SolverSettings> {
    match &args.settings {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
        None => Ok(SolverSettings::default()),
    }
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| e.to_string())
}

fn frame_summary(scn: &Scenario) -> String {
    let mut s = String::new();
    let c = &scn.config;
    let _ = writeln!(
        s,
        "seed {}: {} base stations, {} users, {} teleoperators, K={} L={}",
        scn.seed,
        scn.num_bs(),
        scn.users.len(),
        scn.teleoperators.len(),
        c.num_ul_subcarriers,
        c.num_dl_subcarriers
    );
    let _ = writeln!(s, "{:>4} {:>9} {:>9} {:>9} {:>12}", "bs", "x_km", "y_km", "p_max_w", "rate_bps");
    for b in &scn.base_stations {
        let _ = writeln!(
            s,
            "{:>4} {:>9.3} {:>9.3} {:>9.3} {:>12.3e}",
            b.id, b.position_km[0], b.position_km[1], b.max_power_w, b.processing_rate_bps
        );
    }
    let _ = writeln!(s, "{:>4} {:>4} {:>9} {:>9} {:>6}", "user", "bs", "x_km", "y_km", "op_bs");
    for u in &scn.users {
        let op = u.teleoperator.map(|o| scn.teleoperators[o].bs.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:>4} {:>4} {:>9.3} {:>9.3} {:>6}",
            u.id, u.bs, u.position_km[0], u.position_km[1], op
        );
    }
    s
}

fn run_summary(r: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} cost {:.6} (power {:.6} W, exec {:.6} ms) after {} iterations{}",
        r.mode.label(),
        if r.feasible { "feasible" } else { "INFEASIBLE" },
        r.cost.total,
        r.cost.power_w,
        r.cost.exec_ms,
        r.outer_iterations,
        if r.converged { ", converged" } else { "" }
    );
    for c in &r.constraint_report.checks {
        let _ = writeln!(
            s,
            "  {:<4} {} residual {:.2e}",
            c.name,
            if c.passed { "ok  " } else { "FAIL" },
            c.residual()
        );
    }
    for d in &r.diagnostics {
        let _ = writeln!(s, "  note: {d}");
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            input,
            seed,
            print_config,
            output,
        } => {
            let config = load_config(&input)?;
            if print_config {
                return write_out(&output.out, &config.to_toml().map_err(|e| e.to_string())?);
            }
            let scn = Scenario::generate(&config, seed).map_err(|e| e.to_string())?;
            let text = match output.format {
                FormatArg::Table => frame_summary(&scn),
                FormatArg::Structured => scn.to_toml().map_err(|e| e.to_string())?,
            };
            write_out(&output.out, &text)
        }
        Command::Solve {
            input,
            mode,
            solver: args,
            output,
        } => {
            let scn = load_frame(&input)?;
            let settings = load_settings(&args)?;
            let results: Vec<RunResult> = ModeSel::from(mode)
                .modes(args.sa_nfv_delay_ms * 1e-3)
                .into_iter()
                .map(|m| solver::solve(&scn, &settings, m))
                .collect();
            let text = match output.format {
                FormatArg::Table => results.iter().map(run_summary).collect(),
                FormatArg::Structured => json(&results)?,
            };
            write_out(&output.out, &text)
        }
        Command::Sweep {
            input,
            axis,
            values,
            seeds,
            mode,
            workers,
            timing,
            solver: args,
            output,
        } => {
            let config = load_config(&input)?;
            let mut spec = SweepSpec::new(axis, values, mode.into(), seeds.0);
            spec.workers = workers;
            spec.record_timing = timing;
            spec.sa_nfv_delay_s = args.sa_nfv_delay_ms * 1e-3;
            spec.settings = load_settings(&args)?;
            let table = experiment::run_sweep(&config, &spec).map_err(|e| e.to_string())?;
            let format = match output.format {
                FormatArg::Table => Format::Table,
                FormatArg::Structured => Format::Structured,
            };
            write_out(&output.out, &experiment::emit_to_string(&table, format).map_err(|e| e.to_string())?)?;
            if output.out.is_some() {
                for p in experiment::summarize(table.rows()) {
                    eprintln!(
                        "{}={} {}: {}/{} feasible, mean cost {}",
                        axis,
                        p.axis,
                        p.mode,
                        p.feasible,
                        p.runs,
                        p.mean_cost.map_or("-".into(), |c| format!("{c:.6}"))
                    );
                }
            }
            Ok(())
        }
        Command::Oracle {
            input,
            levels,
            solver: args,
            output,
        } => {
            let scn = load_frame(&input)?;
            let settings = load_settings(&args)?;
            let power = levels.map_or(oracle::OraclePower::Exact, oracle::OraclePower::Levels);
            let report = oracle::run_oracle_comparison_with(&scn, &settings, power).map_err(|e| e.to_string())?;
            let text = match output.format {
                FormatArg::Structured => json(&report)?,
                FormatArg::Table => {
                    let cost = |c: Option<f64>| c.map_or("infeasible".into(), |c| format!("{c:.6}"));
                    format!(
                        "candidates {}\noracle    {}{}\nheuristic {}\nratio     {}\n",
                        report.candidates,
                        cost(report.oracle_cost),
                        match report.oracle_audit_passed {
                            Some(true) => " (audit ok)",
                            Some(false) => " (audit FAILED)",
                            None => "",
                        },
                        cost(report.heuristic_cost),
                        report.ratio.map_or("-".into(), |r| format!("{r:.4}"))
                    )
                }
            };
            write_out(&output.out, &text)
        }
        Command::Validate { input } => {
            let outcome = match &input.scenario {
                Some(p) => Scenario::load(p).map(|_| p.as_path()),
                None => match &input.config.config {
                    Some(p) => scenario::load(p).map(|_| p.as_path()),
                    None => ScenarioConfig::default().validate().map(|_| Path::new("<defaults>")),
                },
            };
            match outcome {
                Ok(p) => {
                    println!("{}: ok", p.display());
                    Ok(())
                }
                Err(e) => Err(e.to_string()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
