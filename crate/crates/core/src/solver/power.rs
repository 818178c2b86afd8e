//! Power allocation by successive convex approximation.
//!
//! The rate of a link is written as `f(P) - g(P)` with
//! `f = Σ_k log2(σ + I_k + p_k h_k)` and `g = Σ_k log2(σ + I_k)`, both concave
//! in the powers. Replacing `g` by its first-order expansion at the current
//! iterate under-estimates the rate, so each convexified problem is an inner
//! approximation: its solution is feasible for the original constraints and
//! never costs more than the point it was expanded at.
//!
//! Variables are scaled per (link, subcarrier) by `σ / h`, which turns them
//! into interference-free SINRs.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use super::convex::{self, Constraint, ConvexProblem, LogTerm, SubsolverSettings};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

/// Read-only view of one link direction of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct LinkView<'a> {
    pub scn: &'a Scenario,
    pub dir: Direction,
}

impl<'a> LinkView<'a> {
    pub fn uplink(scn: &'a Scenario) -> Self {
        Self { scn, dir: Direction::Uplink }
    }

    pub fn downlink(scn: &'a Scenario) -> Self {
        Self { scn, dir: Direction::Downlink }
    }

    pub fn links(&self) -> usize {
        match self.dir {
            Direction::Uplink => self.scn.users.len(),
            Direction::Downlink => self.scn.teleoperators.len(),
        }
    }

    pub fn carriers(&self) -> usize {
        match self.dir {
            Direction::Uplink => self.scn.config.num_ul_subcarriers,
            Direction::Downlink => self.scn.config.num_dl_subcarriers,
        }
    }

    /// Base station at the network end of a link.
    pub fn cell(&self, link: usize) -> usize {
        match self.dir {
            Direction::Uplink => self.scn.users[link].bs,
            Direction::Downlink => self.scn.teleoperators[link].bs,
        }
    }

    pub fn noise(&self) -> f64 {
        match self.dir {
            Direction::Uplink => self.scn.noise_ul_w(),
            Direction::Downlink => self.scn.noise_dl_w(),
        }
    }

    pub fn bandwidth_hz(&self) -> f64 {
        match self.dir {
            Direction::Uplink => self.scn.config.ul_subcarrier_bandwidth_hz(),
            Direction::Downlink => self.scn.config.dl_subcarrier_bandwidth_hz(),
        }
    }

    pub fn direct_gain(&self, link: usize, k: usize) -> f64 {
        match self.dir {
            Direction::Uplink => self.scn.ul_gain.get(link, self.cell(link), k),
            Direction::Downlink => self.scn.dl_gain.get(link, self.cell(link), k),
        }
    }

    /// Gain through which `interferer` reaches the receiver of `victim`.
    pub fn cross_gain(&self, victim: usize, interferer: usize, k: usize) -> f64 {
        match self.dir {
            Direction::Uplink => self.scn.ul_gain.get(interferer, self.cell(victim), k),
            Direction::Downlink => self.scn.dl_gain.get(victim, self.cell(interferer), k),
        }
    }

    /// Power budgets as `(links sharing the budget, watts)`.
    pub fn budgets(&self) -> Vec<(Vec<usize>, f64)> {
        match self.dir {
            Direction::Uplink => {
                let p = self.scn.user_max_power_w();
                (0..self.links()).map(|u| (vec![u], p)).collect()
            }
            Direction::Downlink => self
                .scn
                .base_stations
                .iter()
                .map(|bs| {
                    let links = (0..self.links()).filter(|&o| self.cell(o) == bs.id).collect();
                    (links, bs.max_power_w)
                })
                .collect(),
        }
    }

    /// Interference at the receiver of `victim` on subcarrier `k`.
    pub fn interference(&self, power: &[Vec<f64>], victim: usize, k: usize) -> f64 {
        let cell = self.cell(victim);
        (0..self.links())
            .filter(|&v| self.cell(v) != cell && power[v][k] > 0.0)
            .map(|v| power[v][k] * self.cross_gain(victim, v, k))
            .sum()
    }

    /// Spectral efficiency of a link over its assigned subcarriers.
    pub fn rate(&self, assign: &[Vec<bool>], power: &[Vec<f64>], link: usize) -> f64 {
        let sigma = self.noise();
        (0..self.carriers())
            .filter(|&k| assign[link][k])
            .map(|k| {
                let sinr = power[link][k] * self.direct_gain(link, k) / (sigma + self.interference(power, link, k));
                sinr.ln_1p() / LN_2
            })
            .sum()
    }
}

/// `g = log2(σ + I)` for a victim on subcarrier `k`, as a function of the
/// powers of every link.
pub fn interference_log(view: &LinkView, power: &[Vec<f64>], victim: usize, k: usize) -> f64 {
    (view.noise() + view.interference(power, victim, k)).log2()
}

/// Gradient of [`interference_log`] with respect to `power[v][k]` for every
/// link `v`. Links in the victim's own cell have a zero entry.
pub fn interference_log_gradient(view: &LinkView, power: &[Vec<f64>], victim: usize, k: usize) -> Vec<f64> {
    let denom = (view.noise() + view.interference(power, victim, k)) * LN_2;
    let cell = view.cell(victim);
    (0..view.links())
        .map(|v| {
            if view.cell(v) == cell {
                0.0
            } else {
                view.cross_gain(victim, v, k) / denom
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSettings {
    pub max_iterations: usize,
    /// Relative objective decrease below which the iteration stops.
    pub tolerance: f64,
    /// Initial fraction of each budget spread uniformly over the subcarriers.
    pub initial_fraction: f64,
    pub subsolver: SubsolverSettings,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-7,
            initial_fraction: 0.5,
            subsolver: SubsolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    Warm,
    Uniform,
    PhaseOne,
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub power: Vec<Vec<f64>>,
    /// Total power of the starting point and of every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub newton_steps: usize,
    pub start: StartPoint,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerError {
    #[error("{dir:?} link {link}: {reason}")]
    Infeasible {
        dir: Direction,
        link: usize,
        reason: String,
    },
}

struct Var {
    link: usize,
    k: usize,
    scale: f64,
}

struct Layout<'v, 'a> {
    view: &'v LinkView<'a>,
    vars: Vec<Var>,
    /// Variable index per link and subcarrier.
    index: Vec<Vec<Option<usize>>>,
    /// Links with a positive floor, in order of their rate constraints.
    active: Vec<usize>,
    floors: Vec<f64>,
    /// Budgets restricted to active links: (variables, watts, first link).
    budgets: Vec<(Vec<usize>, f64, usize)>,
}

impl<'v, 'a> Layout<'v, 'a> {
    fn new(view: &'v LinkView<'a>, assign: &[Vec<bool>], floors: &[f64]) -> Result<Self, PowerError> {
        let sigma = view.noise();
        let mut vars = Vec::new();
        let mut index = vec![vec![None; view.carriers()]; view.links()];
        let mut active = Vec::new();
        for link in 0..view.links() {
            if !(floors[link] > 0.0) {
                continue;
            }
            for k in 0..view.carriers() {
                let h = view.direct_gain(link, k);
                if assign[link][k] && h > 0.0 {
                    index[link][k] = Some(vars.len());
                    vars.push(Var { link, k, scale: sigma / h });
                }
            }
            if index[link].iter().all(Option::is_none) {
                return Err(PowerError::Infeasible {
                    dir: view.dir,
                    link,
                    reason: "positive rate floor without a usable subcarrier".into(),
                });
            }
            active.push(link);
        }
        let budgets = view
            .budgets()
            .into_iter()
            .filter_map(|(links, watts)| {
                let vs: Vec<usize> = links.iter().flat_map(|&l| index[l].iter().flatten().copied()).collect();
                (!vs.is_empty()).then(|| (vs, watts, links[0]))
            })
            .collect();
        Ok(Self {
            view,
            vars,
            index,
            active,
            floors: floors.to_vec(),
            budgets,
        })
    }

    /// Normalized cross coupling of variable `v` into the receiver of `victim`.
    fn coupling(&self, victim: usize, v: &Var) -> f64 {
        self.view.cross_gain(victim, v.link, v.k) * v.scale / self.view.noise()
    }

    fn interferers(&self, victim: usize, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let cell = self.view.cell(victim);
        self.vars
            .iter()
            .enumerate()
            .filter(move |(_, v)| v.k == k && self.view.cell(v.link) != cell)
            .map(move |(j, v)| (j, self.coupling(victim, v)))
    }

    fn to_power(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.view.carriers()]; self.view.links()];
        for (v, &yv) in self.vars.iter().zip(y) {
            p[v.link][v.k] = yv * v.scale;
        }
        p
    }

    fn from_power(&self, p: &[Vec<f64>]) -> Vec<f64> {
        self.vars.iter().map(|v| p[v.link][v.k] / v.scale).collect()
    }

    fn total_power(&self, y: &[f64]) -> f64 {
        self.vars.iter().zip(y).map(|(v, yv)| yv * v.scale).sum()
    }

    fn budget_constraint(&self, vars: &[usize], watts: f64) -> Constraint {
        let coeffs: Vec<(usize, f64)> = vars.iter().map(|&j| (j, self.vars[j].scale)).collect();
        Constraint::budget(&coeffs, watts)
    }

    /// Rate margins and budget margins of the original problem.
    fn true_margins(&self, y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.active.len() + self.budgets.len());
        for &link in &self.active {
            let mut r = 0.0;
            for (k, slot) in self.index[link].iter().enumerate() {
                if let Some(j) = *slot {
                    let i: f64 = self.interferers(link, k).map(|(v, a)| a * y[v]).sum();
                    r += (y[j] / (1.0 + i)).ln_1p() / LN_2;
                }
            }
            out.push(r - self.floors[link]);
        }
        for (vars, watts, _) in &self.budgets {
            out.push(self.budget_constraint(vars, *watts).value(y).unwrap_or(f64::NEG_INFINITY));
        }
        out
    }

    fn strictly_feasible(&self, y: &[f64]) -> bool {
        y.iter().all(|&v| v > 0.0) && self.true_margins(y).iter().all(|&m| m > 0.0)
    }

    /// Convexified problem around `y0`.
    fn convexify(&self, y0: &[f64]) -> ConvexProblem {
        let max_scale = self.vars.iter().fold(0.0f64, |a, v| a.max(v.scale));
        let mut constraints = Vec::with_capacity(self.active.len() + self.budgets.len());
        for &link in &self.active {
            let mut c = Constraint {
                constant: -self.floors[link],
                ..Constraint::default()
            };
            for (k, slot) in self.index[link].iter().enumerate() {
                let Some(j) = *slot else { continue };
                let inter: Vec<(usize, f64)> = self.interferers(link, k).collect();
                let i0: f64 = inter.iter().map(|&(v, a)| a * y0[v]).sum();
                let mut coeffs = vec![(j, 1.0)];
                coeffs.extend(inter.iter().copied());
                c.terms.push(LogTerm { offset: 1.0, coeffs });
                c.constant -= i0.ln_1p() / LN_2;
                let denom = (1.0 + i0) * LN_2;
                for &(v, a) in &inter {
                    let grad = a / denom;
                    c.linear.push((v, -grad));
                    c.constant += grad * y0[v];
                }
            }
            constraints.push(c);
        }
        for (vars, watts, _) in &self.budgets {
            constraints.push(self.budget_constraint(vars, *watts));
        }
        ConvexProblem {
            num_vars: self.vars.len(),
            objective: self.vars.iter().map(|v| v.scale / max_scale).collect(),
            constraints,
        }
    }

    fn constraint_link(&self, c: usize) -> (usize, &'static str) {
        if c < self.active.len() {
            (self.active[c], "rate floor unreachable")
        } else {
            (self.budgets[c - self.active.len()].2, "power budget exhausted")
        }
    }

    fn uniform(&self, fraction: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.vars.len()];
        for (vars, watts, _) in &self.budgets {
            let each = fraction * watts / vars.len() as f64;
            for &j in vars {
                y[j] = each / self.vars[j].scale;
            }
        }
        y
    }
}

/// Minimum total power meeting every link's rate floor (bit/s/Hz) on its
/// assigned subcarriers, within the power budgets. Links with a zero floor
/// are switched off.
pub fn solve_link_powers(
    view: &LinkView,
    assign: &[Vec<bool>],
    floors: &[f64],
    warm: Option<&[Vec<f64>]>,
    settings: &PowerSettings,
) -> Result<PowerSolution, PowerError> {
    let layout = Layout::new(view, assign, floors)?;
    if layout.vars.is_empty() {
        return Ok(PowerSolution {
            power: vec![vec![0.0; view.carriers()]; view.links()],
            trace: vec![0.0],
            iterations: 0,
            newton_steps: 0,
            start: StartPoint::Trivial,
        });
    }
    let mut newton_steps = 0;
    let (mut y, start) = initial_point(&layout, warm, settings, &mut newton_steps)?;
    let mut objective = layout.total_power(&y);
    let mut trace = vec![objective];
    let mut iterations = 0;
    for _ in 0..settings.max_iterations {
        iterations += 1;
        let problem = layout.convexify(&y);
        let Ok(out) = convex::solve(&problem, Some(&y), &settings.subsolver) else {
            break;
        };
        newton_steps += out.newton_steps;
        if !layout.strictly_feasible(&out.x) {
            break;
        }
        let next = layout.total_power(&out.x);
        if !(next < objective) {
            break;
        }
        let decrease = (objective - next) / objective;
        y = out.x;
        objective = next;
        trace.push(objective);
        if decrease < settings.tolerance {
            break;
        }
    }
    Ok(PowerSolution {
        power: layout.to_power(&y),
        trace,
        iterations,
        newton_steps,
        start,
    })
}

fn initial_point(
    layout: &Layout,
    warm: Option<&[Vec<f64>]>,
    settings: &PowerSettings,
    newton_steps: &mut usize,
) -> Result<(Vec<f64>, StartPoint), PowerError> {
    if let Some(p) = warm {
        let mut y = layout.from_power(p);
        // Switched-off subcarriers re-enter with a negligible power.
        let floor = y.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        let tiny = if floor.is_finite() { floor * 1e-6 } else { 1e-9 };
        for v in &mut y {
            if !(*v > 0.0) {
                *v = tiny;
            }
        }
        if layout.strictly_feasible(&y) {
            return Ok((y, StartPoint::Warm));
        }
    }
    let mut fraction = settings.initial_fraction;
    for _ in 0..12 {
        let y = layout.uniform(fraction);
        if layout.strictly_feasible(&y) {
            return Ok((y, StartPoint::Uniform));
        }
        fraction = 0.5 * (fraction + 1.0);
    }
    let mut y = layout.uniform(settings.initial_fraction);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..40 {
        let problem = layout.convexify(&y);
        let p1 = convex::phase_one(&problem, &y, 1e-6, &settings.subsolver);
        *newton_steps += p1.newton_steps;
        if p1.x.iter().all(|&v| v > 0.0) {
            y = p1.x;
        }
        if layout.strictly_feasible(&y) {
            return Ok((y, StartPoint::PhaseOne));
        }
        let margins = layout.true_margins(&y);
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        if worst <= best + 1e-9 {
            break;
        }
        best = worst;
    }
    let margins = layout.true_margins(&y);
    let (c, _) = margins
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one constraint");
    let (link, reason) = layout.constraint_link(c);
    Err(PowerError::Infeasible {
        dir: layout.view.dir,
        link,
        reason: reason.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ScenarioConfig, TeleoperatorPlacement};

    fn single_link(reference_db: f64) -> Scenario {
        let config = ScenarioConfig {
            num_sbs: 1,
            num_ul_subcarriers: 1,
            num_dl_subcarriers: 1,
            users_per_bs_per_service: 1,
            teleoperator_placement: TeleoperatorPlacement::Home,
            reference_pathloss_db: reference_db,
            ..ScenarioConfig::default()
        };
        Scenario::generate(&config, 2).unwrap()
    }

    #[test]
    fn closed_form_single_link() {
        let scn = single_link(100.0);
        let view = LinkView::uplink(&scn);
        let assign = vec![vec![true]; 2];
        let floors = [2.5, 0.0];
        let sol = solve_link_powers(&view, &assign, &floors, None, &PowerSettings::default()).unwrap();
        let expected = (2f64.powf(2.5) - 1.0) * view.noise() / view.direct_gain(0, 0);
        assert!((sol.power[0][0] - expected).abs() <= 1e-6 * expected);
        assert_eq!(sol.power[1][0], 0.0);
    }

    #[test]
    fn zero_floors_zero_power() {
        let scn = single_link(100.0);
        let view = LinkView::downlink(&scn);
        let sol = solve_link_powers(&view, &vec![vec![true]; 2], &[0.0, 0.0], None, &PowerSettings::default()).unwrap();
        assert!(sol.power.iter().flatten().all(|&p| p == 0.0));
    }

    #[test]
    fn unreachable_floor_is_named() {
        let scn = single_link(200.0);
        let view = LinkView::uplink(&scn);
        let err = solve_link_powers(&view, &vec![vec![true]; 2], &[30.0, 0.0], None, &PowerSettings::default());
        assert!(matches!(err, Err(PowerError::Infeasible { link: 0, .. })));
    }

    #[test]
    fn two_cell_trace_is_monotone_and_feasible() {
        let scn = single_link(120.0);
        let view = LinkView::uplink(&scn);
        let assign = vec![vec![true]; 2];
        let floors = [1.5, 1.0];
        let sol = solve_link_powers(&view, &assign, &floors, None, &PowerSettings::default()).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for (l, &f) in floors.iter().enumerate() {
            assert!(view.rate(&assign, &sol.power, l) >= f - 1e-9);
        }
    }
}
