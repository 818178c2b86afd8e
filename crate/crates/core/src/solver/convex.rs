//! Small dense log-barrier interior-point solver for
//!
//! ```text
//! minimize    c·x
//! subject to  Σ_t log2(a_t + b_t·x) + l·x + k ≥ 0     for every constraint
//!             x ≥ 0
//! ```
//!
//! Linear constraints are the special case with no log terms. Each Newton
//! system is solved by a Jacobi-scaled Cholesky factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// `log2(offset + Σ coeff·x[var])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTerm {
    pub offset: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl LogTerm {
    fn argument(&self, x: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// `Σ terms + linear·x + constant ≥ 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<LogTerm>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Constraint {
    /// `1 - Σ coeff·x / bound ≥ 0`.
    pub fn budget(coeffs: &[(usize, f64)], bound: f64) -> Self {
        Self {
            terms: Vec::new(),
            linear: coeffs.iter().map(|&(i, c)| (i, -c / bound)).collect(),
            constant: 1.0,
        }
    }

    /// Constraint value, or `None` outside the domain of a log term.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v = self.constant + self.linear.iter().map(|&(i, c)| c * x[i]).sum::<f64>();
        for t in &self.terms {
            let a = t.argument(x);
            if !(a > 0.0) {
                return None;
            }
            v += a.log2();
        }
        Some(v)
    }

    /// Dense gradient of the constraint function.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_gradient(x, &mut g);
        g
    }

    fn add_gradient(&self, x: &[f64], g: &mut [f64]) {
        for &(i, c) in &self.linear {
            g[i] += c;
        }
        for t in &self.terms {
            let a = t.argument(x) * LN_2;
            for &(i, c) in &t.coeffs {
                g[i] += c / a;
            }
        }
    }

    fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .linear
            .iter()
            .map(|&(i, _)| i)
            .chain(self.terms.iter().flat_map(|t| t.coeffs.iter().map(|&(i, _)| i)))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvexProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl ConvexProblem {
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Smallest constraint value at `x` (negative when infeasible), together
    /// with the index of that constraint.
    pub fn worst_constraint(&self, x: &[f64]) -> (f64, usize) {
        let mut worst = (f64::INFINITY, 0);
        for (i, c) in self.constraints.iter().enumerate() {
            let v = c.value(x).unwrap_or(f64::NEG_INFINITY);
            if v < worst.0 {
                worst = (v, i);
            }
        }
        worst
    }

    pub fn strictly_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.num_vars && x.iter().all(|&v| v > 0.0) && self.worst_constraint(x).0 > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolverSettings {
    /// Target duality gap relative to the objective.
    pub gap_tolerance: f64,
    pub max_newton_steps: usize,
    /// Barrier parameter growth per centering step.
    pub mu: f64,
}

impl Default for SubsolverSettings {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-9,
            max_newton_steps: 2000,
            mu: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolverOutput {
    pub x: Vec<f64>,
    pub objective: f64,
    /// False when the step cap was hit; `x` is then the last feasible iterate.
    pub converged: bool,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubsolverError {
    #[error("constraint {constraint} cannot be satisfied (best value {value:e})")]
    Infeasible { constraint: usize, value: f64 },
}

struct Barrier<'a> {
    problem: &'a ConvexProblem,
    supports: Vec<Vec<usize>>,
}

impl<'a> Barrier<'a> {
    fn new(problem: &'a ConvexProblem) -> Self {
        Self {
            problem,
            supports: problem.constraints.iter().map(Constraint::support).collect(),
        }
    }

    /// `t c·x - Σ ln h(x) - Σ ln x`, or `None` outside the domain.
    fn value(&self, t: f64, x: &[f64]) -> Option<f64> {
        let mut v = t * self.problem.objective_value(x);
        for &xi in x {
            if !(xi > 0.0) {
                return None;
            }
            v -= xi.ln();
        }
        for c in &self.problem.constraints {
            let h = c.value(x)?;
            if !(h > 0.0) {
                return None;
            }
            v -= h.ln();
        }
        Some(v)
    }

    fn derivatives(&self, t: f64, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut g = DVector::from_iterator(n, self.problem.objective.iter().map(|c| t * c));
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            g[i] -= 1.0 / x[i];
            h[(i, i)] += 1.0 / (x[i] * x[i]);
        }
        let mut dense = vec![0.0; n];
        for (c, support) in self.problem.constraints.iter().zip(&self.supports) {
            let value = c.value(x).expect("iterate inside the domain");
            for &i in support {
                dense[i] = 0.0;
            }
            c.add_gradient(x, &mut dense);
            // -ln h: gradient -∇h/h, Hessian ∇h∇hᵀ/h² - ∇²h/h.
            for &i in support {
                g[i] -= dense[i] / value;
                for &j in support {
                    h[(i, j)] += dense[i] * dense[j] / (value * value);
                }
            }
            for term in &c.terms {
                let a = term.argument(x);
                let scale = 1.0 / (a * a * LN_2 * value);
                for &(i, ci) in &term.coeffs {
                    for &(j, cj) in &term.coeffs {
                        h[(i, j)] += ci * cj * scale;
                    }
                }
            }
        }
        (g, h)
    }
}

/// Solves `H d = -g` with Jacobi scaling, adding diagonal regularization if
/// the factorization fails.
fn newton_direction(g: &DVector<f64>, h: DMatrix<f64>) -> Option<DVector<f64>> {
    let n = g.len();
    let d = DVector::from_iterator(n, (0..n).map(|i| 1.0 / h[(i, i)].max(f64::MIN_POSITIVE).sqrt()));
    let mut scaled = h;
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= d[i] * d[j];
        }
    }
    let rhs = -g.component_mul(&d);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += reg;
        }
        if let Some(chol) = m.cholesky() {
            let z = chol.solve(&rhs);
            if z.iter().all(|v| v.is_finite()) {
                return Some(z.component_mul(&d));
            }
        }
        reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
    }
    None
}

struct Centering {
    steps: usize,
    stopped_early: bool,
}

/// Runs the barrier method from a strictly feasible `x`. `early_exit`
/// `(var, threshold)` ends the run as soon as `x[var] < threshold`.
fn run_barrier(
    problem: &ConvexProblem,
    x: &mut Vec<f64>,
    settings: &SubsolverSettings,
    early_exit: Option<(usize, f64)>,
) -> (bool, Centering) {
    let barrier = Barrier::new(problem);
    let m = (problem.constraints.len() + problem.num_vars) as f64;
    let scale = problem.objective.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
    let mut t = m / problem.objective_value(x).abs().max(1e-6 * scale);
    let mut steps = 0usize;
    loop {
        // Centering by damped Newton.
        loop {
            if steps >= settings.max_newton_steps {
                return (false, Centering { steps, stopped_early: false });
            }
            let (g, h) = barrier.derivatives(t, x);
            let Some(dir) = newton_direction(&g, h) else {
                break;
            };
            let decrement = -g.dot(&dir);
            if !(decrement > 1e-12) {
                break;
            }
            steps += 1;
            let f0 = barrier.value(t, x).expect("feasible iterate");
            let mut alpha = 1.0;
            // Keep x strictly positive before evaluating anything else.
            for (xi, di) in x.iter().zip(dir.iter()) {
                if *di < 0.0 {
                    alpha = f64::min(alpha, 0.99 * -xi / di);
                }
            }
            let mut accepted = false;
            let mut gain = 0.0;
            for _ in 0..80 {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + alpha * di).collect();
                if let Some(f) = barrier.value(t, &trial) {
                    // A step that leaves x unchanged in floating point is
                    // no progress even if the Armijo test passes.
                    if f <= f0 - 0.25 * alpha * decrement && trial != *x {
                        *x = trial;
                        accepted = true;
                        gain = f0 - f;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if let Some((var, threshold)) = early_exit {
                if x[var] < threshold {
                    return (true, Centering { steps, stopped_early: true });
                }
            }
            // Tiny accepted steps mean the barrier has hit rounding noise.
            if !accepted || decrement < 1e-9 || alpha < 1e-6 || gain <= 1e-13 * f0.abs().max(1.0) {
                break;
            }
        }
        let objective = problem.objective_value(x);
        if m / t <= settings.gap_tolerance * objective.abs().max(1e-9 * scale) {
            return (true, Centering { steps, stopped_early: false });
        }
        t *= settings.mu;
    }
}

/// Outcome of a phase I search.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOne {
    pub x: Vec<f64>,
    /// Smallest constraint value at `x`; positive means strictly feasible.
    pub worst: f64,
    pub worst_constraint: usize,
    pub newton_steps: usize,
}

/// Looks for a strictly feasible point by minimizing a common slack `s` in
/// `h_c(x) + s ≥ 0`, stopping once `s < -margin`.
pub fn phase_one(problem: &ConvexProblem, x0: &[f64], margin: f64, settings: &SubsolverSettings) -> PhaseOne {
    let n = problem.num_vars;
    let start: Vec<f64> = x0.iter().map(|&v| if v > 0.0 { v } else { 1e-6 }).collect();
    let (worst0, _) = problem.worst_constraint(&start);
    let s0 = if worst0.is_finite() { (-worst0).max(0.0) + 1.0 } else { 1e3 };
    // The slack enters shifted so that it stays non-negative: s = y - shift.
    let shift = s0 + 1.0;
    let aug = ConvexProblem {
        num_vars: n + 1,
        objective: {
            let mut c = vec![0.0; n + 1];
            c[n] = 1.0;
            c
        },
        constraints: problem
            .constraints
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.linear.push((n, 1.0));
                c.constant -= shift;
                c
            })
            .collect(),
    };
    let mut x = start.clone();
    x.push(s0 + shift);
    let mut best = start;
    let mut steps = 0;
    if aug.strictly_feasible(&x) {
        let (_, centering) = run_barrier(&aug, &mut x, settings, Some((n, shift - margin)));
        steps = centering.steps;
        best = x[..n].to_vec();
    }
    let (worst, worst_constraint) = problem.worst_constraint(&best);
    PhaseOne {
        x: best,
        worst,
        worst_constraint,
        newton_steps: steps,
    }
}

/// Solves the problem from `x0` when it is strictly feasible, otherwise after
/// a phase I search from `x0` (or from all ones).
pub fn solve(
    problem: &ConvexProblem,
    x0: Option<&[f64]>,
    settings: &SubsolverSettings,
) -> Result<SubsolverOutput, SubsolverError> {
    let n = problem.num_vars;
    let mut x: Vec<f64> = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
    let mut steps = 0;
    if !problem.strictly_feasible(&x) {
        let p1 = phase_one(problem, &x, 1e-9, settings);
        steps += p1.newton_steps;
        if !(p1.worst > 0.0) || !p1.x.iter().all(|&v| v > 0.0) {
            return Err(SubsolverError::Infeasible {
                constraint: p1.worst_constraint,
                value: p1.worst,
            });
        }
        x = p1.x;
    }
    let (converged, centering) = run_barrier(problem, &mut x, settings, None);
    steps += centering.steps;
    debug_assert!(!centering.stopped_early);
    Ok(SubsolverOutput {
        objective: problem.objective_value(&x),
        x,
        converged,
        newton_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate_floor(var: usize, floor: f64) -> Constraint {
        Constraint {
            terms: vec![LogTerm {
                offset: 1.0,
                coeffs: vec![(var, 1.0)],
            }],
            linear: vec![],
            constant: -floor,
        }
    }

    #[test]
    fn one_bit_needs_unit_power() {
        let p = ConvexProblem {
            num_vars: 1,
            objective: vec![1.0],
            constraints: vec![rate_floor(0, 1.0)],
        };
        let out = solve(&p, None, &SubsolverSettings::default()).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8, "{}", out.x[0]);
    }

    #[test]
    fn infeasible_floor() {
        let p = ConvexProblem {
            num_vars: 1,
            objective: vec![1.0],
            constraints: vec![rate_floor(0, 3.0), Constraint::budget(&[(0, 1.0)], 2.0)],
        };
        let err = solve(&p, None, &SubsolverSettings::default()).unwrap_err();
        assert!(matches!(err, SubsolverError::Infeasible { .. }));
    }

    #[test]
    fn two_channels_water_fill() {
        // min x0 + x1 s.t. log2(1+x0) + log2(1+x1) ≥ 2: symmetric optimum 1,1.
        let p = ConvexProblem {
            num_vars: 2,
            objective: vec![1.0, 1.0],
            constraints: vec![Constraint {
                terms: vec![
                    LogTerm { offset: 1.0, coeffs: vec![(0, 1.0)] },
                    LogTerm { offset: 1.0, coeffs: vec![(1, 1.0)] },
                ],
                linear: vec![],
                constant: -2.0,
            }],
        };
        let out = solve(&p, Some(&[5.0, 5.0]), &SubsolverSettings::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }
}
