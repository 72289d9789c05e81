//! Box-constrained solver for the control problem: projected gradient
//! descent accelerated with limited-memory quasi-Newton curvature and a
//! monotone backtracking line search.
//!
//! Each iteration builds a search direction from the stored curvature pairs
//! (two-loop recursion), walks the projected arc `P(u + alpha * d)` with an
//! Armijo sufficient-decrease test, and falls back to the projected
//! steepest-descent arc when the accelerated direction stalls. Accepted
//! steps never increase the cost, so the final cost is bounded by the cost
//! of the projected warm start. The solver is deterministic: identical
//! problems and warm starts produce bit-identical iterates.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ocp::{ControlSequence, OcpError, OcpProblem};

/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
/// Trial steps granted to the quasi-Newton arc before falling back to
/// steepest descent.
const QN_TRIALS: usize = 12;
/// Trial steps granted to the steepest-descent arc.
const SD_TRIALS: usize = 30;
/// Relative curvature threshold below which a pair is discarded.
const CURVATURE_EPS: f64 = 1e-10;

/// Stop conditions and effort limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Convergence threshold on the projected-gradient residual
    /// (infinity norm of `u - P(u - grad)`).
    pub tolerance: f64,
    /// Hard cap on accepted iterations.
    pub max_iterations: usize,
    /// Number of curvature pairs retained.
    pub memory: usize,
    /// Optional wall-clock budget in milliseconds. Leave `None` for
    /// reproducible closed-loop runs; wall time is machine-dependent.
    pub time_budget_ms: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 500,
            memory: 10,
            time_budget_ms: None,
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Projected-gradient residual reached the tolerance.
    Converged,
    /// Iteration cap hit; the best iterate so far is returned.
    IterationCap,
    /// Wall-clock budget hit; the best iterate so far is returned.
    TimeCap,
    /// The search cannot continue: non-finite cost at the warm start, a
    /// failed gradient evaluation, or no strictly decreasing step left at
    /// float resolution. `u_seq` still carries the best iterate found.
    Failed,
}

/// Result of one solve.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// Best iterate found, always within bounds.
    pub u_seq: ControlSequence,
    pub status: SolveStatus,
    /// Accepted iterations.
    pub iterations: usize,
    /// Measured wall-clock duration of the solve, ms.
    pub solve_time_ms: f64,
    pub final_cost: f64,
    /// Projected-gradient residual at the final iterate.
    pub final_residual: f64,
}

/// Anything the solver can minimize over a box: the control problem itself,
/// or simpler fixtures in tests.
pub trait Objective {
    fn dim(&self) -> usize;
    /// `(lower, upper)` bounds of flat coordinate `k`.
    fn bound(&self, k: usize) -> (f64, f64);
    fn cost(&self, u: &[f64]) -> f64;
    fn cost_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>), OcpError>;
}

impl Objective for OcpProblem {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn bound(&self, k: usize) -> (f64, f64) {
        let c = k % 3;
        (self.bounds.min[c], self.bounds.max[c])
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.multi_stage_cost(&ControlSequence::from_flat(u))
    }

    fn cost_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>), OcpError> {
        self.multi_stage_cost_and_gradient(&ControlSequence::from_flat(u))
    }
}

/// Clamps every input of the sequence into the box. Exact: components
/// already inside pass through unchanged.
pub fn project_box(u_seq: &ControlSequence, bounds: &crate::ocp::InputBounds) -> ControlSequence {
    ControlSequence(u_seq.iter().map(|u| bounds.clamp(*u)).collect())
}

/// Warm start for the next cycle from the previous solution: drop the first
/// input, repeat the last. `[a, b, c]` becomes `[b, c, c]`.
pub fn shift_warm_start(previous: &OcpSolution) -> ControlSequence {
    let inputs = &previous.u_seq.0;
    if inputs.len() <= 1 {
        return previous.u_seq.clone();
    }
    let mut shifted = inputs[1..].to_vec();
    shifted.push(*inputs.last().expect("nonempty checked above"));
    ControlSequence(shifted)
}

/// Solves the control problem from the given warm start.
pub fn solve(
    problem: &OcpProblem,
    warm_start: &ControlSequence,
    config: &SolverConfig,
) -> OcpSolution {
    let result = minimize(problem, &warm_start.to_flat(), config);
    OcpSolution {
        u_seq: ControlSequence::from_flat(&result.u),
        status: result.status,
        iterations: result.iterations,
        solve_time_ms: result.solve_time_ms,
        final_cost: result.final_cost,
        final_residual: result.final_residual,
    }
}

/// Generic core of [`solve`] over any boxed objective.
pub struct MinimizeResult {
    pub u: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub final_cost: f64,
    pub final_residual: f64,
}

pub fn minimize(obj: &impl Objective, warm_start: &[f64], config: &SolverConfig) -> MinimizeResult {
    let start = Instant::now();
    let dim = obj.dim();
    assert_eq!(warm_start.len(), dim, "warm start length must match");

    let mut u = sanitize_project(obj, warm_start);
    let finish = |u: Vec<f64>,
                  status: SolveStatus,
                  iterations: usize,
                  final_cost: f64,
                  final_residual: f64| MinimizeResult {
        u,
        status,
        iterations,
        solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
        final_cost,
        final_residual,
    };

    let (mut f, mut g) = match obj.cost_and_gradient(&u) {
        Ok((f, g)) if f.is_finite() => (f, g),
        Ok((f, _)) => return finish(u, SolveStatus::Failed, 0, f, f64::INFINITY),
        Err(_) => return finish(u, SolveStatus::Failed, 0, f64::INFINITY, f64::INFINITY),
    };

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut gamma = 1.0;
    let mut iterations = 0usize;
    // Step-size hint for the gradient arc, carried across iterations so a
    // badly scaled first guess is paid for once, not every iteration.
    let mut sd_alpha = 1.0 / inf_norm(&g).max(1.0);

    loop {
        let residual = projected_residual(obj, &u, &g);
        if residual <= config.tolerance {
            return finish(u, SolveStatus::Converged, iterations, f, residual);
        }
        if iterations >= config.max_iterations {
            return finish(u, SolveStatus::IterationCap, iterations, f, residual);
        }
        if let Some(budget) = config.time_budget_ms {
            if start.elapsed().as_secs_f64() * 1e3 >= budget {
                return finish(u, SolveStatus::TimeCap, iterations, f, residual);
            }
        }

        // Accelerated direction when curvature is available; plain gradient
        // arc otherwise, and again if the accelerated arc yields nothing
        // (then the curvature memory has gone stale: drop it).
        let mut accepted = if pairs.is_empty() {
            None
        } else {
            let d = two_loop_direction(&pairs, &g, gamma);
            line_search(obj, &u, f, &g, &d, 1.0, QN_TRIALS)
        };
        if accepted.is_none() {
            pairs.clear();
            let d: Vec<f64> = g.iter().map(|gk| -gk).collect();
            accepted = line_search(obj, &u, f, &g, &d, sd_alpha, SD_TRIALS);
            if let Some((_, _, alpha)) = &accepted {
                sd_alpha = (alpha * 4.0).min(1e6);
            }
        }

        let (u_next, f_next, _) = match accepted {
            Some(step) => step,
            None => return finish(u, SolveStatus::Failed, iterations, f, residual),
        };
        debug_assert!(f_next <= f, "line search accepted an increase");

        let g_next = match obj.cost_and_gradient(&u_next) {
            Ok((_, g)) => g,
            Err(_) => return finish(u, SolveStatus::Failed, iterations, f, residual),
        };

        let s: Vec<f64> = u_next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > CURVATURE_EPS * norm2(&s) * norm2(&y) {
            gamma = sy / dot(&y, &y);
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            let rho = 1.0 / sy;
            pairs.push_back((s, y, rho));
        }

        u = u_next;
        f = f_next;
        g = g_next;
        iterations += 1;
    }
}

// Projects the warm start into the box, replacing non-finite entries with
// the bound midpoint so the returned iterate is always usable.
fn sanitize_project(obj: &impl Objective, u: &[f64]) -> Vec<f64> {
    u.iter()
        .enumerate()
        .map(|(k, &v)| {
            let (lo, hi) = obj.bound(k);
            if v.is_finite() {
                v.clamp(lo, hi)
            } else {
                0.5 * (lo + hi)
            }
        })
        .collect()
}

fn project(obj: &impl Objective, u: &mut [f64]) {
    for (k, v) in u.iter_mut().enumerate() {
        let (lo, hi) = obj.bound(k);
        *v = v.clamp(lo, hi);
    }
}

/// Infinity norm of `u - P(u - g)`: zero exactly at a box-stationary point.
fn projected_residual(obj: &impl Objective, u: &[f64], g: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for k in 0..u.len() {
        let (lo, hi) = obj.bound(k);
        let moved = (u[k] - g[k]).clamp(lo, hi);
        r = r.max((u[k] - moved).abs());
    }
    r
}

// Backtracking Armijo search along the projected arc P(u + alpha * d).
//
// Each rejected trial shrinks the step. When the trial produced a finite
// cost, the new step comes from the minimizer of the quadratic through
// f(0), f'(0) and f(alpha) along the projected segment, clamped to
// [0.1, 0.5] of the current step so one bad fit cannot stall or overshoot
// the backtracking. Non-finite trials fall back to plain halving.
//
// Acceptance demands strict descent on top of the Armijo bound: a trial
// that matches the current cost to the last bit would loop forever
// upstream. Returns the accepted point, its cost, and the accepted step,
// or None once the arc collapses onto the current iterate or the trial
// budget runs out.
fn line_search(
    obj: &impl Objective,
    u: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    alpha0: f64,
    max_trials: usize,
) -> Option<(Vec<f64>, f64, f64)> {
    let mut alpha = alpha0;
    for _ in 0..max_trials {
        let mut u_try: Vec<f64> = u.iter().zip(d).map(|(uk, dk)| uk + alpha * dk).collect();
        project(obj, &mut u_try);
        if u_try == u {
            // The arc has collapsed onto the current iterate.
            return None;
        }
        let decrease: f64 = g
            .iter()
            .zip(u_try.iter().zip(u))
            .map(|(gk, (t, uk))| gk * (t - uk))
            .sum();
        let mut shrink = 0.5;
        if decrease < 0.0 {
            let f_try = obj.cost(&u_try);
            if f_try.is_finite() {
                if f_try <= f + ARMIJO_C1 * decrease && f_try < f {
                    return Some((u_try, f_try, alpha));
                }
                // Minimizer of the quadratic interpolant along the segment.
                let denom = f_try - f - decrease;
                if denom > 0.0 {
                    shrink = (-decrease / (2.0 * denom)).clamp(0.1, 0.5);
                }
            }
        }
        alpha *= shrink;
    }
    None
}

// Two-loop recursion: applies the implicit inverse Hessian to the gradient.
fn two_loop_direction(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qk, yk) in q.iter_mut().zip(y) {
            *qk -= a * yk;
        }
        alphas.push(a);
    }
    for qk in q.iter_mut() {
        *qk *= gamma;
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qk, sk) in q.iter_mut().zip(s) {
            *qk += (a - b) * sk;
        }
    }
    for qk in q.iter_mut() {
        *qk = -*qk;
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlInput, MavState, ModelParams, STANDARD_GRAVITY};
    use crate::ocp::{InputBounds, OcpWeights, ScenarioSet};
    use nalgebra::Vector3;

    /// Separable quadratic with a known box-constrained minimizer.
    struct Quadratic {
        target: Vec<f64>,
        curvature: Vec<f64>,
        lower: f64,
        upper: f64,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn bound(&self, _k: usize) -> (f64, f64) {
            (self.lower, self.upper)
        }
        fn cost(&self, u: &[f64]) -> f64 {
            u.iter()
                .zip(&self.target)
                .zip(&self.curvature)
                .map(|((u, z), c)| c * (u - z) * (u - z))
                .sum()
        }
        fn cost_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>), OcpError> {
            let g = u
                .iter()
                .zip(&self.target)
                .zip(&self.curvature)
                .map(|((u, z), c)| 2.0 * c * (u - z))
                .collect();
            Ok((self.cost(u), g))
        }
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            tolerance: 1e-9,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn quadratic_reaches_the_analytic_minimum() {
        let q = Quadratic {
            target: vec![0.3, -1.2, 2.5, 0.0, 7.7],
            curvature: vec![1.0, 4.0, 0.5, 9.0, 2.0],
            lower: -100.0,
            upper: 100.0,
        };
        let r = minimize(&q, &vec![0.0; 5], &tight());
        assert_eq!(r.status, SolveStatus::Converged);
        for (u, z) in r.u.iter().zip(&q.target) {
            assert!((u - z).abs() < 1e-8, "{u} vs {z}");
        }
    }

    #[test]
    fn quadratic_with_active_bounds_clamps_the_minimizer() {
        let q = Quadratic {
            target: vec![5.0, -5.0, 0.25],
            curvature: vec![1.0, 2.0, 3.0],
            lower: -1.0,
            upper: 1.0,
        };
        let r = minimize(&q, &vec![0.0; 3], &tight());
        assert_eq!(r.status, SolveStatus::Converged);
        let expect = [1.0, -1.0, 0.25];
        for (u, z) in r.u.iter().zip(&expect) {
            assert!((u - z).abs() < 1e-8, "{u} vs {z}");
        }
    }

    fn altitude_problem(n: usize) -> OcpProblem {
        let model = ModelParams::default();
        OcpProblem {
            u_ref: ControlInput::hover(model.g),
            u_prev: ControlInput::hover(model.g),
            model,
            horizon: n,
            scenarios: ScenarioSet::new(vec![0.05, 0.1, 0.2], vec![0.2, 0.5, 0.3]).unwrap(),
            x0: MavState::at_rest(Vector3::zeros()),
            x_ref: MavState::at_rest(Vector3::new(0.0, 0.0, 1.0)),
            weights: OcpWeights {
                q_x: [6.0, 6.0, 20.0, 50.0, 50.0, 10.0, 20.0, 20.0],
                q_u: [20.0, 20.0, 20.0],
                q_du: [40.0, 65.0, 65.0],
                mu_obs: 0.0,
            },
            obstacles: vec![],
            bounds: InputBounds::symmetric(STANDARD_GRAVITY, std::f64::consts::PI / 18.0),
        }
    }

    #[test]
    fn hover_warm_start_converges_immediately() {
        let mut problem = altitude_problem(10);
        problem.x_ref = problem.x0;
        let warm = ControlSequence::uniform(problem.u_ref, 10);
        let sol = solve(&problem, &warm, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.iterations <= 2, "took {} iterations", sol.iterations);
        assert_eq!(sol.final_cost, 0.0);
        assert_eq!(sol.final_residual, 0.0);
    }

    #[test]
    fn climb_solve_converges_and_decreases_cost() {
        let problem = altitude_problem(10);
        let warm = ControlSequence::uniform(problem.u_ref, 10);
        let warm_cost = problem.multi_stage_cost(&warm);
        let sol = solve(&problem, &warm, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.final_cost < warm_cost);
        // Climbing demands thrust above hover in the early moves.
        assert!(sol.u_seq[0].thrust > problem.model.g);
        for u in sol.u_seq.iter() {
            assert!(problem.bounds.contains(u));
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let problem = altitude_problem(10);
        let warm = ControlSequence::uniform(
            ControlInput {
                thrust: 9.0,
                phi_d: 0.01,
                theta_d: -0.02,
            },
            10,
        );
        let a = solve(&problem, &warm, &SolverConfig::default());
        let b = solve(&problem, &warm, &SolverConfig::default());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.final_cost.to_bits(), b.final_cost.to_bits());
        for (ua, ub) in a.u_seq.iter().zip(b.u_seq.iter()) {
            assert_eq!(ua.to_array().map(f64::to_bits), ub.to_array().map(f64::to_bits));
        }
    }

    #[test]
    fn zero_time_budget_returns_the_projected_warm_start() {
        let problem = altitude_problem(10);
        let warm = ControlSequence::uniform(
            ControlInput {
                thrust: 25.0,
                phi_d: 0.5,
                theta_d: -0.5,
            },
            10,
        );
        let sol = solve(
            &problem,
            &warm,
            &SolverConfig {
                time_budget_ms: Some(0.0),
                ..SolverConfig::default()
            },
        );
        assert_eq!(sol.status, SolveStatus::TimeCap);
        assert_eq!(sol.iterations, 0);
        let tilt = std::f64::consts::PI / 18.0;
        for u in sol.u_seq.iter() {
            assert_eq!(u.thrust, 2.0 * problem.model.g);
            assert_eq!(u.phi_d, tilt);
            assert_eq!(u.theta_d, -tilt);
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let problem = altitude_problem(10);
        let warm = ControlSequence::uniform(ControlInput::hover(problem.model.g), 10);
        let sol = solve(
            &problem,
            &warm,
            &SolverConfig {
                max_iterations: 1,
                tolerance: 1e-12,
                ..SolverConfig::default()
            },
        );
        assert_eq!(sol.status, SolveStatus::IterationCap);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn non_finite_warm_start_cost_fails_without_panicking() {
        let mut problem = altitude_problem(5);
        problem.x0.p.x = f64::NAN;
        let warm = ControlSequence::uniform(ControlInput::hover(problem.model.g), 5);
        let sol = solve(&problem, &warm, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Failed);
        assert_eq!(sol.iterations, 0);
        for u in sol.u_seq.iter() {
            assert!(problem.bounds.contains(u));
        }
    }

    #[test]
    fn shift_drops_the_first_input_and_repeats_the_last() {
        let a = ControlInput::from_array([1.0, 0.01, -0.01]);
        let b = ControlInput::from_array([2.0, 0.02, -0.02]);
        let c = ControlInput::from_array([3.0, 0.03, -0.03]);
        let sol = OcpSolution {
            u_seq: ControlSequence(vec![a, b, c]),
            status: SolveStatus::Converged,
            iterations: 3,
            solve_time_ms: 0.1,
            final_cost: 0.0,
            final_residual: 0.0,
        };
        assert_eq!(shift_warm_start(&sol).0, vec![b, c, c]);
        let single = OcpSolution {
            u_seq: ControlSequence(vec![a]),
            ..sol
        };
        assert_eq!(shift_warm_start(&single).0, vec![a]);
    }

    #[test]
    fn warm_starting_saves_iterations_across_a_receding_horizon() {
        let mut problem = altitude_problem(8);
        let config = SolverConfig::default();
        let cold = ControlSequence::uniform(problem.u_ref, 8);
        let mut warm = cold.clone();
        let mut warm_total = 0usize;
        let mut cold_total = 0usize;
        for step in 0..20 {
            problem.x0.p.z = 0.04 * step as f64;
            let warm_sol = solve(&problem, &warm, &config);
            let cold_sol = solve(&problem, &cold, &config);
            warm_total += warm_sol.iterations;
            cold_total += cold_sol.iterations;
            warm = shift_warm_start(&warm_sol);
        }
        assert!(
            warm_total <= cold_total,
            "warm {warm_total} vs cold {cold_total}"
        );
    }

    #[test]
    fn projection_is_exact_and_idempotent() {
        let bounds = InputBounds::symmetric(STANDARD_GRAVITY, 0.17);
        let seq = ControlSequence(vec![
            ControlInput::from_array([30.0, 0.2, -0.3]),
            ControlInput::from_array([5.0, -0.1, 0.05]),
        ]);
        let once = project_box(&seq, &bounds);
        assert_eq!(once[0].to_array(), [2.0 * STANDARD_GRAVITY, 0.17, -0.17]);
        assert_eq!(once[1].to_array(), [5.0, -0.1, 0.05]);
        let twice = project_box(&once, &bounds);
        assert_eq!(once, twice);
    }
}
