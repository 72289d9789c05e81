//! Helpers shared by the integration suites: an implementation-independent
//! quadrature oracle for the delay CDF, a finite-difference gradient
//! reference, random control problems, and shipped-config loading.

// Each test binary compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::Vector3;
use rand::Rng;

use mav_nmpc::dynamics::STANDARD_GRAVITY;
use mav_nmpc::sim::EpisodeConfig;
use mav_nmpc::{
    ControlInput, ControlSequence, CylinderObstacle, InputBounds, MavState, ModelParams,
    OcpProblem, OcpWeights, ScenarioSet,
};

/// Directory holding the shipped scenario configs, resolved relative to the
/// crate so tests run from any working directory.
pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Loads and validates one shipped scenario config by file name.
pub fn load_scenario(name: &str) -> EpisodeConfig {
    let path = configs_dir().join(name);
    EpisodeConfig::from_file(&path)
        .unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

/// Regularized lower incomplete gamma function evaluated by adaptive Simpson
/// quadrature of the normalized density, with the normalizing constant taken
/// from an exact log-factorial. Integer shapes only, which is all the
/// accuracy grid needs; the production path (power series plus continued
/// fraction under a Lanczos log-gamma) shares no code with this.
pub fn gamma_cdf_oracle(t: f64, alpha: u32, beta: f64) -> f64 {
    assert!(alpha >= 1 && beta > 0.0 && t >= 0.0 && t.is_finite());
    if t == 0.0 {
        return 0.0;
    }
    let a = alpha as f64;
    let ln_norm = ln_factorial(alpha - 1) + a * beta.ln();
    let density = move |x: f64| {
        if x == 0.0 {
            // x^(a-1) at zero: 1 for a = 1, 0 for any larger shape.
            if alpha == 1 {
                1.0 / beta
            } else {
                0.0
            }
        } else {
            ((a - 1.0) * x.ln() - x / beta - ln_norm).exp()
        }
    };
    adaptive_simpson(&density, 0.0, t, 1e-11)
}

fn ln_factorial(n: u32) -> f64 {
    (1..=u64::from(n)).map(|k| (k as f64).ln()).sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= 15.0 * tol {
        return refined + (refined - whole) / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Central finite differences of the weighted scenario cost over the
/// flattened control sequence, one coordinate at a time.
pub fn fd_gradient(problem: &OcpProblem, u: &ControlSequence, h: f64) -> Vec<f64> {
    let flat = u.to_flat();
    let mut g = vec![0.0; flat.len()];
    for k in 0..flat.len() {
        let mut hi = flat.clone();
        let mut lo = flat.clone();
        hi[k] += h;
        lo[k] -= h;
        let f_hi = problem.multi_stage_cost(&ControlSequence::from_flat(&hi));
        let f_lo = problem.multi_stage_cost(&ControlSequence::from_flat(&lo));
        g[k] = (f_hi - f_lo) / (2.0 * h);
    }
    g
}

/// A randomized control problem of the given size. Obstacles, when present,
/// straddle the region the rollout sweeps so the penalty term is exercised,
/// not just compiled.
pub fn random_problem(
    rng: &mut impl Rng,
    horizon: usize,
    branches: usize,
    obstacles: bool,
) -> OcpProblem {
    let model = ModelParams::default();
    let mut times = Vec::with_capacity(branches);
    let mut t = 0.0;
    for _ in 0..branches {
        t += rng.random_range(0.03..0.12);
        times.push(t);
    }
    let weights: Vec<f64> = (0..branches).map(|_| rng.random_range(0.1..1.0)).collect();
    let obs = if obstacles {
        vec![
            CylinderObstacle {
                x: rng.random_range(-2.0..2.0),
                y: rng.random_range(2.0..5.0),
                radius: rng.random_range(0.5..2.0),
                height: 10.0,
            },
            CylinderObstacle {
                x: rng.random_range(-3.0..0.0),
                y: rng.random_range(0.0..3.0),
                radius: rng.random_range(0.2..1.0),
                height: 4.0,
            },
        ]
    } else {
        vec![]
    };
    OcpProblem {
        u_ref: ControlInput::hover(model.g),
        u_prev: ControlInput {
            thrust: rng.random_range(5.0..15.0),
            phi_d: rng.random_range(-0.15..0.15),
            theta_d: rng.random_range(-0.15..0.15),
        },
        model,
        horizon,
        scenarios: ScenarioSet::new(times, weights).expect("valid by construction"),
        x0: MavState {
            p: Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..6.0),
                rng.random_range(0.0..3.0),
            ),
            v: Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
            ),
            phi: rng.random_range(-0.15..0.15),
            theta: rng.random_range(-0.15..0.15),
        },
        x_ref: MavState::at_rest(Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(4.0..9.0),
            rng.random_range(0.5..2.0),
        )),
        weights: OcpWeights {
            q_x: std::array::from_fn(|_| rng.random_range(1.0..50.0)),
            q_u: std::array::from_fn(|_| rng.random_range(1.0..50.0)),
            q_du: std::array::from_fn(|_| rng.random_range(1.0..100.0)),
            mu_obs: if obstacles { 1e3 } else { 0.0 },
        },
        obstacles: obs,
        bounds: InputBounds::symmetric(STANDARD_GRAVITY, std::f64::consts::PI / 18.0),
    }
}

/// A random in-bounds control sequence of length `n`.
pub fn random_sequence(rng: &mut impl Rng, n: usize) -> ControlSequence {
    ControlSequence(
        (0..n)
            .map(|_| ControlInput {
                thrust: rng.random_range(4.0..16.0),
                phi_d: rng.random_range(-0.17..0.17),
                theta_d: rng.random_range(-0.17..0.17),
            })
            .collect(),
    )
}
