//! Closed-loop simulator of the remote-controller/vehicle loop.
//!
//! Each control cycle plays out like this: the controller reads the plant
//! state at cycle start, refreshes its delay estimate from the round trips
//! observed so far, solves the control problem, and dispatches the first
//! input of the solution. That command spends one sampled round-trip delay
//! in flight; the plant keeps applying the previously received input
//! (zero-order hold) until it lands. The next cycle starts after
//! `max(nominal period, delay)`, so a late command is in force before the
//! controller computes again.
//!
//! The plant integrates at `plant_substep` resolution between events, with
//! exact partial steps landing on command arrivals and cycle boundaries.
//! Everything stochastic flows from the one seeded generator in the config,
//! making a full episode a pure function of its `EpisodeConfig`.

mod config;
mod output;
mod trace;

pub use config::{ControllerConfig, ControllerMode, DelayConfig, EpisodeConfig, WorldConfig};
pub use output::{emit_outputs, parse_trace_csv};
pub use trace::{
    collision_check, path_length, CycleDetail, EpisodeMetrics, PlantSample, SimulationTrace,
    TraceRow,
};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::delay::{sample_delay, scenario_weights, DelayBuffer, DelayModelError, GammaParams};
use crate::dynamics::{euler_step, ControlInput, DynamicsError, MavState, ModelParams};
use crate::obstacles::CylinderObstacle;
use crate::ocp::{ControlSequence, OcpError, OcpProblem, ScenarioSet};
use crate::solver::{shift_warm_start, solve, OcpSolution};

/// Slack when comparing event times, seconds. Far below any physical
/// timescale here; only absorbs float residue from summing substeps.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error("plant integration failed: {0}")]
    Plant(#[from] DynamicsError),
    #[error("control problem rejected: {0}")]
    Ocp(#[from] OcpError),
    #[error("delay model failed: {0}")]
    Delay(#[from] DelayModelError),
    #[error("trace is empty, nothing to write")]
    EmptyTrace,
    #[error("trace file malformed at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Runs one closed-loop episode to goal attainment or the time cap.
pub fn run_episode(config: &EpisodeConfig) -> Result<(SimulationTrace, EpisodeMetrics), SimError> {
    config.validate()?;
    let c = &config.controller;
    let model = &config.model;
    let ts_nominal = c.sampling_times[0];
    let start = Vector3::from(config.start);
    let goal = Vector3::from(config.goal);

    let branch_times: Vec<f64> = match c.mode {
        ControllerMode::Standard => vec![ts_nominal],
        _ => c.sampling_times.clone(),
    };
    let branches = branch_times.len();
    let mut weights_now: Vec<f64> = match c.mode {
        ControllerMode::Standard => vec![1.0],
        ControllerMode::FixedWeights => {
            normalized(c.fixed_weights.as_ref().expect("checked by validate"))
        }
        ControllerMode::Multistage => vec![1.0 / branches as f64; branches],
    };

    let planner_obstacles: Vec<CylinderObstacle> = config
        .world
        .obstacles
        .iter()
        .map(|o| o.inflated(config.world.margin))
        .collect();

    let truth = if config.delays.enabled {
        Some(GammaParams::new(config.delays.alpha, config.delays.beta)?)
    } else {
        None
    };
    let mut rng = ChaCha12Rng::seed_from_u64(config.delays.seed);
    let mut buffer = DelayBuffer::new(config.delays.n_max.max(1));
    let mut fitted: Option<GammaParams> = None;

    let u_ref = ControlInput::hover(model.g);
    let x_ref = MavState::at_rest(goal);
    let mut state = MavState::at_rest(start);
    let mut held = u_ref;
    let mut u_prev = u_ref;
    let mut warm = initial_warm_start(u_ref, c.horizon, c.warm_start_dither);

    let mut rows: Vec<TraceRow> = Vec::new();
    let mut cycles: Vec<CycleDetail> = Vec::new();
    let mut samples = vec![PlantSample {
        t: 0.0,
        p: state.p,
        v: state.v,
    }];

    let mut t = 0.0_f64;
    let mut reached_at: Option<f64> = if (state.p - goal).norm() <= config.goal_radius {
        Some(0.0)
    } else {
        None
    };

    while t < config.max_sim_time - TIME_EPS && !(config.stop_at_goal && reached_at.is_some()) {
        let mut fit_ok = false;
        if config.delays.enabled {
            if let Ok(params) = buffer.fit() {
                fitted = Some(params);
                fit_ok = true;
            }
        }
        if c.mode == ControllerMode::Multistage {
            if let Some(params) = &fitted {
                if let Ok(w) = scenario_weights(&branch_times, params, config.delays.tail_policy) {
                    weights_now = w;
                }
            }
        }

        let problem = OcpProblem {
            model: model.clone(),
            horizon: c.horizon,
            scenarios: ScenarioSet::new(branch_times.clone(), weights_now.clone())?,
            x0: state,
            x_ref,
            u_ref,
            u_prev,
            weights: c.weights.clone(),
            obstacles: planner_obstacles.clone(),
            bounds: c.bounds.clone(),
        };
        let solution = solve(&problem, &warm, &c.solver);
        let (command, next_warm, dispatched) = dispatch_command(&solution, &warm, u_prev);
        warm = next_warm;
        if dispatched {
            u_prev = command;
        }

        let delay = match &truth {
            Some(params) => {
                let d = sample_delay(&mut rng, params)?;
                buffer.push(d);
                d
            }
            None => 0.0,
        };
        let period = ts_nominal.max(delay);
        let natural_end = t + period;
        let cycle_end = if natural_end >= config.max_sim_time - TIME_EPS {
            config.max_sim_time
        } else {
            natural_end
        };
        let arrival = if dispatched { Some(t + delay) } else { None };

        let (alpha_hat, beta_hat) = fitted.as_ref().map_or((0.0, 0.0), |p| (p.alpha, p.beta));
        rows.push(TraceRow {
            t,
            state: state.to_array(),
            command: command.to_array(),
            delay,
            alpha_hat,
            beta_hat,
            weights: weights_now.clone(),
            solve_ms: solution.iterations as f64 * config.modeled_ms_per_iteration,
        });
        cycles.push(CycleDetail {
            t,
            status: solution.status,
            iterations: solution.iterations,
            wall_ms: solution.solve_time_ms,
            arrival,
            fit_ok,
        });

        // Plant: previous input until the command lands, new input after.
        let switch = arrival.map_or(cycle_end, |a| a.min(cycle_end));
        let mut touch = integrate_segment(
            &mut state,
            &held,
            model,
            t,
            switch,
            config,
            &goal,
            &mut samples,
        )?;
        let stopping = config.stop_at_goal && touch.is_some();
        if !stopping {
            if arrival.is_some_and(|a| a <= cycle_end) {
                held = command;
            }
            let late = integrate_segment(
                &mut state,
                &held,
                model,
                switch,
                cycle_end,
                config,
                &goal,
                &mut samples,
            )?;
            touch = touch.or(late);
        }
        if reached_at.is_none() {
            reached_at = touch;
        }
        t = match (config.stop_at_goal, touch) {
            (true, Some(at)) => at,
            _ => cycle_end,
        };
    }

    let (collision_count, min_obstacle_clearance) =
        collision_check(&samples, &config.world.obstacles);
    let wall: Vec<f64> = cycles.iter().map(|c| c.wall_ms).collect();
    let metrics = EpisodeMetrics {
        path_length: path_length(&samples),
        reached_goal: reached_at.is_some(),
        min_obstacle_clearance,
        collision_count,
        mean_solve_time_ms: if wall.is_empty() {
            0.0
        } else {
            wall.iter().sum::<f64>() / wall.len() as f64
        },
        max_solve_time_ms: wall.iter().fold(0.0, |m: f64, w| m.max(*w)),
        episode_duration: t,
    };
    Ok((SimulationTrace { rows, cycles, samples }, metrics))
}

// What leaves the controller this cycle. Any solution with a usable first
// input is dispatched, including one whose line search stalled after real
// progress: the returned iterate is still the best point seen and never
// worse than the warm start. Only a solve that produced garbage (non-finite
// cost or input) is withheld, in which case the plant keeps holding and the
// previous command is re-recorded.
fn dispatch_command(
    solution: &OcpSolution,
    warm: &ControlSequence,
    previous: ControlInput,
) -> (ControlInput, ControlSequence, bool) {
    if solution.final_cost.is_finite() && solution.u_seq[0].is_finite() {
        (solution.u_seq[0], shift_warm_start(solution), true)
    } else {
        (previous, warm.clone(), false)
    }
}

// First-cycle warm start: hover inputs, with the configured push on the
// commanded angles so a symmetric scene cannot pin the optimizer to the
// axis where the sideways gradient vanishes identically.
fn initial_warm_start(u_ref: ControlInput, horizon: usize, dither: f64) -> ControlSequence {
    ControlSequence::uniform(
        ControlInput {
            thrust: u_ref.thrust,
            phi_d: u_ref.phi_d + dither,
            theta_d: u_ref.theta_d + dither,
        },
        horizon,
    )
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    w.iter().map(|wi| wi / sum).collect()
}

// Integrates the plant from `t_from` to `t_to` under a fixed input,
// sampling after every substep. Returns the time of the first goal touch
// inside the segment; when the episode stops at the goal, integration ends
// right there so the recorded path does too.
#[allow(clippy::too_many_arguments)]
fn integrate_segment(
    state: &mut MavState,
    input: &ControlInput,
    model: &ModelParams,
    t_from: f64,
    t_to: f64,
    config: &EpisodeConfig,
    goal: &Vector3<f64>,
    samples: &mut Vec<PlantSample>,
) -> Result<Option<f64>, SimError> {
    let mut t = t_from;
    let mut touch = None;
    while t_to - t > TIME_EPS {
        let dt = config.plant_substep.min(t_to - t);
        *state = euler_step(state, input, model, dt)?;
        t += dt;
        if t_to - t <= TIME_EPS {
            t = t_to;
        }
        samples.push(PlantSample {
            t,
            p: state.p,
            v: state.v,
        });
        if touch.is_none() && (state.p - goal).norm() <= config.goal_radius {
            touch = Some(t);
            if config.stop_at_goal {
                break;
            }
        }
    }
    Ok(touch)
}
