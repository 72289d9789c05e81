//! Multi-stage nonlinear MPC for MAV navigation over delayed networks.
//!
//! The controller hedges against stochastic round-trip delays by optimizing
//! one shared control sequence against several prediction branches, each
//! rolled out at a different sampling time, weighted by the probability
//! that the realized delay falls in that branch's interval. The crate
//! provides the model, the obstacle penalty, the online delay estimator,
//! the optimal-control problem with its exact gradient, a projected
//! quasi-Newton solver, and a deterministic closed-loop simulation harness.

pub mod delay;
pub mod dynamics;
pub mod obstacles;
pub mod ocp;
pub mod sim;
pub mod solver;

pub use delay::{DelayBuffer, DelayModelError, GammaParams, TailPolicy};
pub use dynamics::{ControlInput, DynamicsError, MavState, ModelParams};
pub use obstacles::CylinderObstacle;
pub use ocp::{ControlSequence, InputBounds, OcpError, OcpProblem, OcpWeights, ScenarioSet};
pub use solver::{
    project_box, shift_warm_start, solve, Objective, OcpSolution, SolveStatus, SolverConfig,
};
