//! The finite-horizon optimal control problem the controller solves each
//! cycle.
//!
//! One shared input sequence is rolled out once per scenario, where a
//! scenario is the same model discretized at a different sampling time. Each
//! scenario accumulates tracking, actuation, smoothness, and obstacle
//! penalty terms; the total cost is the weighted sum over scenarios. The
//! gradient is computed exactly by a reverse (adjoint) sweep through the
//! Euler rollouts.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::delay::validate_sampling_times;
use crate::dynamics::{euler_step, ControlInput, DynamicsError, MavState, ModelParams};
use crate::obstacles::{violation, violation_gradient, CylinderObstacle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OcpError {
    #[error("scenario {scenario} rollout diverged at step {step}")]
    ScenarioDiverged { scenario: usize, step: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Diagonal weights of the stage cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpWeights {
    /// State tracking weights over `[px, py, pz, vx, vy, vz, phi, theta]`.
    pub q_x: [f64; 8],
    /// Actuation weights over `[thrust, phi_d, theta_d]`.
    pub q_u: [f64; 3],
    /// Input-rate weights over `[thrust, phi_d, theta_d]`.
    pub q_du: [f64; 3],
    /// Multiplier on the accumulated obstacle violation.
    pub mu_obs: f64,
}

impl OcpWeights {
    pub fn validate(&self) -> Result<(), OcpError> {
        let all = self.q_x.iter().chain(&self.q_u).chain(&self.q_du);
        for w in all {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(OcpError::InvalidProblem(
                    "cost weights must be finite and non-negative",
                ));
            }
        }
        if !(self.mu_obs.is_finite() && self.mu_obs >= 0.0) {
            return Err(OcpError::InvalidProblem(
                "obstacle multiplier must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Per-component box bounds on the control input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBounds {
    /// Lower bounds over `[thrust, phi_d, theta_d]`.
    pub min: [f64; 3],
    /// Upper bounds over `[thrust, phi_d, theta_d]`.
    pub max: [f64; 3],
}

impl InputBounds {
    /// Thrust in `[0, 2g]`, both commanded angles in `[-tilt, tilt]`.
    pub fn symmetric(g: f64, tilt: f64) -> Self {
        assert!(tilt >= 0.0, "tilt bound must be non-negative");
        Self {
            min: [0.0, -tilt, -tilt],
            max: [2.0 * g, tilt, tilt],
        }
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        for k in 0..3 {
            if !(self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] <= self.max[k]) {
                return Err(OcpError::InvalidProblem(
                    "input bounds must be finite with min <= max",
                ));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        let a = u.to_array();
        ControlInput::from_array([
            a[0].clamp(self.min[0], self.max[0]),
            a[1].clamp(self.min[1], self.max[1]),
            a[2].clamp(self.min[2], self.max[2]),
        ])
    }

    pub fn contains(&self, u: &ControlInput) -> bool {
        let a = u.to_array();
        (0..3).all(|k| a[k] >= self.min[k] && a[k] <= self.max[k])
    }
}

/// The prediction branches: sampling times with their probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    sampling_times: Vec<f64>,
    weights: Vec<f64>,
}

impl ScenarioSet {
    /// Builds a scenario set, normalizing the weights to sum to one.
    pub fn new(sampling_times: Vec<f64>, weights: Vec<f64>) -> Result<Self, OcpError> {
        validate_sampling_times(&sampling_times)
            .map_err(|_| OcpError::InvalidProblem("sampling times must be positive, increasing"))?;
        if weights.len() != sampling_times.len() {
            return Err(OcpError::InvalidProblem(
                "one weight is required per sampling time",
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(OcpError::InvalidProblem(
                "scenario weights must be finite and non-negative",
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(OcpError::InvalidProblem(
                "scenario weights must not all vanish",
            ));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self {
            sampling_times,
            weights,
        })
    }

    /// Single-branch set: plain NMPC at one sampling time.
    pub fn single(sampling_time: f64) -> Result<Self, OcpError> {
        Self::new(vec![sampling_time], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.sampling_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampling_times.is_empty()
    }

    pub fn sampling_times(&self) -> &[f64] {
        &self.sampling_times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A shared input sequence over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence(pub Vec<ControlInput>);

impl ControlSequence {
    /// `n` copies of the same input.
    pub fn uniform(u: ControlInput, n: usize) -> Self {
        Self(vec![u; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&ControlInput> {
        self.0.first()
    }

    /// Flattens to `[T_0, phi_d0, theta_d0, T_1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(3 * self.0.len());
        for u in &self.0 {
            flat.extend_from_slice(&u.to_array());
        }
        flat
    }

    /// Inverse of [`ControlSequence::to_flat`]; `flat.len()` must be a
    /// multiple of three.
    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len() % 3 == 0, "flat input length must be 3N");
        Self(
            flat.chunks_exact(3)
                .map(|c| ControlInput::from_array([c[0], c[1], c[2]]))
                .collect(),
        )
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ControlInput> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for ControlSequence {
    type Output = ControlInput;
    fn index(&self, j: usize) -> &ControlInput {
        &self.0[j]
    }
}

/// One control cycle's optimization problem.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub model: ModelParams,
    /// Number of control moves `N`; every scenario rolls out `N` steps.
    pub horizon: usize,
    pub scenarios: ScenarioSet,
    /// Measured state the prediction starts from.
    pub x0: MavState,
    /// Tracking reference, typically the goal at rest.
    pub x_ref: MavState,
    /// Actuation reference, typically the hover input.
    pub u_ref: ControlInput,
    /// Input applied in the previous cycle; anchors the first smoothness term.
    pub u_prev: ControlInput,
    pub weights: OcpWeights,
    pub obstacles: Vec<CylinderObstacle>,
    pub bounds: InputBounds,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<(), OcpError> {
        self.model.validate()?;
        self.weights.validate()?;
        self.bounds.validate()?;
        if self.horizon == 0 {
            return Err(OcpError::InvalidProblem("horizon must be at least 1"));
        }
        if !(self.x0.is_finite() && self.x_ref.is_finite()) {
            return Err(OcpError::InvalidProblem("states must be finite"));
        }
        if !(self.u_ref.is_finite() && self.u_prev.is_finite()) {
            return Err(OcpError::InvalidProblem("reference inputs must be finite"));
        }
        if self.obstacles.iter().any(|o| !o.is_finite()) {
            return Err(OcpError::InvalidProblem("obstacles must be finite"));
        }
        Ok(())
    }

    /// Number of scalar decision variables, `3 * horizon`.
    pub fn dim(&self) -> usize {
        3 * self.horizon
    }

    fn penalty_at(&self, p: &Vector3<f64>) -> f64 {
        self.obstacles.iter().map(|o| violation(p, o)).sum()
    }

    fn penalty_gradient_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.obstacles
            .iter()
            .map(|o| violation_gradient(p, o))
            .sum()
    }

    /// Cost of one scenario's rollout under the shared sequence. A rollout
    /// that leaves the finite range evaluates to `f64::INFINITY`, which the
    /// solver's line search rejects like any non-decreasing step.
    pub fn scenario_cost(&self, u_seq: &ControlSequence, scenario: usize) -> f64 {
        let ts = self.scenarios.sampling_times()[scenario];
        match self.scenario_cost_inner(u_seq, ts) {
            Ok(cost) => cost,
            Err(_) => f64::INFINITY,
        }
    }

    fn scenario_cost_inner(&self, u_seq: &ControlSequence, ts: f64) -> Result<f64, DynamicsError> {
        debug_assert_eq!(u_seq.len(), self.horizon);
        let w = &self.weights;
        let mut cost = w.mu_obs * self.penalty_at(&self.x0.p);
        let mut x = self.x0;
        let mut u_prev = self.u_prev;
        for u in u_seq.iter() {
            x = euler_step(&x, u, &self.model, ts)?;
            cost += quad8(&w.q_x, &x.to_array(), &self.x_ref.to_array());
            cost += quad3(&w.q_u, &u.to_array(), &self.u_ref.to_array());
            cost += quad3(&w.q_du, &u.to_array(), &u_prev.to_array());
            cost += w.mu_obs * self.penalty_at(&x.p);
            u_prev = *u;
        }
        if !cost.is_finite() {
            return Err(DynamicsError::NonFinite("cost"));
        }
        Ok(cost)
    }

    /// Weighted total cost over all scenarios. Zero-weight scenarios are
    /// skipped, so an indicator weight vector reproduces a single scenario's
    /// cost exactly.
    pub fn multi_stage_cost(&self, u_seq: &ControlSequence) -> f64 {
        let mut total = 0.0;
        for (i, &w) in self.scenarios.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            total += w * self.scenario_cost(u_seq, i);
        }
        total
    }

    /// Weighted cost and its exact gradient with respect to the flattened
    /// sequence `[T_0, phi_d0, theta_d0, T_1, ...]`, via one adjoint sweep
    /// per scenario.
    pub fn multi_stage_cost_and_gradient(
        &self,
        u_seq: &ControlSequence,
    ) -> Result<(f64, Vec<f64>), OcpError> {
        let mut total = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for (i, &w) in self.scenarios.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let ts = self.scenarios.sampling_times()[i];
            let (cost, g) = self
                .scenario_cost_and_gradient(u_seq, ts)
                .map_err(|step| OcpError::ScenarioDiverged { scenario: i, step })?;
            total += w * cost;
            for (gt, gs) in grad.iter_mut().zip(&g) {
                *gt += w * gs;
            }
        }
        Ok((total, grad))
    }

    /// Gradient of the weighted total cost; see
    /// [`OcpProblem::multi_stage_cost_and_gradient`] for the layout.
    pub fn multi_stage_gradient(&self, u_seq: &ControlSequence) -> Result<Vec<f64>, OcpError> {
        self.multi_stage_cost_and_gradient(u_seq).map(|(_, g)| g)
    }

    // One scenario's cost and gradient. The error value is the step at which
    // the rollout left the finite range.
    fn scenario_cost_and_gradient(
        &self,
        u_seq: &ControlSequence,
        ts: f64,
    ) -> Result<(f64, Vec<f64>), usize> {
        debug_assert_eq!(u_seq.len(), self.horizon);
        let n = self.horizon;
        let w = &self.weights;
        let x_ref = self.x_ref.to_array();
        let u_ref = self.u_ref.to_array();

        // Forward pass, storing every state.
        let mut states = Vec::with_capacity(n + 1);
        states.push(self.x0);
        let mut cost = w.mu_obs * self.penalty_at(&self.x0.p);
        let mut u_prev = self.u_prev;
        for (j, u) in u_seq.iter().enumerate() {
            let x = euler_step(&states[j], u, &self.model, ts).map_err(|_| j)?;
            cost += quad8(&w.q_x, &x.to_array(), &x_ref);
            cost += quad3(&w.q_u, &u.to_array(), &u_ref);
            cost += quad3(&w.q_du, &u.to_array(), &u_prev.to_array());
            cost += w.mu_obs * self.penalty_at(&x.p);
            u_prev = *u;
            states.push(x);
        }
        if !cost.is_finite() {
            return Err(n);
        }

        // Backward (adjoint) pass. lambda holds the cost sensitivity to the
        // state currently being visited, in state-array layout.
        let mut grad = vec![0.0; 3 * n];
        let mut lambda = self.stage_state_gradient(&states[n], &x_ref);
        for j in (0..n).rev() {
            let b = self.input_jacobian_transpose(&states[j], &u_seq[j], ts, &lambda);
            grad[3 * j] += b[0];
            grad[3 * j + 1] += b[1];
            grad[3 * j + 2] += b[2];
            if j > 0 {
                let carried = self.state_jacobian_transpose(&states[j], &u_seq[j], ts, &lambda);
                let stage = self.stage_state_gradient(&states[j], &x_ref);
                for k in 0..8 {
                    lambda[k] = stage[k] + carried[k];
                }
            }
        }

        // Terms that touch the inputs directly.
        for j in 0..n {
            let u = u_seq[j].to_array();
            let prev = if j == 0 {
                self.u_prev.to_array()
            } else {
                u_seq[j - 1].to_array()
            };
            for k in 0..3 {
                grad[3 * j + k] += 2.0 * w.q_u[k] * (u[k] - u_ref[k]);
                grad[3 * j + k] += 2.0 * w.q_du[k] * (u[k] - prev[k]);
                if j + 1 < n {
                    let next = u_seq[j + 1].to_array();
                    grad[3 * j + k] -= 2.0 * w.q_du[k] * (next[k] - u[k]);
                }
            }
        }
        Ok((cost, grad))
    }

    // Gradient of one state's stage cost (tracking plus scaled penalty).
    fn stage_state_gradient(&self, x: &MavState, x_ref: &[f64; 8]) -> [f64; 8] {
        let xa = x.to_array();
        let mut g = [0.0; 8];
        for k in 0..8 {
            g[k] = 2.0 * self.weights.q_x[k] * (xa[k] - x_ref[k]);
        }
        let pg = self.penalty_gradient_at(&x.p);
        g[0] += self.weights.mu_obs * pg.x;
        g[1] += self.weights.mu_obs * pg.y;
        g[2] += self.weights.mu_obs * pg.z;
        g
    }

    // (I + ts * df/dx)^T lambda for the Euler step taken from (x, u).
    fn state_jacobian_transpose(
        &self,
        x: &MavState,
        u: &ControlInput,
        ts: f64,
        lambda: &[f64; 8],
    ) -> [f64; 8] {
        let m = &self.model;
        let (sin_phi, cos_phi) = x.phi.sin_cos();
        let (sin_theta, cos_theta) = x.theta.sin_cos();
        let (lp, lv) = (&lambda[0..3], &lambda[3..6]);
        let (lphi, ltheta) = (lambda[6], lambda[7]);

        let mut out = *lambda;
        // Velocity rows: position integration plus drag.
        for k in 0..3 {
            out[3 + k] += ts * (lp[k] - m.drag[k] * lv[k]);
        }
        // Attitude rows: thrust-direction sensitivity plus the lag decay.
        let da_dphi = u.thrust * (-cos_phi * cos_theta * lv[1] - sin_phi * cos_theta * lv[2]);
        let da_dtheta = u.thrust
            * (cos_theta * lv[0] + sin_phi * sin_theta * lv[1] - cos_phi * sin_theta * lv[2]);
        out[6] += ts * (da_dphi - lphi / m.tau_phi);
        out[7] += ts * (da_dtheta - ltheta / m.tau_theta);
        out
    }

    // (ts * df/du)^T lambda for the Euler step taken from (x, u).
    fn input_jacobian_transpose(
        &self,
        x: &MavState,
        _u: &ControlInput,
        ts: f64,
        lambda: &[f64; 8],
    ) -> [f64; 3] {
        let m = &self.model;
        let (sin_phi, cos_phi) = x.phi.sin_cos();
        let (sin_theta, cos_theta) = x.theta.sin_cos();
        let lv = &lambda[3..6];
        [
            ts * (sin_theta * lv[0] - sin_phi * cos_theta * lv[1] + cos_phi * cos_theta * lv[2]),
            ts * (m.k_phi / m.tau_phi) * lambda[6],
            ts * (m.k_theta / m.tau_theta) * lambda[7],
        ]
    }
}

fn quad8(q: &[f64; 8], a: &[f64; 8], b: &[f64; 8]) -> f64 {
    let mut s = 0.0;
    for k in 0..8 {
        let d = a[k] - b[k];
        s += q[k] * d * d;
    }
    s
}

fn quad3(q: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = a[k] - b[k];
        s += q[k] * d * d;
    }
    s
}
