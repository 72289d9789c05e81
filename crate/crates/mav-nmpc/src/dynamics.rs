//! Reduced MAV model used by both the prediction rollouts and the simulated
//! plant: position, velocity, and first-order closed-loop attitude in roll
//! and pitch.
//!
//! The attitude loop is assumed to be handled by a faster inner controller,
//! so roll and pitch respond to their commanded values as first-order lags.
//! Thrust enters as a mass-normalized acceleration along the body z axis,
//! which in the world frame points along
//! `[sin(theta), -sin(phi)*cos(theta), cos(phi)*cos(theta)]`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Standard gravity, m/s^2.
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    /// An input held a NaN or infinite component.
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    /// Sampling times must be strictly positive and finite.
    #[error("invalid sampling time {0}")]
    InvalidSamplingTime(f64),
    /// A rollout produced a non-finite state at the given step.
    #[error("state diverged at rollout step {0}")]
    Diverged(usize),
    /// A model parameter was outside its physical range.
    #[error("invalid model parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Physical parameters of the translational/attitude model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
    /// Per-axis linear drag coefficients `[A_x, A_y, A_z]`, 1/s.
    pub drag: [f64; 3],
    /// Roll lag time constant, s.
    pub tau_phi: f64,
    /// Pitch lag time constant, s.
    pub tau_theta: f64,
    /// Roll steady-state gain, commanded to achieved.
    pub k_phi: f64,
    /// Pitch steady-state gain, commanded to achieved.
    pub k_theta: f64,
}

impl Default for ModelParams {
    /// Small-quadrotor configuration shared by the bundled scenarios.
    fn default() -> Self {
        Self {
            g: STANDARD_GRAVITY,
            drag: [0.1, 0.1, 0.2],
            tau_phi: 0.5,
            tau_theta: 0.5,
            k_phi: 1.0,
            k_theta: 1.0,
        }
    }
}

impl ModelParams {
    pub fn is_finite(&self) -> bool {
        self.g.is_finite()
            && self.drag.iter().all(|a| a.is_finite())
            && self.tau_phi.is_finite()
            && self.tau_theta.is_finite()
            && self.k_phi.is_finite()
            && self.k_theta.is_finite()
    }

    /// Checks the values a simulation can actually run with: finite, positive
    /// lag constants, non-negative drag.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !self.is_finite() {
            return Err(DynamicsError::NonFinite("model parameters"));
        }
        if self.tau_phi <= 0.0 || self.tau_theta <= 0.0 {
            return Err(DynamicsError::InvalidParameter(
                "attitude lag constants must be positive",
            ));
        }
        if self.drag.iter().any(|a| *a < 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "drag coefficients must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Full model state: position, velocity, roll, pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MavState {
    /// World-frame position, m.
    pub p: Vector3<f64>,
    /// World-frame velocity, m/s.
    pub v: Vector3<f64>,
    /// Roll angle, rad, kept in `[-pi, pi]`.
    pub phi: f64,
    /// Pitch angle, rad, kept in `[-pi, pi]`.
    pub theta: f64,
}

impl MavState {
    /// State at rest at `p` with level attitude.
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            phi: 0.0,
            theta: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|c| c.is_finite())
            && self.v.iter().all(|c| c.is_finite())
            && self.phi.is_finite()
            && self.theta.is_finite()
    }

    /// Components in the order `[px, py, pz, vx, vy, vz, phi, theta]`.
    pub fn to_array(self) -> [f64; 8] {
        [
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.phi, self.theta,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            p: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
            phi: a[6],
            theta: a[7],
        }
    }
}

/// Control input: mass-normalized thrust plus commanded roll and pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Thrust acceleration along the body z axis, m/s^2.
    pub thrust: f64,
    /// Commanded roll, rad.
    pub phi_d: f64,
    /// Commanded pitch, rad.
    pub theta_d: f64,
}

impl ControlInput {
    /// The input that balances gravity with level attitude.
    pub fn hover(g: f64) -> Self {
        Self {
            thrust: g,
            phi_d: 0.0,
            theta_d: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.phi_d.is_finite() && self.theta_d.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.thrust, self.phi_d, self.theta_d]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            thrust: a[0],
            phi_d: a[1],
            theta_d: a[2],
        }
    }
}

/// Time derivative of [`MavState`], same component layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MavDerivative {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dphi: f64,
    pub dtheta: f64,
}

/// World-frame direction of the body z axis for the given attitude.
pub fn thrust_direction(phi: f64, theta: f64) -> Vector3<f64> {
    let (sin_phi, cos_phi) = phi.sin_cos();
    let (sin_theta, cos_theta) = theta.sin_cos();
    Vector3::new(sin_theta, -sin_phi * cos_theta, cos_phi * cos_theta)
}

/// Continuous-time derivative of the model at `(x, u)`.
pub fn state_derivative(
    x: &MavState,
    u: &ControlInput,
    model: &ModelParams,
) -> Result<MavDerivative, DynamicsError> {
    if !x.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(DynamicsError::NonFinite("input"));
    }
    let drag = Vector3::new(
        model.drag[0] * x.v.x,
        model.drag[1] * x.v.y,
        model.drag[2] * x.v.z,
    );
    let dv = u.thrust * thrust_direction(x.phi, x.theta) + Vector3::new(0.0, 0.0, -model.g) - drag;
    Ok(MavDerivative {
        dp: x.v,
        dv,
        dphi: (model.k_phi * u.phi_d - x.phi) / model.tau_phi,
        dtheta: (model.k_theta * u.theta_d - x.theta) / model.tau_theta,
    })
}

/// Maps an angle into `[-pi, pi]`. Angles already in range pass through
/// unchanged, bit for bit.
pub fn wrap_angle(a: f64) -> f64 {
    if (-std::f64::consts::PI..=std::f64::consts::PI).contains(&a) {
        a
    } else {
        a - std::f64::consts::TAU * (a / std::f64::consts::TAU).round()
    }
}

/// One forward-Euler step of length `ts`, with angles wrapped back into
/// `[-pi, pi]`.
pub fn euler_step(
    x: &MavState,
    u: &ControlInput,
    model: &ModelParams,
    ts: f64,
) -> Result<MavState, DynamicsError> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(DynamicsError::InvalidSamplingTime(ts));
    }
    let d = state_derivative(x, u, model)?;
    Ok(MavState {
        p: x.p + ts * d.dp,
        v: x.v + ts * d.dv,
        phi: wrap_angle(x.phi + ts * d.dphi),
        theta: wrap_angle(x.theta + ts * d.dtheta),
    })
}

/// Euler rollout of `u_seq` from `x0` at fixed step `ts`. Returns the
/// `u_seq.len() + 1` states including `x0` itself.
pub fn rollout(
    x0: &MavState,
    u_seq: &[ControlInput],
    model: &ModelParams,
    ts: f64,
) -> Result<Vec<MavState>, DynamicsError> {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    if !x0.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    states.push(*x0);
    for (j, u) in u_seq.iter().enumerate() {
        let next = euler_step(states.last().expect("states is never empty"), u, model, ts)
            .map_err(|e| match e {
                DynamicsError::NonFinite(_) => DynamicsError::Diverged(j),
                other => other,
            })?;
        states.push(next);
    }
    Ok(states)
}
