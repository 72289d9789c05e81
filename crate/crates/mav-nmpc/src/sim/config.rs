//! Episode configuration: everything one closed-loop run needs, loadable
//! from a JSON file with strict field checking. Unknown keys are rejected
//! so a typo in a scenario file fails loudly instead of silently falling
//! back to a default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delay::{validate_sampling_times, GammaParams, TailPolicy, DEFAULT_WINDOW_CAPACITY};
use crate::dynamics::ModelParams;
use crate::obstacles::CylinderObstacle;
use crate::ocp::{InputBounds, OcpWeights};
use crate::solver::SolverConfig;

use super::SimError;

/// Which prediction structure the controller uses each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// All sampling-time branches, weights refreshed from the delay fit.
    Multistage,
    /// One branch at the first (nominal) sampling time.
    Standard,
    /// All branches with the constant weights from `fixed_weights`.
    FixedWeights,
}

/// Controller half of the episode: prediction horizon, branch grid, cost
/// weights, input bounds, and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    /// Prediction steps per branch.
    pub horizon: usize,
    /// Branch sampling times, strictly increasing, seconds. The first entry
    /// is the nominal control period.
    pub sampling_times: Vec<f64>,
    /// Constant branch weights, consumed only in `fixed_weights` mode.
    #[serde(default)]
    pub fixed_weights: Option<Vec<f64>>,
    pub weights: OcpWeights,
    pub bounds: InputBounds,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Offset added to the commanded angles of the first cycle's warm start.
    /// A laterally symmetric scene pins the optimizer to the symmetry axis,
    /// where the sideways gradient is exactly zero; a small push lets it
    /// commit to one side. Zero disables it.
    #[serde(default)]
    pub warm_start_dither: f64,
}

/// Network delay half of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    /// When false the loop runs at the nominal period with zero delay and
    /// the fields below are ignored.
    pub enabled: bool,
    /// Ground-truth Gamma shape for sampled round trips.
    #[serde(default = "default_gamma_shape")]
    pub alpha: f64,
    /// Ground-truth Gamma scale, seconds.
    #[serde(default = "default_gamma_scale")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Capacity of the observed-delay window the controller fits from.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub tail_policy: TailPolicy,
}

/// Static geometry the vehicle must avoid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub obstacles: Vec<CylinderObstacle>,
    /// Inflation applied to every obstacle inside the controller only;
    /// metrics always measure the literal geometry.
    pub margin: f64,
}

/// One closed-loop run, end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    #[serde(default)]
    pub model: ModelParams,
    pub controller: ControllerConfig,
    pub delays: DelayConfig,
    #[serde(default)]
    pub world: WorldConfig,
    /// Initial position; the vehicle starts at rest.
    pub start: [f64; 3],
    /// Goal position; the reference is this point at rest.
    pub goal: [f64; 3],
    /// Distance at which the goal counts as reached, meters.
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    /// Simulated-time cap, seconds.
    pub max_sim_time: f64,
    /// Plant integration substep, seconds.
    #[serde(default = "default_plant_substep")]
    pub plant_substep: f64,
    /// End the episode at the first goal touch. Disable to keep simulating,
    /// e.g. to watch the vehicle hold position at the reference.
    #[serde(default = "default_true")]
    pub stop_at_goal: bool,
    /// Per-iteration cost used for the trace's `solve_ms` column, so the
    /// trace stays identical across machines. Measured wall-clock times go
    /// to the metrics instead.
    #[serde(default = "default_modeled_ms")]
    pub modeled_ms_per_iteration: f64,
}

fn default_gamma_shape() -> f64 {
    1.0
}

fn default_gamma_scale() -> f64 {
    0.1
}

fn default_n_max() -> usize {
    DEFAULT_WINDOW_CAPACITY
}

fn default_goal_radius() -> f64 {
    0.3
}

fn default_plant_substep() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

fn default_modeled_ms() -> f64 {
    0.05
}

impl EpisodeConfig {
    /// Parses and validates a config from JSON text.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a config file.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Checks every cross-field invariant the type system cannot.
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidConfig(msg));

        self.model
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("model: {e}")))?;

        let c = &self.controller;
        if c.horizon == 0 {
            return invalid("controller.horizon must be at least 1".into());
        }
        validate_sampling_times(&c.sampling_times)
            .map_err(|e| SimError::InvalidConfig(format!("controller.sampling_times: {e}")))?;
        c.weights
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("controller.weights: {e}")))?;
        c.bounds
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("controller.bounds: {e}")))?;
        if !c.warm_start_dither.is_finite() {
            return invalid("controller.warm_start_dither must be finite".into());
        }
        let s = &c.solver;
        if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
            return invalid("controller.solver.tolerance must be positive".into());
        }
        if s.max_iterations == 0 || s.memory == 0 {
            return invalid("controller.solver iteration cap and memory must be at least 1".into());
        }
        if c.mode == ControllerMode::FixedWeights {
            let w = c
                .fixed_weights
                .as_ref()
                .ok_or_else(|| {
                    SimError::InvalidConfig(
                        "fixed_weights mode requires controller.fixed_weights".into(),
                    )
                })?;
            if w.len() != c.sampling_times.len() {
                return invalid(format!(
                    "controller.fixed_weights has {} entries for {} sampling times",
                    w.len(),
                    c.sampling_times.len()
                ));
            }
            if w.iter().any(|wi| !(wi.is_finite() && *wi >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return invalid(
                    "controller.fixed_weights must be non-negative with positive sum".into(),
                );
            }
        }

        if self.delays.enabled {
            GammaParams::new(self.delays.alpha, self.delays.beta)
                .map_err(|e| SimError::InvalidConfig(format!("delays: {e}")))?;
            if self.delays.n_max == 0 {
                return invalid("delays.n_max must be at least 1".into());
            }
        }

        for (i, o) in self.world.obstacles.iter().enumerate() {
            if !o.is_finite() || o.radius <= 0.0 || o.height <= 0.0 {
                return invalid(format!("world.obstacles[{i}] has non-positive size"));
            }
        }
        if !(self.world.margin.is_finite() && self.world.margin >= 0.0) {
            return invalid("world.margin must be finite and non-negative".into());
        }

        if self.start.iter().chain(&self.goal).any(|v| !v.is_finite()) {
            return invalid("start and goal must be finite".into());
        }
        if !(self.goal_radius.is_finite() && self.goal_radius >= 0.0) {
            return invalid("goal_radius must be finite and non-negative".into());
        }
        if !(self.max_sim_time.is_finite() && self.max_sim_time > 0.0) {
            return invalid("max_sim_time must be positive".into());
        }
        let min_ts = c.sampling_times[0];
        if !(self.plant_substep.is_finite() && self.plant_substep > 0.0)
            || self.plant_substep > min_ts
        {
            return invalid(format!(
                "plant_substep must lie in (0, {min_ts}] to resolve every control cycle"
            ));
        }
        if !(self.modeled_ms_per_iteration.is_finite() && self.modeled_ms_per_iteration >= 0.0) {
            return invalid("modeled_ms_per_iteration must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "controller": {
                "mode": "standard",
                "horizon": 10,
                "sampling_times": [0.05, 0.1],
                "weights": {
                    "q_x": [6, 6, 20, 50, 50, 10, 20, 20],
                    "q_u": [20, 20, 20],
                    "q_du": [40, 65, 65],
                    "mu_obs": 1000
                },
                "bounds": {
                    "min": [0, -0.1745, -0.1745],
                    "max": [19.62, 0.1745, 0.1745]
                }
            },
            "delays": { "enabled": false },
            "start": [0, 0, 0],
            "goal": [0, 9, 1],
            "max_sim_time": 30
        }"#
        .into()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = EpisodeConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(c.goal_radius, 0.3);
        assert_eq!(c.plant_substep, 1e-3);
        assert!(c.stop_at_goal);
        assert_eq!(c.delays.n_max, DEFAULT_WINDOW_CAPACITY);
        assert_eq!(c.model, ModelParams::default());
        assert_eq!(c.controller.solver, SolverConfig::default());
        assert_eq!(c.controller.warm_start_dither, 0.0);
        assert_eq!(c.world.obstacles.len(), 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal_json().replace("\"max_sim_time\": 30", "\"max_sim_time\": 30, \"typo\": 1");
        assert!(matches!(
            EpisodeConfig::from_json(&text),
            Err(SimError::Json(_))
        ));
    }

    #[test]
    fn substep_coarser_than_the_control_period_is_rejected() {
        let mut c = EpisodeConfig::from_json(&minimal_json()).unwrap();
        c.plant_substep = 0.06;
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn fixed_weights_mode_requires_matching_weights() {
        let mut c = EpisodeConfig::from_json(&minimal_json()).unwrap();
        c.controller.mode = ControllerMode::FixedWeights;
        assert!(c.validate().is_err());
        c.controller.fixed_weights = Some(vec![0.5]);
        assert!(c.validate().is_err());
        c.controller.fixed_weights = Some(vec![0.5, 0.5]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn enabled_delays_need_valid_gamma_parameters() {
        let mut c = EpisodeConfig::from_json(&minimal_json()).unwrap();
        c.delays.enabled = true;
        c.delays.alpha = -3.0;
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(_))));
        c.delays.alpha = 12.0;
        c.delays.beta = 0.015;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_survives_a_serde_round_trip() {
        let c = EpisodeConfig::from_json(&minimal_json()).unwrap();
        let again = EpisodeConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
