//! What an episode leaves behind: per-cycle controller records, per-substep
//! plant samples, and the summary metrics derived from them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::obstacles::{signed_clearance, violation, CylinderObstacle};
use crate::solver::SolveStatus;

/// One control cycle, in the column order of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Cycle start time, seconds.
    pub t: f64,
    /// Measured plant state at dispatch: px, py, pz, vx, vy, vz, phi, theta.
    pub state: [f64; 8],
    /// Input commanded this cycle: thrust, phi_d, theta_d. It reaches the
    /// plant only after `delay`.
    pub command: [f64; 3],
    /// Round-trip delay sampled this cycle, seconds.
    pub delay: f64,
    /// Fitted Gamma shape in force this cycle; 0 before the first fit.
    pub alpha_hat: f64,
    /// Fitted Gamma scale in force this cycle; 0 before the first fit.
    pub beta_hat: f64,
    /// Branch weights used this cycle, normalized to sum 1.
    pub weights: Vec<f64>,
    /// Modeled solve time: iterations times a configured per-iteration cost.
    /// Machine-independent, so traces stay reproducible; wall-clock times
    /// live in [`EpisodeMetrics`].
    pub solve_ms: f64,
}

/// Plant state after one integration substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

/// Per-cycle solver bookkeeping kept out of the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDetail {
    /// Cycle start time, seconds.
    pub t: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Measured wall-clock solve duration, ms.
    pub wall_ms: f64,
    /// When the command reaches the plant; `None` if nothing was dispatched.
    pub arrival: Option<f64>,
    /// Whether this cycle's delay fit succeeded.
    pub fit_ok: bool,
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// One entry per control cycle; serialized to `trace.csv`.
    pub rows: Vec<TraceRow>,
    /// One entry per control cycle, aligned with `rows`.
    pub cycles: Vec<CycleDetail>,
    /// One entry per plant substep, plus the initial state.
    pub samples: Vec<PlantSample>,
}

/// Summary numbers for tables and run-to-run comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Length of the flown path at substep resolution, meters.
    pub path_length: f64,
    /// Whether the vehicle ever came within `goal_radius` of the goal.
    pub reached_goal: bool,
    /// Most negative margin to any obstacle wall along the flown path;
    /// `None` when the path never passes an obstacle below its cap.
    pub min_obstacle_clearance: Option<f64>,
    /// Substeps spent inside an obstacle.
    pub collision_count: usize,
    pub mean_solve_time_ms: f64,
    pub max_solve_time_ms: f64,
    /// Simulated time at episode end, seconds.
    pub episode_duration: f64,
}

/// Length of the flown path: Euclidean distance summed over consecutive
/// substep positions.
pub fn path_length(samples: &[PlantSample]) -> f64 {
    samples
        .windows(2)
        .map(|w| (w[1].p - w[0].p).norm())
        .sum()
}

/// Scans the flown path against the literal obstacle geometry: how many
/// substeps sat inside an obstacle, and the worst wall clearance seen.
pub fn collision_check(
    samples: &[PlantSample],
    obstacles: &[CylinderObstacle],
) -> (usize, Option<f64>) {
    let mut count = 0;
    let mut min_clearance: Option<f64> = None;
    for s in samples {
        if obstacles.iter().any(|o| violation(&s.p, o) > 0.0) {
            count += 1;
        }
        for o in obstacles {
            if let Some(c) = signed_clearance(&s.p, o) {
                min_clearance = Some(min_clearance.map_or(c, |m| m.min(c)));
            }
        }
    }
    (count, min_clearance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(from: Vector3<f64>, to: Vector3<f64>, steps: usize) -> Vec<PlantSample> {
        (0..=steps)
            .map(|i| {
                let f = i as f64 / steps as f64;
                PlantSample {
                    t: f,
                    p: from + (to - from) * f,
                    v: to - from,
                }
            })
            .collect()
    }

    #[test]
    fn stationary_path_has_zero_length() {
        let samples = vec![
            PlantSample {
                t: 0.0,
                p: Vector3::new(1.0, 2.0, 3.0),
                v: Vector3::zeros(),
            };
            50
        ];
        assert_eq!(path_length(&samples), 0.0);
    }

    #[test]
    fn straight_ascent_of_one_meter_measures_one_meter() {
        let samples = line(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), 1000);
        assert!((path_length(&samples) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn path_through_a_cylinder_center_bottoms_out_at_minus_radius() {
        let obs = CylinderObstacle {
            x: 0.0,
            y: 0.5,
            radius: 0.4,
            height: 5.0,
        };
        let samples = line(Vector3::new(0.0, -1.0, 1.0), Vector3::new(0.0, 2.0, 1.0), 3000);
        let (count, clearance) = collision_check(&samples, &[obs]);
        assert!(count > 0);
        let deepest = clearance.unwrap();
        assert!((deepest - (-0.4)).abs() < 1e-3, "deepest {deepest}");
    }

    #[test]
    fn clear_path_reports_zero_collisions_and_positive_clearance() {
        let obs = CylinderObstacle {
            x: 5.0,
            y: 0.0,
            radius: 1.0,
            height: 5.0,
        };
        let samples = line(Vector3::new(0.0, -1.0, 1.0), Vector3::new(0.0, 1.0, 1.0), 100);
        let (count, clearance) = collision_check(&samples, &[obs]);
        assert_eq!(count, 0);
        assert!(clearance.unwrap() > 3.0);
    }

    #[test]
    fn flight_above_every_cap_reports_no_clearance() {
        let obs = CylinderObstacle {
            x: 0.0,
            y: 0.0,
            radius: 1.0,
            height: 2.0,
        };
        let samples = line(Vector3::new(-1.0, 0.0, 3.0), Vector3::new(1.0, 0.0, 3.0), 100);
        let (count, clearance) = collision_check(&samples, &[obs]);
        assert_eq!(count, 0);
        assert_eq!(clearance, None);
    }
}
