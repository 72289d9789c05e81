//! File emission for one episode: the cycle trace as CSV, metrics as JSON,
//! and per-figure plot data, plus the inverse CSV parser used to verify
//! round trips.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parsed trace reproduces the in-memory values bit for bit and a rerun
//! with the same config and seed produces a byte-identical file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::trace::{EpisodeMetrics, SimulationTrace, TraceRow};
use super::SimError;

const FIXED_COLUMNS: [&str; 15] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "phi", "theta", "T_cmd", "phi_cmd", "theta_cmd",
    "delay", "alpha_hat", "beta_hat",
];

/// Writes `trace.csv`, `metrics.json`, and `plot_data/*.csv` under `out_dir`,
/// creating directories as needed. Refuses an empty trace.
pub fn emit_outputs(
    trace: &SimulationTrace,
    metrics: &EpisodeMetrics,
    out_dir: &Path,
) -> Result<(), SimError> {
    if trace.rows.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let plot_dir = out_dir.join("plot_data");
    fs::create_dir_all(&plot_dir)?;

    fs::write(out_dir.join("trace.csv"), render_trace_csv(&trace.rows))?;

    let mut json = serde_json::to_string_pretty(metrics)?;
    json.push('\n');
    fs::write(out_dir.join("metrics.json"), json)?;

    let mut path3d = String::from("t,px,py,pz\n");
    for s in &trace.samples {
        let _ = writeln!(path3d, "{},{},{},{}", s.t, s.p.x, s.p.y, s.p.z);
    }
    fs::write(plot_dir.join("path3d.csv"), path3d)?;

    let mut controls = String::from("t,T_cmd,phi_cmd,theta_cmd\n");
    for r in &trace.rows {
        let _ = writeln!(
            controls,
            "{},{},{},{}",
            r.t, r.command[0], r.command[1], r.command[2]
        );
    }
    fs::write(plot_dir.join("controls.csv"), controls)?;

    let m = trace.rows[0].weights.len();
    let mut dw = String::from("t,delay,alpha_hat,beta_hat");
    for i in 1..=m {
        let _ = write!(dw, ",w{i}");
    }
    dw.push('\n');
    for r in &trace.rows {
        let _ = write!(dw, "{},{},{},{}", r.t, r.delay, r.alpha_hat, r.beta_hat);
        for w in &r.weights {
            let _ = write!(dw, ",{w}");
        }
        dw.push('\n');
    }
    fs::write(plot_dir.join("delays_weights.csv"), dw)?;

    Ok(())
}

/// Renders cycle rows in the documented column order:
/// `t,px,py,pz,vx,vy,vz,phi,theta,T_cmd,phi_cmd,theta_cmd,delay,alpha_hat,beta_hat,w1..wM,solve_ms`.
pub fn render_trace_csv(rows: &[TraceRow]) -> String {
    let m = rows.first().map_or(0, |r| r.weights.len());
    let mut out = String::from(FIXED_COLUMNS.join(","));
    for i in 1..=m {
        let _ = write!(out, ",w{i}");
    }
    out.push_str(",solve_ms\n");
    for r in rows {
        debug_assert_eq!(r.weights.len(), m, "ragged weight columns");
        let _ = write!(out, "{}", r.t);
        for v in &r.state {
            let _ = write!(out, ",{v}");
        }
        for v in &r.command {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{},{},{}", r.delay, r.alpha_hat, r.beta_hat);
        for w in &r.weights {
            let _ = write!(out, ",{w}");
        }
        let _ = writeln!(out, ",{}", r.solve_ms);
    }
    out
}

/// Parses the text of a `trace.csv` back into cycle rows, field for field.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, SimError> {
    let malformed = |line: usize, reason: String| SimError::MalformedTrace { line, reason };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "missing header".into()))?;

    let names: Vec<&str> = header.split(',').collect();
    let m = names.len().checked_sub(FIXED_COLUMNS.len() + 1).filter(|m| *m > 0).ok_or_else(
        || malformed(1, format!("expected at least {} columns", FIXED_COLUMNS.len() + 2)),
    )?;
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        if names[i] != *expected {
            return Err(malformed(1, format!("column {i} is {:?}, expected {expected:?}", names[i])));
        }
    }
    for i in 1..=m {
        if names[FIXED_COLUMNS.len() + i - 1] != format!("w{i}") {
            return Err(malformed(1, format!("weight column {i} misnamed")));
        }
    }
    if names.last() != Some(&"solve_ms") {
        return Err(malformed(1, "last column must be solve_ms".into()));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(lineno, e.to_string()))?;
        if fields.len() != names.len() {
            return Err(malformed(
                lineno,
                format!("{} fields, header has {}", fields.len(), names.len()),
            ));
        }
        let mut state = [0.0; 8];
        state.copy_from_slice(&fields[1..9]);
        let mut command = [0.0; 3];
        command.copy_from_slice(&fields[9..12]);
        rows.push(TraceRow {
            t: fields[0],
            state,
            command,
            delay: fields[12],
            alpha_hat: fields[13],
            beta_hat: fields[14],
            weights: fields[15..15 + m].to_vec(),
            solve_ms: fields[15 + m],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::PlantSample;
    use nalgebra::Vector3;

    fn awkward_rows() -> Vec<TraceRow> {
        vec![
            TraceRow {
                t: 0.0,
                state: [0.1 + 0.2, -0.0, 1e-17, 3.5e6, -2.75, 0.05, -0.1745, 0.1745],
                command: [9.81, 0.0, -0.0],
                delay: 0.18300000000000002,
                alpha_hat: 0.0,
                beta_hat: 0.0,
                weights: vec![0.2, 0.2, 0.6],
                solve_ms: 0.0,
            },
            TraceRow {
                t: 0.05,
                state: [1.0; 8],
                command: [19.62, -0.1745, 0.003],
                delay: 0.42,
                alpha_hat: 11.987654321,
                beta_hat: 0.015000000000000001,
                weights: vec![1.87e-4, 0.5, 0.499813],
                solve_ms: 2.45,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact_to_the_bit() {
        let rows = awkward_rows();
        let parsed = parse_trace_csv(&render_trace_csv(&rows)).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(&parsed) {
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.state.map(f64::to_bits), b.state.map(f64::to_bits));
            assert_eq!(a.command.map(f64::to_bits), b.command.map(f64::to_bits));
            assert_eq!(a.delay.to_bits(), b.delay.to_bits());
            assert_eq!(a.alpha_hat.to_bits(), b.alpha_hat.to_bits());
            assert_eq!(a.beta_hat.to_bits(), b.beta_hat.to_bits());
            let wa: Vec<u64> = a.weights.iter().map(|w| w.to_bits()).collect();
            let wb: Vec<u64> = b.weights.iter().map(|w| w.to_bits()).collect();
            assert_eq!(wa, wb);
            assert_eq!(a.solve_ms.to_bits(), b.solve_ms.to_bits());
        }
    }

    #[test]
    fn rendering_twice_gives_identical_bytes() {
        let rows = awkward_rows();
        assert_eq!(render_trace_csv(&rows), render_trace_csv(&rows));
    }

    #[test]
    fn emit_writes_all_artifacts_and_refuses_an_empty_trace() {
        let dir = tempfile::tempdir().unwrap();
        let trace = SimulationTrace {
            rows: awkward_rows(),
            cycles: vec![],
            samples: vec![PlantSample {
                t: 0.0,
                p: Vector3::new(0.0, 0.0, 1.0),
                v: Vector3::zeros(),
            }],
        };
        let metrics = EpisodeMetrics {
            path_length: 5.46,
            reached_goal: true,
            min_obstacle_clearance: Some(0.12),
            collision_count: 0,
            mean_solve_time_ms: 3.2,
            max_solve_time_ms: 9.9,
            episode_duration: 12.0,
        };
        emit_outputs(&trace, &metrics, dir.path()).unwrap();

        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
                .unwrap();
        assert_eq!(json["path_length"], 5.46);
        assert!(json.get("mean_solve_time_ms").is_some());
        assert!(dir.path().join("plot_data/path3d.csv").exists());
        assert!(dir.path().join("plot_data/controls.csv").exists());
        assert!(dir.path().join("plot_data/delays_weights.csv").exists());

        let reparsed =
            parse_trace_csv(&fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
        assert_eq!(reparsed, trace.rows);

        let empty = SimulationTrace {
            rows: vec![],
            cycles: vec![],
            samples: vec![],
        };
        assert!(matches!(
            emit_outputs(&empty, &metrics, dir.path()),
            Err(SimError::EmptyTrace)
        ));
    }

    #[test]
    fn malformed_rows_are_rejected_with_their_line_number() {
        let rows = awkward_rows();
        let mut text = render_trace_csv(&rows);
        text.push_str("not,a,valid,row\n");
        match parse_trace_csv(&text) {
            Err(SimError::MalformedTrace { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected a malformed-trace error, got {other:?}"),
        }
    }

    #[test]
    fn header_mismatches_are_rejected() {
        let text = "t,px,wrong\n0,0,0\n";
        assert!(matches!(
            parse_trace_csv(text),
            Err(SimError::MalformedTrace { line: 1, .. })
        ));
    }
}
