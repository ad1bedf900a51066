//! Trajectory quality metrics and strategy comparison tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::RunRecord;

/// Velocity band around zero inside which the driving direction is unchanged.
pub const DIRECTION_HYSTERESIS: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Goal-reach time [s].
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub delta_rms: f64,
    pub delta_dot_rms: f64,
    pub a_par_rms: f64,
    pub a_perp_rms: f64,
    pub safe: bool,
    pub direction_changes: usize,
    /// Largest corridor violation over the whole run [m].
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("record contains no states")]
    EmptyRecord,
}

pub fn rms(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Number of sign changes of `v`, ignoring excursions within `hysteresis`
/// of zero.
pub fn count_direction_changes(v: impl IntoIterator<Item = f64>, hysteresis: f64) -> usize {
    let mut current = 0i8;
    let mut changes = 0;
    for v in v {
        let sign = if v > hysteresis {
            1
        } else if v < -hysteresis {
            -1
        } else {
            continue;
        };
        if current != 0 && sign != current {
            changes += 1;
        }
        current = sign;
    }
    changes
}

pub fn compute_metrics(record: &RunRecord) -> Result<MetricReport, MetricsError> {
    if record.states.is_empty() {
        return Err(MetricsError::EmptyRecord);
    }
    // Window: states up to and including the goal-reach sample, and the
    // inputs applied before it.
    let last_state = match record.goal_reach_time {
        Some(t) => ((t / record.dt).round() as usize).min(record.states.len() - 1),
        None => record.states.len() - 1,
    };
    let states = &record.states[..=last_state];
    let inputs = &record.ticks[..last_state.min(record.ticks.len())];
    let l = record.wheelbase;
    let max_violation = record.violation.iter().copied().fold(0.0, f64::max);
    Ok(MetricReport {
        t: record.goal_reach_time,
        delta_rms: rms(states.iter().map(|s| s.delta)),
        delta_dot_rms: rms(inputs.iter().map(|t| t.input.delta_dot)),
        a_par_rms: rms(inputs.iter().map(|t| t.input.a)),
        a_perp_rms: rms(states.iter().map(|s| s.v * s.v * s.delta.tan() / l)),
        safe: max_violation <= 0.0,
        direction_changes: count_direction_changes(
            states.iter().map(|s| s.v),
            DIRECTION_HYSTERESIS,
        ),
        max_violation,
    })
}

/// Which metrics of a row are the best among all rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BestFlags {
    pub t: bool,
    pub delta_rms: bool,
    pub delta_dot_rms: bool,
    pub a_par_rms: bool,
    pub a_perp_rms: bool,
    pub safe: bool,
    pub direction_changes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    /// `Err` holds the reason a run produced no report.
    pub report: Result<MetricReport, String>,
    pub best: BestFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

const EPS: f64 = 1e-12;

fn best_min<F: Fn(&MetricReport) -> f64>(reports: &[Option<&MetricReport>], f: F) -> Vec<bool> {
    let best = reports
        .iter()
        .flatten()
        .map(|r| f(r))
        .fold(f64::INFINITY, f64::min);
    reports
        .iter()
        .map(|r| r.is_some_and(|r| f(r) <= best + EPS * best.abs().max(1.0)))
        .collect()
}

/// Builds a comparison table; lower is better for every metric, and a safe
/// run beats an unsafe one.
pub fn compare(reports: Vec<(String, Result<MetricReport, String>)>) -> ComparisonTable {
    let ok: Vec<Option<&MetricReport>> = reports.iter().map(|(_, r)| r.as_ref().ok()).collect();
    let t = best_min(&ok, |r| r.t.unwrap_or(f64::INFINITY));
    let delta = best_min(&ok, |r| r.delta_rms);
    let delta_dot = best_min(&ok, |r| r.delta_dot_rms);
    let a_par = best_min(&ok, |r| r.a_par_rms);
    let a_perp = best_min(&ok, |r| r.a_perp_rms);
    let safe = best_min(&ok, |r| if r.safe { 0.0 } else { 1.0 });
    let dirs = best_min(&ok, |r| r.direction_changes as f64);
    let any_reached = ok.iter().flatten().any(|r| r.t.is_some());
    let rows = reports
        .into_iter()
        .enumerate()
        .map(|(i, (method, report))| ComparisonRow {
            method,
            report,
            best: BestFlags {
                t: t[i] && any_reached,
                delta_rms: delta[i],
                delta_dot_rms: delta_dot[i],
                a_par_rms: a_par[i],
                a_perp_rms: a_perp[i],
                safe: safe[i],
                direction_changes: dirs[i],
            },
        })
        .collect();
    ComparisonTable { rows }
}

const HEADER: [&str; 8] = [
    "method",
    "T",
    "delta_rms",
    "delta_dot_rms",
    "a_par_rms",
    "a_perp_rms",
    "safe",
    "direction_changes",
];

impl ComparisonRow {
    fn cells(&self) -> Vec<(String, bool)> {
        let mut cells = vec![(self.method.clone(), false)];
        match &self.report {
            Ok(r) => {
                let b = &self.best;
                cells.push((r.t.map_or("-".into(), |t| format!("{t:.2}")), b.t));
                cells.push((format!("{:.4}", r.delta_rms), b.delta_rms));
                cells.push((format!("{:.4}", r.delta_dot_rms), b.delta_dot_rms));
                cells.push((format!("{:.4}", r.a_par_rms), b.a_par_rms));
                cells.push((format!("{:.4}", r.a_perp_rms), b.a_perp_rms));
                cells.push((r.safe.to_string(), b.safe));
                cells.push((r.direction_changes.to_string(), b.direction_changes));
            }
            Err(_) => cells.extend((1..HEADER.len()).map(|_| ("failed".to_string(), false))),
        }
        cells
    }
}

impl ComparisonTable {
    /// Aligned text; best values are marked with `*`.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![HEADER.iter().map(|h| h.to_string()).collect()];
        for row in &self.rows {
            rows.push(
                row.cells()
                    .into_iter()
                    .map(|(c, best)| if best { format!("{c}*") } else { c })
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..HEADER.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        for row in &self.rows {
            if let Err(e) = &row.report {
                let _ = writeln!(out, "{}: {e}", row.method);
            }
        }
        out
    }

    /// CSV with a trailing `best` column listing the metrics this row wins
    /// and a `status` column (`ok` or the failure message).
    pub fn to_csv(&self) -> String {
        let mut out = HEADER.join(",");
        out.push_str(",best,status\n");
        for row in &self.rows {
            let cells = row.cells();
            let best: Vec<&str> = cells
                .iter()
                .zip(HEADER)
                .filter(|((_, b), _)| *b)
                .map(|(_, h)| h)
                .collect();
            let values: Vec<String> = cells.into_iter().map(|(c, _)| c).collect();
            let status = match &row.report {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("\"{}\"", e.replace('"', "'")),
            };
            let _ = writeln!(out, "{},{},{}", values.join(","), best.join(";"), status);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlInput, VehicleState};
    use crate::sim::TickRecord;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(
        states: Vec<VehicleState>,
        inputs: Vec<ControlInput>,
        reach: Option<f64>,
    ) -> RunRecord {
        let n = states.len();
        RunRecord {
            dt: 0.1,
            wheelbase: 2.5,
            violation: vec![0.0; n],
            goal_reach_time: reach,
            ticks: inputs
                .into_iter()
                .map(|input| TickRecord {
                    input,
                    ..TickRecord::default()
                })
                .collect(),
            states,
            ..RunRecord::default()
        }
    }

    #[test]
    fn zero_record() {
        let r = record(
            vec![VehicleState::default(); 5],
            vec![ControlInput::default(); 4],
            None,
        );
        let m = compute_metrics(&r).unwrap();
        assert_eq!(m.delta_rms, 0.0);
        assert_eq!(m.delta_dot_rms, 0.0);
        assert_eq!(m.a_par_rms, 0.0);
        assert_eq!(m.a_perp_rms, 0.0);
        assert!(m.safe);
        assert_eq!(m.direction_changes, 0);
    }

    #[test]
    fn empty_record_is_an_error() {
        let r = record(Vec::new(), Vec::new(), None);
        assert_eq!(compute_metrics(&r), Err(MetricsError::EmptyRecord));
    }

    #[test]
    fn constant_signals() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.1, 0.0);
        let r = record(vec![s; 10], vec![ControlInput::default(); 9], None);
        let m = compute_metrics(&r).unwrap();
        assert_relative_eq!(m.delta_rms, 0.1, epsilon = 1e-15);
        assert_relative_eq!(m.a_perp_rms, 0.1f64.tan() / 2.5, epsilon = 1e-15);
        assert_relative_eq!(m.a_perp_rms, 0.040134, epsilon = 1e-6);
    }

    #[test]
    fn arc_lateral_acceleration() {
        let (v, delta) = (1.7, 0.25);
        let radius = 2.5 / f64::tan(delta);
        let s = VehicleState::new(0.0, 0.0, 0.0, v, delta, 0.0);
        let r = record(vec![s; 20], vec![ControlInput::default(); 19], None);
        let m = compute_metrics(&r).unwrap();
        assert!((m.a_perp_rms - v * v / radius).abs() < 1e-6);
    }

    #[test]
    fn window_ends_at_goal_reach() {
        let mut states = vec![VehicleState::new(0.0, 0.0, 0.0, 0.5, 0.2, 0.0); 6];
        let mut inputs = vec![ControlInput::new(0.3, 0.1, 0.0); 5];
        let before = compute_metrics(&record(states.clone(), inputs.clone(), Some(0.3))).unwrap();
        for s in &mut states[4..] {
            s.delta = 0.5;
            s.v = -1.0;
        }
        for u in &mut inputs[3..] {
            u.a = -1.0;
        }
        let after = compute_metrics(&record(states, inputs, Some(0.3))).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn unsafe_when_any_violation() {
        let mut r = record(
            vec![VehicleState::default(); 3],
            vec![ControlInput::default(); 2],
            None,
        );
        r.violation[1] = 0.01;
        let m = compute_metrics(&r).unwrap();
        assert!(!m.safe);
        assert_eq!(m.max_violation, 0.01);
    }

    #[test]
    fn direction_changes_with_hysteresis() {
        assert_eq!(count_direction_changes([0.5, 0.01, -0.01, 0.3], 0.02), 0);
        assert_eq!(
            count_direction_changes([0.5, 0.0, -0.3, -0.1, 0.2], 0.02),
            2
        );
        assert_eq!(count_direction_changes([0.0, -0.5], 0.02), 0);
    }

    fn report(t: Option<f64>) -> MetricReport {
        MetricReport {
            t,
            delta_rms: 0.1,
            delta_dot_rms: 0.1,
            a_par_rms: 0.1,
            a_perp_rms: 0.1,
            safe: true,
            direction_changes: 0,
            max_violation: 0.0,
        }
    }

    #[test]
    fn single_row_is_all_best() {
        let t = compare(vec![("unified".into(), Ok(report(Some(3.0))))]);
        let b = t.rows[0].best;
        assert!(b.t && b.delta_rms && b.delta_dot_rms && b.a_par_rms && b.a_perp_rms && b.safe);
        assert!(b.direction_changes);
    }

    #[test]
    fn lower_time_wins() {
        let t = compare(vec![
            ("a".into(), Ok(report(Some(3.0)))),
            ("b".into(), Ok(report(Some(2.0)))),
            ("c".into(), Ok(report(None))),
        ]);
        assert!(!t.rows[0].best.t);
        assert!(t.rows[1].best.t);
        assert!(!t.rows[2].best.t);
        assert!(t.rows[0].best.delta_rms && t.rows[1].best.delta_rms);
    }

    #[test]
    fn safe_dominates_and_failures_are_marked() {
        let mut unsafe_report = report(Some(1.0));
        unsafe_report.safe = false;
        let t = compare(vec![
            ("ok".into(), Ok(report(Some(2.0)))),
            ("bad".into(), Ok(unsafe_report)),
            ("broken".into(), Err("solver exploded".into())),
        ]);
        assert!(t.rows[0].best.safe);
        assert!(!t.rows[1].best.safe);
        assert_eq!(t.rows[2].best, BestFlags::default());
        let csv = t.to_csv();
        assert!(csv.starts_with("method,T,delta_rms"));
        assert!(csv.contains("broken,failed"));
        assert!(csv.lines().nth(2).unwrap().contains(",false,"));
        let text = t.to_text();
        assert!(text.contains("2.00"));
        assert!(text.contains("solver exploded"));
    }

    proptest! {
        #[test]
        fn rms_scales_linearly(values in proptest::collection::vec(-10.0f64..10.0, 1..50), c in -5.0f64..5.0) {
            let base = rms(values.iter().copied());
            let scaled = rms(values.iter().map(|v| c * v));
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
            prop_assert!(base >= 0.0);
        }
    }
}
