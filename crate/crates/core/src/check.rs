//! Post-run invariant checks on a [`SimLog`], and peak counting on the
//! distance-error trace.

use std::fmt;

use crate::fhocp::SolverStatus;
use crate::scenario::Scenario;
use crate::sim::SimLog;

/// Absolute slack on the tube check for floating-point noise between the
/// real and nominal integrations.
pub const TUBE_TOL: f64 = 1e-9;

/// A peak must rise above this multiple of the median `e_d`.
pub const PEAK_HEIGHT_FACTOR: f64 = 1.5;
/// ... and stand out from its surroundings by this multiple of the median.
pub const PEAK_PROMINENCE_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, failure: Option<String>, ok: impl Into<String>) {
        let passed = failure.is_none();
        self.checks.push(CheckResult {
            name,
            passed,
            detail: failure.unwrap_or_else(|| ok.into()),
        });
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// First record for which `bad` holds, as a message naming its time.
fn first_violation(log: &SimLog, what: &str, bad: impl Fn(&crate::sim::LogRecord) -> Option<String>) -> Option<String> {
    let mut count = 0;
    let mut first = None;
    for r in &log.records {
        if r.status == SolverStatus::Aborted {
            continue;
        }
        if let Some(msg) = bad(r) {
            count += 1;
            first.get_or_insert_with(|| format!("{what} at t = {}: {msg}", r.t));
        }
    }
    first.map(|m| format!("{m} ({count} records)"))
}

pub fn check_invariants(log: &SimLog, scenario: &Scenario) -> CheckReport {
    let mut report = CheckReport::default();
    if log.records.is_empty() {
        report.warnings.push("empty log: every check passes vacuously".into());
    }
    let b = scenario.input_box;
    let eps = scenario.error_set.epsilon;
    let rho = scenario.tube.rho_tilde;

    let complete = if log.aborted() {
        Some(format!(
            "run aborted: {}",
            log.abort_reason.as_deref().unwrap_or("terminal record in log")
        ))
    } else if !log.records.is_empty() && log.records.len() != scenario.steps {
        Some(format!(
            "{} records for {} control steps",
            log.records.len(),
            scenario.steps
        ))
    } else {
        None
    };
    report.push("run completed", complete, format!("{} records", log.records.len()));

    let order = log
        .records
        .windows(2)
        .find(|w| !(w[1].t > w[0].t))
        .map(|w| format!("t = {} follows t = {}", w[1].t, w[0].t));
    report.push("time strictly increasing", order, "ok");

    let input = first_violation(log, "input outside the box", |r| {
        let v = r.input;
        (!(v.u.abs() <= b.u_max && v.w.abs() <= b.w_max && v.r.abs() <= b.r_max)).then(|| {
            format!(
                "(u, w, r) = ({}, {}, {}) against ({}, {}, {})",
                v.u, v.w, v.r, b.u_max, b.w_max, b.r_max
            )
        })
    });
    report.push(
        "input box",
        input,
        format!("|u| <= {}, |w| <= {}, |r| <= {}", b.u_max, b.w_max, b.r_max),
    );

    let floor = first_violation(log, "distance error below epsilon", |r| {
        (!(r.error[0] >= eps)).then(|| format!("e_d = {}", r.error[0]))
    });
    report.push("distance floor", floor, format!("e_d >= {eps}"));

    let tube = first_violation(log, "left the tube", |r| {
        (!(r.rho_norm <= rho + TUBE_TOL)).then(|| format!("|e - e_hat| = {} > {rho}", r.rho_norm))
    });
    report.push("tube containment", tube, format!("|e - e_hat| <= {rho}"));

    let clearance = first_violation(log, "collision", |r| {
        (!(r.clearance >= 0.0)).then(|| format!("clearance {}", r.clearance))
    });
    report.push("clearance", clearance, "clearance >= 0");

    let fallbacks = log
        .records
        .iter()
        .filter(|r| r.status == SolverStatus::Fallback)
        .count();
    let fallback = if fallbacks > 0 && !scenario.file.checks.allow_fallback {
        first_violation(log, "fallback", |r| {
            (r.status == SolverStatus::Fallback).then(String::new)
        })
    } else {
        if fallbacks > 0 {
            report
                .warnings
                .push(format!("{fallbacks} fallback steps (permitted by the scenario)"));
        }
        None
    };
    report.push("fallback-free", fallback, "no fallback steps");

    let horizon = scenario.fhocp.horizon();
    let gate = (horizon > scenario.horizon_limit).then(|| {
        format!(
            "horizon {horizon} > R_bar / (V_bar + xi_tilde) = {}",
            scenario.horizon_limit
        )
    });
    report.push(
        "horizon condition",
        gate,
        format!("{horizon} <= {}", scenario.horizon_limit),
    );

    if let Some(expected) = scenario.file.checks.expected_peaks {
        let ed: Vec<f64> = log
            .records
            .iter()
            .map(|r| r.error[0])
            .filter(|x| x.is_finite())
            .collect();
        let peaks = distance_peaks(&ed);
        let found = peaks.len();
        let times: Vec<String> = peaks.iter().map(|&i| format!("{}", log.records[i].t)).collect();
        report.push(
            "distance-error peaks",
            (found != expected).then(|| format!("{found} peaks, expected {expected} (at t = [{}])", times.join(", "))),
            format!("{found} peaks at t = [{}]", times.join(", ")),
        );
    }
    report
}

/// Extremes of a log, ignoring an aborted final record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSummary {
    pub steps: usize,
    pub max_rho: f64,
    pub min_ed: f64,
    pub min_clearance: f64,
    /// Largest `|u|`, `|w|`, `|r|`.
    pub max_input: [f64; 3],
    pub fallbacks: usize,
}

pub fn summarize(log: &SimLog) -> LogSummary {
    let mut s = LogSummary {
        steps: 0,
        max_rho: 0.0,
        min_ed: f64::INFINITY,
        min_clearance: f64::INFINITY,
        max_input: [0.0; 3],
        fallbacks: 0,
    };
    for r in log.records.iter().filter(|r| r.status != SolverStatus::Aborted) {
        s.steps += 1;
        s.max_rho = s.max_rho.max(r.rho_norm);
        s.min_ed = s.min_ed.min(r.error[0]);
        s.min_clearance = s.min_clearance.min(r.clearance);
        for (m, v) in s.max_input.iter_mut().zip([r.input.u, r.input.w, r.input.r]) {
            *m = m.max(v.abs());
        }
        s.fallbacks += usize::from(r.status == SolverStatus::Fallback);
    }
    s
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Prominence of the local maximum at `i`: its height above the higher of
/// the two lowest points reached before meeting a strictly higher sample on
/// either side (or the end of the trace).
pub fn prominence(values: &[f64], i: usize) -> f64 {
    let h = values[i];
    let mut left = h;
    for &v in values[..i].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &values[i + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Indices of local maxima (plateaus count once, at their first sample)
/// with height above `min_height` and prominence at least `min_prominence`.
pub fn find_peaks(values: &[f64], min_height: f64, min_prominence: f64) -> Vec<usize> {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n
                && values[j + 1] < values[i]
                && values[i] > min_height
                && prominence(values, i) >= min_prominence
            {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Peaks of an `e_d` trace with thresholds scaled by its median level.
pub fn distance_peaks(ed: &[f64]) -> Vec<usize> {
    let level = median(ed);
    find_peaks(ed, PEAK_HEIGHT_FACTOR * level, PEAK_PROMINENCE_FACTOR * level)
}
