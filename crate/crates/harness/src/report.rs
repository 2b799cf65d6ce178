//! Run reports and their CSV/JSON exports.

use std::fmt::Write as _;
use std::path::Path;

use netfl::optim::StopReason;
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "event,node,objective,gtv,train_err,val_err,dist_oracle";

/// Metrics of one node after one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub event: usize,
    pub node: usize,
    /// Local training loss `L_i(w_i)`.
    pub objective: f64,
    /// `½ Σ_j A_ij φ(w_i − w_j)`, so node values sum to the graph's GTV.
    pub gtv: f64,
    pub train_err: Option<f64>,
    pub val_err: Option<f64>,
    pub dist_oracle: Option<f64>,
}

/// Whole-network metrics of one event; event 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTotals {
    pub event: usize,
    pub objective: f64,
    pub gtv: f64,
    pub dist_oracle: Option<f64>,
    pub perturbation_norm: f64,
}

/// A theoretical bound evaluated on the run. `margin` is positive when the
/// bound holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnosis {
    pub node: usize,
    pub train_err: Option<f64>,
    pub val_err: Option<f64>,
    /// Validation error well above both training error and baseline.
    pub overfitting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub converged: bool,
    pub stop_reason: StopReason,
    pub events_run: usize,
    pub final_objective: f64,
    pub final_dist_oracle: Option<f64>,
    pub bound_checks: Vec<BoundCheck>,
    /// Reference error level: the generator's noise variance for synthetic data.
    pub baseline: Option<f64>,
    pub diagnosis: Vec<NodeDiagnosis>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn all_bounds_hold(&self) -> bool {
        self.bound_checks.iter().all(|c| c.holds)
    }

    pub fn overfitting_nodes(&self) -> Vec<usize> {
        self.diagnosis.iter().filter(|d| d.overfitting).map(|d| d.node).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    /// SHA-256 of the validated config.
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub environment: Environment,
    pub summary: Summary,
    pub events: Vec<EventTotals>,
    /// Events `1..=K` in order, nodes in order within each event.
    pub rows: Vec<Row>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.event,
                r.node,
                fmt_num(r.objective),
                fmt_num(r.gtv),
                fmt_opt(r.train_err),
                fmt_opt(r.val_err),
                fmt_opt(r.dist_oracle)
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Write `report.csv` and `report.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| ReportError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(io(&csv))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(io(&json))?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Shortest rendering of `x` rounded to 12 significant digits, in the style
/// of C's `%.12g`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_like_printf_g() {
        for (x, s) in [
            (1.0, "1"),
            (0.1, "0.1"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333333333"),
            (123456789012345.0, "1.23456789012e+14"),
            (1e-7, "1e-07"),
            (0.000123, "0.000123"),
            (999999999999.5, "1e+12"),
            (-0.0, "0"),
        ] {
            assert_eq!(fmt_num(x), s, "{x}");
        }
    }
}
