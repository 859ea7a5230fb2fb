//! Verdicts and per-instance reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::instance::InstanceSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    /// Hypotheses of the property could not be established on the instance.
    Inconclusive,
}

/// Outcome of one property check. `violation <= tolerance` is a pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Short identifier, e.g. `weak-max/sub-c-nonneg`.
    pub property: String,
    /// The inequality that was checked, in words.
    pub statement: String,
    pub violation: f64,
    pub tolerance: f64,
    pub status: Status,
    /// Worst node as `(level, node)` with a description.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub level: usize,
    pub node: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub note: String,
}

impl Verdict {
    pub fn measured(
        property: impl Into<String>,
        statement: impl Into<String>,
        violation: f64,
        tolerance: f64,
        witness: Option<Witness>,
    ) -> Self {
        let status = if violation <= tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            property: property.into(),
            statement: statement.into(),
            violation,
            tolerance,
            status,
            witness,
        }
    }

    pub fn inconclusive(property: impl Into<String>, statement: impl Into<String>, why: &str) -> Self {
        Self {
            property: property.into(),
            statement: format!("{} [{why}]", statement.into()),
            violation: 0.0,
            tolerance: 0.0,
            status: Status::Inconclusive,
            witness: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub instance: InstanceSummary,
    pub verdicts: Vec<Verdict>,
    /// Stepping matrices were M-matrices on every level.
    pub monotone: bool,
    /// Reads of boundary data on the degenerate boundary below the top.
    pub degenerate_reads: usize,
    /// Wall-clock time; kept out of serialized artifacts so they stay
    /// reproducible.
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl VerificationReport {
    /// No verdict failed. Inconclusive verdicts do not fail a report.
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.status == Status::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let tags = &self.instance.tags;
        let _ = writeln!(
            s,
            "instance seed={} regime={} c_min={:.6e} K0={:.6e} T={:.4} shape={:?} levels={}",
            self.instance.seed,
            tags.regime.label(),
            tags.c_min,
            tags.k0,
            tags.t_final,
            self.instance.shape,
            self.instance.time_levels
        );
        let _ = writeln!(
            s,
            "  monotone={} degenerate_reads={}",
            self.monotone, self.degenerate_reads
        );
        for v in &self.verdicts {
            let tag = match v.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Inconclusive => "INCONCLUSIVE",
            };
            let _ = writeln!(
                s,
                "  {tag:<12} {:<34} violation={:.3e} tol={:.1e}  {}",
                v.property, v.violation, v.tolerance, v.statement
            );
            if v.status == Status::Fail {
                if let Some(w) = &v.witness {
                    let _ = writeln!(s, "      at level {} t={:.4} x={:?}: {}", w.level, w.t, w.x, w.note);
                }
            }
        }
        s
    }
}
