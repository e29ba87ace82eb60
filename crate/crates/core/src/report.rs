//! Verification reports.
//!
//! Every checker in this crate reduces to statements of the form
//! `lhs <= rhs`, reported with the measured sides, the margin `rhs - lhs`,
//! and a witness describing where the extreme case occurred.  Reports are
//! plain data so they can be serialized, diffed, and aggregated by the CLI.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The check's hypothesis was not met on this input, so the conclusion
    /// was not evaluated.
    Skipped,
}

/// Outcome of one inequality check `lhs <= rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Short stable identifier, e.g. `"doubling"` or `"ball_mass_upper"`.
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative iff the inequality holds.
    pub margin: f64,
    /// Where the extreme case occurred (indices, radii, ...); free-form.
    pub witness: Value,
    pub status: Status,
    /// Constants the check used or measured, keyed by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VerificationReport {
    /// Builds a pass/fail report from the two sides of `lhs <= rhs`.
    pub fn check(inequality: impl Into<String>, lhs: f64, rhs: f64, witness: Value) -> Self {
        let status = if lhs <= rhs { Status::Pass } else { Status::Fail };
        VerificationReport {
            inequality: inequality.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            witness,
            status,
            constants: BTreeMap::new(),
            note: None,
        }
    }

    /// A report whose hypothesis failed: conclusion untested.
    pub fn skipped(inequality: impl Into<String>, note: impl Into<String>) -> Self {
        VerificationReport {
            inequality: inequality.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            margin: f64::NAN,
            witness: Value::Null,
            status: Status::Skipped,
            constants: BTreeMap::new(),
            note: Some(note.into()),
        }
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    /// One-line human summary, `name: status (lhs <= rhs, margin m)`.
    pub fn summary(&self) -> String {
        match self.status {
            Status::Skipped => format!(
                "{}: skipped ({})",
                self.inequality,
                self.note.as_deref().unwrap_or("hypothesis not met")
            ),
            _ => format!(
                "{}: {} ({:.6e} <= {:.6e}, margin {:.3e})",
                self.inequality,
                if self.status == Status::Pass { "pass" } else { "FAIL" },
                self.lhs,
                self.rhs,
                self.margin
            ),
        }
    }
}

/// Validates that a JSON value has the report shape (used by the CLI when
/// re-reading artifacts, and by schema tests).
pub fn validate_report_json(v: &Value) -> Result<(), String> {
    let obj = v.as_object().ok_or("report must be an object")?;
    for key in ["inequality", "lhs", "rhs", "margin", "witness", "status"] {
        if !obj.contains_key(key) {
            return Err(format!("missing field {key:?}"));
        }
    }
    if !obj["inequality"].is_string() {
        return Err("inequality must be a string".into());
    }
    match obj["status"].as_str() {
        Some("pass" | "fail" | "skipped") => {}
        _ => return Err("status must be pass|fail|skipped".into()),
    }
    for key in ["lhs", "rhs", "margin"] {
        if !(obj[key].is_number() || obj[key].is_null()) {
            return Err(format!("{key} must be numeric"));
        }
    }
    Ok(())
}
