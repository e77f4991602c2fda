//! Named pass/fail checks with values and thresholds, shared by the
//! validation stage, the inverse stage, and the CLI summary output.

use serde::{Deserialize, Serialize};

/// One named check: `pass` iff `value` is finite and no larger than
/// `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, value: f64, threshold: f64) -> CheckResult {
        CheckResult {
            name: name.into(),
            value,
            threshold,
            pass: value.is_finite() && value <= threshold,
        }
    }
}

/// A collection of checks with an overall verdict.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    pub fn add(&mut self, name: impl Into<String>, value: f64, threshold: f64) {
        self.checks.push(CheckResult::new(name, value, threshold));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Names of failing checks (for error messages and CLI output).
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect()
    }
}
