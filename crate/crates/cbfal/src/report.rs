//! Run reports: named checks with values, thresholds, and pass/fail verdicts.
//!
//! Every scenario run produces a [`Report`], a flat list of [`CheckResult`]s
//! that renders either as aligned text for terminals or as JSON for tooling.
//! Checks carry the measured value and the threshold it was compared against,
//! so a failing report is diagnosable without rerunning.

use serde::Serialize;

/// Outcome of a single named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Measured quantity, when the check reduces to a scalar.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Threshold the value was compared against, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Human-readable statement of what was checked and what was observed.
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value >= threshold`.
    pub fn ge(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value >= threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }

    /// Passes when `value <= threshold`.
    pub fn le(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value: Some(value),
            threshold: Some(threshold),
            detail: detail.into(),
        }
    }

    /// Passes when `|value - center| <= tol`; stores the deviation as the value.
    pub fn within(
        name: &str,
        value: f64,
        center: f64,
        tol: f64,
        detail: impl Into<String>,
    ) -> Self {
        let dev = (value - center).abs();
        Self {
            name: name.into(),
            pass: dev <= tol,
            value: Some(dev),
            threshold: Some(tol),
            detail: format!(
                "{} (observed {value:.9}, expected {center:.9})",
                detail.into()
            ),
        }
    }

    /// Pass/fail decided by the caller; no scalar attached.
    pub fn flag(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    /// Informational entry that always passes.
    pub fn info(name: &str, value: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: true,
            value: Some(value),
            threshold: None,
            detail: detail.into(),
        }
    }
}

/// Full report for one scenario run (or structural demonstration).
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    /// `filtered`, `uncontrolled`, or `demonstration`.
    pub mode: String,
    /// Termination summary of the underlying simulation, if one ran.
    pub termination: String,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn new(scenario: &str, mode: &str, termination: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            mode: mode.into(),
            termination: termination.into(),
            pass: true,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: CheckResult) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {} ({})\n", self.scenario, self.mode));
        out.push_str(&format!("termination: {}\n", self.termination));
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{verdict}] {}: {}", c.name, c.detail));
            match (c.value, c.threshold) {
                (Some(v), Some(t)) => out.push_str(&format!(" [value {v:.6e}, threshold {t:.6e}]")),
                (Some(v), None) => out.push_str(&format!(" [value {v:.6e}]")),
                _ => {}
            }
            out.push('\n');
        }
        let overall = if self.pass { "PASS" } else { "FAIL" };
        out.push_str(&format!("overall: {overall}\n"));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Output format selector shared by the CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "structured" | "json" => Ok(Self::Structured),
            other => Err(format!(
                "unknown report format {other:?} (expected text|structured)"
            )),
        }
    }
}

// ─── tests ───────────────────────────────────────────────────────────────────
