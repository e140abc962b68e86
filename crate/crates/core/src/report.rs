//! JSON reports and CSV convergence tables.

use serde::Serialize;
use serde_json::Value;

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub abs_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Check {
        let abs_error = (value - expected).abs();
        Check {
            name: name.into(),
            value,
            expected,
            abs_error,
            tolerance,
            pass: abs_error < tolerance,
        }
    }

    /// An upper bound on a residual, compared against zero.
    pub fn residual(name: impl Into<String>, residual: f64, tolerance: f64) -> Check {
        Check::new(name, residual.abs(), 0.0, tolerance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub resolution: usize,
    pub value: f64,
}

/// Output of a subcommand. Serialization order follows the field order and
/// `inputs` keys are sorted, so equal inputs give identical JSON apart from
/// `wall_time`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub inputs: Value,
    pub convergence: Vec<ConvergenceRow>,
    pub extrapolated: Option<f64>,
    pub value: f64,
    pub expected: f64,
    pub abs_error: f64,
    pub tolerance: f64,
    pub checks: Vec<Check>,
    pub details: Value,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl Report {
    /// Report whose headline is the first check; passes iff every check does.
    pub fn from_checks(command: &str, inputs: Value, checks: Vec<Check>) -> Report {
        let head = checks.first().cloned().unwrap_or_else(|| Check::new("none", 0.0, 0.0, 1.0));
        Report {
            command: command.to_string(),
            inputs,
            convergence: Vec::new(),
            extrapolated: None,
            value: head.value,
            expected: head.expected,
            abs_error: head.abs_error,
            tolerance: head.tolerance,
            pass: checks.iter().all(|c| c.pass),
            checks,
            details: Value::Null,
            wall_time: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Report {
        self.details = details;
        self
    }

    pub fn with_convergence(mut self, rows: &[(usize, f64)], extrapolated: Option<f64>) -> Report {
        self.convergence = rows
            .iter()
            .map(|&(resolution, value)| ConvergenceRow { resolution, value })
            .collect();
        self.extrapolated = extrapolated;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// JSON without `wall_time`.
    pub fn to_json_deterministic(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time = None;
        copy.to_json()
    }

    pub fn convergence_csv(&self) -> String {
        let mut out = String::from("resolution,value\n");
        for row in &self.convergence {
            out.push_str(&format!("{},{:.17e}\n", row.resolution, row.value));
        }
        out
    }

    pub fn checks_csv(&self) -> String {
        let mut out = String::from("name,value,expected,abs_error,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.3e},{:.3e},{}\n",
                c.name, c.value, c.expected, c.abs_error, c.tolerance, c.pass
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_is_strict() {
        assert!(Check::new("a", 1.5, 1.0, 0.6).pass);
        assert!(!Check::new("a", 1.5, 1.0, 0.5).pass);
    }

    #[test]
    fn json_is_deterministic_and_ordered() {
        let mut r = Report::from_checks(
            "x",
            serde_json::json!({"b": 1, "a": 2}),
            vec![Check::new("v", 2.0, 2.0, 1e-6), Check::residual("r", 1e-3, 1e-4)],
        )
        .with_convergence(&[(8, 1.9), (16, 1.99)], None);
        assert!(!r.pass);
        r.wall_time = Some(0.25);
        let a = r.to_json_deterministic();
        r.wall_time = Some(9.0);
        assert_eq!(a, r.to_json_deterministic());
        assert!(a.find("\"command\"").unwrap() < a.find("\"pass\": false").unwrap());
        assert!(a.find("\"a\"").unwrap() < a.find("\"b\"").unwrap());
        assert!(r.to_json().contains("wall_time"));
        assert_eq!(r.convergence_csv().lines().count(), 3);
    }
}
