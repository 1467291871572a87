//! Uniform result type for structural and numerical checks.
//!
//! Margins follow one convention everywhere: bigger is safer, and a
//! sample fails when its margin drops below the threshold the producer
//! chose. `worst_margin` is the minimum margin over all recorded
//! samples, so a report can be re-graded against a stricter threshold
//! after the fact.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub what: String,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub worst_margin: Option<f64>,
    pub violations: Vec<Violation>,
    pub details: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            passed: true,
            checked: 0,
            worst_margin: None,
            violations: Vec::new(),
            details: Vec::new(),
        }
    }

    /// Record one sample. `what` is only rendered on failure.
    pub fn record(&mut self, margin: f64, threshold: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        self.worst_margin = Some(match self.worst_margin {
            Some(w) => w.min(margin),
            None => margin,
        });
        if !(margin >= threshold) {
            self.passed = false;
            self.violations.push(Violation {
                what: what(),
                margin,
            });
        }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.details.push(line.into());
    }

    /// Fold a sub-report in, prefixing its violations with its name.
    pub fn absorb(&mut self, sub: CheckReport) {
        self.checked += sub.checked;
        self.worst_margin = match (self.worst_margin, sub.worst_margin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if !sub.passed {
            self.passed = false;
        }
        for v in sub.violations {
            self.violations.push(Violation {
                what: format!("{}: {}", sub.name, v.what),
                margin: v.margin,
            });
        }
        for d in sub.details {
            self.details.push(format!("{}: {}", sub.name, d));
        }
    }

    pub fn summary_line(&self) -> String {
        let margin = match self.worst_margin {
            Some(w) => format!("{w:.3e}"),
            None => "n/a".into(),
        };
        format!(
            "[{}] {} checked={} worst_margin={}",
            if self.passed { "pass" } else { "FAIL" },
            self.name,
            self.checked,
            margin
        )
    }
}
