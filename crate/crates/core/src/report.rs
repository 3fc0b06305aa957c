use std::fmt;

use serde::Serialize;

/// Findings from a report-only check. An empty report means the input passed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport<I> {
    pub issues: Vec<I>,
}

impl<I> Default for ValidationReport<I> {
    fn default() -> Self {
        Self { issues: Vec::new() }
    }
}

impl<I> ValidationReport<I> {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn push(&mut self, issue: I) {
        self.issues.push(issue);
    }
}

impl<I: fmt::Display> fmt::Display for ValidationReport<I> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}
