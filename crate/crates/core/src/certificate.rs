use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::MatrixLiteral;
use crate::linalg::Mat;

/// Pass/fail record of a family of Loewner inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub tag: String,
    pub passed: bool,
    pub tolerance: f64,
    pub worst_margin: f64,
    pub checks: usize,
    /// Sample achieving the worst margin when the certificate fails.
    pub witness: Option<MatrixLiteral>,
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn new(tag: impl Into<String>, tolerance: f64) -> Self {
        Self {
            tag: tag.into(),
            passed: true,
            tolerance,
            worst_margin: f64::INFINITY,
            checks: 0,
            witness: None,
            constants: BTreeMap::new(),
            notes: vec![],
        }
    }

    pub fn record(&mut self, margin: f64, sample: &Mat) {
        self.checks += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            if margin < -self.tolerance {
                self.witness = Some(MatrixLiteral::from_mat(sample));
            }
        }
        if margin < -self.tolerance || margin.is_nan() {
            self.passed = false;
        }
    }

    pub fn constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn merge(&mut self, other: Certificate) {
        self.checks += other.checks;
        self.passed &= other.passed;
        if other.worst_margin < self.worst_margin {
            self.worst_margin = other.worst_margin;
            if other.witness.is_some() {
                self.witness = other.witness;
            }
        }
        self.notes.extend(other.notes);
    }
}
