use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistics: IndexMap<String, f64>,
    pub p_value: f64,
    pub parameters: IndexMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TestReport {
    pub(crate) fn new(test: &str, p_value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_value) {
            return Err(Error::validation(format!("p-value {p_value} outside [0, 1]")));
        }
        Ok(TestReport {
            test: test.to_string(),
            statistics: IndexMap::new(),
            p_value,
            parameters: IndexMap::new(),
            seed: None,
        })
    }

    pub(crate) fn stat(mut self, name: &str, value: f64) -> Self {
        self.statistics.insert(name.to_string(), value);
        self
    }

    pub(crate) fn param(mut self, name: &str, value: impl Into<serde_json::Value>) -> Self {
        self.parameters.insert(name.to_string(), value.into());
        self
    }
}
