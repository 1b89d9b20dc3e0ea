use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Record of one command run; replaying `argv` reproduces `metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path).map_err(Error::io(path))?)?)
    }

    /// Metrics whose bits differ from `other`'s.
    pub fn metric_mismatches(&self, other: &RunManifest) -> Vec<String> {
        let keys: std::collections::BTreeSet<&String> = self.metrics.keys().chain(other.metrics.keys()).collect();
        keys.into_iter()
            .filter(|k| self.metrics.get(*k).map(|v| v.to_bits()) != other.metrics.get(*k).map(|v| v.to_bits()))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let mut m = RunManifest {
            command: "gen".into(),
            argv: vec!["gen".into(), "--seed".into(), "3".into()],
            config: serde_json::json!({"seed": 3}),
            seed: 3,
            inputs: vec![],
            outputs: vec!["out".into()],
            metrics: BTreeMap::from([("test_rmse".to_string(), 0.1 + 0.2)]),
            seconds: 1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.metric_mismatches(&m).is_empty());
        m.metrics.insert("test_rmse".into(), 0.3);
        assert_eq!(back.metric_mismatches(&m), vec!["test_rmse".to_string()]);
    }
}
