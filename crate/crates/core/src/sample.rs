//! Without-replacement samples as produced by the pipelines and the oracle.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Key, RDist};
use crate::error::Result;
use crate::transform::TransformConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Exact frequencies and exact threshold.
    Exact2Pass,
    /// Frequencies and threshold recovered from sketch estimates.
    Approx1Pass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub key: Key,
    /// `ν_x` in exact mode, `ν'_x` in approximate mode.
    pub frequency: f64,
    /// `ν*_x`, or its estimate.
    pub transformed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorSample {
    /// Sorted by decreasing `|transformed|`, ties by ascending key.
    pub entries: Vec<SampleEntry>,
    pub tau: f64,
    pub mode: SampleMode,
    pub k: usize,
    pub p: f64,
    pub dist: RDist,
    pub seed: u64,
    /// Fewer than `k+1` keys were available; `entries` holds all of them and `tau` is 0.
    #[serde(default)]
    pub underfull: bool,
    /// The sketch's failure test fired; the sample may be wrong.
    #[serde(default)]
    pub failure: bool,
}

/// Orders entries by decreasing `|transformed|`, then ascending key.
pub(crate) fn sort_by_rank(entries: &mut [SampleEntry]) {
    entries.sort_by(|a, b| {
        b.transformed
            .abs()
            .total_cmp(&a.transformed.abs())
            .then_with(|| a.key.cmp(&b.key))
    });
}

impl WorSample {
    pub fn new(mut entries: Vec<SampleEntry>, tau: f64, mode: SampleMode, cfg: &TransformConfig, k: usize) -> Self {
        sort_by_rank(&mut entries);
        WorSample {
            entries,
            tau,
            mode,
            k,
            p: cfg.p,
            dist: cfg.dist,
            seed: cfg.seed,
            underfull: false,
            failure: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> BTreeSet<Key> {
        self.entries.iter().map(|e| e.key.clone()).collect()
    }

    pub fn get(&self, key: &Key) -> Option<&SampleEntry> {
        self.entries.iter().find(|e| &e.key == key)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = TransformConfig::new(2.0, 11);
        let entries = vec![
            SampleEntry { key: "b".into(), frequency: 1.0, transformed: 2.0 },
            SampleEntry { key: "a".into(), frequency: -3.0, transformed: -5.0 },
        ];
        let s = WorSample::new(entries, 0.5, SampleMode::Approx1Pass, &cfg, 2);
        assert_eq!(s.entries[0].key, Key::from("a"));
        let json = s.to_json().unwrap();
        assert!(json.contains("\"approx1pass\""));
        assert_eq!(WorSample::from_json(&json).unwrap(), s);
    }
}
