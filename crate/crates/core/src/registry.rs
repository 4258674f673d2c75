//! The five bundled clinical fixtures and their expected baseline values.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{DatasetMeta, SurvivalDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub n: usize,
    pub events: usize,
    pub q: usize,
    pub event_rate: f64,
    /// In-sample C-index of the clean Cox fit.
    pub c_index: f64,
    /// Mean out-of-sample C-index over 70/30 splits.
    pub test_c_index: f64,
    /// Design columns with p < 0.05 in the clean Cox fit.
    pub significant: &'static [&'static str],
    /// Discrete-time interval count.
    pub intervals: usize,
}

pub const REGISTRY: [RegistryEntry; 5] = [
    RegistryEntry {
        name: "lung",
        n: 168,
        events: 121,
        q: 7,
        event_rate: 0.720,
        c_index: 0.651,
        test_c_index: 0.614,
        significant: &["sex", "ph.ecog", "ph.karno"],
        intervals: 8,
    },
    RegistryEntry {
        name: "pbc",
        n: 312,
        events: 125,
        q: 17,
        event_rate: 0.401,
        c_index: 0.857,
        test_c_index: 0.831,
        significant: &[
            "age", "edema", "bili", "albumin", "copper", "ast", "protime", "stage",
        ],
        intervals: 9,
    },
    RegistryEntry {
        name: "colon",
        n: 929,
        events: 468,
        q: 11,
        event_rate: 0.504,
        c_index: 0.671,
        test_c_index: 0.659,
        significant: &["nodes", "extent", "surg", "node4", "rxLev+5FU"],
        intervals: 10,
    },
    RegistryEntry {
        name: "rotterdam",
        n: 2982,
        events: 1518,
        q: 9,
        event_rate: 0.509,
        c_index: 0.679,
        test_c_index: 0.675,
        significant: &["age", "meno", "size>50", "size20-50", "grade", "nodes"],
        intervals: 12,
    },
    RegistryEntry {
        name: "flchain",
        n: 6524,
        events: 1962,
        q: 7,
        event_rate: 0.301,
        c_index: 0.790,
        test_c_index: 0.791,
        significant: &["age", "sexM", "sample.yr", "lambda"],
        intervals: 13,
    },
];

pub fn lookup(name: &str) -> Result<&'static RegistryEntry> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownDataset {
            name: name.to_string(),
            valid: REGISTRY.iter().map(|e| e.name.to_string()).collect(),
        })
}

/// Position of a registry dataset; used as its stable seed key.
pub fn index_of(name: &str) -> Option<usize> {
    REGISTRY.iter().position(|e| e.name == name)
}

/// Directory holding the fixtures: `$DPCOX_DATA_DIR`, else the repository's
/// `data/` directory.
pub fn data_dir() -> PathBuf {
    std::env::var_os("DPCOX_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Loads `<dir>/<name>.csv` with its sidecar and checks it against the
/// registry row.
pub fn load_dataset_from(dir: &Path, entry: &RegistryEntry) -> Result<SurvivalDataset> {
    let meta = read_meta(&dir.join(format!("{}.json", entry.name)))?;
    let ds = SurvivalDataset::load_csv(&dir.join(format!("{}.csv", entry.name)), &meta)?;
    validate(&ds, entry)?;
    Ok(ds)
}

pub fn load_named(name: &str) -> Result<SurvivalDataset> {
    load_dataset_from(&data_dir(), lookup(name)?)
}

pub fn load_all() -> Result<Vec<SurvivalDataset>> {
    REGISTRY.iter().map(|e| load_dataset_from(&data_dir(), e)).collect()
}

pub fn validate(ds: &SurvivalDataset, entry: &RegistryEntry) -> Result<()> {
    let got = (ds.n(), ds.events(), ds.q());
    let want = (entry.n, entry.events, entry.q);
    if got != want {
        return Err(Error::ValidationFailure(format!(
            "{}: (n, events, q) = {got:?}, registry expects {want:?}",
            entry.name
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_dataset_lists_valid_names() {
        let err = lookup("veteran").unwrap_err();
        let msg = err.to_string();
        for e in &REGISTRY {
            assert!(msg.contains(e.name));
        }
    }

    #[test]
    fn event_rates_consistent() {
        for e in &REGISTRY {
            let rate = e.events as f64 / e.n as f64;
            assert!((rate - e.event_rate).abs() < 5e-4, "{}", e.name);
        }
    }
}
