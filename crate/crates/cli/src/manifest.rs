//! Dataset manifest: split membership, per-model file paths, surviving
//! variants and the drop log. Persisted as JSON next to the data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default split proportions (train/val/test).
pub const SPLIT_RATIOS: [f64; 3] = [0.904, 0.0505, 0.0455];
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VariantEntry {
    pub variant_id: String,
    pub factors: (f64, f64, f64),
    /// Relative paths from the manifest directory.
    pub render: Option<PathBuf>,
    pub sketch: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub sequence: PathBuf,
    pub matrix: PathBuf,
    #[serde(default)]
    pub variants: Vec<VariantEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DropEntry {
    pub model_id: String,
    pub factors: (f64, f64, f64),
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub provenance: Provenance,
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
    #[serde(default)]
    pub drops: Vec<DropEntry>,
}

impl DatasetManifest {
    pub fn new(provenance: Provenance) -> Self {
        DatasetManifest { provenance, splits: BTreeMap::new(), drops: Vec::new() }
    }

    pub fn split(&self, name: &str) -> Result<&[ManifestEntry], CliError> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| CliError::Manifest(format!("split {name:?} not in manifest")))
    }

    pub fn all_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.splits.values().flatten()
    }

    pub fn all_entries_mut(&mut self) -> impl Iterator<Item = &mut ManifestEntry> {
        self.splits.values_mut().flatten()
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Manifest(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load and verify: splits must be disjoint and every referenced file
    /// must exist relative to the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Manifest(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut seen = std::collections::HashSet::new();
        for (split, entries) in &manifest.splits {
            for e in entries {
                if !seen.insert(e.model_id.clone()) {
                    return Err(CliError::Manifest(format!(
                        "model {} appears in more than one split (second: {split})",
                        e.model_id
                    )));
                }
                for rel in [Some(&e.sequence), Some(&e.matrix)].into_iter().flatten() {
                    let p = dir.join(rel);
                    if !p.exists() {
                        return Err(CliError::Manifest(format!("missing file {}", p.display())));
                    }
                }
                for v in &e.variants {
                    for rel in [&v.render, &v.sketch].into_iter().flatten() {
                        let p = dir.join(rel);
                        if !p.exists() {
                            return Err(CliError::Manifest(format!(
                                "missing file {}",
                                p.display()
                            )));
                        }
                    }
                }
            }
        }
        Ok(manifest)
    }
}

/// Deterministic split assignment by index under the default ratios.
pub fn split_for_index(i: usize, total: usize) -> &'static str {
    let f = (i as f64 + 0.5) / total as f64;
    if f < SPLIT_RATIOS[0] {
        SPLIT_NAMES[0]
    } else if f < SPLIT_RATIOS[0] + SPLIT_RATIOS[1] {
        SPLIT_NAMES[1]
    } else {
        SPLIT_NAMES[2]
    }
}
