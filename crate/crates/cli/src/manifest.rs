//! Run manifests and dataset resolution.

use std::path::{Path, PathBuf};

use online_laplace::data::{synthetic_teacher, Dataset, DatasetManifest};
use online_laplace::train::{Objective, Procedure, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "OLAP_DATA_DIR";
/// Registry file looked up inside the dataset root.
pub const REGISTRY_FILE: &str = "datasets.toml";
/// Built-in teacher-student regression task (no file needed).
pub const SYNTHETIC: &str = "synthetic";

pub const SYNTHETIC_ROWS: usize = 400;
pub const SYNTHETIC_INPUTS: usize = 13;
pub const SYNTHETIC_TEACHER_HIDDEN: usize = 10;
pub const SYNTHETIC_NOISE: f64 = 0.3;
pub const SYNTHETIC_DATA_SEED: u64 = 7;

/// Everything needed to reproduce one run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset: String,
    pub procedure: Procedure,
    pub seed: u64,
    pub split_index: u32,
    pub hidden_units: usize,
    /// Offline runs hold out a validation portion for early stopping.
    pub use_validation: bool,
    /// Post-hoc hyperparameter objective for offline runs.
    pub posthoc: Option<Objective>,
    pub config: TrainConfig,
    pub code_version: String,
    /// SHA-256 of the parsed dataset (shape, features, targets).
    pub dataset_sha256: String,
}

impl RunManifest {
    pub fn check(&self) -> CliResult<()> {
        if self.config.procedure != self.procedure || self.config.seed != self.seed {
            return Err(CliError::usage("manifest procedure/seed disagree with its training config"));
        }
        if self.hidden_units == 0 {
            return Err(CliError::usage("hidden_units must be at least 1"));
        }
        if self.procedure == Procedure::Offline && !self.use_validation {
            return Err(CliError::usage("offline runs need a validation portion"));
        }
        self.config.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid run manifest: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("manifest serialises")))
    }

    /// `out_dir/<dataset>/<procedure>/split<k>`.
    pub fn run_dir(&self, out_dir: &Path) -> PathBuf {
        run_dir(out_dir, &self.dataset, self.procedure, self.split_index)
    }
}

pub fn run_dir(out_dir: &Path, dataset: &str, procedure: Procedure, split: u32) -> PathBuf {
    out_dir.join(dataset).join(procedure.as_str()).join(format!("split{split}"))
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Dataset root: explicit path, else `$OLAP_DATA_DIR`, else `./data`.
pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_dataset(name: &str, root: &Path) -> CliResult<Dataset> {
    if name == SYNTHETIC {
        return Ok(synthetic_teacher(
            SYNTHETIC_ROWS,
            SYNTHETIC_INPUTS,
            SYNTHETIC_TEACHER_HIDDEN,
            SYNTHETIC_NOISE,
            SYNTHETIC_DATA_SEED,
        ));
    }
    let registry = root.join(REGISTRY_FILE);
    if !registry.exists() {
        return Err(CliError::io(&registry, format!("dataset registry not found (set {DATA_DIR_ENV})")));
    }
    let manifest = DatasetManifest::load(&registry)?;
    Ok(manifest.load_dataset(name, root)?)
}

/// Content hash of a parsed dataset, independent of file formatting.
pub fn dataset_checksum(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.len() as u64).to_le_bytes());
    h.update((ds.input_dim() as u64).to_le_bytes());
    for v in ds.x.as_slice().iter().chain(&ds.y) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
