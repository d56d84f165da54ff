//! Run manifests: the reproducibility record written next to every artifact.
//!
//! A manifest carries the canonical config echo (every default resolved), the
//! artifact version, the truncation parameters of the velocity field when it
//! has any, and a checksum inventory of the run's output files. Re-running
//! the echoed config must reproduce every file bit for bit, manifest
//! included; the wall-clock field therefore stays `null` in the file and the
//! elapsed time is reported on stderr instead, where it cannot break the
//! determinism contract.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Activation parameters of a truncated field: the finest kept scale and the
/// instant the field switches on.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FieldTruncation {
    pub n_max: u32,
    pub activation_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub artifact_version: &'static str,
    pub experiment: String,
    pub seed: u64,
    /// Canonical config text with every default materialized; parsing it
    /// back is a fixed point.
    pub config: String,
    pub field_truncation: Option<FieldTruncation>,
    /// Always `null`; see the module doc.
    pub wall_clock_seconds: Option<f64>,
    /// File name to `sha256:<hex>`, sorted by name; the manifest itself is
    /// written last and never lists itself.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("manifest fields serialize infallibly");
        text.push('\n');
        text
    }
}

pub fn checksum(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("sha256:{:x}", hasher.finalize())
}
