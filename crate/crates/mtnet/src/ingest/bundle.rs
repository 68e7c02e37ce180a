//! Self-describing dataset bundle: vocabularies, splits, centroids and the
//! preprocessing config hash, serialized as a single JSON file.
//!
//! Check-ins are stored compactly as (poi, ts); categories, clusters and
//! coordinates are reconstructed from the POI attribute table on load, so
//! the round trip is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IngestError, PrepStats, PreprocessOutput};
use crate::types::{CheckIn, DatasetSplit, Trajectory, Vocab};

pub const BUNDLE_FORMAT: &str = "mtnet.bundle.v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleTrajectory {
    pub user: usize,
    /// (poi id, epoch seconds) per check-in.
    pub events: Vec<(usize, i64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub format: String,
    /// Hash of the effective preprocessing configuration.
    pub config_hash: String,
    /// Hash of the vocabulary content; checkpoints record it so evaluation
    /// can reject a mismatched bundle.
    pub vocab_hash: String,
    pub tz_offset_secs: i64,
    pub window_hours: f64,
    /// Slots-per-day value the fan-out statistic below was computed with.
    pub slots_hint: usize,
    pub max_leaves_per_period: usize,
    pub stats: PrepStats,
    pub vocab: Vocab,
    pub train: Vec<BundleTrajectory>,
    pub valid: Vec<BundleTrajectory>,
    pub test: Vec<BundleTrajectory>,
}

/// Bundle plus the splits expanded back into full check-ins.
pub struct LoadedBundle {
    pub bundle: DatasetBundle,
    pub splits: DatasetSplit,
}

pub fn vocab_hash(vocab: &Vocab) -> String {
    let bytes = serde_json::to_vec(vocab).expect("vocab serializes");
    sha256_hex(&bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn compact(trajectories: &[Trajectory]) -> Vec<BundleTrajectory> {
    trajectories
        .iter()
        .map(|t| BundleTrajectory {
            user: t.user,
            events: t.checkins.iter().map(|c| (c.poi, c.ts)).collect(),
        })
        .collect()
}

fn expand(compact: &[BundleTrajectory], vocab: &Vocab) -> Result<Vec<Trajectory>, IngestError> {
    compact
        .iter()
        .map(|t| {
            let checkins = t
                .events
                .iter()
                .map(|&(poi, ts)| {
                    let attr = vocab
                        .poi_attrs
                        .get(poi)
                        .ok_or_else(|| IngestError::BadBundle(format!("poi id {poi} out of range")))?;
                    Ok(CheckIn {
                        user: t.user,
                        poi,
                        category: attr.category,
                        geo_cluster: attr.geo_cluster,
                        lat: attr.lat,
                        lon: attr.lon,
                        ts,
                    })
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            Ok(Trajectory { user: t.user, checkins, label: None })
        })
        .collect()
}

pub fn save_bundle(
    path: &Path,
    out: &PreprocessOutput,
    cfg: &super::DatasetConfig,
    slots_hint: usize,
    config_hash: &str,
) -> Result<DatasetBundle, IngestError> {
    let bundle = DatasetBundle {
        format: BUNDLE_FORMAT.to_string(),
        config_hash: config_hash.to_string(),
        vocab_hash: vocab_hash(&out.vocab),
        tz_offset_secs: cfg.tz_offset_secs,
        window_hours: cfg.window_hours,
        slots_hint,
        max_leaves_per_period: out.max_leaves_per_period,
        stats: out.stats.clone(),
        vocab: out.vocab.clone(),
        train: compact(&out.splits.train),
        valid: compact(&out.splits.valid),
        test: compact(&out.splits.test),
    };
    let bytes = serde_json::to_vec(&bundle).expect("bundle serializes");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(bundle)
}

pub fn load_bundle(path: &Path) -> Result<LoadedBundle, IngestError> {
    let bytes = fs::read(path)?;
    let bundle: DatasetBundle = serde_json::from_slice(&bytes)
        .map_err(|e| IngestError::BadBundle(format!("{}: {e}", path.display())))?;
    if bundle.format != BUNDLE_FORMAT {
        return Err(IngestError::BadBundle(format!(
            "unsupported bundle format {:?} (expected {BUNDLE_FORMAT:?})",
            bundle.format
        )));
    }
    let splits = DatasetSplit {
        train: expand(&bundle.train, &bundle.vocab)?,
        valid: expand(&bundle.valid, &bundle.vocab)?,
        test: expand(&bundle.test, &bundle.vocab)?,
    };
    Ok(LoadedBundle { bundle, splits })
}
