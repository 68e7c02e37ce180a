//! Domain types shared across the pipeline.

use serde::{Deserialize, Serialize};

/// One check-in event with every id already resolved against the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckIn {
    pub user: usize,
    pub poi: usize,
    pub category: usize,
    pub geo_cluster: usize,
    pub lat: f64,
    pub lon: f64,
    /// Seconds since the Unix epoch, UTC.
    pub ts: i64,
}

/// A user's check-ins inside one split window, in chronological order.
/// `label` is the ground-truth next check-in for supervised samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user: usize,
    pub checkins: Vec<CheckIn>,
    pub label: Option<CheckIn>,
}

impl Trajectory {
    pub fn end_ts(&self) -> i64 {
        self.checkins.last().map_or(i64::MIN, |c| c.ts)
    }

    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }
}

/// Per-POI attributes resolved at preprocessing time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PoiAttr {
    pub category: usize,
    pub geo_cluster: usize,
    pub lat: f64,
    pub lon: f64,
}

/// Bidirectional id maps for users / POIs / categories plus the geo
/// clustering. Ids are positions in the key vectors.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    pub users: Vec<String>,
    pub pois: Vec<String>,
    pub categories: Vec<String>,
    pub poi_attrs: Vec<PoiAttr>,
    /// Cluster centroids as (lat, lon); the number of geo clusters is
    /// `geo_centroids.len()`.
    pub geo_centroids: Vec<(f64, f64)>,
}

impl Vocab {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }
    pub fn n_pois(&self) -> usize {
        self.pois.len()
    }
    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }
    pub fn n_geo_clusters(&self) -> usize {
        self.geo_centroids.len()
    }

    pub fn user_id(&self, key: &str) -> Option<usize> {
        self.users.iter().position(|k| k == key)
    }
}

/// Chronological train / validation / test partition of the trajectories.
#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub valid: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl DatasetSplit {
    pub fn by_name(&self, name: &str) -> Option<&[Trajectory]> {
        match name {
            "train" => Some(&self.train),
            "valid" | "validation" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}
