//! Check-in log ingestion: parsing, activity filtering, trajectory
//! splitting, vocabulary construction and the dataset bundle.

mod bundle;
mod kmeans;

pub use bundle::{load_bundle, save_bundle, BundleTrajectory, DatasetBundle, LoadedBundle};
pub use kmeans::{kmeans_geo, KmeansResult};

use std::collections::HashMap;
use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::TimeContext;
use crate::types::{CheckIn, DatasetSplit, PoiAttr, Trajectory, Vocab};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in header")]
    ColumnNotFound(String),
    #[error("column names require a header row (has_header = false)")]
    NamedColumnsWithoutHeader,
    #[error("unknown time format {0:?} (expected rfc3339 | epoch_seconds | custom)")]
    BadTimeFormat(String),
    #[error("time_format = \"custom\" requires time_custom_format")]
    MissingCustomFormat,
    #[error("delimiter must be a single byte, got {0:?}")]
    BadDelimiter(String),
    #[error("k-means needs at least {needed} distinct points, got {got}")]
    NotEnoughDistinctPoints { needed: usize, got: usize },
    #[error("chronological split needs at least 3 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("bundle: {0}")]
    BadBundle(String),
}

/// How to read one dataset export. Column layouts differ between the
/// Foursquare and Gowalla dumps, so the mapping is configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Input path; usually supplied on the command line instead.
    pub input: Option<PathBuf>,
    pub delimiter: String,
    pub has_header: bool,
    pub col_user: ColumnRef,
    pub col_poi: ColumnRef,
    pub col_category: ColumnRef,
    pub col_time: ColumnRef,
    pub col_lat: ColumnRef,
    pub col_lon: ColumnRef,
    /// "rfc3339" | "epoch_seconds" | "custom".
    pub time_format: String,
    /// chrono strftime pattern used when `time_format = "custom"`.
    pub time_custom_format: Option<String>,
    /// Offset added to UTC when deriving local days/hours. The logs
    /// themselves stay in UTC epoch seconds.
    pub tz_offset_secs: i64,
    pub min_user_checkins: usize,
    pub min_poi_visits: usize,
    pub window_hours: f64,
    pub geo_clusters: usize,
    pub kmeans_max_iters: usize,
    pub fractions: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            input: None,
            delimiter: ",".into(),
            has_header: true,
            col_user: ColumnRef::Name("user_id".into()),
            col_poi: ColumnRef::Name("poi_id".into()),
            col_category: ColumnRef::Name("category".into()),
            col_time: ColumnRef::Name("time".into()),
            col_lat: ColumnRef::Name("lat".into()),
            col_lon: ColumnRef::Name("lon".into()),
            time_format: "rfc3339".into(),
            time_custom_format: None,
            tz_offset_secs: 0,
            min_user_checkins: 10,
            min_poi_visits: 10,
            window_hours: 24.0,
            geo_clusters: 60,
            kmeans_max_iters: 100,
            fractions: [0.8, 0.1, 0.1],
        }
    }
}

/// Column addressed by header name or zero-based position.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// A decoded check-in row, still keyed by the raw dataset strings.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub poi: String,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
    pub ts: i64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub rows: usize,
    pub skipped: usize,
}

fn resolve_column(
    col: &ColumnRef,
    header: Option<&csv::StringRecord>,
) -> Result<usize, IngestError> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => {
            let header = header.ok_or(IngestError::NamedColumnsWithoutHeader)?;
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::ColumnNotFound(name.clone()))
        }
    }
}

fn parse_time(raw: &str, cfg: &DatasetConfig) -> Result<Option<i64>, IngestError> {
    let raw = raw.trim();
    match cfg.time_format.as_str() {
        "rfc3339" => Ok(chrono::DateTime::parse_from_rfc3339(raw).ok().map(|d| d.timestamp())),
        "epoch_seconds" => Ok(raw
            .parse::<i64>()
            .ok()
            .or_else(|| raw.parse::<f64>().ok().map(|f| f.floor() as i64))),
        "custom" => {
            let fmt = cfg
                .time_custom_format
                .as_deref()
                .ok_or(IngestError::MissingCustomFormat)?;
            if let Ok(d) = chrono::DateTime::parse_from_str(raw, fmt) {
                return Ok(Some(d.timestamp()));
            }
            Ok(chrono::NaiveDateTime::parse_from_str(raw, fmt)
                .ok()
                .map(|d| d.and_utc().timestamp()))
        }
        other => Err(IngestError::BadTimeFormat(other.to_string())),
    }
}

/// Decode a delimiter-separated check-in log. Malformed rows are counted
/// and skipped; an unreadable stream is fatal.
pub fn parse_checkins<R: Read>(
    reader: R,
    cfg: &DatasetConfig,
) -> Result<(Vec<RawRecord>, ParseStats), IngestError> {
    if cfg.delimiter.as_bytes().len() != 1 {
        return Err(IngestError::BadDelimiter(cfg.delimiter.clone()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter.as_bytes()[0])
        .has_headers(cfg.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = if cfg.has_header { Some(rdr.headers()?.clone()) } else { None };
    let cols = [
        resolve_column(&cfg.col_user, header.as_ref())?,
        resolve_column(&cfg.col_poi, header.as_ref())?,
        resolve_column(&cfg.col_category, header.as_ref())?,
        resolve_column(&cfg.col_time, header.as_ref())?,
        resolve_column(&cfg.col_lat, header.as_ref())?,
        resolve_column(&cfg.col_lon, header.as_ref())?,
    ];

    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for row in rdr.records() {
        stats.rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                stats.skipped += 1;
                continue;
            }
        };
        match decode_row(&row, &cols, cfg)? {
            Some(rec) => records.push(rec),
            None => stats.skipped += 1,
        }
    }
    if stats.skipped > 0 {
        log::warn!("parse_checkins: skipped {} of {} rows", stats.skipped, stats.rows);
    }
    Ok((records, stats))
}

fn decode_row(
    row: &csv::StringRecord,
    cols: &[usize; 6],
    cfg: &DatasetConfig,
) -> Result<Option<RawRecord>, IngestError> {
    let field = |i: usize| row.get(cols[i]);
    let (user, poi, category) = match (field(0), field(1), field(2)) {
        (Some(u), Some(p), Some(c)) if !u.is_empty() && !p.is_empty() => {
            (u.to_string(), p.to_string(), c.to_string())
        }
        _ => return Ok(None),
    };
    let ts = match field(3).map(|t| parse_time(t, cfg)).transpose()? {
        Some(Some(ts)) => ts,
        _ => return Ok(None),
    };
    let (lat, lon) = match (
        field(4).and_then(|v| v.parse::<f64>().ok()),
        field(5).and_then(|v| v.parse::<f64>().ok()),
    ) {
        (Some(lat), Some(lon))
            if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) =>
        {
            (lat, lon)
        }
        _ => return Ok(None),
    };
    Ok(Some(RawRecord { user, poi, category, lat, lon, ts }))
}

/// Remove records of users with fewer than `min_user_checkins` records,
/// then records of POIs visited fewer than `min_poi_visits` times by the
/// remaining users. Exactly two passes, in this order; no fix point.
pub fn filter_records(
    records: Vec<RawRecord>,
    min_user_checkins: usize,
    min_poi_visits: usize,
) -> Vec<RawRecord> {
    let mut user_counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *user_counts.entry(r.user.as_str()).or_default() += 1;
    }
    let keep_user: Vec<bool> = records
        .iter()
        .map(|r| user_counts[r.user.as_str()] >= min_user_checkins)
        .collect();

    let mut poi_counts: HashMap<&str, usize> = HashMap::new();
    for (r, keep) in records.iter().zip(&keep_user) {
        if *keep {
            *poi_counts.entry(r.poi.as_str()).or_default() += 1;
        }
    }
    records
        .iter()
        .zip(&keep_user)
        .filter(|(r, keep)| {
            **keep && poi_counts.get(r.poi.as_str()).copied().unwrap_or(0) >= min_poi_visits
        })
        .map(|(r, _)| r.clone())
        .collect()
}

/// First-appearance vocabularies plus the per-POI attribute table
/// (attributes come from each POI's first record).
fn build_vocab(records: &[RawRecord]) -> (Vocab, Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut vocab = Vocab::default();
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut poi_ids: HashMap<&str, usize> = HashMap::new();
    let mut cat_ids: HashMap<&str, usize> = HashMap::new();
    let mut rec_user = Vec::with_capacity(records.len());
    let mut rec_poi = Vec::with_capacity(records.len());
    let mut rec_cat = Vec::with_capacity(records.len());

    for r in records {
        let u = *user_ids.entry(r.user.as_str()).or_insert_with(|| {
            vocab.users.push(r.user.clone());
            vocab.users.len() - 1
        });
        let c = *cat_ids.entry(r.category.as_str()).or_insert_with(|| {
            vocab.categories.push(r.category.clone());
            vocab.categories.len() - 1
        });
        let p = *poi_ids.entry(r.poi.as_str()).or_insert_with(|| {
            vocab.pois.push(r.poi.clone());
            vocab.poi_attrs.push(PoiAttr {
                category: c,
                geo_cluster: 0,
                lat: r.lat,
                lon: r.lon,
            });
            vocab.pois.len() - 1
        });
        rec_user.push(u);
        rec_poi.push(p);
        rec_cat.push(c);
    }
    (vocab, rec_user, rec_poi, rec_cat)
}

/// Split each user's chronologically sorted check-ins into trajectories: a
/// new trajectory starts when a check-in falls more than `window_hours`
/// after the current trajectory's first check-in. Trajectories shorter than
/// two check-ins are discarded.
pub fn split_trajectories(checkins: &[CheckIn], window_hours: f64) -> Vec<Trajectory> {
    let window_secs = (window_hours * 3600.0).round() as i64;
    let mut per_user: HashMap<usize, Vec<CheckIn>> = HashMap::new();
    let mut user_order = Vec::new();
    for c in checkins {
        let entry = per_user.entry(c.user).or_default();
        if entry.is_empty() {
            user_order.push(c.user);
        }
        entry.push(*c);
    }

    let mut out = Vec::new();
    for user in user_order {
        let mut events = per_user.remove(&user).expect("user recorded");
        events.sort_by_key(|c| c.ts);
        let mut current: Vec<CheckIn> = Vec::new();
        for c in events {
            if let Some(first) = current.first() {
                if c.ts - first.ts > window_secs {
                    if current.len() >= 2 {
                        out.push(Trajectory { user, checkins: std::mem::take(&mut current), label: None });
                    } else {
                        current.clear();
                    }
                }
            }
            current.push(c);
        }
        if current.len() >= 2 {
            out.push(Trajectory { user, checkins: current, label: None });
        }
    }
    out
}

/// Sort by trajectory end time (stable for ties) and cut at
/// floor(cumulative fraction x count).
pub fn chronological_split(
    mut trajectories: Vec<Trajectory>,
    fractions: [f64; 3],
) -> Result<DatasetSplit, IngestError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadFractions(fractions));
    }
    let n = trajectories.len();
    if n < 3 {
        return Err(IngestError::TooFewTrajectories(n));
    }
    trajectories.sort_by_key(|t| t.end_ts());
    let b1 = (fractions[0] * n as f64).floor() as usize;
    let b2 = ((fractions[0] + fractions[1]) * n as f64).floor() as usize;
    let test = trajectories.split_off(b2);
    let valid = trajectories.split_off(b1);
    Ok(DatasetSplit { train: trajectories, valid, test })
}

/// Expand trajectories into supervised samples: every prefix paired with
/// its next check-in, or only the final pair when `last_step_only`.
pub fn make_supervised_samples(trajectories: &[Trajectory], last_step_only: bool) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for t in trajectories {
        if t.checkins.len() < 2 {
            continue;
        }
        let range = if last_step_only { t.checkins.len() - 1..t.checkins.len() } else { 1..t.checkins.len() };
        for j in range {
            out.push(Trajectory {
                user: t.user,
                checkins: t.checkins[..j].to_vec(),
                label: Some(t.checkins[j]),
            });
        }
    }
    out
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct PrepStats {
    pub raw_rows: usize,
    pub skipped_rows: usize,
    pub filtered_records: usize,
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub geo_clusters: usize,
    /// Check-ins contained in kept trajectories.
    pub checkins: usize,
    pub trajectories: usize,
    pub kmeans_iterations: usize,
}

pub struct PreprocessOutput {
    pub vocab: Vocab,
    pub splits: DatasetSplit,
    pub stats: PrepStats,
    pub max_leaves_per_period: usize,
}

/// Full preprocessing pipeline: filter, vocabularies, geo clustering,
/// trajectory split, chronological partition.
pub fn preprocess(
    records: Vec<RawRecord>,
    parse_stats: ParseStats,
    cfg: &DatasetConfig,
    slots_hint: usize,
    seed: u64,
) -> Result<PreprocessOutput, IngestError> {
    let records = filter_records(records, cfg.min_user_checkins, cfg.min_poi_visits);
    let (mut vocab, rec_user, rec_poi, rec_cat) = build_vocab(&records);

    let points: Vec<(f64, f64)> = vocab.poi_attrs.iter().map(|a| (a.lat, a.lon)).collect();
    let km = kmeans_geo(&points, cfg.geo_clusters, cfg.kmeans_max_iters, seed)?;
    for (attr, &cluster) in vocab.poi_attrs.iter_mut().zip(&km.assignment) {
        attr.geo_cluster = cluster;
    }
    vocab.geo_centroids = km.centroids.clone();

    let checkins: Vec<CheckIn> = records
        .iter()
        .enumerate()
        .map(|(i, r)| CheckIn {
            user: rec_user[i],
            poi: rec_poi[i],
            category: rec_cat[i],
            geo_cluster: vocab.poi_attrs[rec_poi[i]].geo_cluster,
            lat: r.lat,
            lon: r.lon,
            ts: r.ts,
        })
        .collect();

    let trajectories = split_trajectories(&checkins, cfg.window_hours);
    let ctx = TimeContext::new(slots_hint, cfg.tz_offset_secs)
        .map_err(|e| IngestError::BadBundle(e.to_string()))?;
    let max_leaves = crate::tree::max_leaves_per_period(&trajectories, &ctx);

    let stats = PrepStats {
        raw_rows: parse_stats.rows,
        skipped_rows: parse_stats.skipped,
        filtered_records: records.len(),
        users: vocab.n_users(),
        pois: vocab.n_pois(),
        categories: vocab.n_categories(),
        geo_clusters: vocab.n_geo_clusters(),
        checkins: trajectories.iter().map(|t| t.checkins.len()).sum(),
        trajectories: trajectories.len(),
        kmeans_iterations: km.iterations,
    };

    let splits = chronological_split(trajectories, cfg.fractions)?;
    Ok(PreprocessOutput { vocab, splits, stats, max_leaves_per_period: max_leaves })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DatasetConfig {
        DatasetConfig {
            col_user: ColumnRef::Index(0),
            col_poi: ColumnRef::Index(1),
            col_category: ColumnRef::Index(2),
            col_time: ColumnRef::Index(3),
            col_lat: ColumnRef::Index(4),
            col_lon: ColumnRef::Index(5),
            has_header: false,
            ..Default::default()
        }
    }

    fn check(user: usize, ts: i64) -> CheckIn {
        CheckIn { user, poi: 0, category: 0, geo_cluster: 0, lat: 0.0, lon: 0.0, ts }
    }

    #[test]
    fn parses_a_plain_row() {
        let data = "u12, p7, Cafe, 2012-04-12T10:05:00Z, 35.68, 139.77\n";
        let (records, stats) = parse_checkins(data.as_bytes(), &cfg()).unwrap();
        assert_eq!(stats, ParseStats { rows: 1, skipped: 0 });
        assert_eq!(
            records,
            vec![RawRecord {
                user: "u12".into(),
                poi: "p7".into(),
                category: "Cafe".into(),
                lat: 35.68,
                lon: 139.77,
                ts: chrono::DateTime::parse_from_rfc3339("2012-04-12T10:05:00Z")
                    .unwrap()
                    .timestamp(),
            }]
        );
    }

    #[test]
    fn empty_stream_is_empty_and_warning_free() {
        let (records, stats) = parse_checkins("".as_bytes(), &cfg()).unwrap();
        assert!(records.is_empty());
        assert_eq!(stats, ParseStats { rows: 0, skipped: 0 });
    }

    #[test]
    fn malformed_rows_are_counted_and_skipped() {
        let data = "\
u1, p1, Cafe, 2012-04-12T10:05:00Z, 35.0, 139.0
u2, p2, Bar, 2012-04-12T11:05:00Z, 35.1, 139.1
u3, p3, Park, not-a-time, 35.2, 139.2
u4, p4, Gym, 2012-04-12T12:05:00Z, 35.3, 139.3
";
        let (records, stats) = parse_checkins(data.as_bytes(), &cfg()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(stats, ParseStats { rows: 4, skipped: 1 });
    }

    #[test]
    fn coordinates_out_of_range_are_skipped() {
        let data = "u1, p1, Cafe, 2012-04-12T10:05:00Z, 95.0, 139.0\n";
        let (records, stats) = parse_checkins(data.as_bytes(), &cfg()).unwrap();
        assert!(records.is_empty());
        assert_eq!(stats.skipped, 1);
    }

    #[test]
    fn named_columns_resolve_through_header() {
        let data = "poi_id,user_id,lat,lon,category,time\np9,u3,1.0,2.0,Cafe,2012-04-12T10:05:00Z\n";
        let c = DatasetConfig::default();
        let (records, _) = parse_checkins(data.as_bytes(), &c).unwrap();
        assert_eq!(records[0].user, "u3");
        assert_eq!(records[0].poi, "p9");
    }

    #[test]
    fn epoch_and_custom_time_formats() {
        let mut c = cfg();
        c.time_format = "epoch_seconds".into();
        let (records, _) = parse_checkins("u1, p1, Cafe, 1334225100, 1.0, 2.0\n".as_bytes(), &c).unwrap();
        assert_eq!(records[0].ts, 1334225100);

        c.time_format = "custom".into();
        c.time_custom_format = Some("%a %b %d %H:%M:%S %z %Y".into());
        let (records, _) =
            parse_checkins("u1, p1, Cafe, Tue Apr 03 18:00:06 +0000 2012, 1.0, 2.0\n".as_bytes(), &c)
                .unwrap();
        assert_eq!(records[0].ts, 1333476006);
    }

    fn rec(user: &str, poi: &str, ts: i64) -> RawRecord {
        RawRecord { user: user.into(), poi: poi.into(), category: "c".into(), lat: 0.0, lon: 0.0, ts }
    }

    #[test]
    fn user_below_threshold_loses_all_records() {
        let records: Vec<RawRecord> = (0..9).map(|i| rec("u1", "p1", i)).collect();
        assert!(filter_records(records, 10, 0).is_empty());
    }

    #[test]
    fn poi_at_threshold_is_kept() {
        // One user with 20 records; one POI visited exactly 10 times.
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(rec("u1", "p1", i));
            records.push(rec("u1", "p2", 100 + i));
        }
        let kept = filter_records(records, 10, 10);
        assert_eq!(kept.len(), 20);
    }

    #[test]
    fn poi_pass_does_not_trigger_a_second_user_pass() {
        // u1 has 10 records: 8 on the popular POI, 2 on a rare POI. The POI
        // pass drops the rare records, leaving u1 with 8 — still kept.
        let mut records = Vec::new();
        for i in 0..8 {
            records.push(rec("u1", "popular", i));
        }
        records.push(rec("u1", "rare", 50));
        records.push(rec("u1", "rare2", 51));
        // Ten more users make "popular" clear the POI threshold.
        for u in 0..10 {
            for i in 0..10 {
                records.push(rec(&format!("v{u}"), "popular", 1000 + (u * 10 + i) as i64));
            }
        }
        let kept = filter_records(records, 10, 10);
        let u1_count = kept.iter().filter(|r| r.user == "u1").count();
        assert_eq!(u1_count, 8, "u1 keeps its popular-POI records after the POI pass");
    }

    #[test]
    fn window_splits_on_the_first_checkin_anchor() {
        let h = 3600;
        // 0h, 1h, 2h: one trajectory of length 3.
        let t = split_trajectories(&[check(1, 0), check(1, h), check(1, 2 * h)], 24.0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].checkins.len(), 3);

        // 0h, 25h, 26h: the singleton {0h} is discarded, {25h, 26h} kept.
        let t = split_trajectories(&[check(1, 0), check(1, 25 * h), check(1, 26 * h)], 24.0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].checkins[0].ts, 25 * h);
        assert_eq!(t[0].checkins.len(), 2);

        // Exactly 24h after the first check-in stays in the same trajectory.
        let t = split_trajectories(&[check(1, 0), check(1, 24 * h)], 24.0);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn chronological_split_uses_floor_boundaries() {
        let make = |n: usize| -> Vec<Trajectory> {
            (0..n)
                .map(|i| Trajectory {
                    user: 0,
                    checkins: vec![check(0, i as i64), check(0, i as i64 + 1)],
                    label: None,
                })
                .collect()
        };
        let split = chronological_split(make(10), [0.8, 0.1, 0.1]).unwrap();
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (8, 1, 1));

        let split = chronological_split(make(14_160), [0.8, 0.1, 0.1]).unwrap();
        assert_eq!(
            (split.train.len(), split.valid.len(), split.test.len()),
            (11_328, 1_416, 1_416)
        );

        assert!(matches!(
            chronological_split(make(2), [0.8, 0.1, 0.1]),
            Err(IngestError::TooFewTrajectories(2))
        ));
    }

    #[test]
    fn chronological_split_is_stable_on_ties() {
        let trajs: Vec<Trajectory> = (0..5)
            .map(|u| Trajectory {
                user: u,
                checkins: vec![check(u, 0), check(u, 10)],
                label: None,
            })
            .collect();
        let split = chronological_split(trajs, [0.8, 0.1, 0.1]).unwrap();
        let users: Vec<usize> = split
            .train
            .iter()
            .chain(&split.valid)
            .chain(&split.test)
            .map(|t| t.user)
            .collect();
        assert_eq!(users, vec![0, 1, 2, 3, 4], "same-end-time input keeps input order");
    }

    #[test]
    fn sample_counts_follow_prefix_expansion() {
        let traj = |len: usize| Trajectory {
            user: 0,
            checkins: (0..len as i64).map(|i| check(0, i * 60)).collect(),
            label: None,
        };
        assert_eq!(make_supervised_samples(&[traj(2)], false).len(), 1);
        assert_eq!(make_supervised_samples(&[traj(5)], false).len(), 4);
        let samples = make_supervised_samples(&[traj(2), traj(3), traj(4)], false);
        assert_eq!(samples.len(), 1 + 2 + 3);
        for s in &samples {
            let label = s.label.expect("labelled");
            assert!(label.ts > s.checkins.last().unwrap().ts - 1);
        }
        // Last-step-only restriction keeps one sample per trajectory.
        assert_eq!(make_supervised_samples(&[traj(2), traj(3), traj(4)], true).len(), 3);
    }
}
