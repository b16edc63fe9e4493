//! Interaction-log ingestion, sample construction, splits, and the
//! planted-signal synthetic generator used by the acceptance harness.

pub mod schema;
pub mod synth;

pub use schema::{load_dataset, DatasetSchema, LoadedDataset};
pub use synth::{synth_generate, SynthConfig, SynthDataset, SynthLatents};

use crate::hashing::fnv1a64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unresolvable ids in {count} interaction rows, e.g.: {examples:?}")]
    Unresolved { count: usize, examples: Vec<String> },
    #[error("rating {0} outside 1..=5")]
    RatingOutOfRange(u8),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
}

/// One (user, item, rating, timestamp) event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemProfile {
    pub item_id: String,
    pub title: String,
    /// Field name -> categorical value, in declared schema order.
    pub features: Vec<(String, String)>,
}

impl ItemProfile {
    pub fn feature(&self, field: &str) -> Option<&str> {
        self.features
            .iter()
            .find(|(f, _)| f == field)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub features: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub item: ItemProfile,
    pub rating: u8,
    pub ts: i64,
}

/// One labeled CTR instance. History is strictly chronological and strictly
/// precedes the target timestamp; full histories are stored and truncated at
/// prompt/graph construction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub user: UserProfile,
    pub target: ItemProfile,
    pub target_ts: i64,
    pub history: Vec<HistoryEvent>,
    pub label: u8,
}

impl Sample {
    /// The chronologically last `k` history events, oldest first.
    pub fn recent_history(&self, k: usize) -> &[HistoryEvent] {
        let n = self.history.len();
        &self.history[n.saturating_sub(k)..]
    }
}

pub const DEFAULT_BINARIZE_THRESHOLD: u8 = 3;

/// Ratings strictly above the threshold are positive.
pub fn binarize(rating: u8, threshold: u8) -> Result<u8, DatasetError> {
    if !(1..=5).contains(&rating) {
        return Err(DatasetError::RatingOutOfRange(rating));
    }
    Ok(u8::from(rating > threshold))
}

/// One sample per interaction that has at least one prior interaction by the
/// same user. Records are grouped per user and ordered by timestamp, ties
/// broken by input order.
pub fn build_samples(
    records: &[InteractionRecord],
    items: &BTreeMap<String, ItemProfile>,
    users: &BTreeMap<String, UserProfile>,
    binarize_threshold: u8,
) -> Result<Vec<Sample>, DatasetError> {
    let mut per_user: BTreeMap<&str, Vec<(usize, &InteractionRecord)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        per_user.entry(&r.user_id).or_default().push((i, r));
    }
    let mut samples = Vec::new();
    for (user_id, mut events) in per_user {
        events.sort_by_key(|(i, r)| (r.timestamp, *i));
        let user = users
            .get(user_id)
            .cloned()
            .unwrap_or_else(|| UserProfile {
                user_id: user_id.to_string(),
                features: Vec::new(),
            });
        let mut history: Vec<HistoryEvent> = Vec::new();
        for (_, r) in events {
            let item = items.get(&r.item_id).cloned().ok_or_else(|| {
                DatasetError::Unresolved {
                    count: 1,
                    examples: vec![format!("{user_id} -> {}", r.item_id)],
                }
            })?;
            if !history.is_empty() {
                // samples need strictly earlier history
                let hist: Vec<HistoryEvent> = history
                    .iter()
                    .filter(|h| h.ts < r.timestamp)
                    .cloned()
                    .collect();
                if !hist.is_empty() {
                    samples.push(Sample {
                        user: user.clone(),
                        target: item.clone(),
                        target_ts: r.timestamp,
                        history: hist,
                        label: binarize(r.rating, binarize_threshold)?,
                    });
                }
            }
            history.push(HistoryEvent {
                item,
                rating: r.rating,
                ts: r.timestamp,
            });
        }
    }
    // keep global deterministic order: by (target_ts, user, item)
    samples.sort_by(|a, b| {
        (a.target_ts, &a.user.user_id, &a.target.item_id).cmp(&(
            b.target_ts,
            &b.user.user_id,
            &b.target.item_id,
        ))
    });
    Ok(samples)
}

pub struct TemporalSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub warning: Option<String>,
}

/// Split at global target-timestamp quantiles. Ratios must sum to 1.
pub fn split_temporal(
    mut samples: Vec<Sample>,
    ratios: (f64, f64, f64),
) -> Result<TemporalSplit, DatasetError> {
    let (r1, r2, r3) = ratios;
    if (r1 + r2 + r3 - 1.0).abs() > 1e-9 || r1 <= 0.0 || r2 <= 0.0 || r3 <= 0.0 {
        return Err(DatasetError::DegenerateSplit(format!(
            "ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    let n = samples.len();
    if n < 3 {
        return Err(DatasetError::DegenerateSplit(format!(
            "{n} samples cannot fill 3 splits"
        )));
    }
    // stable on target_ts: ties keep prior order
    samples.sort_by_key(|s| s.target_ts);
    let warning = if samples.first().map(|s| s.target_ts) == samples.last().map(|s| s.target_ts)
    {
        Some("all target timestamps identical; falling back to stable input-order split".into())
    } else {
        None
    };
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let c1 = ((n as f64) * r1).round() as usize;
    let c2 = ((n as f64) * (r1 + r2)).round() as usize;
    let c1 = c1.clamp(1, n - 2);
    let c2 = c2.clamp(c1 + 1, n - 1);
    let test = samples.split_off(c2);
    let valid = samples.split_off(c1);
    Ok(TemporalSplit {
        train: samples,
        valid,
        test,
        warning,
    })
}

/// User-disjoint split; assignment by seeded hash of user id.
pub fn split_by_user(
    samples: Vec<Sample>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>), DatasetError> {
    let mut users: Vec<&str> = samples.iter().map(|s| s.user.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    if users.len() < 2 {
        return Err(DatasetError::DegenerateSplit(
            "need at least 2 distinct users".into(),
        ));
    }
    let n_test = (((users.len() as f64) * test_fraction).round() as usize)
        .clamp(1, users.len() - 1);
    let mut hashed: Vec<(u64, &str)> = users
        .iter()
        .map(|u| (fnv1a64(seed, u.as_bytes()), *u))
        .collect();
    hashed.sort_unstable();
    let test_users: std::collections::BTreeSet<String> =
        hashed.iter().take(n_test).map(|(_, u)| u.to_string()).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in samples {
        if test_users.contains(s.user.user_id.as_str()) {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, test))
}

pub fn write_samples_jsonl<P: AsRef<Path>>(path: P, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_samples_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<Sample>, DatasetError> {
    let path = path.as_ref();
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str) -> ItemProfile {
        ItemProfile {
            item_id: id.to_string(),
            title: format!("Title {id}"),
            features: vec![("genre".into(), "action".into())],
        }
    }

    fn rec(u: &str, i: &str, rating: u8, ts: i64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating,
            timestamp: ts,
        }
    }

    fn maps(
        ids: &[&str],
    ) -> (
        BTreeMap<String, ItemProfile>,
        BTreeMap<String, UserProfile>,
    ) {
        let items = ids.iter().map(|i| (i.to_string(), item(i))).collect();
        (items, BTreeMap::new())
    }

    #[test]
    fn binarize_threshold_rules() {
        assert_eq!(binarize(5, 3).unwrap(), 1);
        assert_eq!(binarize(4, 3).unwrap(), 1);
        assert_eq!(binarize(3, 3).unwrap(), 0);
        assert_eq!(binarize(1, 3).unwrap(), 0);
        assert!(binarize(0, 3).is_err());
        assert!(binarize(6, 3).is_err());
    }

    #[test]
    fn binarize_monotone() {
        let labels: Vec<u8> = (1..=5).map(|r| binarize(r, 3).unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn samples_need_prior_history() {
        let (items, users) = maps(&["a", "b", "c"]);
        let records = vec![rec("u1", "a", 5, 1), rec("u1", "b", 2, 2), rec("u1", "c", 4, 3)];
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].history.len(), 1);
        assert_eq!(samples[1].history.len(), 2);
        assert_eq!(samples[0].label, 0); // rating 2
        assert_eq!(samples[1].label, 1); // rating 4

        let one = build_samples(&[rec("u2", "a", 5, 1)], &items, &users, 3).unwrap();
        assert!(one.is_empty());
    }

    #[test]
    fn history_strictly_precedes_target() {
        let (items, users) = maps(&["a", "b", "c"]);
        // b shares a timestamp with a: the sample at b must not see a's event
        let records = vec![rec("u1", "a", 5, 7), rec("u1", "b", 2, 7), rec("u1", "c", 4, 9)];
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        for s in &samples {
            assert!(s.history.iter().all(|h| h.ts < s.target_ts));
            assert!(s.history.windows(2).all(|w| w[0].ts <= w[1].ts));
        }
    }

    #[test]
    fn temporal_split_exact_quantiles() {
        let (items, users) = maps(&["a"]);
        let mut records = Vec::new();
        for u in 0..10 {
            // each user contributes one sample at ts = u+1 (plus a warmup event)
            records.push(rec(&format!("u{u}"), "a", 5, 0));
            records.push(rec(&format!("u{u}"), "a", 5, u + 1));
        }
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        assert_eq!(samples.len(), 10);
        let split = split_temporal(samples, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.valid.len(), 1);
        assert_eq!(split.test.len(), 1);
        let max_train = split.train.iter().map(|s| s.target_ts).max().unwrap();
        assert!(max_train <= split.valid[0].target_ts);
        assert!(split.valid[0].target_ts <= split.test[0].target_ts);
    }

    #[test]
    fn temporal_split_identical_timestamps_warns() {
        let (items, users) = maps(&["a"]);
        let mut records = Vec::new();
        for u in 0..10 {
            records.push(rec(&format!("u{u}"), "a", 5, 0));
            records.push(rec(&format!("u{u}"), "a", 5, 5));
        }
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        let split = split_temporal(samples, (0.8, 0.1, 0.1)).unwrap();
        assert!(split.warning.is_some());
        assert_eq!(split.train.len() + split.valid.len() + split.test.len(), 10);
    }

    #[test]
    fn temporal_split_too_small_errors() {
        let (items, users) = maps(&["a"]);
        let records = vec![rec("u1", "a", 5, 0), rec("u1", "a", 5, 1)];
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        assert!(split_temporal(samples, (0.8, 0.1, 0.1)).is_err());
    }

    #[test]
    fn user_split_is_disjoint_and_deterministic() {
        let (items, users) = maps(&["a"]);
        let mut records = Vec::new();
        for u in 0..10 {
            records.push(rec(&format!("u{u}"), "a", 5, 0));
            records.push(rec(&format!("u{u}"), "a", 5, 1));
        }
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        let (train1, test1) = split_by_user(samples.clone(), 0.1, 42).unwrap();
        let (train2, test2) = split_by_user(samples, 0.1, 42).unwrap();
        assert_eq!(train1, train2);
        assert_eq!(test1, test2);
        let train_users: std::collections::BTreeSet<_> =
            train1.iter().map(|s| s.user.user_id.clone()).collect();
        let test_users: std::collections::BTreeSet<_> =
            test1.iter().map(|s| s.user.user_id.clone()).collect();
        assert_eq!(train_users.len(), 9);
        assert_eq!(test_users.len(), 1);
        assert!(train_users.is_disjoint(&test_users));
    }

    #[test]
    fn single_user_split_errors() {
        let (items, users) = maps(&["a"]);
        let records = vec![rec("u1", "a", 5, 0), rec("u1", "a", 5, 1)];
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        assert!(split_by_user(samples, 0.1, 1).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let (items, users) = maps(&["a", "b"]);
        let records = vec![rec("u1", "a", 5, 1), rec("u1", "b", 2, 2)];
        let samples = build_samples(&records, &items, &users, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.jsonl");
        write_samples_jsonl(&path, &samples).unwrap();
        let back = read_samples_jsonl(&path).unwrap();
        assert_eq!(samples, back);
    }
}
