//! Rating-file ingestion, canonicalization, leave-one-out splitting, and
//! deterministic sampling of training negatives and evaluation candidates.
//!
//! The canonical on-disk form is a single CSV (`user,item,rating,timestamp`)
//! with dense 0-based ids; raw formats are only read at ingestion. Datasets
//! are immutable after splitting and safe to share across worker threads;
//! all sampling takes an explicit seeded stream.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw interaction record. Ids are raw file ids until [`canonicalize`]
/// re-indexes them densely from 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
    pub timestamp: i64,
}

/// Supported raw rating-file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawFormat {
    /// `user \t item \t rating \t timestamp`
    TabSeparated,
    /// `user::item::rating::timestamp`
    DoubleColon,
    /// `user,item,rating,timestamp` with a header row.
    Csv,
}

impl std::str::FromStr for RawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab_separated" => Ok(RawFormat::TabSeparated),
            "double_colon" => Ok(RawFormat::DoubleColon),
            "csv" => Ok(RawFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown format '{other}' (expected tab_separated, double_colon or csv)"
            ))),
        }
    }
}

/// A deduplicated interaction kept per user after canonicalization.
/// `order` is the index of the raw record that supplied the timestamp; it
/// breaks timestamp ties deterministically (later record = later).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserInteraction {
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
    pub order: usize,
}

/// Canonical dataset: densely re-indexed users and items, duplicates
/// collapsed, per-user record order preserved.
#[derive(Debug, Clone)]
pub struct CanonicalDataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Per dense user id, interactions in first-occurrence order.
    pub interactions: Vec<Vec<UserInteraction>>,
    /// Dense id -> raw id.
    pub raw_user_ids: Vec<u64>,
    pub raw_item_ids: Vec<u64>,
    /// Raw id -> dense id.
    pub user_index: HashMap<u64, u32>,
    pub item_index: HashMap<u64, u32>,
}

/// Dataset with the leave-one-out split applied.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub n_users: usize,
    pub n_items: usize,
    /// Per-user train item ids, in per-user record order.
    pub train: Vec<Vec<u32>>,
    /// Per-user held-out validation item (second-latest interaction).
    pub validation: Vec<u32>,
    /// Per-user held-out test item (latest interaction).
    pub test: Vec<u32>,
    interacted: Vec<Vec<bool>>,
    pub raw_user_ids: Vec<u64>,
    pub raw_item_ids: Vec<u64>,
}

/// Training samples for one user: each train positive followed by its
/// sampled negatives, labels 1 for positives and 0 for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub items: Vec<u32>,
    pub labels: Vec<f64>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn parse_fields(line: &str, format: RawFormat) -> Option<[&str; 4]> {
    let mut it = match format {
        RawFormat::TabSeparated => line.split('\t'),
        RawFormat::Csv => line.split(','),
        RawFormat::DoubleColon => return split_double_colon(line),
    };
    let fields = [it.next()?, it.next()?, it.next()?, it.next()?];
    if it.next().is_some() {
        return None;
    }
    Some(fields)
}

fn split_double_colon(line: &str) -> Option<[&str; 4]> {
    let mut it = line.split("::");
    let fields = [it.next()?, it.next()?, it.next()?, it.next()?];
    if it.next().is_some() {
        return None;
    }
    Some(fields)
}

fn parse_record(line: &str, format: RawFormat) -> std::result::Result<Interaction, String> {
    let fields =
        parse_fields(line, format).ok_or_else(|| "expected 4 fields".to_string())?;
    let user: u64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| format!("bad user id '{}'", fields[0]))?;
    let item: u64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| format!("bad item id '{}'", fields[1]))?;
    let rating: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad rating '{}'", fields[2]))?;
    let timestamp: i64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad timestamp '{}'", fields[3]))?;
    Ok(Interaction {
        user,
        item,
        rating,
        timestamp,
    })
}

/// Load raw interaction records, preserving file order and raw ids.
///
/// For [`RawFormat::Csv`] the first line is treated as a header when it does
/// not parse as a record. Malformed lines report their 1-based line number.
pub fn load_raw(path: impl AsRef<Path>, format: RawFormat) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_raw(&text, format, &path.display().to_string())
}

/// Parse raw record text; `source` only labels error messages.
pub fn parse_raw(text: &str, format: RawFormat, source: &str) -> Result<Vec<Interaction>> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, format) {
            Ok(rec) => records.push(rec),
            Err(message) => {
                if format == RawFormat::Csv && idx == 0 && records.is_empty() {
                    continue; // header row
                }
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: idx + 1,
                    message,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NoRecords {
            path: source.to_string(),
        });
    }
    Ok(records)
}

/// Canonicalize raw records: collapse duplicate (user, item) pairs onto the
/// latest timestamp, drop users with fewer than `min_interactions` remaining
/// interactions, and re-index surviving raw ids densely from 0 (ascending
/// raw id order, which makes the operation idempotent).
pub fn canonicalize(records: &[Interaction], min_interactions: usize) -> Result<CanonicalDataset> {
    // Deduplicate per user, keeping the latest timestamp (ties: later record).
    let mut per_user: HashMap<u64, Vec<(u64, f64, i64, usize)>> = HashMap::new();
    let mut slot: HashMap<(u64, u64), usize> = HashMap::new();
    for (order, rec) in records.iter().enumerate() {
        let list = per_user.entry(rec.user).or_default();
        match slot.get(&(rec.user, rec.item)) {
            Some(&i) => {
                if rec.timestamp >= list[i].2 {
                    list[i] = (rec.item, rec.rating, rec.timestamp, order);
                }
            }
            None => {
                slot.insert((rec.user, rec.item), list.len());
                list.push((rec.item, rec.rating, rec.timestamp, order));
            }
        }
    }

    let mut raw_user_ids: Vec<u64> = per_user
        .iter()
        .filter(|(_, v)| v.len() >= min_interactions)
        .map(|(&u, _)| u)
        .collect();
    raw_user_ids.sort_unstable();
    if raw_user_ids.is_empty() {
        return Err(Error::AllUsersFiltered { min_interactions });
    }

    let mut raw_item_ids: Vec<u64> = raw_user_ids
        .iter()
        .flat_map(|u| per_user[u].iter().map(|&(item, ..)| item))
        .collect();
    raw_item_ids.sort_unstable();
    raw_item_ids.dedup();

    let user_index: HashMap<u64, u32> = raw_user_ids
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i as u32))
        .collect();
    let item_index: HashMap<u64, u32> = raw_item_ids
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i as u32))
        .collect();

    let interactions: Vec<Vec<UserInteraction>> = raw_user_ids
        .iter()
        .map(|u| {
            per_user[u]
                .iter()
                .map(|&(item, rating, timestamp, order)| UserInteraction {
                    item: item_index[&item],
                    rating,
                    timestamp,
                    order,
                })
                .collect()
        })
        .collect();

    Ok(CanonicalDataset {
        n_users: raw_user_ids.len(),
        n_items: raw_item_ids.len(),
        interactions,
        raw_user_ids,
        raw_item_ids,
        user_index,
        item_index,
    })
}

impl CanonicalDataset {
    pub fn n_interactions(&self) -> usize {
        self.interactions.iter().map(Vec::len).sum()
    }

    /// Fraction of the user-item matrix that carries no interaction.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.n_interactions() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    /// Flatten back into records with dense ids, per-user order preserved.
    pub fn to_records(&self) -> Vec<Interaction> {
        let mut out = Vec::with_capacity(self.n_interactions());
        for (user, list) in self.interactions.iter().enumerate() {
            for it in list {
                out.push(Interaction {
                    user: user as u64,
                    item: it.item as u64,
                    rating: it.rating,
                    timestamp: it.timestamp,
                });
            }
        }
        out
    }

    /// Serialize as the canonical `dataset.csv` (dense ids, LF endings).
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.n_interactions());
        out.push_str("user,item,rating,timestamp\n");
        for rec in self.to_records() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                rec.user, rec.item, rec.rating, rec.timestamp
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Split each user's interactions leave-one-out: latest timestamp to test,
/// second-latest to validation, the rest to train. Timestamp ties are broken
/// by record order (the later record counts as later).
pub fn split_leave_one_out(canon: CanonicalDataset) -> Result<SplitDataset> {
    let mut train = Vec::with_capacity(canon.n_users);
    let mut validation = Vec::with_capacity(canon.n_users);
    let mut test = Vec::with_capacity(canon.n_users);
    let mut interacted = vec![vec![false; canon.n_items]; canon.n_users];

    for (user, list) in canon.interactions.iter().enumerate() {
        if list.len() < 3 {
            return Err(Error::TooFewInteractions {
                user: user as u32,
                have: list.len(),
                need: 3,
            });
        }
        let mut idx: Vec<usize> = (0..list.len()).collect();
        idx.sort_by_key(|&i| (list[i].timestamp, list[i].order));
        let test_i = idx[idx.len() - 1];
        let val_i = idx[idx.len() - 2];
        test.push(list[test_i].item);
        validation.push(list[val_i].item);

        let mut user_train = Vec::with_capacity(list.len() - 2);
        for (i, it) in list.iter().enumerate() {
            interacted[user][it.item as usize] = true;
            if i != test_i && i != val_i {
                user_train.push(it.item);
            }
        }
        train.push(user_train);
    }

    Ok(SplitDataset {
        n_users: canon.n_users,
        n_items: canon.n_items,
        train,
        validation,
        test,
        interacted,
        raw_user_ids: canon.raw_user_ids,
        raw_item_ids: canon.raw_item_ids,
    })
}

impl SplitDataset {
    /// Whether `item` appears anywhere in the user's history
    /// (train, validation or test).
    pub fn interacted(&self, user: u32, item: u32) -> bool {
        self.interacted[user as usize][item as usize]
    }

    fn candidate_pool(&self, user: u32) -> usize {
        self.n_items - self.interacted[user as usize].iter().filter(|&&b| b).count()
    }

    fn sample_uninteracted(
        &self,
        user: u32,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>> {
        let available = self.candidate_pool(user);
        if available < count {
            return Err(Error::InsufficientCandidates {
                user,
                needed: count,
                available,
            });
        }
        let mut taken = vec![false; self.n_items];
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let item = rng.random_range(0..self.n_items as u32);
            if !self.interacted(user, item) && !taken[item as usize] {
                taken[item as usize] = true;
                out.push(item);
            }
        }
        Ok(out)
    }

    /// For each train positive of `user`, emit the positive plus
    /// `k_per_positive` uniform negatives drawn without replacement per
    /// positive from items the user never interacted with.
    pub fn sample_negatives(
        &self,
        user: u32,
        k_per_positive: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrainingBatch> {
        let available = self.candidate_pool(user);
        if available < k_per_positive {
            return Err(Error::InsufficientCandidates {
                user,
                needed: k_per_positive,
                available,
            });
        }
        let positives = &self.train[user as usize];
        let mut items = Vec::with_capacity(positives.len() * (1 + k_per_positive));
        let mut labels = Vec::with_capacity(items.capacity());
        let mut taken = vec![usize::MAX; self.n_items];
        for (pos_idx, &pos) in positives.iter().enumerate() {
            items.push(pos);
            labels.push(1.0);
            let mut drawn = 0;
            while drawn < k_per_positive {
                let item = rng.random_range(0..self.n_items as u32);
                if !self.interacted(user, item) && taken[item as usize] != pos_idx {
                    taken[item as usize] = pos_idx;
                    items.push(item);
                    labels.push(0.0);
                    drawn += 1;
                }
            }
        }
        Ok(TrainingBatch { items, labels })
    }

    /// The user's test item plus `n_negatives` distinct never-interacted
    /// items; the test item comes first. Callers derive `rng` from the
    /// experiment seed and user id so repeated evaluations see identical
    /// candidates.
    pub fn eval_candidates(
        &self,
        user: u32,
        n_negatives: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>> {
        let mut out = vec![self.test[user as usize]];
        out.extend(self.sample_uninteracted(user, n_negatives, rng)?);
        Ok(out)
    }

    /// Same negative-sampling scheme for the validation item.
    pub fn validation_candidates(
        &self,
        user: u32,
        n_negatives: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<u32>> {
        let mut out = vec![self.validation[user as usize]];
        out.extend(self.sample_uninteracted(user, n_negatives, rng)?);
        Ok(out)
    }

    pub fn n_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum::<usize>() + 2 * self.n_users
    }
}

/// Audit manifest written next to the canonical CSV.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub users: Vec<SplitEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitEntry {
    pub user: u32,
    pub validation: u32,
    pub test: u32,
}

impl SplitManifest {
    pub fn new(split: &SplitDataset, seed: u64) -> Self {
        SplitManifest {
            seed,
            n_users: split.n_users,
            n_items: split.n_items,
            users: (0..split.n_users as u32)
                .map(|u| SplitEntry {
                    user: u,
                    validation: split.validation[u as usize],
                    test: split.test[u as usize],
                })
                .collect(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rec(user: u64, item: u64, rating: f64, timestamp: i64) -> Interaction {
        Interaction {
            user,
            item,
            rating,
            timestamp,
        }
    }

    #[test]
    fn parses_movielens_100k_line() {
        let got = parse_record("196\t242\t3\t881250949", RawFormat::TabSeparated).unwrap();
        assert_eq!(got, rec(196, 242, 3.0, 881250949));
    }

    #[test]
    fn parses_double_colon_line() {
        // Independent split oracle for the same line.
        let line = "1::1193::5::978300760";
        let parts: Vec<&str> = line.split("::").collect();
        let expect = rec(
            parts[0].parse().unwrap(),
            parts[1].parse().unwrap(),
            parts[2].parse().unwrap(),
            parts[3].parse().unwrap(),
        );
        assert_eq!(parse_record(line, RawFormat::DoubleColon).unwrap(), expect);
    }

    #[test]
    fn empty_file_is_no_records() {
        let err = parse_raw("", RawFormat::TabSeparated, "empty").unwrap_err();
        assert!(matches!(err, Error::NoRecords { .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_raw(
            "1\t2\t3\t4\n5\t6\tx\t8",
            RawFormat::TabSeparated,
            "bad",
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn csv_header_is_skipped() {
        let recs = parse_raw(
            "user,item,rating,timestamp\n1,2,3,4",
            RawFormat::Csv,
            "hdr",
        )
        .unwrap();
        assert_eq!(recs, vec![rec(1, 2, 3.0, 4)]);
    }

    fn user_block(user: u64, n: usize, base_item: u64) -> Vec<Interaction> {
        (0..n)
            .map(|i| rec(user, base_item + i as u64, 1.0, i as i64))
            .collect()
    }

    #[test]
    fn canonicalize_filters_and_reindexes() {
        let mut records = user_block(10, 6, 100);
        records.extend(user_block(20, 4, 100));
        records.extend(user_block(30, 7, 100));
        let ds = canonicalize(&records, 5).unwrap();
        assert_eq!(ds.n_users, 2);
        assert_eq!(ds.raw_user_ids, vec![10, 30]);
        assert_eq!(ds.interactions[0].len(), 6);
        assert_eq!(ds.interactions[1].len(), 7);
    }

    #[test]
    fn canonicalize_keeps_latest_duplicate() {
        let records = vec![rec(1, 7, 2.0, 10), rec(1, 8, 1.0, 5), rec(1, 7, 4.0, 20)];
        let ds = canonicalize(&records, 0).unwrap();
        assert_eq!(ds.interactions[0].len(), 2);
        let dup = ds.interactions[0][0];
        assert_eq!(ds.raw_item_ids[dup.item as usize], 7);
        assert_eq!(dup.timestamp, 20);
        assert_eq!(dup.rating, 4.0);
    }

    #[test]
    fn canonicalize_min_zero_keeps_everyone() {
        let records = vec![rec(5, 1, 1.0, 1), rec(9, 2, 1.0, 1)];
        let ds = canonicalize(&records, 0).unwrap();
        assert_eq!(ds.n_users, 2);
    }

    #[test]
    fn canonicalize_all_filtered_errors() {
        let records = vec![rec(1, 1, 1.0, 1)];
        assert!(matches!(
            canonicalize(&records, 5).unwrap_err(),
            Error::AllUsersFiltered { .. }
        ));
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let mut records = user_block(3, 5, 40);
        records.extend(user_block(1, 4, 47));
        records.push(rec(3, 41, 5.0, 99)); // duplicate of an earlier item
        let once = canonicalize(&records, 0).unwrap();
        let twice = canonicalize(&once.to_records(), 0).unwrap();
        assert_eq!(once.n_users, twice.n_users);
        assert_eq!(once.n_items, twice.n_items);
        for u in 0..once.n_users {
            let a: Vec<(u32, i64)> = once.interactions[u]
                .iter()
                .map(|i| (i.item, i.timestamp))
                .collect();
            let b: Vec<(u32, i64)> = twice.interactions[u]
                .iter()
                .map(|i| (i.item, i.timestamp))
                .collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn split_takes_latest_and_second_latest() {
        let records = vec![rec(1, 10, 1.0, 1), rec(1, 11, 1.0, 2), rec(1, 12, 1.0, 3)];
        let ds = split_leave_one_out(canonicalize(&records, 0).unwrap()).unwrap();
        assert_eq!(ds.raw_item_ids[ds.test[0] as usize], 12);
        assert_eq!(ds.raw_item_ids[ds.validation[0] as usize], 11);
        assert_eq!(ds.train[0].len(), 1);
        assert_eq!(ds.raw_item_ids[ds.train[0][0] as usize], 10);
    }

    #[test]
    fn split_rejects_users_with_two_interactions() {
        let records = vec![rec(1, 10, 1.0, 1), rec(1, 11, 1.0, 2)];
        let err = split_leave_one_out(canonicalize(&records, 0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::TooFewInteractions { user: 0, .. }));
    }

    #[test]
    fn split_tie_break_matches_stable_sort_oracle() {
        // (a,5), (b,5), (c,9): later record order wins the tie.
        let records = vec![rec(1, 100, 1.0, 5), rec(1, 101, 1.0, 5), rec(1, 102, 1.0, 9)];
        let ds = split_leave_one_out(canonicalize(&records, 0).unwrap()).unwrap();
        assert_eq!(ds.raw_item_ids[ds.test[0] as usize], 102);
        assert_eq!(ds.raw_item_ids[ds.validation[0] as usize], 101);

        // Brute-force oracle: stable sort by timestamp over the record list.
        let mut oracle: Vec<(i64, u64)> = records.iter().map(|r| (r.timestamp, r.item)).collect();
        oracle.sort_by_key(|&(ts, _)| ts);
        assert_eq!(oracle[oracle.len() - 1].1, 102);
        assert_eq!(oracle[oracle.len() - 2].1, 101);
    }

    #[test]
    fn split_ordering_invariant_holds() {
        let records = vec![
            rec(1, 1, 1.0, 7),
            rec(1, 2, 1.0, 7),
            rec(1, 3, 1.0, 3),
            rec(1, 4, 1.0, 7),
            rec(2, 1, 1.0, 2),
            rec(2, 2, 1.0, 2),
            rec(2, 3, 1.0, 2),
        ];
        let canon = canonicalize(&records, 0).unwrap();
        let ds = split_leave_one_out(canon.clone()).unwrap();
        for u in 0..ds.n_users {
            let ts_of = |item: u32| {
                canon.interactions[u]
                    .iter()
                    .find(|i| i.item == item)
                    .unwrap()
                    .timestamp
            };
            let max_train = ds.train[u].iter().map(|&i| ts_of(i)).max().unwrap();
            assert!(ts_of(ds.test[u]) >= ts_of(ds.validation[u]));
            assert!(ts_of(ds.validation[u]) >= max_train);
        }
    }

    fn toy_split() -> SplitDataset {
        // 2 users, 8 items; user 0 interacted with items 0..5.
        let mut records: Vec<Interaction> =
            (0..5).map(|i| rec(1, i, 1.0, i as i64)).collect();
        records.extend((3..8).map(|i| rec(2, i, 1.0, i as i64)));
        split_leave_one_out(canonicalize(&records, 0).unwrap()).unwrap()
    }

    #[test]
    fn sample_negatives_counts_and_labels() {
        let ds = toy_split();
        let mut rng = rng::stream(1, &[0]);
        let batch = ds.sample_negatives(0, 1, &mut rng).unwrap();
        // 3 positives, 1 negative each.
        assert_eq!(batch.len(), 6);
        assert_eq!(batch.labels.iter().filter(|&&l| l == 1.0).count(), 3);
        for (item, label) in batch.items.iter().zip(&batch.labels) {
            if *label == 0.0 {
                assert!(!ds.interacted(0, *item));
            }
        }
    }

    #[test]
    fn sample_negatives_k_zero_is_positives_only() {
        let ds = toy_split();
        let mut rng = rng::stream(1, &[0]);
        let batch = ds.sample_negatives(0, 0, &mut rng).unwrap();
        assert_eq!(batch.items, ds.train[0]);
        assert!(batch.labels.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn sample_negatives_is_deterministic() {
        let ds = toy_split();
        let a = ds
            .sample_negatives(0, 2, &mut rng::stream(9, &[4]))
            .unwrap();
        let b = ds
            .sample_negatives(0, 2, &mut rng::stream(9, &[4]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_negatives_insufficient_pool_errors() {
        let ds = toy_split();
        // user 0 has 3 never-interacted items (5, 6, 7).
        let err = ds
            .sample_negatives(0, 4, &mut rng::stream(1, &[0]))
            .unwrap_err();
        assert!(matches!(err, Error::InsufficientCandidates { .. }));
    }

    #[test]
    fn eval_candidates_contains_test_once() {
        let ds = toy_split();
        let mut rng = rng::stream(7, &[rng::tag::EVAL_TEST, 0]);
        let cands = ds.eval_candidates(0, 3, &mut rng).unwrap();
        assert_eq!(cands.len(), 4);
        assert_eq!(
            cands.iter().filter(|&&c| c == ds.test[0]).count(),
            1
        );
        // Membership oracle: negatives never touch the user's history.
        for &c in &cands[1..] {
            assert!(!ds.interacted(0, c));
        }
    }

    #[test]
    fn eval_candidates_zero_negatives_is_test_item() {
        let ds = toy_split();
        let cands = ds
            .eval_candidates(1, 0, &mut rng::stream(7, &[0]))
            .unwrap();
        assert_eq!(cands, vec![ds.test[1]]);
    }

    #[test]
    fn eval_candidates_deterministic_per_seed() {
        let ds = toy_split();
        let a = ds
            .eval_candidates(0, 3, &mut rng::stream(3, &[rng::tag::EVAL_TEST, 0]))
            .unwrap();
        let b = ds
            .eval_candidates(0, 3, &mut rng::stream(3, &[rng::tag::EVAL_TEST, 0]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_preserves_split() {
        let mut records = user_block(1, 5, 10);
        records.extend(user_block(2, 6, 12));
        let canon = canonicalize(&records, 0).unwrap();
        let csv = canon.to_csv();
        let reloaded = canonicalize(
            &parse_raw(&csv, RawFormat::Csv, "mem").unwrap(),
            0,
        )
        .unwrap();
        let a = split_leave_one_out(canon).unwrap();
        let b = split_leave_one_out(reloaded).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.train, b.train);
    }
}
