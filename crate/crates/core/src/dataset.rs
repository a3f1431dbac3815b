//! Rating file ingestion and the indexed, immutable rating tables every model
//! trains on.
//!
//! External user and item identifiers are opaque strings. They are remapped to
//! dense indices in order of first appearance in the training stream, so two
//! runs over identical files always produce identical indices.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rating bounds of the MovieTweetings scale.
pub const RATING_MIN: f64 = 0.0;
pub const RATING_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// `user::item::rating::timestamp`, no header.
    MovieTweetings,
    /// `user,item,rating[,timestamp]` with an optional header line.
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movietweetings" => Ok(Format::MovieTweetings),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Usage(format!("unknown rating format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
}

impl RawRating {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, rating: f64, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
            timestamp,
        }
    }
}

pub fn parse_ratings_file(path: impl AsRef<Path>, format: Format) -> Result<Vec<RawRating>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings_str(&text, format)
}

/// Parses rating records from an in-memory buffer. Line numbers in errors are
/// 1-based. Blank lines are skipped.
pub fn parse_ratings_str(text: &str, format: Format) -> Result<Vec<RawRating>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        match format {
            Format::MovieTweetings => out.push(parse_movietweetings_line(line, line_no)?),
            Format::Csv => {
                if idx == 0 && is_csv_header(line) {
                    continue;
                }
                out.push(parse_csv_line(line, line_no)?);
            }
        }
    }
    Ok(out)
}

fn parse_movietweetings_line(line: &str, line_no: usize) -> Result<RawRating> {
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 `::`-separated fields, found {}", fields.len()),
        });
    }
    let rating = parse_rating(fields[2], line_no)?;
    if !(RATING_MIN..=RATING_MAX).contains(&rating) {
        return Err(Error::Range {
            line: line_no,
            rating,
            min: RATING_MIN,
            max: RATING_MAX,
        });
    }
    let timestamp = parse_timestamp(fields[3], line_no)?;
    Ok(RawRating::new(fields[0], fields[1], rating, timestamp))
}

fn parse_csv_line(line: &str, line_no: usize) -> Result<RawRating> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 3 or 4 comma-separated fields, found {}", fields.len()),
        });
    }
    let rating = parse_rating(fields[2], line_no)?;
    let timestamp = match fields.get(3) {
        Some(ts) => parse_timestamp(ts, line_no)?,
        None => 0,
    };
    Ok(RawRating::new(fields[0], fields[1], rating, timestamp))
}

/// A first line is a header when none of its fields is numeric.
fn is_csv_header(line: &str) -> bool {
    line.split(',').all(|f| f.trim().parse::<f64>().is_err())
}

fn parse_rating(field: &str, line_no: usize) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(r) if r.is_finite() => Ok(r),
        _ => Err(Error::Parse {
            line: line_no,
            message: format!("rating `{field}` is not a finite number"),
        }),
    }
}

fn parse_timestamp(field: &str, line_no: usize) -> Result<i64> {
    field.trim().parse::<i64>().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("timestamp `{field}` is not an integer"),
    })
}

/// Writes records in the given format. Ratings use the shortest decimal
/// representation that round-trips.
pub fn format_ratings(records: &[RawRating], format: Format) -> String {
    let mut out = String::new();
    for r in records {
        match format {
            Format::MovieTweetings => {
                let _ = writeln!(out, "{}::{}::{}::{}", r.user_id, r.item_id, r.rating, r.timestamp);
            }
            Format::Csv => {
                let _ = writeln!(out, "{},{},{},{}", r.user_id, r.item_id, r.rating, r.timestamp);
            }
        }
    }
    out
}

/// Bidirectional mapping between external string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    external: Vec<String>,
    internal: HashMap<String, usize>,
}

impl IdMap {
    fn intern(&mut self, id: &str) -> usize {
        match self.internal.entry(id.to_owned()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let idx = self.external.len();
                self.external.push(id.to_owned());
                e.insert(idx);
                idx
            }
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.internal.get(id).copied()
    }

    pub fn external_id(&self, index: usize) -> Option<&str> {
        self.external.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Id map `prefix0, prefix1, ...` of the given size.
    pub fn sequential(prefix: &str, n: usize) -> Self {
        let mut map = IdMap::default();
        for k in 0..n {
            map.intern(&format!("{prefix}{k}"));
        }
        map
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// Sparse rating store with per-user and per-item indexes.
///
/// `by_user[u]` is sorted by item index and `by_item[i]` by user index.
#[derive(Debug, Clone)]
pub struct RatingsTable {
    num_users: usize,
    num_items: usize,
    triples: Vec<Rating>,
    timestamps: Vec<i64>,
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
    ids: Arc<IdMaps>,
}

impl PartialEq for RatingsTable {
    fn eq(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.triples == other.triples
            && self.timestamps == other.timestamps
            && self.ids == other.ids
    }
}

impl RatingsTable {
    fn from_parts(num_users: usize, num_items: usize, triples: Vec<Rating>, timestamps: Vec<i64>, ids: Arc<IdMaps>) -> Self {
        let mut by_user = vec![Vec::new(); num_users];
        let mut by_item = vec![Vec::new(); num_items];
        for t in &triples {
            by_user[t.user].push((t.item, t.value));
            by_item[t.item].push((t.user, t.value));
        }
        for list in by_user.iter_mut().chain(by_item.iter_mut()) {
            list.sort_by_key(|&(idx, _)| idx);
        }
        Self {
            num_users,
            num_items,
            triples,
            timestamps,
            by_user,
            by_item,
            ids,
        }
    }

    /// Builds a table straight from index triples, with generated ids
    /// `u<k>` / `i<k>`. Later duplicates of a `(user, item)` pair replace
    /// earlier ones.
    pub fn from_triples(num_users: usize, num_items: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let ids = Arc::new(IdMaps {
            users: IdMap::sequential("u", num_users),
            items: IdMap::sequential("i", num_items),
        });
        Self::from_triples_with_ids(num_users, num_items, triples, ids)
    }

    fn from_triples_with_ids(num_users: usize, num_items: usize, triples: &[(usize, usize, f64)], ids: Arc<IdMaps>) -> Result<Self> {
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out: Vec<Rating> = Vec::new();
        for &(user, item, value) in triples {
            if user >= num_users || item >= num_items {
                return Err(Error::Usage(format!(
                    "triple ({user}, {item}) outside {num_users}x{num_items} table"
                )));
            }
            if !value.is_finite() {
                return Err(Error::Usage(format!("non-finite rating for ({user}, {item})")));
            }
            match slot.entry((user, item)) {
                Entry::Occupied(e) => out[*e.get()].value = value,
                Entry::Vacant(e) => {
                    e.insert(out.len());
                    out.push(Rating { user, item, value });
                }
            }
        }
        let timestamps = vec![0; out.len()];
        Ok(Self::from_parts(num_users, num_items, out, timestamps, ids))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Ratings in dataset order.
    pub fn triples(&self) -> &[Rating] {
        &self.triples
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn user_ratings(&self, user: usize) -> &[(usize, f64)] {
        self.by_user.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn item_ratings(&self, item: usize) -> &[(usize, f64)] {
        self.by_item.get(item).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        let list = self.user_ratings(user);
        list.binary_search_by_key(&item, |&(i, _)| i).ok().map(|k| list[k].1)
    }

    pub fn ids(&self) -> &IdMaps {
        &self.ids
    }

    /// Converts back to raw records, in dataset order.
    pub fn to_raw(&self) -> Vec<RawRating> {
        self.triples
            .iter()
            .zip(&self.timestamps)
            .map(|(t, &ts)| {
                RawRating::new(
                    self.ids.users.external_id(t.user).unwrap_or_default(),
                    self.ids.items.external_id(t.item).unwrap_or_default(),
                    t.value,
                    ts,
                )
            })
            .collect()
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.triples.is_empty() {
            None
        } else {
            Some(self.triples.iter().map(|t| t.value).sum::<f64>() / self.triples.len() as f64)
        }
    }
}

/// Train and test tables over one shared id universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: RatingsTable,
    pub test: RatingsTable,
    /// Set when no test record survived pruning.
    pub test_empty: bool,
}

impl Dataset {
    /// Builds a dataset from index triples over an `num_users x num_items`
    /// universe. Test triples are kept as given.
    pub fn from_triples(
        num_users: usize,
        num_items: usize,
        train: &[(usize, usize, f64)],
        test: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let train = RatingsTable::from_triples(num_users, num_items, train)?;
        let test = RatingsTable::from_triples_with_ids(num_users, num_items, test, Arc::clone(&train.ids))?;
        let test_empty = test.is_empty();
        Ok(Self { train, test, test_empty })
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items
    }
}

/// Index of each `(user, item)` pair that survives deduplication, keeping
/// the latest timestamp (file order breaks ties) at the position of the
/// pair's first appearance.
fn dedup_latest<'a>(records: impl Iterator<Item = &'a RawRating>) -> Vec<&'a RawRating> {
    let mut slot: HashMap<(&str, &str), usize> = HashMap::new();
    let mut kept: Vec<&RawRating> = Vec::new();
    for r in records {
        match slot.entry((r.user_id.as_str(), r.item_id.as_str())) {
            Entry::Occupied(e) => {
                let current = &mut kept[*e.get()];
                if r.timestamp >= current.timestamp {
                    *current = r;
                }
            }
            Entry::Vacant(e) => {
                e.insert(kept.len());
                kept.push(r);
            }
        }
    }
    kept
}

/// Deduplicates both streams, assigns dense indices by first appearance in
/// the training stream and drops test records whose user or item never
/// occurs in training.
pub fn build_dataset(train_raw: &[RawRating], test_raw: &[RawRating]) -> Result<Dataset> {
    let train_kept = dedup_latest(train_raw.iter());
    if train_kept.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }

    let mut ids = IdMaps::default();
    let mut train = Vec::with_capacity(train_kept.len());
    let mut train_ts = Vec::with_capacity(train_kept.len());
    for r in &train_kept {
        let user = ids.users.intern(&r.user_id);
        let item = ids.items.intern(&r.item_id);
        train.push(Rating { user, item, value: r.rating });
        train_ts.push(r.timestamp);
    }

    let seen = test_raw
        .iter()
        .filter(|r| ids.users.index_of(&r.user_id).is_some() && ids.items.index_of(&r.item_id).is_some());
    let test_kept = dedup_latest(seen);
    let mut test = Vec::with_capacity(test_kept.len());
    let mut test_ts = Vec::with_capacity(test_kept.len());
    for r in &test_kept {
        let user = ids.users.index_of(&r.user_id).expect("filtered");
        let item = ids.items.index_of(&r.item_id).expect("filtered");
        test.push(Rating { user, item, value: r.rating });
        test_ts.push(r.timestamp);
    }

    let (m, n) = (ids.users.len(), ids.items.len());
    let ids = Arc::new(ids);
    let train = RatingsTable::from_parts(m, n, train, train_ts, Arc::clone(&ids));
    let test = RatingsTable::from_parts(m, n, test, test_ts, ids);
    let test_empty = test.is_empty();
    if test_empty {
        log::warn!("test set is empty after pruning to the training universe");
    }
    Ok(Dataset { train, test, test_empty })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(u: &str, i: &str, r: f64, t: i64) -> RawRating {
        RawRating::new(u, i, r, t)
    }

    #[test]
    fn parses_movietweetings_line() {
        let recs = parse_ratings_str("1::0113277::10::1362823771\n", Format::MovieTweetings).unwrap();
        assert_eq!(recs, vec![raw("1", "0113277", 10.0, 1362823771)]);
    }

    #[test]
    fn crlf_and_blank_lines() {
        let recs = parse_ratings_str("1::a::3::5\r\n\r\n2::b::4::6\r\n", Format::MovieTweetings).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1], raw("2", "b", 4.0, 6));
    }

    #[test]
    fn non_numeric_rating_reports_line() {
        let err = parse_ratings_str("1::0113277::ten::1362823771", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let err = parse_ratings_str("1::a::3::1\n1::b::NaN::1", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn wrong_field_count() {
        let err = parse_ratings_str("1::a::3", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ratings_str("u,i\n", Format::Csv);
        // a lone non-numeric first line is a header
        assert!(err.unwrap().is_empty());
        let err = parse_ratings_str("u,i,3\nu,i\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn out_of_scale_rating() {
        let err = parse_ratings_str("1::a::11::0", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Range { line: 1, .. }));
        let err = parse_ratings_str("1::a::-0.5::0", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Range { .. }));
    }

    #[test]
    fn empty_input() {
        assert!(parse_ratings_str("", Format::MovieTweetings).unwrap().is_empty());
        assert!(parse_ratings_str("", Format::Csv).unwrap().is_empty());
    }

    #[test]
    fn csv_with_and_without_header() {
        let a = parse_ratings_str("user,item,rating,timestamp\nA,x,3.5,7\nB,y,4\n", Format::Csv).unwrap();
        assert_eq!(a, vec![raw("A", "x", 3.5, 7), raw("B", "y", 4.0, 0)]);
        let b = parse_ratings_str("A,x,3.5,7\n", Format::Csv).unwrap();
        assert_eq!(b, vec![raw("A", "x", 3.5, 7)]);
        let err = parse_ratings_str("1,x,ten\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_ratings_str("user,item,rating\nA,x,ten\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_ratings_file("/nonexistent/ratings.dat", Format::MovieTweetings).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn prunes_unseen_test_entities() {
        let train = [raw("A", "x", 5.0, 0)];
        let test = [raw("A", "x", 4.0, 0), raw("B", "x", 4.0, 0), raw("A", "y", 4.0, 0)];
        let ds = build_dataset(&train, &test).unwrap();
        assert_eq!(ds.test.len(), 1);
        assert_eq!(ds.test.triples()[0], Rating { user: 0, item: 0, value: 4.0 });
        assert!(!ds.test_empty);
    }

    #[test]
    fn duplicate_keeps_latest_timestamp() {
        let train = [raw("A", "x", 7.0, 2), raw("A", "x", 5.0, 1)];
        let ds = build_dataset(&train, &train).unwrap();
        assert_eq!(ds.train.triples(), &[Rating { user: 0, item: 0, value: 7.0 }]);
        assert_eq!(ds.train.timestamps(), &[2]);
        let train = [raw("A", "x", 5.0, 1), raw("A", "x", 7.0, 2)];
        let ds = build_dataset(&train, &[]).unwrap();
        assert_eq!(ds.train.triples()[0].value, 7.0);
        assert!(ds.test_empty);
    }

    #[test]
    fn indices_follow_first_appearance() {
        let train = [raw("B", "y", 1.0, 0), raw("A", "x", 2.0, 0), raw("B", "x", 3.0, 0)];
        let ds = build_dataset(&train, &[]).unwrap();
        assert_eq!(ds.train.ids().users.index_of("B"), Some(0));
        assert_eq!(ds.train.ids().users.index_of("A"), Some(1));
        assert_eq!(ds.train.ids().items.index_of("y"), Some(0));
        assert_eq!(ds.train.ids().items.external_id(1), Some("x"));
        assert_eq!(ds.train.get(0, 1), Some(3.0));
        assert_eq!(ds.train.get(1, 0), None);
    }

    #[test]
    fn empty_train_is_fatal() {
        assert!(matches!(build_dataset(&[], &[raw("A", "x", 1.0, 0)]), Err(Error::Config(_))));
    }

    #[test]
    fn from_triples_rejects_out_of_range() {
        assert!(RatingsTable::from_triples(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
