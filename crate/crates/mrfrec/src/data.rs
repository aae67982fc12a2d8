//! Rating data: parsing, dual-indexed sparse storage, frequency filtering and
//! chronological train/validation/test splitting.
//!
//! A [`RatingDataset`] keeps the flat triple list plus two indexes (by user and
//! by item), both sorted by timestamp. All structures are immutable after
//! construction, so shared concurrent reads are safe.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed rating line: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: rating {rating} outside 1..={k}")]
    RatingRange { line: usize, rating: i64, k: u8 },
    #[error("duplicate rating for user {user}, item {item}")]
    DuplicatePair { user: u32, item: u32 },
    #[error("user {user} has {have} ratings, needs more than {need} to split")]
    TooFewToSplit { user: u32, have: usize, need: usize },
    #[error("empty training set")]
    EmptyTrain,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A single observed rating: user `user` gave item `item` the value
/// `rating` (in `1..=K`) at time `timestamp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingTriple {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: i64,
}

/// Describes the on-disk layout of a ratings file.
#[derive(Debug, Clone)]
pub struct RatingsFormat {
    /// Field separator, e.g. `"::"` or `"\t"`.
    pub separator: String,
    /// Rating scale size K; values must lie in `1..=k`.
    pub k: u8,
}

impl Default for RatingsFormat {
    fn default() -> Self {
        RatingsFormat { separator: "::".to_string(), k: 5 }
    }
}

/// Sparse rating database with dual index.
///
/// `by_user[slot]` and `by_item[slot]` hold indices into `triples`, sorted by
/// `(timestamp, item)` resp. `(timestamp, user)` ascending, so the most recent
/// ratings sit at the end and timestamp ties break deterministically.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    k: u8,
    triples: Vec<RatingTriple>,
    users: Vec<u32>,
    items: Vec<u32>,
    by_user: Vec<Vec<u32>>,
    by_item: Vec<Vec<u32>>,
    user_slot: FxHashMap<u32, u32>,
    item_slot: FxHashMap<u32, u32>,
}

impl RatingDataset {
    /// Build a dataset from raw triples, validating the rating range and
    /// rejecting duplicate `(user, item)` pairs.
    pub fn from_triples(k: u8, triples: Vec<RatingTriple>) -> Result<Self, DataError> {
        let mut seen: FxHashSet<u64> = FxHashSet::default();
        for t in &triples {
            if t.rating < 1 || t.rating > k {
                return Err(DataError::RatingRange { line: 0, rating: t.rating as i64, k });
            }
            if !seen.insert(cell_key(t.user, t.item)) {
                return Err(DataError::DuplicatePair { user: t.user, item: t.item });
            }
        }
        Ok(Self::from_checked_triples(k, triples))
    }

    fn from_checked_triples(k: u8, triples: Vec<RatingTriple>) -> Self {
        let mut users: Vec<u32> = triples.iter().map(|t| t.user).collect();
        users.sort_unstable();
        users.dedup();
        let mut items: Vec<u32> = triples.iter().map(|t| t.item).collect();
        items.sort_unstable();
        items.dedup();

        let user_slot: FxHashMap<u32, u32> =
            users.iter().enumerate().map(|(s, &u)| (u, s as u32)).collect();
        let item_slot: FxHashMap<u32, u32> =
            items.iter().enumerate().map(|(s, &i)| (i, s as u32)).collect();

        let mut by_user: Vec<Vec<u32>> = vec![Vec::new(); users.len()];
        let mut by_item: Vec<Vec<u32>> = vec![Vec::new(); items.len()];
        for (idx, t) in triples.iter().enumerate() {
            by_user[user_slot[&t.user] as usize].push(idx as u32);
            by_item[item_slot[&t.item] as usize].push(idx as u32);
        }
        for row in &mut by_user {
            row.sort_by_key(|&idx| {
                let t = &triples[idx as usize];
                (t.timestamp, t.item)
            });
        }
        for col in &mut by_item {
            col.sort_by_key(|&idx| {
                let t = &triples[idx as usize];
                (t.timestamp, t.user)
            });
        }

        RatingDataset { k, triples, users, items, by_user, by_item, user_slot, item_slot }
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Distinct user ids, ascending.
    pub fn user_ids(&self) -> &[u32] {
        &self.users
    }

    /// Distinct item ids, ascending.
    pub fn item_ids(&self) -> &[u32] {
        &self.items
    }

    pub fn triples(&self) -> &[RatingTriple] {
        &self.triples
    }

    pub fn contains_user(&self, user: u32) -> bool {
        self.user_slot.contains_key(&user)
    }

    pub fn contains_item(&self, item: u32) -> bool {
        self.item_slot.contains_key(&item)
    }

    /// All ratings by `user`, oldest first. Empty iterator for unknown users.
    pub fn user_row(&self, user: u32) -> impl Iterator<Item = &RatingTriple> + '_ {
        let idxs = self
            .user_slot
            .get(&user)
            .map(|&s| self.by_user[s as usize].as_slice())
            .unwrap_or(&[]);
        idxs.iter().map(move |&i| &self.triples[i as usize])
    }

    /// All ratings on `item`, oldest first. Empty iterator for unknown items.
    pub fn item_col(&self, item: u32) -> impl Iterator<Item = &RatingTriple> + '_ {
        let idxs = self
            .item_slot
            .get(&item)
            .map(|&s| self.by_item[s as usize].as_slice())
            .unwrap_or(&[]);
        idxs.iter().map(move |&i| &self.triples[i as usize])
    }

    pub fn user_count(&self, user: u32) -> usize {
        self.user_slot.get(&user).map(|&s| self.by_user[s as usize].len()).unwrap_or(0)
    }

    pub fn item_count(&self, item: u32) -> usize {
        self.item_slot.get(&item).map(|&s| self.by_item[s as usize].len()).unwrap_or(0)
    }

    /// Rating value for `(user, item)`, scanning the shorter of row and column.
    pub fn rating(&self, user: u32, item: u32) -> Option<u8> {
        if self.user_count(user) <= self.item_count(item) {
            self.user_row(user).find(|t| t.item == item).map(|t| t.rating)
        } else {
            self.item_col(item).find(|t| t.user == user).map(|t| t.rating)
        }
    }

    /// Swap user and item roles. An involution: `d.transpose().transpose()`
    /// equals `d` up to index rebuilding.
    pub fn transpose(&self) -> RatingDataset {
        let swapped = self
            .triples
            .iter()
            .map(|t| RatingTriple {
                user: t.item,
                item: t.user,
                rating: t.rating,
                timestamp: t.timestamp,
            })
            .collect();
        Self::from_checked_triples(self.k, swapped)
    }

    /// Keep a deterministic random subset of users (at least one when the
    /// dataset is non-empty).
    pub fn subsample_users(&self, fraction: f64, seed: u64) -> RatingDataset {
        let mut users = self.users.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        users.shuffle(&mut rng);
        let keep = ((users.len() as f64 * fraction).round() as usize).max(1).min(users.len());
        let kept: FxHashSet<u32> = users.into_iter().take(keep).collect();
        let triples = self.triples.iter().filter(|t| kept.contains(&t.user)).copied().collect();
        Self::from_checked_triples(self.k, triples)
    }

    /// Keep at most `q` randomly chosen ratings per user (seeded). Used for
    /// training-size robustness studies.
    pub fn keep_per_user(&self, q: usize, seed: u64) -> RatingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = Vec::new();
        for (slot, _) in self.users.iter().enumerate() {
            let mut idxs = self.by_user[slot].clone();
            idxs.shuffle(&mut rng);
            idxs.truncate(q);
            kept.extend(idxs.iter().map(|&i| self.triples[i as usize]));
        }
        Self::from_checked_triples(self.k, kept)
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.len();
        let mean = if n == 0 {
            0.0
        } else {
            self.triples.iter().map(|t| t.rating as f64).sum::<f64>() / n as f64
        };
        let var = if n == 0 {
            0.0
        } else {
            self.triples.iter().map(|t| (t.rating as f64 - mean).powi(2)).sum::<f64>() / n as f64
        };
        let cells = self.n_users() * self.n_items();
        DatasetStats {
            users: self.n_users(),
            items: self.n_items(),
            ratings: n,
            density: if cells == 0 { 0.0 } else { n as f64 / cells as f64 },
            mean,
            std: var.sqrt(),
        }
    }
}

/// Summary line for a dataset, rendered as tab-separated text.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub density: f64,
    pub mean: f64,
    pub std: f64,
}

impl DatasetStats {
    pub fn to_tsv(&self) -> String {
        format!(
            "users\titems\tratings\tdensity\tmean\tstd\n{}\t{}\t{}\t{:.6}\t{:.4}\t{:.4}\n",
            self.users, self.items, self.ratings, self.density, self.mean, self.std
        )
    }
}

/// Train/validation/test split over a shared id space.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: RatingDataset,
    pub validation: RatingDataset,
    pub test: RatingDataset,
}

/// Parse a delimited ratings stream (`user<SEP>item<SEP>rating<SEP>timestamp`
/// per line). Lines starting with `#` and blank lines are skipped.
pub fn parse_ratings(reader: impl BufRead, format: &RatingsFormat) -> Result<RatingDataset, DataError> {
    let mut triples = Vec::new();
    let mut seen: FxHashSet<u64> = FxHashSet::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(format.separator.as_str()).collect();
        if fields.len() != 4 {
            return Err(DataError::Malformed {
                line: lineno,
                reason: format!("expected 4 fields separated by {:?}, got {}", format.separator, fields.len()),
            });
        }
        let user: u32 = fields[0].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad user id {:?}", fields[0]),
        })?;
        let item: u32 = fields[1].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad item id {:?}", fields[1]),
        })?;
        let rating: i64 = fields[2].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad rating {:?}", fields[2]),
        })?;
        if rating < 1 || rating > format.k as i64 {
            return Err(DataError::RatingRange { line: lineno, rating, k: format.k });
        }
        let timestamp: i64 = fields[3].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad timestamp {:?}", fields[3]),
        })?;
        if !seen.insert(cell_key(user, item)) {
            return Err(DataError::DuplicatePair { user, item });
        }
        triples.push(RatingTriple { user, item, rating: rating as u8, timestamp });
    }
    Ok(RatingDataset::from_checked_triples(format.k, triples))
}

/// Write a dataset in the tab-separated working format, with optional `#`
/// header lines prepended.
pub fn write_ratings(d: &RatingDataset, mut w: impl std::io::Write, header: &[String]) -> std::io::Result<()> {
    for h in header {
        writeln!(w, "# {h}")?;
    }
    for t in d.triples() {
        writeln!(w, "{}\t{}\t{}\t{}", t.user, t.item, t.rating, t.timestamp)?;
    }
    Ok(())
}

/// Drop users with fewer than `min_ratings` ratings. Items left with no
/// ratings disappear from the item index.
pub fn filter_infrequent(d: &RatingDataset, min_ratings: usize) -> RatingDataset {
    let kept: Vec<RatingTriple> = d
        .triples()
        .iter()
        .filter(|t| d.user_count(t.user) >= min_ratings)
        .copied()
        .collect();
    RatingDataset::from_checked_triples(d.k(), kept)
}

/// Hold out, per user, the `n_test` most recent ratings for test and the next
/// `n_valid` most recent for validation; everything older goes to train.
/// Timestamp ties break by item id ascending.
pub fn chronological_split(
    d: &RatingDataset,
    n_valid: usize,
    n_test: usize,
) -> Result<SplitBundle, DataError> {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for &user in d.user_ids() {
        let row: Vec<&RatingTriple> = d.user_row(user).collect();
        if row.len() <= n_valid + n_test {
            return Err(DataError::TooFewToSplit {
                user,
                have: row.len(),
                need: n_valid + n_test,
            });
        }
        let n_train = row.len() - n_valid - n_test;
        for (pos, t) in row.iter().enumerate() {
            if pos < n_train {
                train.push(**t);
            } else if pos < n_train + n_valid {
                valid.push(**t);
            } else {
                test.push(**t);
            }
        }
    }
    Ok(SplitBundle {
        train: RatingDataset::from_checked_triples(d.k(), train),
        validation: RatingDataset::from_checked_triples(d.k(), valid),
        test: RatingDataset::from_checked_triples(d.k(), test),
    })
}

/// Canonical key for an *unordered* same-kind id pair (item-item, user-user).
pub(crate) fn pair_key(a: u32, b: u32) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    ((lo as u64) << 32) | hi as u64
}

/// Key for an *ordered* (user, item) cell.
fn cell_key(user: u32, item: u32) -> u64 {
    ((user as u64) << 32) | item as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn triple(user: u32, item: u32, rating: u8, timestamp: i64) -> RatingTriple {
        RatingTriple { user, item, rating, timestamp }
    }

    #[test]
    fn parse_empty_stream() {
        let d = parse_ratings(Cursor::new(""), &RatingsFormat::default()).unwrap();
        assert_eq!(d.len(), 0);
        assert_eq!(d.n_users(), 0);
    }

    #[test]
    fn parse_movielens_style_line() {
        let d = parse_ratings(Cursor::new("1::1193::5::978300760\n"), &RatingsFormat::default())
            .unwrap();
        assert_eq!(
            d.triples(),
            &[triple(1, 1193, 5, 978300760)]
        );
        assert_eq!(d.k(), 5);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err =
            parse_ratings(Cursor::new("1::2::3::4\noops\n"), &RatingsFormat::default()).unwrap_err();
        match err {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_out_of_range_rating() {
        let err =
            parse_ratings(Cursor::new("1::2::6::99\n"), &RatingsFormat::default()).unwrap_err();
        match err {
            DataError::RatingRange { line, rating, k } => {
                assert_eq!((line, rating, k), (1, 6, 5));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_duplicate_pair_in_fixture() {
        // 12 lines, one duplicate (user 3, item 7).
        let mut text = String::new();
        for (u, i) in [(1, 5), (1, 6), (2, 5), (2, 7), (3, 5), (3, 6), (3, 7), (4, 5), (4, 6), (4, 7), (3, 7), (5, 5)]
        {
            text.push_str(&format!("{u}::{i}::3::{}\n", u * 10 + i));
        }
        assert_eq!(text.lines().count(), 12);
        let err = parse_ratings(Cursor::new(text), &RatingsFormat::default()).unwrap_err();
        match err {
            DataError::DuplicatePair { user, item } => assert_eq!((user, item), (3, 7)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn filter_removes_users_below_threshold() {
        // Counts 10 / 30 / 50 for users 1 / 2 / 3.
        let mut triples = Vec::new();
        for i in 0..10 {
            triples.push(triple(1, i, 3, i as i64));
        }
        for i in 0..30 {
            triples.push(triple(2, 100 + i, 3, i as i64));
        }
        for i in 0..50 {
            triples.push(triple(3, 200 + i, 3, i as i64));
        }
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let f = filter_infrequent(&d, 30);
        assert_eq!(f.n_users(), 2);
        assert_eq!(f.len(), 80);
        assert!(!f.contains_user(1));
        assert!(f.contains_user(2), "exactly 30 ratings is retained");
        // Items only rated by user 1 are gone from the index.
        assert!(!f.contains_item(0));
    }

    #[test]
    fn filter_boundary_29_ratings_removed() {
        let triples: Vec<_> = (0..29).map(|i| triple(1, i, 2, i as i64)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        assert_eq!(filter_infrequent(&d, 30).n_users(), 0);
    }

    #[test]
    fn split_holds_out_most_recent() {
        let triples: Vec<_> = (0..30).map(|i| triple(7, i, 3, 1000 + i as i64)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let s = chronological_split(&d, 5, 10).unwrap();
        assert_eq!(s.train.len(), 15);
        assert_eq!(s.validation.len(), 5);
        assert_eq!(s.test.len(), 10);
        let max_train = s.train.triples().iter().map(|t| t.timestamp).max().unwrap();
        let min_valid = s.validation.triples().iter().map(|t| t.timestamp).min().unwrap();
        let min_test = s.test.triples().iter().map(|t| t.timestamp).min().unwrap();
        assert!(max_train <= min_valid && min_valid <= min_test);
    }

    #[test]
    fn split_degenerate_keeps_everything_in_train() {
        let triples: Vec<_> = (0..4).map(|i| triple(1, i, 1, i as i64)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let s = chronological_split(&d, 0, 0).unwrap();
        assert_eq!(s.train.len(), 4);
        assert_eq!(s.validation.len(), 0);
        assert_eq!(s.test.len(), 0);
    }

    #[test]
    fn split_tie_break_by_item_id() {
        // All timestamps equal: held-out sets are the largest item ids.
        let triples: Vec<_> = (0..6).map(|i| triple(1, i, 3, 42)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let s = chronological_split(&d, 1, 2).unwrap();
        let mut test_items: Vec<u32> = s.test.triples().iter().map(|t| t.item).collect();
        test_items.sort_unstable();
        assert_eq!(test_items, vec![4, 5]);
        assert_eq!(s.validation.triples()[0].item, 3);
    }

    #[test]
    fn split_errors_on_short_user() {
        let triples: Vec<_> = (0..10).map(|i| triple(9, i, 3, i as i64)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let err = chronological_split(&d, 5, 10).unwrap_err();
        match err {
            DataError::TooFewToSplit { user, have, need } => {
                assert_eq!((user, have, need), (9, 10, 15));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn indexes_agree() {
        let triples = vec![
            triple(1, 10, 4, 3),
            triple(1, 11, 2, 1),
            triple(2, 10, 5, 2),
            triple(2, 12, 1, 4),
        ];
        let d = RatingDataset::from_triples(5, triples.clone()).unwrap();
        let mut from_users: Vec<RatingTriple> =
            d.user_ids().iter().flat_map(|&u| d.user_row(u).copied()).collect();
        let mut from_items: Vec<RatingTriple> =
            d.item_ids().iter().flat_map(|&i| d.item_col(i).copied()).collect();
        let key = |t: &RatingTriple| (t.user, t.item);
        from_users.sort_by_key(key);
        from_items.sort_by_key(key);
        assert_eq!(from_users, from_items);
        assert_eq!(d.rating(1, 11), Some(2));
        assert_eq!(d.rating(3, 10), None);
    }

    #[test]
    fn transpose_is_involution() {
        let triples = vec![triple(1, 10, 4, 3), triple(2, 10, 5, 2), triple(2, 12, 1, 4)];
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let t = d.transpose();
        assert_eq!(t.n_users(), d.n_items());
        assert_eq!(t.n_items(), d.n_users());
        assert_eq!(t.rating(10, 1), Some(4));
        let tt = t.transpose();
        assert_eq!(tt.triples().len(), d.triples().len());
        for orig in d.triples() {
            assert_eq!(tt.rating(orig.user, orig.item), Some(orig.rating));
        }
    }

    #[test]
    fn keep_per_user_caps_row_lengths() {
        let triples: Vec<_> = (0..20).map(|i| triple(1, i, 3, i as i64)).collect();
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let small = d.keep_per_user(6, 9);
        assert_eq!(small.user_count(1), 6);
        let same = d.keep_per_user(6, 9);
        assert_eq!(small.triples(), same.triples(), "seeded subsetting is deterministic");
    }

    #[test]
    fn roundtrip_working_format() {
        let triples = vec![triple(1, 10, 4, 3), triple(2, 12, 1, 4)];
        let d = RatingDataset::from_triples(5, triples).unwrap();
        let mut buf = Vec::new();
        write_ratings(&d, &mut buf, &["k=5".to_string()]).unwrap();
        let fmt = RatingsFormat { separator: "\t".to_string(), k: 5 };
        let back = parse_ratings(Cursor::new(buf), &fmt).unwrap();
        assert_eq!(back.triples(), d.triples());
    }
}
