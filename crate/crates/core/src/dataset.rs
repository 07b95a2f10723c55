//! Interaction-log ingestion, binarization, user filtering and the temporal
//! train/test split.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// `user \t item \t rating \t timestamp`, MovieLens `u.data` layout.
    TsvRating,
    /// `user \t item \t click{0,1} \t timestamp`.
    TsvClick,
}

impl InputFormat {
    /// Threshold at or above which a value becomes a positive label.
    pub fn default_threshold(self) -> f64 {
        match self {
            InputFormat::TsvRating => 4.0,
            InputFormat::TsvClick => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: u64,
}

/// A raw interaction after binarization. The original rating is kept so
/// that the "same rating for every item" filter can look at it.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInteraction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub label: bool,
    pub timestamp: u64,
}

/// Which values must differ for a user to be kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityRule {
    /// At least two distinct raw ratings.
    #[default]
    RawRating,
    /// At least one positive and one negative binarized label.
    Label,
}

/// What the minimum-interactions filter counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBasis {
    /// Every interaction, whatever its label.
    #[default]
    All,
    /// Positive interactions only.
    Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub min_ratings_per_user: usize,
    pub diversity_rule: DiversityRule,
    pub count_basis: CountBasis,
    /// Binarization threshold; `None` uses the input format's default.
    pub threshold: Option<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            min_ratings_per_user: 5,
            diversity_rule: DiversityRule::RawRating,
            count_basis: CountBasis::All,
            threshold: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!(
                "split.train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                problems.push(format!("split.threshold must be finite, got {t}"));
            }
        }
        problems
    }
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Vec<RawInteraction>> {
    let file =
        fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    parse_interactions(file, path, format)
}

/// Parses tab-separated interactions. Blank lines are skipped; fields past
/// the fourth are ignored.
pub fn parse_interactions<R: Read>(
    reader: R,
    source: &Path,
    format: InputFormat,
) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(format!("read {}", source.display()), e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(bad(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid rating {:?}", fields[2])))?;
        if !rating.is_finite() {
            return Err(bad(format!("non-finite rating {:?}", fields[2])));
        }
        if format == InputFormat::TsvClick && rating != 0.0 && rating != 1.0 {
            return Err(bad(format!("click must be 0 or 1, got {:?}", fields[2])));
        }
        let timestamp: u64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid timestamp {:?}", fields[3])))?;
        out.push(RawInteraction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(source.display().to_string()));
    }
    Ok(out)
}

pub fn binarize(raw: Vec<RawInteraction>, threshold: f64) -> Vec<LabeledInteraction> {
    raw.into_iter()
        .map(|r| LabeledInteraction {
            label: r.rating >= threshold,
            user: r.user,
            item: r.item,
            rating: r.rating,
            timestamp: r.timestamp,
        })
        .collect()
}

/// Collapses repeated `(user, item)` rows to the one with the latest
/// timestamp (later input position wins on equal timestamps). The survivors
/// keep their original relative order.
pub fn dedup_latest(rows: Vec<LabeledInteraction>) -> Vec<LabeledInteraction> {
    let mut winner: HashMap<(&str, &str), usize> = HashMap::with_capacity(rows.len());
    for (pos, r) in rows.iter().enumerate() {
        winner
            .entry((r.user.as_str(), r.item.as_str()))
            .and_modify(|w| {
                if r.timestamp >= rows[*w].timestamp {
                    *w = pos;
                }
            })
            .or_insert(pos);
    }
    let keep: HashSet<usize> = winner.into_values().collect();
    if keep.len() == rows.len() {
        return rows;
    }
    rows.into_iter()
        .enumerate()
        .filter_map(|(pos, r)| keep.contains(&pos).then_some(r))
        .collect()
}

/// Keeps the users with enough interactions whose feedback is not uniform.
///
/// Item removal is never performed, so removing a user cannot change any
/// other user's counts and one pass reaches the fixpoint.
pub fn filter_users(
    rows: Vec<LabeledInteraction>,
    spec: &SplitSpec,
) -> Result<Vec<LabeledInteraction>> {
    #[derive(Default)]
    struct Tally {
        all: usize,
        positive: usize,
        first_rating: Option<f64>,
        mixed_rating: bool,
    }
    let mut tallies: HashMap<&str, Tally> = HashMap::new();
    for r in &rows {
        let t = tallies.entry(r.user.as_str()).or_default();
        t.all += 1;
        t.positive += usize::from(r.label);
        match t.first_rating {
            None => t.first_rating = Some(r.rating),
            Some(f) if f != r.rating => t.mixed_rating = true,
            _ => {}
        }
    }
    let keep: HashSet<String> = tallies
        .into_iter()
        .filter(|(_, t)| {
            let count = match spec.count_basis {
                CountBasis::All => t.all,
                CountBasis::Positive => t.positive,
            };
            let diverse = match spec.diversity_rule {
                DiversityRule::RawRating => t.mixed_rating,
                DiversityRule::Label => t.positive > 0 && t.positive < t.all,
            };
            count >= spec.min_ratings_per_user && diverse
        })
        .map(|(u, _)| u.to_string())
        .collect();
    let out: Vec<_> = rows
        .into_iter()
        .filter(|r| keep.contains(&r.user))
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyDataset("user filtering"));
    }
    Ok(out)
}

/// Bijection between opaque ids and dense indices, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl IdIndex {
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.lookup.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        self.ids.get(index as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub label: bool,
    pub timestamp: u64,
}

/// An indexed, split dataset. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    users: IdIndex,
    items: IdIndex,
    train: Vec<Interaction>,
    test: Vec<Interaction>,
    positives: Vec<Vec<u32>>,
    negatives: Vec<Vec<u32>>,
    eligible: Vec<u32>,
}

/// Counts produced while splitting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitStats {
    pub train_rows: usize,
    pub test_rows_before_pruning: usize,
    pub test_rows_dropped: usize,
    /// Training users with no positive or no negative item; they are kept in
    /// the index but never produce triplets.
    pub ineligible_users: usize,
}

impl Dataset {
    /// Builds a dataset from already-indexed partitions.
    pub fn from_parts(
        users: IdIndex,
        items: IdIndex,
        train: Vec<Interaction>,
        test: Vec<Interaction>,
    ) -> Result<Self> {
        let (n, m) = (users.len(), items.len());
        for r in train.iter().chain(&test) {
            if r.user as usize >= n {
                return Err(Error::IndexOutOfRange {
                    index: r.user as usize,
                    size: n,
                });
            }
            if r.item as usize >= m {
                return Err(Error::IndexOutOfRange {
                    index: r.item as usize,
                    size: m,
                });
            }
        }
        let mut positives = vec![Vec::new(); n];
        let mut negatives = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(train.len());
        for r in &train {
            if !seen.insert((r.user, r.item)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate training pair (user {}, item {})",
                    r.user, r.item
                )));
            }
            if r.label {
                positives[r.user as usize].push(r.item);
            } else {
                negatives[r.user as usize].push(r.item);
            }
        }
        let eligible = (0..n as u32)
            .filter(|&u| !positives[u as usize].is_empty() && !negatives[u as usize].is_empty())
            .collect();
        Ok(Dataset {
            users,
            items,
            train,
            test,
            positives,
            negatives,
            eligible,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn train(&self) -> &[Interaction] {
        &self.train
    }

    pub fn test(&self) -> &[Interaction] {
        &self.test
    }

    /// Training items the user prefers, in time order.
    pub fn positives(&self, user: u32) -> &[u32] {
        &self.positives[user as usize]
    }

    pub fn negatives(&self, user: u32) -> &[u32] {
        &self.negatives[user as usize]
    }

    /// Users with at least one positive and one negative training item.
    pub fn eligible_users(&self) -> &[u32] {
        &self.eligible
    }

    /// Minimum positive and negative counts over eligible users.
    pub fn worst_case_counts(&self) -> Option<(usize, usize)> {
        let pos = self
            .eligible
            .iter()
            .map(|&u| self.positives(u).len())
            .min()?;
        let neg = self
            .eligible
            .iter()
            .map(|&u| self.negatives(u).len())
            .min()?;
        Some((pos, neg))
    }

    /// Test rows grouped per user, users in index order, rows in time order.
    pub fn test_by_user(&self) -> Vec<(u32, Vec<Interaction>)> {
        let mut grouped: Vec<Vec<Interaction>> = vec![Vec::new(); self.n_users()];
        for r in &self.test {
            grouped[r.user as usize].push(*r);
        }
        grouped
            .into_iter()
            .enumerate()
            .filter(|(_, rows)| !rows.is_empty())
            .map(|(u, rows)| (u as u32, rows))
            .collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        let mut index = String::new();
        for (i, id) in self.users.ids().iter().enumerate() {
            let _ = writeln!(index, "user\t{id}\t{i}");
        }
        for (i, id) in self.items.ids().iter().enumerate() {
            let _ = writeln!(index, "item\t{id}\t{i}");
        }
        write_file(&dir.join("index.map"), &index)?;
        write_file(&dir.join("train.tsv"), &rows_tsv(&self.train))?;
        write_file(&dir.join("test.tsv"), &rows_tsv(&self.test))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.map");
        let text = read_file(&index_path)?;
        let mut users = IdIndex::default();
        let mut items = IdIndex::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: index_path.clone(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected `kind \\t id \\t index`"));
            }
            let idx: u32 = f[2].parse().map_err(|_| bad("invalid index"))?;
            let table = match f[0] {
                "user" => &mut users,
                "item" => &mut items,
                _ => return Err(bad("kind must be `user` or `item`")),
            };
            if table.intern(f[1]) != idx {
                return Err(bad("indices must be dense and in order"));
            }
        }
        let train = read_rows(&dir.join("train.tsv"))?;
        let test = read_rows(&dir.join("test.tsv"))?;
        Dataset::from_parts(users, items, train, test)
    }
}

fn rows_tsv(rows: &[Interaction]) -> String {
    let mut s = String::with_capacity(rows.len() * 24);
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            r.user,
            r.item,
            u8::from(r.label),
            r.timestamp
        );
    }
    s
}

fn read_rows(path: &Path) -> Result<Vec<Interaction>> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: "expected `user \\t item \\t label{0,1} \\t timestamp`".to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let label = match f[2] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        rows.push(Interaction {
            user: f[0].parse().map_err(|_| bad())?,
            item: f[1].parse().map_err(|_| bad())?,
            label,
            timestamp: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))
}

/// Sorts by timestamp (stable on input order), sends the first
/// `floor(train_fraction * len)` rows to train and prunes test rows whose
/// user or item never occurs in train.
pub fn temporal_split(
    rows: &[LabeledInteraction],
    spec: &SplitSpec,
) -> Result<(Dataset, SplitStats)> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset("splitting"));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| rows[i].timestamp);
    let n_train = (spec.train_fraction * rows.len() as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptyDataset("splitting (no training rows)"));
    }

    let mut users = IdIndex::default();
    let mut items = IdIndex::default();
    let train: Vec<Interaction> = order[..n_train]
        .iter()
        .map(|&i| {
            let r = &rows[i];
            Interaction {
                user: users.intern(&r.user),
                item: items.intern(&r.item),
                label: r.label,
                timestamp: r.timestamp,
            }
        })
        .collect();
    let test_candidates = &order[n_train..];
    let test: Vec<Interaction> = test_candidates
        .iter()
        .filter_map(|&i| {
            let r = &rows[i];
            Some(Interaction {
                user: users.get(&r.user)?,
                item: items.get(&r.item)?,
                label: r.label,
                timestamp: r.timestamp,
            })
        })
        .collect();
    let stats = SplitStats {
        train_rows: train.len(),
        test_rows_before_pruning: test_candidates.len(),
        test_rows_dropped: test_candidates.len() - test.len(),
        ineligible_users: 0,
    };
    let ds = Dataset::from_parts(users, items, train, test)?;
    let stats = SplitStats {
        ineligible_users: ds.n_users() - ds.eligible_users().len(),
        ..stats
    };
    Ok((ds, stats))
}

/// Collection statistics over the filtered interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectionStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_positive: usize,
}

impl CollectionStats {
    pub fn of(rows: &[LabeledInteraction]) -> Self {
        let users: HashSet<&str> = rows.iter().map(|r| r.user.as_str()).collect();
        let items: HashSet<&str> = rows.iter().map(|r| r.item.as_str()).collect();
        CollectionStats {
            n_users: users.len(),
            n_items: items.len(),
            n_interactions: rows.len(),
            n_positive: rows.iter().filter(|r| r.label).count(),
        }
    }

    /// `1 - interactions / (users * items)`, as a fraction.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.n_interactions as f64 / (self.n_users as f64 * self.n_items as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareReport {
    pub raw_rows: usize,
    pub collection: CollectionStats,
    pub split: SplitStats,
    pub train_users: usize,
    pub train_items: usize,
    pub test_users: usize,
}

impl PrepareReport {
    pub fn to_text(&self) -> String {
        let c = &self.collection;
        let mut s = String::new();
        let _ = writeln!(s, "raw_interactions\t{}", self.raw_rows);
        let _ = writeln!(s, "users\t{}", c.n_users);
        let _ = writeln!(s, "items\t{}", c.n_items);
        let _ = writeln!(s, "interactions\t{}", c.n_interactions);
        let _ = writeln!(s, "positive_interactions\t{}", c.n_positive);
        let _ = writeln!(s, "sparsity_pct\t{:.3}", 100.0 * c.sparsity());
        let _ = writeln!(s, "train_interactions\t{}", self.split.train_rows);
        let _ = writeln!(
            s,
            "test_interactions_before_pruning\t{}",
            self.split.test_rows_before_pruning
        );
        let _ = writeln!(
            s,
            "test_interactions_dropped\t{}",
            self.split.test_rows_dropped
        );
        let _ = writeln!(s, "train_users\t{}", self.train_users);
        let _ = writeln!(s, "train_items\t{}", self.train_items);
        let _ = writeln!(s, "test_users\t{}", self.test_users);
        let _ = writeln!(s, "users_without_triplets\t{}", self.split.ineligible_users);
        s
    }
}

/// Binarize, deduplicate, filter and split.
pub fn prepare(
    raw: Vec<RawInteraction>,
    format: InputFormat,
    spec: &SplitSpec,
) -> Result<(Dataset, PrepareReport)> {
    let raw_rows = raw.len();
    let threshold = spec.threshold.unwrap_or_else(|| format.default_threshold());
    let rows = filter_users(dedup_latest(binarize(raw, threshold)), spec)?;
    let collection = CollectionStats::of(&rows);
    let (ds, split) = temporal_split(&rows, spec)?;
    let test_users = ds.test_by_user().len();
    let report = PrepareReport {
        raw_rows,
        collection,
        split,
        train_users: ds.n_users(),
        train_items: ds.n_items(),
        test_users,
    };
    Ok((ds, report))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSetting {
    /// Only the items shown to the user in the test period.
    #[default]
    Interacted,
    /// The whole catalog.
    All,
}

impl std::str::FromStr for CandidateSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interacted" => Ok(CandidateSetting::Interacted),
            "all" => Ok(CandidateSetting::All),
            _ => Err(Error::InvalidArgument(format!(
                "setting must be `interacted` or `all`, got {s:?}"
            ))),
        }
    }
}

/// Candidate items per test user, users in index order.
///
/// `Interacted` lists the distinct test items in first-seen order. `All`
/// lists every catalog item, minus the user's training items unless
/// `all_includes_train` is set.
pub fn candidate_sets(
    ds: &Dataset,
    setting: CandidateSetting,
    all_includes_train: bool,
) -> Vec<(u32, Vec<u32>)> {
    ds.test_by_user()
        .into_iter()
        .map(|(u, rows)| {
            let candidates = match setting {
                CandidateSetting::Interacted => {
                    let mut seen = HashSet::new();
                    rows.iter()
                        .map(|r| r.item)
                        .filter(|i| seen.insert(*i))
                        .collect()
                }
                CandidateSetting::All => {
                    let consumed: HashSet<u32> = if all_includes_train {
                        HashSet::new()
                    } else {
                        ds.positives(u)
                            .iter()
                            .chain(ds.negatives(u))
                            .copied()
                            .collect()
                    };
                    (0..ds.n_items() as u32)
                        .filter(|i| !consumed.contains(i))
                        .collect()
                }
            };
            (u, candidates)
        })
        .collect()
}
