//! Timestamped interaction logs: loading, n-core filtering and the
//! chronological train / validation / test split.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since the epoch.
pub type Timestamp = i64;

/// One click: `user` interacted with `item` at `time`, optionally leaving a rating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub time: Timestamp,
    pub rating: Option<u8>,
}

/// A time-ordered list of interactions over a dense id space.
///
/// Split partitions share the id space (and labels) of the log they were cut
/// from, so `n_users` / `n_items` can exceed the ids actually present.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    records: Vec<Interaction>,
    n_users: usize,
    n_items: usize,
    t_min: Timestamp,
    t_max: Timestamp,
    user_labels: Arc<[String]>,
    item_labels: Arc<[String]>,
}

impl InteractionLog {
    /// Builds a log, stably sorting `records` by time.
    pub fn new(mut records: Vec<Interaction>, n_users: usize, n_items: usize) -> Result<Self> {
        let user_labels: Arc<[String]> = (0..n_users).map(|u| u.to_string()).collect();
        let item_labels: Arc<[String]> = (0..n_items).map(|i| i.to_string()).collect();
        records.sort_by_key(|r| r.time);
        Self::from_sorted(records, user_labels, item_labels)
    }

    fn from_sorted(
        records: Vec<Interaction>,
        user_labels: Arc<[String]>,
        item_labels: Arc<[String]>,
    ) -> Result<Self> {
        let n_users = user_labels.len();
        let n_items = item_labels.len();
        for r in &records {
            if r.user >= n_users {
                return Err(Error::IdOutOfRange { kind: "user", id: r.user, n: n_users });
            }
            if r.item >= n_items {
                return Err(Error::IdOutOfRange { kind: "item", id: r.item, n: n_items });
            }
            if r.time < 0 {
                return Err(Error::InvalidArgument(format!("negative timestamp {}", r.time)));
            }
            if let Some(rating) = r.rating {
                if !(1..=5).contains(&rating) {
                    return Err(Error::InvalidArgument(format!("rating {rating} outside [1, 5]")));
                }
            }
        }
        debug_assert!(records.windows(2).all(|w| w[0].time <= w[1].time));
        let t_min = records.first().map_or(0, |r| r.time);
        let t_max = records.last().map_or(0, |r| r.time);
        Ok(InteractionLog { records, n_users, n_items, t_min, t_max, user_labels, item_labels })
    }

    /// A log over the same id space holding a subset of records (already time-ordered).
    fn sibling(&self, records: Vec<Interaction>) -> Self {
        let t_min = records.first().map_or(0, |r| r.time);
        let t_max = records.last().map_or(0, |r| r.time);
        InteractionLog {
            records,
            n_users: self.n_users,
            n_items: self.n_items,
            t_min,
            t_max,
            user_labels: Arc::clone(&self.user_labels),
            item_labels: Arc::clone(&self.item_labels),
        }
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn t_min(&self) -> Timestamp {
        self.t_min
    }

    pub fn t_max(&self) -> Timestamp {
        self.t_max
    }

    pub fn user_labels(&self) -> &[String] {
        &self.user_labels
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    /// Interaction count per item, duplicates included.
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_items];
        for r in &self.records {
            counts[r.item] += 1;
        }
        counts
    }

    /// Sorted, de-duplicated items per user.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut items = vec![Vec::new(); self.n_users];
        for r in &self.records {
            items[r.user].push(r.item);
        }
        for list in &mut items {
            list.sort_unstable();
            list.dedup();
        }
        items
    }

    /// Distinct users present, ascending.
    pub fn users(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_users];
        for r in &self.records {
            seen[r.user] = true;
        }
        (0..self.n_users).filter(|&u| seen[u]).collect()
    }

    /// Writes the log with dense ids as `user\titem\trating\ttime` lines;
    /// a missing rating is an empty field.
    pub fn write_dense<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            match r.rating {
                Some(rating) => writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, rating, r.time)?,
                None => writeln!(out, "{}\t{}\t\t{}", r.user, r.item, r.time)?,
            }
        }
        Ok(())
    }

    /// Writes the log with its raw labels in the default column layout.
    pub fn write_labelled<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let user = &self.user_labels[r.user];
            let item = &self.item_labels[r.item];
            match r.rating {
                Some(rating) => writeln!(out, "{user}\t{item}\t{rating}\t{}", r.time)?,
                None => writeln!(out, "{user}\t{item}\t\t{}", r.time)?,
            }
        }
        Ok(())
    }
}

/// Column layout of a delimiter-separated interaction file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnFormat {
    pub delimiter: char,
    pub user: usize,
    pub item: usize,
    /// `None` for click-only data.
    pub rating: Option<usize>,
    pub time: usize,
    pub has_header: bool,
}

impl Default for ColumnFormat {
    fn default() -> Self {
        ColumnFormat { delimiter: '\t', user: 0, item: 1, rating: Some(2), time: 3, has_header: false }
    }
}

/// Reads an interaction file, compacting raw ids in order of first appearance.
pub fn load_interactions(path: impl AsRef<Path>, format: &ColumnFormat) -> Result<InteractionLog> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(file, format)
}

pub fn parse_interactions<R: Read>(input: R, format: &ColumnFormat) -> Result<InteractionLog> {
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut user_labels = Vec::new();
    let mut item_labels = Vec::new();
    let mut records = Vec::new();

    let reader = BufReader::new(input);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() || (format.has_header && idx == 0) {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).map(str::trim).collect();
        let field = |col: usize, name: &str| -> Result<&str> {
            fields.get(col).copied().ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("missing {name} column {col}"),
            })
        };
        let user_raw = field(format.user, "user")?;
        let item_raw = field(format.item, "item")?;
        let time_raw = field(format.time, "timestamp")?;
        if user_raw.is_empty() || item_raw.is_empty() {
            return Err(Error::Parse { line: line_no, message: "empty user or item id".into() });
        }
        let time = parse_timestamp(time_raw).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("invalid timestamp {time_raw:?}"),
        })?;
        let rating = match format.rating {
            Some(col) => parse_rating(field(col, "rating")?).map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?,
            None => None,
        };

        let user = *users.entry(user_raw.to_string()).or_insert_with(|| {
            user_labels.push(user_raw.to_string());
            user_labels.len() - 1
        });
        let item = *items.entry(item_raw.to_string()).or_insert_with(|| {
            item_labels.push(item_raw.to_string());
            item_labels.len() - 1
        });
        records.push(Interaction { user, item, time, rating });
    }

    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    records.sort_by_key(|r| r.time);
    InteractionLog::from_sorted(records, user_labels.into(), item_labels.into())
}

fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    if let Ok(t) = raw.parse::<i64>() {
        return (t >= 0).then_some(t);
    }
    let t = raw.parse::<f64>().ok()?;
    (t.is_finite() && t >= 0.0 && t.fract() == 0.0).then_some(t as i64)
}

fn parse_rating(raw: &str) -> std::result::Result<Option<u8>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    let value: f64 = raw.parse().map_err(|_| format!("invalid rating {raw:?}"))?;
    if value.fract() != 0.0 || !(1.0..=5.0).contains(&value) {
        return Err(format!("rating {raw:?} is not an integer in [1, 5]"));
    }
    Ok(Some(value as u8))
}

/// Parses a file written by [`InteractionLog::write_dense`].
pub fn read_dense<R: Read>(input: R, template: &InteractionLog) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: line_no, message: "expected 4 fields".into() });
        }
        let bad = |what: &str| Error::Parse { line: line_no, message: format!("invalid {what}") };
        let user = fields[0].parse().map_err(|_| bad("user"))?;
        let item = fields[1].parse().map_err(|_| bad("item"))?;
        let rating = parse_rating(fields[2]).map_err(|message| Error::Parse { line: line_no, message })?;
        let time = parse_timestamp(fields[3]).ok_or_else(|| bad("timestamp"))?;
        records.push(Interaction { user, item, time, rating });
    }
    records.sort_by_key(|r| r.time);
    InteractionLog::from_sorted(
        records,
        Arc::clone(&template.user_labels),
        Arc::clone(&template.item_labels),
    )
}

/// Drops users and items with fewer than `n` interactions, repeating until
/// nothing changes, then re-compacts ids preserving their relative order.
pub fn n_core_filter(log: &InteractionLog, n: usize) -> Result<InteractionLog> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-core filter needs n >= 1".into()));
    }
    let mut records = log.records.clone();
    loop {
        let mut user_counts = vec![0usize; log.n_users];
        let mut item_counts = vec![0usize; log.n_items];
        for r in &records {
            user_counts[r.user] += 1;
            item_counts[r.item] += 1;
        }
        let before = records.len();
        records.retain(|r| user_counts[r.user] >= n && item_counts[r.item] >= n);
        if records.len() == before {
            break;
        }
    }
    if records.is_empty() {
        return Err(Error::FilterEliminatedAll);
    }

    let (user_map, user_labels) = compact(log.n_users, &log.user_labels, records.iter().map(|r| r.user));
    let (item_map, item_labels) = compact(log.n_items, &log.item_labels, records.iter().map(|r| r.item));
    for r in &mut records {
        r.user = user_map[r.user];
        r.item = item_map[r.item];
    }
    InteractionLog::from_sorted(records, user_labels, item_labels)
}

/// Monotone remap of the ids that occur in `used` onto `0..k`.
fn compact(
    n: usize,
    labels: &[String],
    used: impl Iterator<Item = usize>,
) -> (Vec<usize>, Arc<[String]>) {
    let mut present = vec![false; n];
    for id in used {
        present[id] = true;
    }
    let mut map = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for id in 0..n {
        if present[id] {
            map[id] = kept.len();
            kept.push(labels[id].clone());
        }
    }
    (map, kept.into())
}

/// Every record counts as a positive click; ratings are kept for the
/// preference task, so this is a copy.
pub fn binarize(log: &InteractionLog) -> InteractionLog {
    log.clone()
}

/// Train / validation / test partitions of a log cut into equal-width time parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChronoSplit {
    pub train: InteractionLog,
    pub validation: InteractionLog,
    pub test: InteractionLog,
    /// `parts + 1` cut points from `t_min` to `t_max`.
    pub boundaries: Vec<f64>,
    pub seed: u64,
}

/// Index of the half-open part `[b_k, b_{k+1})` containing `t`; the final
/// part is closed so `t_max` lands in it.
pub fn part_of(boundaries: &[f64], t: Timestamp) -> usize {
    let interior = &boundaries[1..boundaries.len() - 1];
    interior.partition_point(|&b| b <= t as f64)
}

pub fn uniform_boundaries(t_min: Timestamp, t_max: Timestamp, parts: usize) -> Vec<f64> {
    let span = (t_max - t_min) as f64;
    (0..=parts)
        .map(|k| {
            if k == parts {
                t_max as f64
            } else {
                t_min as f64 + span * k as f64 / parts as f64
            }
        })
        .collect()
}

/// Cuts `log` into `parts` equal-width time intervals. All but the last part
/// train; the last part's users are shuffled with `seed` and the first
/// `ceil(n / 2)` become validation users, the rest test users.
pub fn chrono_split(log: &InteractionLog, parts: usize, seed: u64) -> Result<ChronoSplit> {
    if parts < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 parts, got {parts}")));
    }
    if log.is_empty() {
        return Err(Error::EmptyInput);
    }
    let boundaries = uniform_boundaries(log.t_min, log.t_max, parts);
    let mut part_sizes = vec![0usize; parts];
    let mut train = Vec::new();
    let mut last = Vec::new();
    for r in &log.records {
        let part = part_of(&boundaries, r.time);
        part_sizes[part] += 1;
        if part + 1 == parts {
            last.push(*r);
        } else {
            train.push(*r);
        }
    }
    for (k, &size) in part_sizes.iter().enumerate() {
        if size == 0 {
            log::warn!("time part {} of {parts} is empty", k + 1);
        }
    }

    let mut last_users: Vec<usize> = last.iter().map(|r| r.user).collect();
    // order by label so the assignment does not depend on how ids were compacted
    last_users.sort_unstable_by(|&a, &b| log.user_labels[a].cmp(&log.user_labels[b]).then(a.cmp(&b)));
    last_users.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    last_users.shuffle(&mut rng);
    let n_validation = last_users.len().div_ceil(2);
    let mut is_validation = vec![false; log.n_users];
    for &u in &last_users[..n_validation] {
        is_validation[u] = true;
    }
    let (validation, test): (Vec<_>, Vec<_>) = last.into_iter().partition(|r| is_validation[r.user]);

    Ok(ChronoSplit {
        train: log.sibling(train),
        validation: log.sibling(validation),
        test: log.sibling(test),
        boundaries,
        seed,
    })
}

pub const SPLIT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// On-disk description of a split; the partitions sit next to it as dense TSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub boundaries: Vec<f64>,
    pub counts: SplitCounts,
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub user_labels: Vec<String>,
    pub item_labels: Vec<String>,
}

impl ChronoSplit {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            schema_version: SPLIT_SCHEMA_VERSION,
            boundaries: self.boundaries.clone(),
            counts: SplitCounts {
                train: self.train.len(),
                validation: self.validation.len(),
                test: self.test.len(),
            },
            seed: self.seed,
            n_users: self.train.n_users,
            n_items: self.train.n_items,
            user_labels: self.train.user_labels.to_vec(),
            item_labels: self.train.item_labels.to_vec(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.train.n_users
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items
    }

    /// Writes `manifest.json` plus `train.tsv`, `validation.tsv`, `test.tsv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        for (name, part) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let path = dir.join(format!("{name}.tsv"));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut out = BufWriter::new(file);
            part.write_dense(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: SplitManifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SPLIT_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported split schema version {}",
                manifest.schema_version
            )));
        }
        let template = InteractionLog::from_sorted(
            Vec::new(),
            manifest.user_labels.into(),
            manifest.item_labels.into(),
        )?;
        let read = |name: &str| -> Result<InteractionLog> {
            let path = dir.join(format!("{name}.tsv"));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            read_dense(file, &template)
        };
        Ok(ChronoSplit {
            train: read("train")?,
            validation: read("validation")?,
            test: read("test")?,
            boundaries: manifest.boundaries,
            seed: manifest.seed,
        })
    }
}
