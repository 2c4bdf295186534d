use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{json_hash, write_atomic};
use crate::{Error, Result};

/// Ordered behavior names plus the designated target behavior.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorVocab {
    names: Vec<String>,
    target: usize,
}

impl BehaviorVocab {
    pub fn new(names: Vec<String>, target: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("behavior vocabulary is empty".into()));
        }
        if target >= names.len() {
            return Err(Error::Config(format!(
                "target behavior index {target} is out of range for {} behaviors",
                names.len()
            )));
        }
        Ok(Self { names, target })
    }

    pub fn with_target_name(names: Vec<String>, target: &str) -> Result<Self> {
        let idx = names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::UnknownBehavior {
                name: target.to_string(),
                known: names.clone(),
            })?;
        Self::new(names, idx)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, b: u32) -> &str {
        &self.names[b as usize]
    }

    pub fn target(&self) -> u32 {
        self.target as u32
    }

    pub fn index_of(&self, name: &str) -> Result<u32> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownBehavior {
                name: name.to_string(),
                known: self.names.clone(),
            })
    }
}

/// One interaction inside a user's sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub item: u32,
    pub behavior: u32,
    pub timestamp: i64,
}

/// A fully resolved interaction record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub behavior: u32,
    pub timestamp: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    /// Raw user identifier as it appeared in the input.
    pub raw_id: String,
    /// Chronological events.
    pub events: Vec<Event>,
}

/// Leave-one-out role of a position in a user's sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Per-user chronological logs with item and behavior vocabularies.
///
/// Every retained user has at least three events; the last is the test event,
/// the second-to-last the validation event, the rest form the training region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDataset {
    behaviors: BehaviorVocab,
    item_labels: Vec<String>,
    users: Vec<UserSequence>,
}

pub const MIN_USER_EVENTS: usize = 3;

impl InteractionDataset {
    pub fn new(
        behaviors: BehaviorVocab,
        item_labels: Vec<String>,
        users: Vec<UserSequence>,
    ) -> Result<Self> {
        for u in &users {
            if u.events.len() < MIN_USER_EVENTS {
                return Err(Error::Config(format!(
                    "user `{}` has {} interactions; at least {MIN_USER_EVENTS} are required",
                    u.raw_id,
                    u.events.len()
                )));
            }
            for w in u.events.windows(2) {
                if w[1].timestamp <= w[0].timestamp {
                    return Err(Error::Config(format!(
                        "user `{}` has non-increasing timestamps",
                        u.raw_id
                    )));
                }
            }
            for e in &u.events {
                if e.item as usize >= item_labels.len() || e.behavior as usize >= behaviors.len() {
                    return Err(Error::Config(format!(
                        "user `{}` references an item or behavior outside the vocabulary",
                        u.raw_id
                    )));
                }
            }
        }
        Ok(Self {
            behaviors,
            item_labels,
            users,
        })
    }

    pub fn behaviors(&self) -> &BehaviorVocab {
        &self.behaviors
    }

    pub fn n_items(&self) -> usize {
        self.item_labels.len()
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    pub fn users(&self) -> &[UserSequence] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.users.iter().map(|u| u.events.len()).sum()
    }

    pub fn interactions(&self) -> impl Iterator<Item = Interaction> + '_ {
        self.users.iter().enumerate().flat_map(|(u, seq)| {
            seq.events.iter().map(move |e| Interaction {
                user: u as u32,
                item: e.item,
                behavior: e.behavior,
                timestamp: e.timestamp,
            })
        })
    }

    pub fn split_of(&self, user: usize, position: usize) -> Split {
        let n = self.users[user].events.len();
        if position + 1 == n {
            Split::Test
        } else if position + 2 == n {
            Split::Validation
        } else {
            Split::Train
        }
    }

    pub fn train_region(&self, user: usize) -> &[Event] {
        let ev = &self.users[user].events;
        &ev[..ev.len() - 2]
    }

    pub fn validation_event(&self, user: usize) -> Event {
        let ev = &self.users[user].events;
        ev[ev.len() - 2]
    }

    pub fn test_event(&self, user: usize) -> Event {
        *self.users[user]
            .events
            .last()
            .expect("retained users are non-empty")
    }

    /// `(history, target)` for evaluating `split`; history is every event
    /// strictly before the target.
    pub fn eval_case(&self, user: usize, split: Split) -> Option<(&[Event], Event)> {
        let ev = &self.users[user].events;
        let n = ev.len();
        match split {
            Split::Validation => Some((&ev[..n - 2], ev[n - 2])),
            Split::Test => Some((&ev[..n - 1], ev[n - 1])),
            Split::Train => None,
        }
    }

    /// Content hash over vocabularies and every event.
    pub fn content_hash(&self) -> String {
        json_hash(self).expect("dataset serializes")
    }

    /// Writes `user,item,behavior,timestamp` rows (raw labels, header included)
    /// in user order then chronological order.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["user", "item", "behavior", "timestamp"])
            .map_err(csv_err)?;
        for u in &self.users {
            for e in &u.events {
                w.write_record([
                    u.raw_id.as_str(),
                    self.item_labels[e.item as usize].as_str(),
                    self.behaviors.name(e.behavior),
                    &e.timestamp.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        write_atomic(path, &bytes)
    }
}

/// Options for [`ingest`].
#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub behaviors: BehaviorVocab,
    /// Field delimiter; `None` sniffs tab vs comma from the first line.
    pub delimiter: Option<u8>,
    /// Items seen fewer times than this in the training region are removed.
    pub min_item_count: usize,
}

impl IngestOptions {
    pub fn new(behaviors: BehaviorVocab) -> Self {
        Self {
            behaviors,
            delimiter: None,
            min_item_count: 5,
        }
    }
}

struct RawRow {
    item: String,
    behavior: u32,
    timestamp: i64,
}

/// Reads a delimiter-separated `user,item,behavior,timestamp` file.
///
/// Rows are grouped by user and stably sorted by timestamp (input order breaks
/// ties, then tied timestamps are bumped to be strictly increasing). Item
/// filtering and short-user removal repeat until nothing changes, and ids are
/// assigned in first-seen order of the surviving rows.
pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<InteractionDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("cannot read file: {e}"),
    })?;
    ingest_str(&text, path, opts)
}

pub fn ingest_str(text: &str, path: &Path, opts: &IngestOptions) -> Result<InteractionDataset> {
    let delimiter = opts.delimiter.unwrap_or_else(|| {
        let first = text.lines().next().unwrap_or("");
        if first.contains('\t') {
            b'\t'
        } else {
            b','
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut user_order: Vec<String> = Vec::new();
    let mut by_user: HashMap<String, Vec<RawRow>> = HashMap::new();
    for (row_idx, rec) in reader.records().enumerate() {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(row_idx + 1, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(row_idx + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 4 {
            return Err(parse_err(
                line,
                format!(
                    "expected 4 fields (user,item,behavior,timestamp), found {}",
                    rec.len()
                ),
            ));
        }
        let timestamp = match rec[3].parse::<i64>() {
            Ok(t) => t,
            Err(_) if row_idx == 0 => continue, // header row
            Err(_) => {
                return Err(parse_err(
                    line,
                    format!("timestamp `{}` is not an integer", &rec[3]),
                ))
            }
        };
        let behavior = match opts.behaviors.index_of(&rec[2]) {
            Ok(b) => b,
            Err(Error::UnknownBehavior { name, known }) => {
                return Err(parse_err(
                    line,
                    format!("unknown behavior `{name}`; known behaviors are {known:?}"),
                ))
            }
            Err(e) => return Err(e),
        };
        let user = rec[0].to_string();
        if !by_user.contains_key(&user) {
            user_order.push(user.clone());
        }
        by_user.entry(user).or_default().push(RawRow {
            item: rec[1].to_string(),
            behavior,
            timestamp,
        });
    }

    let mut sequences: Vec<(String, Vec<RawRow>)> = user_order
        .into_iter()
        .map(|u| {
            let mut rows = by_user.remove(&u).expect("user recorded");
            rows.sort_by_key(|r| r.timestamp); // stable: input order breaks ties
            (u, rows)
        })
        .collect();

    loop {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (_, rows) in &sequences {
            let train_len = rows.len().saturating_sub(2);
            for r in &rows[..train_len] {
                *counts.entry(r.item.as_str()).or_default() += 1;
            }
        }
        let keep: std::collections::HashSet<String> = counts
            .into_iter()
            .filter(|&(_, c)| c >= opts.min_item_count)
            .map(|(k, _)| k.to_string())
            .collect();
        let before: usize = sequences.iter().map(|(_, r)| r.len()).sum::<usize>() + sequences.len();
        for (_, rows) in sequences.iter_mut() {
            rows.retain(|r| opts.min_item_count == 0 || keep.contains(&r.item));
        }
        sequences.retain(|(_, rows)| rows.len() >= MIN_USER_EVENTS);
        let after: usize = sequences.iter().map(|(_, r)| r.len()).sum::<usize>() + sequences.len();
        if after == before {
            break;
        }
    }

    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut item_labels = Vec::new();
    let mut users = Vec::with_capacity(sequences.len());
    for (raw_id, rows) in sequences {
        let mut events = Vec::with_capacity(rows.len());
        let mut last_ts: Option<i64> = None;
        for r in rows {
            let item = *item_index.entry(r.item.clone()).or_insert_with(|| {
                item_labels.push(r.item.clone());
                (item_labels.len() - 1) as u32
            });
            let ts = match last_ts {
                Some(prev) if r.timestamp <= prev => prev + 1,
                _ => r.timestamp,
            };
            last_ts = Some(ts);
            events.push(Event {
                item,
                behavior: r.behavior,
                timestamp: ts,
            });
        }
        users.push(UserSequence { raw_id, events });
    }
    InteractionDataset::new(opts.behaviors.clone(), item_labels, users)
}

/// Keeps the most recent `max_items` entries.
pub fn truncate_history<T>(history: &[T], max_items: usize) -> &[T] {
    assert!(max_items >= 1, "max_items must be at least 1");
    &history[history.len().saturating_sub(max_items)..]
}

/// Reads per-item feature vectors (`item,f1,...,fd`, optional header) and
/// aligns them with the dataset's item vocabulary.
pub fn load_item_features(path: &Path, item_labels: &[String]) -> Result<crate::numerics::Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut by_label: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim = None;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (row_idx, rec) in reader.records().enumerate() {
        let line = row_idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        if rec.len() < 2 {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            rec.iter().skip(1).map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row_idx == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: e.to_string(),
                })
            }
        };
        if *dim.get_or_insert(values.len()) != values.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "inconsistent feature width".into(),
            });
        }
        by_label.insert(rec[0].to_string(), values);
    }
    let dim = dim.unwrap_or(0);
    let mut data = Vec::with_capacity(item_labels.len() * dim);
    for label in item_labels {
        let row = by_label
            .get(label)
            .ok_or_else(|| Error::Config(format!("no feature vector for item `{label}`")))?;
        data.extend_from_slice(row);
    }
    crate::numerics::Tensor::new(vec![item_labels.len(), dim], data)
}

pub fn write_item_features(
    path: &Path,
    labels: &[String],
    features: &crate::numerics::Tensor,
) -> Result<()> {
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        out.push_str(label);
        for v in features.row(i) {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
