//! Interaction log parsing, sliding-window sample construction, and
//! chronological per-user train/validation/test splits.
//!
//! Input logs are CSV with header `user_id,item_id,timestamp[,genres]`,
//! timestamps in integer Unix seconds, genres pipe-separated. Prepared
//! samples are written to a line-oriented intermediate file so the
//! `prepare` and `train` CLI stages stay decoupled.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One (user, item, timestamp) event from the interaction log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    /// Unix seconds, non-negative.
    pub timestamp: i64,
    /// Optional set of genre labels attached to the item.
    pub genres: Option<BTreeSet<String>>,
}

/// A window of consecutive interactions plus the ground-truth next event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSample {
    pub user_id: String,
    pub window: Vec<Interaction>,
    pub target_item: String,
    pub target_time: i64,
}

/// A sample with keys resolved to dense indices; the on-disk representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedSample {
    pub user: usize,
    pub items: Vec<usize>,
    pub times: Vec<i64>,
    pub target_item: usize,
    pub target_time: i64,
}

impl IndexedSample {
    pub fn window_len(&self) -> usize {
        self.items.len()
    }
}

/// Bijection between item keys and dense indices in `[0, |V|)`, plus the
/// optional per-item genre sets gathered from the log.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    item_to_index: HashMap<String, usize>,
    index_to_item: Vec<String>,
    genres: Vec<BTreeSet<String>>,
}

impl Vocabulary {
    /// Builds the vocabulary in first-appearance order of the items.
    /// Genre sets are unioned when an item occurs more than once.
    pub fn from_interactions(interactions: &[Interaction]) -> Self {
        let mut vocab = Vocabulary::default();
        for it in interactions {
            let idx = match vocab.item_to_index.get(&it.item_id) {
                Some(&idx) => idx,
                None => {
                    let idx = vocab.index_to_item.len();
                    vocab.item_to_index.insert(it.item_id.clone(), idx);
                    vocab.index_to_item.push(it.item_id.clone());
                    vocab.genres.push(BTreeSet::new());
                    idx
                }
            };
            if let Some(gs) = &it.genres {
                vocab.genres[idx].extend(gs.iter().cloned());
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.index_to_item.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_item.is_empty()
    }

    pub fn index_of(&self, item: &str) -> Option<usize> {
        self.item_to_index.get(item).copied()
    }

    pub fn item_key(&self, index: usize) -> Option<&str> {
        self.index_to_item.get(index).map(String::as_str)
    }

    /// Genre set of an item; empty when the log carried none for it.
    pub fn genres_of(&self, index: usize) -> Option<&BTreeSet<String>> {
        self.genres.get(index)
    }

    /// True when at least one item carries genre metadata.
    pub fn has_genres(&self) -> bool {
        self.genres.iter().any(|g| !g.is_empty())
    }

    /// Merges additional `item -> genres` metadata into the vocabulary.
    /// Unknown items are ignored.
    pub fn merge_genres(&mut self, extra: &HashMap<String, BTreeSet<String>>) {
        for (item, gs) in extra {
            if let Some(&idx) = self.item_to_index.get(item) {
                self.genres[idx].extend(gs.iter().cloned());
            }
        }
    }

    /// Serializes as one line per item: `index \t key \t genres` with genres
    /// pipe-separated (empty column when absent).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (idx, key) in self.index_to_item.iter().enumerate() {
            let genres = self.genres[idx]
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join("|");
            writeln!(w, "{idx}\t{key}\t{genres}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        for (lineno, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (idx, key, genres) = match (fields.next(), fields.next(), fields.next()) {
                (Some(i), Some(k), g) => (i, k, g.unwrap_or("")),
                _ => {
                    return Err(Error::Data(format!(
                        "vocabulary line {}: expected index\\tkey\\tgenres",
                        lineno + 1
                    )))
                }
            };
            let idx: usize = idx.parse().map_err(|_| {
                Error::Data(format!("vocabulary line {}: bad index `{idx}`", lineno + 1))
            })?;
            if idx != vocab.index_to_item.len() {
                return Err(Error::Data(format!(
                    "vocabulary line {}: non-contiguous index {idx}",
                    lineno + 1
                )));
            }
            if vocab.item_to_index.contains_key(key) {
                return Err(Error::Data(format!(
                    "vocabulary line {}: duplicate item `{key}`",
                    lineno + 1
                )));
            }
            vocab.item_to_index.insert(key.to_string(), idx);
            vocab.index_to_item.push(key.to_string());
            vocab.genres.push(parse_genre_field(genres));
        }
        if vocab.is_empty() {
            return Err(Error::Data("vocabulary file is empty".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }
}

fn parse_genre_field(field: &str) -> BTreeSet<String> {
    field
        .split('|')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses a UTF-8 CSV interaction log.
///
/// Header must be `user_id,item_id,timestamp` optionally followed by
/// `genres`. Malformed rows fail with the offending line number; an empty
/// file (no data rows) is an error.
pub fn parse_interactions<R: Read>(reader: R) -> Result<Vec<Interaction>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_genres = match cols.as_slice() {
        ["user_id", "item_id", "timestamp"] => false,
        ["user_id", "item_id", "timestamp", "genres"] => true,
        _ => {
            return Err(Error::Data(format!(
                "unexpected CSV header `{}`; expected user_id,item_id,timestamp[,genres]",
                cols.join(",")
            )))
        }
    };

    let mut interactions = Vec::new();
    for record in csv_reader.records() {
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".into());
            Error::Data(format!("line {line}: malformed row ({e})"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let user_id = record.get(0).unwrap_or("").to_string();
        let item_id = record.get(1).unwrap_or("").to_string();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(Error::Data(format!("line {line}: empty user or item key")));
        }
        let ts_field = record.get(2).unwrap_or("");
        let timestamp: i64 = ts_field.parse().map_err(|_| {
            Error::Data(format!("line {line}: non-integer timestamp `{ts_field}`"))
        })?;
        if timestamp < 0 {
            return Err(Error::Data(format!(
                "line {line}: negative timestamp {timestamp}"
            )));
        }
        let genres = if has_genres {
            let field = record.get(3).unwrap_or("");
            if field.is_empty() {
                None
            } else {
                let set = parse_genre_field(field);
                if set.is_empty() {
                    return Err(Error::Data(format!("line {line}: empty genre labels")));
                }
                Some(set)
            }
        } else {
            None
        };
        interactions.push(Interaction {
            user_id,
            item_id,
            timestamp,
            genres,
        });
    }
    if interactions.is_empty() {
        return Err(Error::Data("no interactions found in input".into()));
    }
    Ok(interactions)
}

/// Sliding-window sample construction.
///
/// Per user, interactions are sorted by timestamp (stable, so equal stamps
/// keep input order). Users with fewer than `n + 1` interactions are
/// dropped; a user with `m` interactions yields `m - n` samples, each
/// taking `n` consecutive interactions as the window and the next one as
/// the target. Users are returned in first-appearance order.
pub fn build_sequences(
    interactions: &[Interaction],
    n: usize,
) -> Result<Vec<(String, Vec<SequenceSample>)>> {
    if n < 2 {
        return Err(Error::Config(format!("window size must be >= 2, got {n}")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, Vec<&Interaction>> = HashMap::new();
    for it in interactions {
        per_user
            .entry(it.user_id.clone())
            .or_insert_with(|| {
                order.push(it.user_id.clone());
                Vec::new()
            })
            .push(it);
    }

    let mut out = Vec::new();
    for user in order {
        let mut events = per_user.remove(&user).unwrap();
        events.sort_by_key(|it| it.timestamp);
        if events.len() < n + 1 {
            continue;
        }
        let mut samples = Vec::with_capacity(events.len() - n);
        for start in 0..events.len() - n {
            let window: Vec<Interaction> =
                events[start..start + n].iter().map(|&it| it.clone()).collect();
            let target = events[start + n];
            samples.push(SequenceSample {
                user_id: user.clone(),
                window,
                target_item: target.item_id.clone(),
                target_time: target.timestamp,
            });
        }
        out.push((user, samples));
    }
    Ok(out)
}

/// The three chronological sample sets produced by [`split`].
#[derive(Debug, Clone, Default)]
pub struct SplitSets {
    pub train: Vec<IndexedSample>,
    pub validation: Vec<IndexedSample>,
    pub test: Vec<IndexedSample>,
}

fn div_ceil_tenth(n: usize) -> usize {
    // ceil(n / 10)
    n.div_ceil(10)
}

/// Chronological per-user split.
///
/// The last 10% of a user's samples (rounded up) go to test, then the last
/// 10% of the remainder (rounded up) to validation, the rest to train. A
/// user keeps at least one training sample: validation is skipped when the
/// remainder after the test cut has fewer than two samples, and a user with
/// a single sample contributes it to train only.
pub fn split(per_user: &[(String, Vec<SequenceSample>)], vocab: &Vocabulary) -> Result<SplitSets> {
    let mut sets = SplitSets::default();
    for (user_index, (_user, samples)) in per_user.iter().enumerate() {
        let n = samples.len();
        if n == 0 {
            continue;
        }
        let (train_count, val_count) = if n == 1 {
            (1, 0)
        } else {
            let test_count = div_ceil_tenth(n);
            let rest = n - test_count;
            let val_count = if rest >= 2 { div_ceil_tenth(rest) } else { 0 };
            (rest - val_count, val_count)
        };
        for (pos, sample) in samples.iter().enumerate() {
            let indexed = index_sample(sample, user_index, vocab)?;
            if pos < train_count {
                sets.train.push(indexed);
            } else if pos < train_count + val_count {
                sets.validation.push(indexed);
            } else {
                sets.test.push(indexed);
            }
        }
    }
    Ok(sets)
}

fn index_sample(
    sample: &SequenceSample,
    user_index: usize,
    vocab: &Vocabulary,
) -> Result<IndexedSample> {
    let mut items = Vec::with_capacity(sample.window.len());
    let mut times = Vec::with_capacity(sample.window.len());
    for it in &sample.window {
        let idx = vocab
            .index_of(&it.item_id)
            .ok_or_else(|| Error::Data(format!("item `{}` missing from vocabulary", it.item_id)))?;
        items.push(idx);
        times.push(it.timestamp);
    }
    let target_item = vocab
        .index_of(&sample.target_item)
        .ok_or_else(|| Error::Data(format!("item `{}` missing from vocabulary", sample.target_item)))?;
    Ok(IndexedSample {
        user: user_index,
        items,
        times,
        target_item,
        target_time: sample.target_time,
    })
}

/// Writes samples one per line: user index, N item indices, N timestamps,
/// target index, target time, all tab-separated.
pub fn write_samples<W: Write>(mut w: W, samples: &[IndexedSample]) -> Result<()> {
    for s in samples {
        let mut fields = Vec::with_capacity(2 * s.items.len() + 3);
        fields.push(s.user.to_string());
        fields.extend(s.items.iter().map(|i| i.to_string()));
        fields.extend(s.times.iter().map(|t| t.to_string()));
        fields.push(s.target_item.to_string());
        fields.push(s.target_time.to_string());
        writeln!(w, "{}", fields.join("\t"))?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(r: R) -> Result<Vec<IndexedSample>> {
    let mut samples = Vec::new();
    let mut window_len: Option<usize> = None;
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let lineno = lineno + 1;
        if fields.len() < 7 || fields.len() % 2 == 0 {
            return Err(Error::Data(format!(
                "samples line {lineno}: expected 2N+3 tab-separated integers with N >= 2, got {}",
                fields.len()
            )));
        }
        let n = (fields.len() - 3) / 2;
        if let Some(expected) = window_len {
            if n != expected {
                return Err(Error::Data(format!(
                    "samples line {lineno}: window length {n} differs from {expected}"
                )));
            }
        } else {
            window_len = Some(n);
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Data(format!("samples line {lineno}: bad integer `{s}`")))
        };
        let parse_i64 = |s: &str| -> Result<i64> {
            s.parse()
                .map_err(|_| Error::Data(format!("samples line {lineno}: bad integer `{s}`")))
        };
        let user = parse_usize(fields[0])?;
        let items = fields[1..1 + n]
            .iter()
            .map(|s| parse_usize(s))
            .collect::<Result<Vec<_>>>()?;
        let times = fields[1 + n..1 + 2 * n]
            .iter()
            .map(|s| parse_i64(s))
            .collect::<Result<Vec<_>>>()?;
        let target_item = parse_usize(fields[1 + 2 * n])?;
        let target_time = parse_i64(fields[2 + 2 * n])?;
        samples.push(IndexedSample {
            user,
            items,
            times,
            target_item,
            target_time,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data("samples file is empty".into()));
    }
    Ok(samples)
}

pub fn save_samples(path: &Path, samples: &[IndexedSample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_samples(std::io::BufWriter::new(file), samples)
}

pub fn load_samples(path: &Path) -> Result<Vec<IndexedSample>> {
    let file = std::fs::File::open(path)?;
    read_samples(BufReader::new(file))
}
