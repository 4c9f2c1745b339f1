//! Listening-log ingestion: parse tab-separated logs and tag files, split
//! user histories into idle-gap sessions, order-preserving 70/30 per-user
//! train/test split, vocabulary construction from the training half, and
//! example extraction for the sequence models.
//!
//! Log lines are `user_id <TAB> timestamp <TAB> artist <TAB> track`; the
//! timestamp is either all digits (epoch seconds) or RFC 3339. Tag lines
//! are `artist <TAB> track <TAB> tag1,tag2,...` with an optional empty
//! tag list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainingExample;

/// Sessions shorter than this are discarded during sessionization.
pub const MIN_SESSION_LEN: usize = 5;

/// Default idle gap separating sessions: 30 minutes.
pub const DEFAULT_GAP_SECONDS: i64 = 1800;

/// A song is identified by its (artist, track) pair, surrounding
/// whitespace trimmed, otherwise verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SongKey {
    pub artist: String,
    pub track: String,
}

impl SongKey {
    pub fn new(artist: &str, track: &str) -> Self {
        SongKey { artist: artist.trim().to_string(), track: track.trim().to_string() }
    }
}

impl fmt::Display for SongKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} - {}", self.artist, self.track)
    }
}

/// One listening event.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user_id: String,
    pub timestamp: i64,
    pub artist: String,
    pub track: String,
}

impl Interaction {
    pub fn song_key(&self) -> SongKey {
        SongKey::new(&self.artist, &self.track)
    }
}

#[derive(Debug)]
pub struct ParsedLogs {
    pub interactions: Vec<Interaction>,
    pub skipped: usize,
}

fn parse_timestamp(field: &str) -> Option<i64> {
    let s = field.trim();
    if s.is_empty() {
        return None;
    }
    let ts = if s.bytes().all(|b| b.is_ascii_digit()) {
        s.parse::<i64>().ok()?
    } else {
        DateTime::parse_from_rfc3339(s).ok()?.timestamp()
    };
    (ts > 0).then_some(ts)
}

fn parse_log_line(line: &str) -> Option<Interaction> {
    let mut fields = line.split('\t');
    let user = fields.next()?.trim();
    let ts = parse_timestamp(fields.next()?)?;
    let artist = fields.next()?;
    let track = fields.next()?;
    if fields.next().is_some() {
        return None; // too many fields
    }
    let track = track.trim();
    if user.is_empty() || track.is_empty() {
        return None;
    }
    Some(Interaction {
        user_id: user.to_string(),
        timestamp: ts,
        artist: artist.trim().to_string(),
        track: track.to_string(),
    })
}

/// Parse a log file. Well-formed lines become interactions in input
/// order; malformed lines are skipped and counted. More than 50%
/// malformed lines is treated as a wrong-format file.
pub fn parse_logs(path: &Path) -> Result<ParsedLogs> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut interactions = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_log_line(line) {
            Some(it) => interactions.push(it),
            None => skipped += 1,
        }
    }
    let total = interactions.len() + skipped;
    if total > 0 && skipped * 2 > total {
        return Err(Error::format(format!(
            "{}: {skipped} of {total} lines malformed; not a log file in the expected format",
            path.display()
        )));
    }
    Ok(ParsedLogs { interactions, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionItem {
    pub key: SongKey,
    pub timestamp: i64,
}

/// A contiguous run of one user's plays, separated from neighbors by an
/// idle gap. At least [`MIN_SESSION_LEN`] songs long after filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: String,
    pub items: Vec<SessionItem>,
}

impl Session {
    pub fn start(&self) -> i64 {
        self.items.first().map(|i| i.timestamp).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Split interactions into per-user sessions: a new session starts
/// whenever the gap to the previous play exceeds `gap_seconds`. Sessions
/// with fewer than [`MIN_SESSION_LEN`] songs are discarded. Output is
/// ordered by user id, then time.
pub fn sessionize(interactions: &[Interaction], gap_seconds: i64) -> Vec<Session> {
    let mut per_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for it in interactions {
        per_user.entry(&it.user_id).or_default().push(it);
    }

    let mut sessions = Vec::new();
    for (user, mut plays) in per_user {
        plays.sort_by_key(|it| it.timestamp);
        let mut current: Vec<SessionItem> = Vec::new();
        let mut prev_ts: Option<i64> = None;
        for it in plays {
            if let Some(prev) = prev_ts {
                if it.timestamp - prev > gap_seconds {
                    if current.len() >= MIN_SESSION_LEN {
                        sessions.push(Session { user_id: user.to_string(), items: current });
                    }
                    current = Vec::new();
                }
            }
            current.push(SessionItem { key: it.song_key(), timestamp: it.timestamp });
            prev_ts = Some(it.timestamp);
        }
        if current.len() >= MIN_SESSION_LEN {
            sessions.push(Session { user_id: user.to_string(), items: current });
        }
    }
    sessions
}

/// Per user, in order of occurrence, the first ⌈0.7 n⌉ sessions go to
/// train and the rest to test.
pub fn split_sessions(sessions: Vec<Session>) -> (Vec<Session>, Vec<Session>) {
    let mut per_user: BTreeMap<String, Vec<Session>> = BTreeMap::new();
    for s in sessions {
        per_user.entry(s.user_id.clone()).or_default().push(s);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut user_sessions) in per_user {
        user_sessions.sort_by_key(|s| s.start());
        let n = user_sessions.len();
        let n_train = (7 * n).div_ceil(10);
        for (i, s) in user_sessions.into_iter().enumerate() {
            if i < n_train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    (train, test)
}

/// Bijection between song keys and dense indices 0..size.
#[derive(Debug, Clone, Default)]
pub struct SongVocab {
    map: HashMap<SongKey, usize>,
    keys: Vec<SongKey>,
}

impl SongVocab {
    pub fn from_keys(keys: Vec<SongKey>) -> Result<Self> {
        let mut map = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if map.insert(k.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate song key in vocabulary: {k}")));
            }
        }
        Ok(SongVocab { map, keys })
    }

    pub fn lookup(&self, key: &SongKey) -> Option<usize> {
        self.map.get(key).copied()
    }

    pub fn key(&self, index: usize) -> Option<&SongKey> {
        self.keys.get(index)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[SongKey] {
        &self.keys
    }

    fn insert(&mut self, key: SongKey) -> usize {
        if let Some(&i) = self.map.get(&key) {
            return i;
        }
        let i = self.keys.len();
        self.map.insert(key.clone(), i);
        self.keys.push(key);
        i
    }
}

/// Bijection between normalized (lowercased, trimmed) tag strings and
/// dense indices.
#[derive(Debug, Clone, Default)]
pub struct TagVocab {
    map: HashMap<String, usize>,
    names: Vec<String>,
}

impl TagVocab {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut map = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if map.insert(n.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate tag in vocabulary: {n}")));
            }
        }
        Ok(TagVocab { map, names })
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.map.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(|s| s.as_str())
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

    fn insert(&mut self, name: String) -> usize {
        if let Some(&i) = self.map.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.map.insert(name.clone(), i);
        self.names.push(name);
        i
    }
}

/// Map from song index to its (possibly empty) tag index list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TagTable {
    tags: Vec<Vec<usize>>,
}

impl TagTable {
    pub fn new(tags: Vec<Vec<usize>>) -> Self {
        TagTable { tags }
    }

    pub fn tags_of(&self, song: usize) -> &[usize] {
        self.tags.get(song).map(|t| t.as_slice()).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.tags
    }
}

fn normalize_tags(raw: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Raw tag-file entries in file order: (song key, normalized tags).
pub fn parse_tag_file(path: &Path) -> Result<Vec<(SongKey, Vec<String>)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(artist), Some(track)) = (fields.next(), fields.next()) else {
            continue;
        };
        if track.trim().is_empty() {
            continue;
        }
        let tags = fields.next().map(normalize_tags).unwrap_or_default();
        out.push((SongKey::new(artist, track), tags));
    }
    Ok(out)
}

/// Build vocabularies and the tag table. The song vocabulary comes from
/// the training sessions only, in first-appearance order; the tag
/// vocabulary covers tags of in-vocabulary songs in tag-file order. Songs
/// absent from the tag file get empty tag lists.
pub fn build_vocabs(
    train_sessions: &[Session],
    tag_file: &Path,
) -> Result<(SongVocab, TagVocab, TagTable)> {
    let mut songs = SongVocab::default();
    for session in train_sessions {
        for item in &session.items {
            songs.insert(item.key.clone());
        }
    }

    let entries = parse_tag_file(tag_file)?;
    let mut tags = TagVocab::default();
    let mut table = vec![Vec::new(); songs.len()];
    let mut seen_song = vec![false; songs.len()];
    for (key, tag_names) in entries {
        let Some(song_idx) = songs.lookup(&key) else {
            continue;
        };
        if seen_song[song_idx] {
            continue; // first line wins
        }
        seen_song[song_idx] = true;
        table[song_idx] = tag_names.into_iter().map(|t| tags.insert(t)).collect();
    }

    Ok((songs, tags, TagTable::new(table)))
}

/// One example per position from the second song to the last: the target
/// is the song at that position, the prefix is the up-to-m most recent
/// in-vocabulary songs before it. Positions with an out-of-vocabulary
/// target are skipped, as are positions whose resolvable prefix is empty.
pub fn make_examples(
    session: &Session,
    m: usize,
    vocab: &SongVocab,
    tags: &TagTable,
) -> Vec<TrainingExample> {
    let resolved: Vec<Option<usize>> =
        session.items.iter().map(|it| vocab.lookup(&it.key)).collect();
    let mut examples = Vec::new();
    for i in 1..resolved.len() {
        let Some(target) = resolved[i] else {
            continue;
        };
        let prefix: Vec<usize> = resolved[..i]
            .iter()
            .filter_map(|s| *s)
            .collect();
        let start = prefix.len().saturating_sub(m);
        let prefix = prefix[start..].to_vec();
        if prefix.is_empty() {
            continue;
        }
        let prefix_tags = prefix.iter().map(|&s| tags.tags_of(s).to_vec()).collect();
        examples.push(TrainingExample { prefix, prefix_tags, target });
    }
    examples
}

/// Examples from every session, in session order.
pub fn make_examples_all(
    sessions: &[Session],
    m: usize,
    vocab: &SongVocab,
    tags: &TagTable,
) -> Vec<TrainingExample> {
    sessions
        .iter()
        .flat_map(|s| make_examples(s, m, vocab, tags))
        .collect()
}

/// Corpus statistics in the usual dataset-description schema.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub total_logs: usize,
    pub total_users: usize,
    pub total_sessions: usize,
    pub unique_songs: usize,
    pub unique_tags: usize,
    pub avg_songs_per_session: f64,
    pub avg_logs_per_user: f64,
}

/// Statistics over an ingested corpus: logs and users from the parsed
/// file, songs from the kept sessions, tags from tag-file entries of
/// those songs.
pub fn compute_stats(
    interactions: &[Interaction],
    sessions: &[Session],
    tag_entries: &[(SongKey, Vec<String>)],
) -> DatasetStats {
    let users: HashSet<&str> = interactions.iter().map(|i| i.user_id.as_str()).collect();
    let songs: HashSet<&SongKey> =
        sessions.iter().flat_map(|s| s.items.iter().map(|i| &i.key)).collect();
    let mut tags: HashSet<&str> = HashSet::new();
    let mut seen: HashSet<&SongKey> = HashSet::new();
    for (key, tag_names) in tag_entries {
        if songs.contains(key) && seen.insert(key) {
            tags.extend(tag_names.iter().map(|t| t.as_str()));
        }
    }
    let total_items: usize = sessions.iter().map(|s| s.len()).sum();
    DatasetStats {
        total_logs: interactions.len(),
        total_users: users.len(),
        total_sessions: sessions.len(),
        unique_songs: songs.len(),
        unique_tags: tags.len(),
        avg_songs_per_session: if sessions.is_empty() {
            0.0
        } else {
            total_items as f64 / sessions.len() as f64
        },
        avg_logs_per_user: if users.is_empty() {
            0.0
        } else {
            interactions.len() as f64 / users.len() as f64
        },
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total Logs                {}", self.total_logs)?;
        writeln!(f, "Total Users               {}", self.total_users)?;
        writeln!(f, "Total Sessions            {}", self.total_sessions)?;
        writeln!(f, "Total Unique Songs        {}", self.unique_songs)?;
        writeln!(f, "Total Unique Tags         {}", self.unique_tags)?;
        writeln!(f, "Average Songs Per Session {:.2}", self.avg_songs_per_session)?;
        write!(f, "Average Logs Per User     {:.2}", self.avg_logs_per_user)
    }
}
