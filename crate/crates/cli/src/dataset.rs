//! Dataset directory layout written by `ingest` and read back by the
//! other commands:
//!
//! ```text
//! sessions_train.jsonl  one JSON session per line
//! sessions_test.jsonl
//! song_vocab.json       array of {artist, track}, index = position
//! tag_vocab.json        array of tag strings, index = position
//! tag_table.json        per song index, its tag index list
//! stats.txt             corpus statistics
//! ```
//!
//! Everything is written atomically (temp file + rename) and
//! deterministically, so re-ingesting identical inputs reproduces
//! byte-identical artifacts.

use std::path::Path;

use stabr_core::checkpoint::write_atomic;
use stabr_core::data::{Session, SongKey, SongVocab, TagTable, TagVocab};
use stabr_core::{Error, Result};

pub struct Dataset {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub song_vocab: SongVocab,
    pub tag_vocab: TagVocab,
    pub tag_table: TagTable,
}

fn json_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn sessions_to_jsonl(sessions: &[Session]) -> Result<String> {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&serde_json::to_string(s).map_err(|e| Error::format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn sessions_from_jsonl(path: &Path, text: &str) -> Result<Vec<Session>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| json_err(path, e)))
        .collect()
}

pub fn write_dataset(dir: &Path, ds: &Dataset, stats_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;

    write_atomic(&dir.join("sessions_train.jsonl"), sessions_to_jsonl(&ds.train)?.as_bytes())?;
    write_atomic(&dir.join("sessions_test.jsonl"), sessions_to_jsonl(&ds.test)?.as_bytes())?;

    let songs = serde_json::to_string_pretty(ds.song_vocab.keys())
        .map_err(|e| Error::format(e.to_string()))?;
    write_atomic(&dir.join("song_vocab.json"), songs.as_bytes())?;

    let tags = serde_json::to_string_pretty(ds.tag_vocab.names())
        .map_err(|e| Error::format(e.to_string()))?;
    write_atomic(&dir.join("tag_vocab.json"), tags.as_bytes())?;

    let table = serde_json::to_string(ds.tag_table.rows())
        .map_err(|e| Error::format(e.to_string()))?;
    write_atomic(&dir.join("tag_table.json"), table.as_bytes())?;

    write_atomic(&dir.join("stats.txt"), format!("{stats_text}\n").as_bytes())?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let train_path = dir.join("sessions_train.jsonl");
    let test_path = dir.join("sessions_test.jsonl");
    let train = sessions_from_jsonl(&train_path, &read(&train_path)?)?;
    let test = sessions_from_jsonl(&test_path, &read(&test_path)?)?;

    let vocab_path = dir.join("song_vocab.json");
    let keys: Vec<SongKey> =
        serde_json::from_str(&read(&vocab_path)?).map_err(|e| json_err(&vocab_path, e))?;
    let song_vocab = SongVocab::from_keys(keys)?;

    let tags_path = dir.join("tag_vocab.json");
    let names: Vec<String> =
        serde_json::from_str(&read(&tags_path)?).map_err(|e| json_err(&tags_path, e))?;
    let tag_vocab = TagVocab::from_names(names)?;

    let table_path = dir.join("tag_table.json");
    let rows: Vec<Vec<usize>> =
        serde_json::from_str(&read(&table_path)?).map_err(|e| json_err(&table_path, e))?;
    if rows.len() != song_vocab.len() {
        return Err(Error::format(format!(
            "{}: tag table has {} rows but the song vocabulary has {}",
            table_path.display(),
            rows.len(),
            song_vocab.len()
        )));
    }
    for (song, tags) in rows.iter().enumerate() {
        if let Some(&bad) = tags.iter().find(|&&t| t >= tag_vocab.len()) {
            return Err(Error::format(format!(
                "{}: song {song} references tag {bad} outside the tag vocabulary",
                table_path.display()
            )));
        }
    }

    Ok(Dataset { train, test, song_vocab, tag_vocab, tag_table: TagTable::new(rows) })
}
