//! Versioned binary checkpoints holding everything needed to reload a
//! trained model: hyperparameters, both vocabularies and every parameter
//! matrix. All integers are u64 little-endian, all floats f64
//! little-endian, all strings UTF-8 with a u64 byte-length prefix.
//!
//! Byte layout, version 1:
//!
//! ```text
//! magic        8 bytes  "SNGRCKPT"
//! version      u32      currently 1
//! kind         u8       0 = sabr, 1 = stabr, 2 = rnn
//! hyper        8 x u64  song_vocab, tag_vocab, song_dim, tag_dim,
//!                       song_hidden, tag_hidden, bottleneck, history
//! dropout      f64
//! song vocab   u64 count, then per song: string artist, string track
//! tag vocab    u64 count, then per tag: string
//! param blocks u64 count, then per block:
//!              string name, u64 rows, u64 cols, rows*cols x f64
//! ```
//!
//! Blocks appear in the canonical `ParamBlocks` order and are verified by
//! name and shape on load. Writes go through a temp file and rename, so
//! a failed save never leaves a partial checkpoint behind.

use std::fs;
use std::path::Path;

use crate::baselines::{RnnHyper, RnnParams};
use crate::data::{SongKey, SongVocab, TagVocab};
use crate::error::{Error, Result};
use crate::model::{ModelHyper, ModelKind, ModelParams};
use crate::numerics::Matrix;
use crate::params::ParamBlocks;

const MAGIC: &[u8; 8] = b"SNGRCKPT";
pub const FORMAT_VERSION: u32 = 1;

const KIND_SABR: u8 = 0;
const KIND_STABR: u8 = 1;
const KIND_RNN: u8 = 2;

/// The model stored in a checkpoint.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum SavedModel {
    Attentive(ModelParams),
    Rnn(RnnParams),
}

impl SavedModel {
    pub fn name(&self) -> &'static str {
        match self {
            SavedModel::Attentive(p) => p.kind().name(),
            SavedModel::Rnn(_) => "rnn",
        }
    }
}

/// A complete checkpoint: model parameters plus the vocabularies they
/// are indexed against.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SavedModel,
    pub song_vocab: SongVocab,
    pub tag_vocab: TagVocab,
}

/// Write bytes to a temp file in the target directory, then rename into
/// place. No partial artifacts on failure.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::argument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", tmp.display()))))?;
    fs::rename(&tmp, path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn matrix(&mut self, name: &str, m: &Matrix) {
        self.string(name);
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &v in m.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::checkpoint(format!(
                "truncated checkpoint while reading {what} at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .map_err(|_| Error::checkpoint(format!("{what} value {v} does not fit in usize")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.usize(what)?;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);

        let (kind, hyper, dropout): (u8, [u64; 8], f64) = match &self.model {
            SavedModel::Attentive(p) => {
                let h = &p.hyper;
                (
                    match p.kind() {
                        ModelKind::Sabr => KIND_SABR,
                        ModelKind::Stabr => KIND_STABR,
                    },
                    [
                        h.song_vocab as u64,
                        h.tag_vocab as u64,
                        h.song_dim as u64,
                        h.tag_dim as u64,
                        h.song_hidden as u64,
                        h.tag_hidden as u64,
                        h.bottleneck as u64,
                        h.history as u64,
                    ],
                    h.dropout,
                )
            }
            SavedModel::Rnn(p) => {
                let h = &p.hyper;
                (
                    KIND_RNN,
                    [h.vocab as u64, 0, h.dim as u64, 0, h.hidden as u64, 0, 0, h.history as u64],
                    0.0,
                )
            }
        };
        w.buf.push(kind);
        for v in hyper {
            w.u64(v);
        }
        w.f64(dropout);

        w.u64(self.song_vocab.len() as u64);
        for key in self.song_vocab.keys() {
            w.string(&key.artist);
            w.string(&key.track);
        }
        w.u64(self.tag_vocab.len() as u64);
        for name in self.tag_vocab.names() {
            w.string(name);
        }

        let (blocks, names) = match &self.model {
            SavedModel::Attentive(p) => (p.blocks(), p.block_names()),
            SavedModel::Rnn(p) => (p.blocks(), p.block_names()),
        };
        w.u64(blocks.len() as u64);
        for (name, block) in names.iter().zip(blocks) {
            w.matrix(name, block);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::checkpoint("bad magic; not a checkpoint file".to_string()));
        }
        let version = r.u32("version")?;
        if version > FORMAT_VERSION {
            return Err(Error::checkpoint(format!(
                "checkpoint format version {version} is newer than supported version {FORMAT_VERSION}"
            )));
        }
        let kind = r.u8("model kind")?;
        let mut hyper = [0u64; 8];
        for (i, slot) in hyper.iter_mut().enumerate() {
            *slot = r.u64(&format!("hyperparameter {i}"))?;
        }
        let dropout = r.f64("dropout")?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::checkpoint(format!("dropout {dropout} out of range")));
        }

        let n_songs = r.usize("song vocabulary size")?;
        let mut keys = Vec::with_capacity(n_songs.min(1 << 20));
        for i in 0..n_songs {
            let artist = r.string(&format!("song {i} artist"))?;
            let track = r.string(&format!("song {i} track"))?;
            keys.push(SongKey { artist, track });
        }
        let song_vocab = SongVocab::from_keys(keys)
            .map_err(|e| Error::checkpoint(format!("invalid song vocabulary: {e}")))?;

        let n_tags = r.usize("tag vocabulary size")?;
        let mut names = Vec::with_capacity(n_tags.min(1 << 20));
        for i in 0..n_tags {
            names.push(r.string(&format!("tag {i}"))?);
        }
        let tag_vocab = TagVocab::from_names(names)
            .map_err(|e| Error::checkpoint(format!("invalid tag vocabulary: {e}")))?;

        // assemble an empty parameter set of the declared geometry, then
        // fill its blocks in canonical order
        let mut model = match kind {
            KIND_SABR | KIND_STABR => {
                let h = ModelHyper {
                    song_vocab: hyper[0] as usize,
                    tag_vocab: hyper[1] as usize,
                    song_dim: hyper[2] as usize,
                    tag_dim: hyper[3] as usize,
                    song_hidden: hyper[4] as usize,
                    tag_hidden: hyper[5] as usize,
                    bottleneck: hyper[6] as usize,
                    dropout,
                    history: hyper[7] as usize,
                };
                let mk = if kind == KIND_SABR { ModelKind::Sabr } else { ModelKind::Stabr };
                SavedModel::Attentive(ModelParams::new(mk, h, 0).zeros_like())
            }
            KIND_RNN => {
                let h = RnnHyper {
                    vocab: hyper[0] as usize,
                    dim: hyper[2] as usize,
                    hidden: hyper[4] as usize,
                    history: hyper[7] as usize,
                };
                SavedModel::Rnn(RnnParams::new(h, 0).zeros_like())
            }
            other => {
                return Err(Error::checkpoint(format!("unknown model kind {other}")));
            }
        };

        if song_vocab.len()
            != match &model {
                SavedModel::Attentive(p) => p.hyper.song_vocab,
                SavedModel::Rnn(p) => p.hyper.vocab,
            }
        {
            return Err(Error::checkpoint(format!(
                "song vocabulary has {} entries but the model expects {}",
                song_vocab.len(),
                match &model {
                    SavedModel::Attentive(p) => p.hyper.song_vocab,
                    SavedModel::Rnn(p) => p.hyper.vocab,
                }
            )));
        }

        let n_blocks = r.usize("block count")?;
        let (expected_names, mut blocks) = match &mut model {
            SavedModel::Attentive(p) => (p.block_names(), p.blocks_mut()),
            SavedModel::Rnn(p) => (p.block_names(), p.blocks_mut()),
        };
        if n_blocks != blocks.len() {
            return Err(Error::checkpoint(format!(
                "checkpoint has {n_blocks} parameter blocks but the model expects {}",
                blocks.len()
            )));
        }
        for (expected, block) in expected_names.iter().zip(blocks.iter_mut()) {
            let name = r.string("block name")?;
            if &name != expected {
                return Err(Error::checkpoint(format!(
                    "parameter block '{name}' where '{expected}' was expected"
                )));
            }
            let rows = r.usize(&format!("{name} rows"))?;
            let cols = r.usize(&format!("{name} cols"))?;
            if (rows, cols) != block.shape() {
                return Err(Error::checkpoint(format!(
                    "block '{name}' has shape {rows}x{cols} but the model expects {}x{}",
                    block.shape().0,
                    block.shape().1
                )));
            }
            let raw = r.take(rows * cols * 8, &format!("{name} data"))?;
            for (dst, chunk) in block.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            if !block.is_finite() {
                return Err(Error::checkpoint(format!("block '{name}' contains non-finite values")));
            }
        }
        if !r.done() {
            return Err(Error::checkpoint(format!(
                "{} trailing bytes after the last parameter block",
                bytes.len() - r.pos
            )));
        }

        Ok(Checkpoint { model, song_vocab, tag_vocab })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn demo_vocabs(n_songs: usize, n_tags: usize) -> (SongVocab, TagVocab) {
        let songs = SongVocab::from_keys(
            (0..n_songs).map(|i| SongKey::new("Artist", &format!("Track {i}"))).collect(),
        )
        .unwrap();
        let tags =
            TagVocab::from_names((0..n_tags).map(|i| format!("tag{i}")).collect()).unwrap();
        (songs, tags)
    }

    fn demo_checkpoint(kind: ModelKind) -> Checkpoint {
        let hyper = ModelHyper {
            song_vocab: 6,
            tag_vocab: 4,
            song_dim: 3,
            tag_dim: 2,
            song_hidden: 2,
            tag_hidden: 2,
            bottleneck: 3,
            dropout: 0.1,
            history: 7,
        };
        let (song_vocab, tag_vocab) = demo_vocabs(6, 4);
        Checkpoint {
            model: SavedModel::Attentive(ModelParams::new(kind, hyper, 99)),
            song_vocab,
            tag_vocab,
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        for kind in [ModelKind::Sabr, ModelKind::Stabr] {
            let ck = demo_checkpoint(kind);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            // save -> load -> save is byte-identical
            assert_eq!(bytes, back.to_bytes());
            let (SavedModel::Attentive(a), SavedModel::Attentive(b)) = (&ck.model, &back.model)
            else {
                panic!("kind changed");
            };
            assert_eq!(a.hyper, b.hyper);
            assert_eq!(a.blocks().len(), b.blocks().len());
            for (x, y) in a.blocks().iter().zip(b.blocks()) {
                assert_eq!(x.data(), y.data());
            }
            assert_eq!(ck.song_vocab.keys(), back.song_vocab.keys());
            assert_eq!(ck.tag_vocab.names(), back.tag_vocab.names());
        }
    }

    #[test]
    fn rnn_roundtrip() {
        let (song_vocab, tag_vocab) = demo_vocabs(5, 0);
        let ck = Checkpoint {
            model: SavedModel::Rnn(RnnParams::new(
                RnnHyper { vocab: 5, dim: 3, hidden: 4, history: 10 },
                7,
            )),
            song_vocab,
            tag_vocab,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, back.to_bytes());
        let SavedModel::Rnn(p) = &back.model else { panic!("kind changed") };
        assert_eq!(p.hyper, RnnHyper { vocab: 5, dim: 3, hidden: 4, history: 10 });
    }

    #[test]
    fn corrupted_and_mismatched_checkpoints_fail_loudly() {
        let ck = demo_checkpoint(ModelKind::Stabr);
        let bytes = ck.to_bytes();

        // bad magic
        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));

        // future version
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(err.contains("newer"), "{err}");

        // truncated
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() / 2]),
            Err(Error::Checkpoint(_))
        ));

        // trailing garbage
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));

        // unknown kind
        let mut bad = bytes.clone();
        bad[12] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn save_and_load_files_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = demo_checkpoint(ModelKind::Sabr);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.to_bytes(), back.to_bytes());
        // no temp litter
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let a = demo_checkpoint(ModelKind::Stabr).to_bytes();
        let b = demo_checkpoint(ModelKind::Stabr).to_bytes();
        assert_eq!(a, b);
        let mut rng = Rng::new(1);
        let _ = rng.next_u64();
        let c = demo_checkpoint(ModelKind::Stabr).to_bytes();
        assert_eq!(a, c);
    }
}
