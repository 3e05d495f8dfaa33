//! Line-delimited document files: a compacted snapshot plus a write-ahead
//! append log. Both start with a `{"format": ...}` header line and hold one
//! canonical document per line.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde_json::json;
use thiserror::Error;

use crate::document::{canonical_string, Document};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JournalError + '_ {
    move |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn header(format: &str) -> String {
    canonical_string(&json!({ "format": format }))
}

/// Writes a complete document file, replacing `path` atomically via rename.
pub fn write_document_file<'a>(
    path: &Path,
    format: &str,
    docs: impl IntoIterator<Item = &'a Document>,
) -> Result<(), JournalError> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", header(format)).map_err(io_err(&tmp))?;
        for doc in docs {
            writeln!(out, "{}", canonical_string(doc)).map_err(io_err(&tmp))?;
        }
        let file = out.into_inner().map_err(|e| io_err(&tmp)(e.into_error()))?;
        file.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a document file written by [`write_document_file`] or a journal.
///
/// With `tolerate_torn_tail`, a final line lacking its newline that fails to
/// parse is dropped (a crash mid-append); any other defect rejects the file.
pub fn read_document_file(
    path: &Path,
    format: &str,
    tolerate_torn_tail: bool,
) -> Result<Vec<Document>, JournalError> {
    let malformed = |reason: String| JournalError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut docs = Vec::new();
    let mut line = String::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(io_err(path))?;
        if read == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        let text = line.trim_end_matches(['\n', '\r']);
        if lineno == 1 {
            let doc: Document =
                serde_json::from_str(text).map_err(|e| malformed(format!("bad header: {e}")))?;
            if !complete || doc.get("format").and_then(Document::as_str) != Some(format) {
                return Err(malformed(format!("expected header for format `{format}`")));
            }
            continue;
        }
        match serde_json::from_str::<Document>(text) {
            Ok(doc) if complete => docs.push(doc),
            Ok(_) | Err(_) if !complete && tolerate_torn_tail => break,
            Ok(_) => return Err(malformed(format!("line {lineno} is truncated"))),
            Err(e) => return Err(malformed(format!("line {lineno}: {e}"))),
        }
    }
    if lineno == 0 {
        return Err(malformed("missing header".into()));
    }
    Ok(docs)
}

/// What [`Journal::open`] found on disk.
#[derive(Debug, Default)]
pub struct Recovered {
    pub snapshot: Vec<Document>,
    pub log: Vec<Document>,
}

/// A snapshot file and its append log, `<stem>.snapshot` and `<stem>.wal`.
#[derive(Debug)]
pub struct Journal {
    snapshot_path: PathBuf,
    wal_path: PathBuf,
    format: &'static str,
    wal: Mutex<BufWriter<File>>,
    sync: bool,
}

impl Journal {
    /// Opens (creating if needed) the journal and returns its recovered contents.
    /// When `sync` is set every append is fsynced, otherwise only flushed to the OS.
    pub fn open(
        dir: &Path,
        stem: &str,
        format: &'static str,
        sync: bool,
    ) -> Result<(Self, Recovered), JournalError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snapshot_path = dir.join(format!("{stem}.snapshot"));
        let wal_path = dir.join(format!("{stem}.wal"));

        let mut recovered = Recovered::default();
        if snapshot_path.exists() {
            recovered.snapshot = read_document_file(&snapshot_path, format, false)?;
        }
        let wal_exists =
            wal_path.exists() && fs::metadata(&wal_path).map_err(io_err(&wal_path))?.len() > 0;
        if wal_exists {
            recovered.log = read_document_file(&wal_path, format, true)?;
        }
        // rewrite the log so a torn tail never precedes new appends
        write_document_file(&wal_path, format, &recovered.log)?;
        let file = OpenOptions::new()
            .append(true)
            .open(&wal_path)
            .map_err(io_err(&wal_path))?;
        Ok((
            Self {
                snapshot_path,
                wal_path,
                format,
                wal: Mutex::new(BufWriter::new(file)),
                sync,
            },
            recovered,
        ))
    }

    pub fn append(&self, doc: &Document) -> Result<(), JournalError> {
        let mut wal = self.wal.lock();
        let line = canonical_string(doc);
        writeln!(wal, "{line}").map_err(io_err(&self.wal_path))?;
        wal.flush().map_err(io_err(&self.wal_path))?;
        if self.sync {
            wal.get_ref().sync_data().map_err(io_err(&self.wal_path))?;
        }
        Ok(())
    }

    /// Replaces the snapshot with `docs` and empties the log. Callers must
    /// exclude concurrent appends.
    pub fn compact<'a>(
        &self,
        docs: impl IntoIterator<Item = &'a Document>,
    ) -> Result<(), JournalError> {
        let mut wal = self.wal.lock();
        wal.flush().map_err(io_err(&self.wal_path))?;
        write_document_file(&self.snapshot_path, self.format, docs)?;
        write_document_file(&self.wal_path, self.format, std::iter::empty())?;
        let file = OpenOptions::new()
            .append(true)
            .open(&self.wal_path)
            .map_err(io_err(&self.wal_path))?;
        *wal = BufWriter::new(file);
        Ok(())
    }
}
