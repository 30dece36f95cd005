//! JSONL corpus ingestion and on-disk index files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ctxplain_core::retrieval::{build_index, CorpusRecord, Index};
use ctxplain_core::RetrievalError;
use thiserror::Error;

/// First line of every index file.
pub const INDEX_MAGIC: &str = "CTXPLAIN-BM25-INDEX v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not an index file (bad magic header)")]
    BadMagic(String),
    #[error("{path}: corrupt index: {message}")]
    Corrupt { path: String, message: String },
}

/// Parses one `{"id": .., "contents": ..}` object per non-blank line.
pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut records = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn index_jsonl<R: Read>(reader: R) -> Result<Index, CorpusError> {
    Ok(build_index(read_jsonl(reader)?)?)
}

pub fn index_file(path: &Path) -> Result<Index, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    index_jsonl(file)
}

pub fn save_index(index: &Index, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "{INDEX_MAGIC}").map_err(io)?;
    serde_json::to_writer(&mut out, index).map_err(|e| CorpusError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    out.flush().map_err(io)
}

pub fn load_index(path: &Path) -> Result<Index, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if header.trim_end() != INDEX_MAGIC {
        return Err(CorpusError::BadMagic(path.display().to_string()));
    }
    serde_json::from_reader(reader).map_err(|e| CorpusError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
