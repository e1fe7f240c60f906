//! Append-only per-endpoint store.
//!
//! `completions.ndjson` holds the records of fully completed cells, in commit
//! order. After a cell's records are appended, one line `cell_id \t end_offset`
//! goes to `index`; a cell counts as done only once that line is complete.
//! Opening a store trims whatever was appended after the last indexed offset,
//! so an interrupted write never leaves half a cell behind.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::modelio::{CompletionRecord, SampleFailure};

pub const COMPLETIONS_FILE: &str = "completions.ndjson";
pub const INDEX_FILE: &str = "index";
pub const FAILURES_FILE: &str = "failures.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub cell: String,
    pub failures: Vec<SampleFailure>,
}

pub struct EndpointStore {
    dir: PathBuf,
    completions: File,
    index: File,
    failures: File,
    committed: HashSet<String>,
    offset: u64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::io(path, e.to_string())
}

/// Index entries, and the byte length of the well-formed prefix.
pub(crate) fn read_index(path: &Path) -> Result<(Vec<(String, u64)>, u64), RunError> {
    let mut text = String::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_string(&mut text).map_err(io_err(path))?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(RunError::io(path, e.to_string())),
    }
    let good = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let mut entries = Vec::new();
    for (n, line) in text[..good].lines().enumerate() {
        let (id, off) = line
            .rsplit_once('\t')
            .ok_or_else(|| RunError::Store(format!("{}: line {} is malformed", path.display(), n + 1)))?;
        let off: u64 = off
            .parse()
            .map_err(|_| RunError::Store(format!("{}: line {} has a bad offset", path.display(), n + 1)))?;
        entries.push((id.to_string(), off));
    }
    Ok((entries, good as u64))
}

fn open_append(path: &Path) -> Result<File, RunError> {
    OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

/// Drops a trailing partial line.
fn trim_partial_line(path: &Path) -> Result<(), RunError> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    let good = bytes.iter().rposition(|&b| b == b'\n').map(|i| i + 1).unwrap_or(0);
    if good < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(good as u64).map_err(io_err(path))?;
    }
    Ok(())
}

impl EndpointStore {
    pub fn open(root: &Path, endpoint: &str) -> Result<EndpointStore, RunError> {
        let dir = root.join(endpoint);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let index_path = dir.join(INDEX_FILE);
        let comp_path = dir.join(COMPLETIONS_FILE);
        let fail_path = dir.join(FAILURES_FILE);

        let (entries, good) = read_index(&index_path)?;
        if index_path.exists() {
            let f = OpenOptions::new().write(true).open(&index_path).map_err(io_err(&index_path))?;
            f.set_len(good).map_err(io_err(&index_path))?;
        }
        let offset = entries.last().map(|e| e.1).unwrap_or(0);
        let completions = open_append(&comp_path)?;
        let len = completions.metadata().map_err(io_err(&comp_path))?.len();
        if len < offset {
            return Err(RunError::Store(format!(
                "{} is shorter ({len} bytes) than its index claims ({offset})",
                comp_path.display()
            )));
        }
        if len > offset {
            completions.set_len(offset).map_err(io_err(&comp_path))?;
        }
        trim_partial_line(&fail_path)?;
        Ok(EndpointStore {
            index: open_append(&index_path)?,
            failures: open_append(&fail_path)?,
            completions,
            committed: entries.into_iter().map(|e| e.0).collect(),
            offset,
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn committed(&self) -> &HashSet<String> {
        &self.committed
    }

    pub fn is_empty(&self) -> bool {
        self.committed.is_empty() && self.offset == 0
    }

    /// Appends one cell's records, then its index line.
    pub fn commit_cell(&mut self, cell_id: &str, records: &[CompletionRecord]) -> Result<(), RunError> {
        if cell_id.contains(['\t', '\n']) {
            return Err(RunError::Store(format!("cell id {cell_id:?} contains a separator")));
        }
        if self.committed.contains(cell_id) {
            return Err(RunError::Store(format!("cell {cell_id:?} is already committed")));
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        let comp_path = self.dir.join(COMPLETIONS_FILE);
        self.completions.write_all(&buf).map_err(io_err(&comp_path))?;
        self.completions.flush().map_err(io_err(&comp_path))?;
        self.offset += buf.len() as u64;
        let line = format!("{cell_id}\t{}\n", self.offset);
        let index_path = self.dir.join(INDEX_FILE);
        self.index.write_all(line.as_bytes()).map_err(io_err(&index_path))?;
        self.index.flush().map_err(io_err(&index_path))?;
        self.committed.insert(cell_id.to_string());
        Ok(())
    }

    pub fn record_failure(&mut self, cell_id: &str, failures: Vec<SampleFailure>) -> Result<(), RunError> {
        let entry = FailureEntry {
            cell: cell_id.to_string(),
            failures,
        };
        let mut line = serde_json::to_vec(&entry).expect("failure serializes");
        line.push(b'\n');
        let path = self.dir.join(FAILURES_FILE);
        self.failures.write_all(&line).map_err(io_err(&path))?;
        self.failures.flush().map_err(io_err(&path))
    }
}

/// Records of committed cells, ignoring any uncommitted tail. Read-only.
pub fn read_records(root: &Path, endpoint: &str) -> Result<Vec<CompletionRecord>, RunError> {
    let dir = root.join(endpoint);
    let (entries, _) = read_index(&dir.join(INDEX_FILE))?;
    let limit = entries.last().map(|e| e.1).unwrap_or(0);
    let path = dir.join(COMPLETIONS_FILE);
    if limit == 0 {
        return Ok(Vec::new());
    }
    let mut f = File::open(&path).map_err(io_err(&path))?;
    f.seek(SeekFrom::Start(0)).map_err(io_err(&path))?;
    let reader = BufReader::new(f.take(limit));
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        let rec: CompletionRecord = serde_json::from_str(&line)
            .map_err(|e| RunError::Store(format!("{}: line {}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Failure log entries for one endpoint.
pub fn read_failures(root: &Path, endpoint: &str) -> Result<Vec<FailureEntry>, RunError> {
    let path = root.join(endpoint).join(FAILURES_FILE);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(Vec::new());
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| RunError::Store(format!("{}: {e}", path.display()))))
        .collect()
}
