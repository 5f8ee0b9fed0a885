use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatagenError, PairOutcome};
use crate::corpus::PairRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Translated,
    Failed,
}

/// One finished record as persisted in the checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub status: Status,
    pub record: PairRecord,
}

impl JournalEntry {
    pub fn from_outcome(o: &PairOutcome) -> Self {
        Self {
            status: if o.failure.is_none() { Status::Translated } else { Status::Failed },
            record: o.record.clone(),
        }
    }
}

/// Checkpoint of finished records.
///
/// The checkpoint path itself lists completed ids, one per line. The
/// finished records live next to it in `<checkpoint>.records.jsonl`. A
/// record is written before its id, so every listed id has a record;
/// after a crash any torn final line is ignored on resume.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    ids: File,
    records: File,
    completed: HashMap<String, JournalEntry>,
}

pub fn records_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_os_string();
    name.push(".records.jsonl");
    PathBuf::from(name)
}

// Complete lines of `path` and the byte length they cover.
fn read_lines(path: &Path) -> std::io::Result<(Vec<Vec<u8>>, u64)> {
    if !path.exists() {
        return Ok((Vec::new(), 0));
    }
    let mut reader = BufReader::new(File::open(path)?);
    let (mut lines, mut good) = (Vec::new(), 0u64);
    loop {
        let mut buf = Vec::new();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 || buf.last() != Some(&b'\n') {
            break;
        }
        good += n as u64;
        buf.pop();
        lines.push(buf);
    }
    Ok((lines, good))
}

fn truncate_to(path: &Path, len: u64) -> std::io::Result<()> {
    if path.exists() && std::fs::metadata(path)?.len() > len {
        log::warn!("{}: discarding incomplete tail after byte {len}", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(len)?;
    }
    Ok(())
}

impl Journal {
    /// Opens a checkpoint. Without `resume` any existing files are truncated.
    pub fn open(path: impl AsRef<Path>, resume: bool) -> Result<Self, DatagenError> {
        let path = path.as_ref().to_path_buf();
        let rpath = records_path(&path);
        let err = |p: &Path, e: std::io::Error| DatagenError::Journal {
            path: p.to_path_buf(),
            message: e.to_string(),
        };
        let mut completed = HashMap::new();
        if resume {
            let (id_lines, id_len) = read_lines(&path).map_err(|e| err(&path, e))?;
            let (rec_lines, rec_len) = read_lines(&rpath).map_err(|e| err(&rpath, e))?;
            truncate_to(&path, id_len).map_err(|e| err(&path, e))?;
            truncate_to(&rpath, rec_len).map_err(|e| err(&rpath, e))?;
            let mut entries = HashMap::new();
            for (i, line) in rec_lines.iter().enumerate() {
                let e: JournalEntry = serde_json::from_slice(line).map_err(|e| DatagenError::Journal {
                    path: rpath.clone(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                entries.insert(e.record.id.clone(), e);
            }
            for line in id_lines {
                let id = String::from_utf8_lossy(&line).trim().to_string();
                if id.is_empty() {
                    continue;
                }
                match entries.remove(&id) {
                    Some(e) => {
                        completed.insert(id, e);
                    }
                    None => log::warn!("{}: id {id:?} has no stored record, will redo", path.display()),
                }
            }
        }
        let open = |p: &Path| {
            if resume {
                OpenOptions::new().create(true).append(true).open(p)
            } else {
                File::create(p)
            }
            .map_err(|e| err(p, e))
        };
        let ids = open(&path)?;
        let records = open(&rpath)?;
        if !completed.is_empty() {
            log::info!("{}: resuming with {} finished records", path.display(), completed.len());
        }
        Ok(Self {
            path,
            ids,
            records,
            completed,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self) -> &HashMap<String, JournalEntry> {
        &self.completed
    }

    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), DatagenError> {
        let mut line = serde_json::to_vec(entry).expect("entries serialize");
        line.push(b'\n');
        let rpath = records_path(&self.path);
        self.records
            .write_all(&line)
            .and_then(|_| self.records.flush())
            .map_err(|e| DatagenError::Journal {
                path: rpath,
                message: e.to_string(),
            })?;
        writeln!(self.ids, "{}", entry.record.id)
            .and_then(|_| self.ids.flush())
            .map_err(|e| DatagenError::Journal {
                path: self.path.clone(),
                message: e.to_string(),
            })?;
        self.completed.insert(entry.record.id.clone(), entry.clone());
        Ok(())
    }
}
