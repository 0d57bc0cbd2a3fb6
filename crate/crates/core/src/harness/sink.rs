//! Append-only result logs.
//!
//! The on-disk form is JSON Lines. Every line is either a result or a
//! checkpoint record:
//!
//! ```text
//! {"type":"result","id":7341456348594310401,"status":"item_not_exist","fetched_at":1712768400}
//! {"type":"checkpoint","completed":10000}
//! ```
//!
//! Results appear in candidate order. On resume, everything after the last
//! checkpoint record is discarded and refetched, so an interrupted run ends
//! byte-identical to an uninterrupted one. A run stopped early on purpose
//! ends with a `pause` record instead; resume keeps the results before it and
//! drops the record itself.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FetchResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SinkRecord {
    Result(FetchResult),
    Checkpoint { completed: u64 },
    /// Written only as the last line of a deliberately stopped run.
    Pause { completed: u64 },
}

/// Destination for fetch results, owned by a single aggregator.
pub trait ResultSink {
    fn write(&mut self, result: &FetchResult) -> io::Result<()>;

    /// Durably mark the first `completed` candidates as done.
    fn checkpoint(&mut self, completed: u64) -> io::Result<()>;

    /// Mark a deliberate stop after `completed` candidates. Unlike a
    /// checkpoint this does not change the finished log.
    fn pause(&mut self, completed: u64) -> io::Result<()> {
        self.checkpoint(completed)
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct MemorySink {
    pub results: Vec<FetchResult>,
    pub checkpoints: Vec<u64>,
    pub pauses: Vec<u64>,
}

impl ResultSink for MemorySink {
    fn write(&mut self, result: &FetchResult) -> io::Result<()> {
        self.results.push(result.clone());
        Ok(())
    }

    fn checkpoint(&mut self, completed: u64) -> io::Result<()> {
        self.checkpoints.push(completed);
        Ok(())
    }

    fn pause(&mut self, completed: u64) -> io::Result<()> {
        self.pauses.push(completed);
        Ok(())
    }
}

/// JSONL file sink.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
    completed: u64,
}

impl JsonlSink {
    /// Start a fresh log, truncating any existing file.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        Ok(Self { path, out: BufWriter::with_capacity(1 << 20, file), completed: 0 })
    }

    /// Reopen an existing log (or create one) and cut it back to its last
    /// checkpoint. [`completed`](Self::completed) tells the caller how many
    /// candidates to skip.
    pub fn resume(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
        let (offset, completed) = last_checkpoint(&mut file)?;
        file.set_len(offset)?;
        file.seek(SeekFrom::Start(offset))?;
        Ok(Self { path, out: BufWriter::with_capacity(1 << 20, file), completed })
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Byte offset to truncate to on resume, and the completed count there: just
/// past the last checkpoint, or just before a trailing pause.
fn last_checkpoint(file: &mut File) -> io::Result<(u64, u64)> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&mut *file);
    let mut line = Vec::new();
    let (mut offset, mut best) = (0u64, (0u64, 0u64));
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let line_start = offset;
        offset += n as u64;
        if line.last() != Some(&b'\n') {
            break;
        }
        match serde_json::from_slice(&line) {
            Ok(SinkRecord::Checkpoint { completed }) => best = (offset, completed),
            Ok(SinkRecord::Pause { completed }) => best = (line_start, completed),
            _ => {}
        }
    }
    Ok(best)
}

impl ResultSink for JsonlSink {
    fn write(&mut self, result: &FetchResult) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &ResultLine(result))?;
        self.out.write_all(b"\n")
    }

    fn checkpoint(&mut self, completed: u64) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &SinkRecord::Checkpoint { completed })?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.completed = completed;
        Ok(())
    }

    fn pause(&mut self, completed: u64) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &SinkRecord::Pause { completed })?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.completed = completed;
        Ok(())
    }
}

/// Borrowing twin of `SinkRecord::Result` to avoid a clone per line.
struct ResultLine<'a>(&'a FetchResult);

impl Serialize for ResultLine<'_> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Tagged<'a> {
            #[serde(rename = "type")]
            kind: &'static str,
            #[serde(flatten)]
            result: &'a FetchResult,
        }
        Tagged { kind: "result", result: self.0 }.serialize(serializer)
    }
}

/// Stream the result records of a JSONL log, skipping checkpoints. A torn
/// final line is ignored.
pub fn read_results(path: impl AsRef<Path>) -> io::Result<impl Iterator<Item = io::Result<FetchResult>>> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.split(b'\n').filter_map(|line| match line {
        Err(e) => Some(Err(e)),
        Ok(bytes) if bytes.is_empty() => None,
        Ok(bytes) => match serde_json::from_slice::<SinkRecord>(&bytes) {
            Ok(SinkRecord::Result(r)) => Some(Ok(r)),
            Ok(SinkRecord::Checkpoint { .. } | SinkRecord::Pause { .. }) => None,
            Err(e) if e.is_eof() => None,
            Err(e) => Some(Err(io::Error::new(io::ErrorKind::InvalidData, e))),
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::FetchStatus;

    fn result(id: u64) -> FetchResult {
        FetchResult {
            id,
            status: FetchStatus::ItemNotExist,
            fetched_at: 100,
            metadata: None,
            raw_statuses: Vec::new(),
        }
    }

    #[test]
    fn line_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sink.jsonl");
        let mut sink = JsonlSink::create(&path).unwrap();
        sink.write(&result(7)).unwrap();
        sink.checkpoint(1).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "{\"type\":\"result\",\"id\":7,\"status\":\"item_not_exist\",\"fetched_at\":100}\n{\"type\":\"checkpoint\",\"completed\":1}\n"
        );
        let back: Vec<FetchResult> = read_results(&path).unwrap().collect::<io::Result<_>>().unwrap();
        assert_eq!(back, vec![result(7)]);
    }

    #[test]
    fn resume_truncates_to_last_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sink.jsonl");
        {
            let mut sink = JsonlSink::create(&path).unwrap();
            sink.write(&result(1)).unwrap();
            sink.write(&result(2)).unwrap();
            sink.checkpoint(2).unwrap();
            sink.write(&result(3)).unwrap();
            sink.flush().unwrap();
        }
        // Torn trailing write.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"type\":\"result\",\"id\":4,\"sta").unwrap();
        drop(f);

        let sink = JsonlSink::resume(&path).unwrap();
        assert_eq!(sink.completed(), 2);
        drop(sink);
        let ids: Vec<u64> = read_results(&path).unwrap().map(|r| r.unwrap().id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn resume_drops_trailing_pause() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sink.jsonl");
        let mut sink = JsonlSink::create(&path).unwrap();
        sink.write(&result(1)).unwrap();
        sink.checkpoint(1).unwrap();
        sink.write(&result(2)).unwrap();
        sink.pause(2).unwrap();
        drop(sink);
        let before = std::fs::read_to_string(&path).unwrap();
        assert!(before.ends_with("{\"type\":\"pause\",\"completed\":2}\n"));

        let mut sink = JsonlSink::resume(&path).unwrap();
        assert_eq!(sink.completed(), 2);
        sink.write(&result(3)).unwrap();
        sink.checkpoint(3).unwrap();
        drop(sink);
        let after = std::fs::read_to_string(&path).unwrap();
        assert!(!after.contains("pause"));
        let ids: Vec<u64> = read_results(&path).unwrap().map(|r| r.unwrap().id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn resume_of_missing_file_starts_empty() {
        let dir = tempfile::tempdir().unwrap();
        let sink = JsonlSink::resume(dir.path().join("new.jsonl")).unwrap();
        assert_eq!(sink.completed(), 0);
    }
}
