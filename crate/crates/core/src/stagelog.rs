//! Publisher and sink stage logs.
//!
//! Both are CSV files with a metadata line first:
//!
//! ```text
//! # clock=wall-monotonic session_start_ms=1760000000000.000
//! seq,t_sensor_ms,t_rms_ms,t_publish_ms
//! 0,1760000000000.000,1760000000000.412,1760000000000.430
//! ```
//!
//! Later `#` lines are trailers (e.g. `# partial error=...`) and are not data.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::clock::{ClockSource, Micros};

/// Logs are flushed after this many appended rows.
pub const FLUSH_EVERY: usize = 64;

pub const PUBLISH_COLUMNS: &str = "seq,t_sensor_ms,t_rms_ms,t_publish_ms";
pub const SINK_COLUMNS: &str = "seq,t_recv_ms,t_pre_update_ms,t_render_ms";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl LogError {
    fn parse(line: usize, msg: impl Into<String>) -> Self {
        LogError::Parse { line, msg: msg.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogHeader {
    pub clock: ClockSource,
    pub session_start: Micros,
}

impl LogHeader {
    pub fn render(&self) -> String {
        format!("# clock={} session_start_ms={}", self.clock, self.session_start)
    }

    pub fn parse(line: &str) -> Result<Self, LogError> {
        let body = line
            .strip_prefix('#')
            .ok_or_else(|| LogError::parse(1, "expected '# clock=... session_start_ms=...' header"))?;
        let mut clock = None;
        let mut start = None;
        for field in body.split_whitespace() {
            match field.split_once('=') {
                Some(("clock", v)) => clock = Some(v.parse::<ClockSource>().map_err(|e| LogError::parse(1, e))?),
                Some(("session_start_ms", v)) => {
                    start = Some(Micros::parse_ms(v).ok_or_else(|| LogError::parse(1, "bad session_start_ms"))?)
                }
                _ => {}
            }
        }
        Ok(Self {
            clock: clock.ok_or_else(|| LogError::parse(1, "header lacks clock="))?,
            session_start: start.ok_or_else(|| LogError::parse(1, "header lacks session_start_ms="))?,
        })
    }
}

/// A row type stored in a stage log.
pub trait LogRow: Sized {
    const COLUMNS: &'static str;
    fn seq(&self) -> u64;
    fn render(&self) -> String;
    fn parse(fields: &[&str], line: usize) -> Result<Self, LogError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishLogEntry {
    pub seq: u64,
    pub t_sensor: Micros,
    pub t_rms: Micros,
    pub t_publish: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkLogEntry {
    pub seq: u64,
    pub t_recv: Micros,
    pub t_pre_update: Micros,
    pub t_render: Micros,
}

fn parse_row4(fields: &[&str], line: usize) -> Result<(u64, [Micros; 3]), LogError> {
    if fields.len() != 4 {
        return Err(LogError::parse(line, format!("expected 4 columns, found {}", fields.len())));
    }
    let seq = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|_| LogError::parse(line, format!("bad seq {:?}", fields[0])))?;
    let mut ts = [Micros::ZERO; 3];
    for (slot, f) in ts.iter_mut().zip(&fields[1..]) {
        *slot = Micros::parse_ms(f).ok_or_else(|| LogError::parse(line, format!("bad timestamp {f:?}")))?;
    }
    Ok((seq, ts))
}

impl LogRow for PublishLogEntry {
    const COLUMNS: &'static str = PUBLISH_COLUMNS;

    fn seq(&self) -> u64 {
        self.seq
    }

    fn render(&self) -> String {
        format!("{},{},{},{}", self.seq, self.t_sensor, self.t_rms, self.t_publish)
    }

    fn parse(fields: &[&str], line: usize) -> Result<Self, LogError> {
        let (seq, [t_sensor, t_rms, t_publish]) = parse_row4(fields, line)?;
        Ok(Self {
            seq,
            t_sensor,
            t_rms,
            t_publish,
        })
    }
}

impl LogRow for SinkLogEntry {
    const COLUMNS: &'static str = SINK_COLUMNS;

    fn seq(&self) -> u64 {
        self.seq
    }

    fn render(&self) -> String {
        format!("{},{},{},{}", self.seq, self.t_recv, self.t_pre_update, self.t_render)
    }

    fn parse(fields: &[&str], line: usize) -> Result<Self, LogError> {
        let (seq, [t_recv, t_pre_update, t_render]) = parse_row4(fields, line)?;
        Ok(Self {
            seq,
            t_recv,
            t_pre_update,
            t_render,
        })
    }
}

/// A parsed log: header, rows in file order, and any trailer notes.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog<R> {
    pub header: LogHeader,
    pub entries: Vec<R>,
    pub trailers: Vec<String>,
}

impl<R> StageLog<R> {
    pub fn is_partial(&self) -> bool {
        self.trailers.iter().any(|t| t.starts_with("partial"))
    }
}

pub type PublishLog = StageLog<PublishLogEntry>;
pub type SinkLog = StageLog<SinkLogEntry>;

impl<R: LogRow> StageLog<R> {
    pub fn parse_str(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines();
        let header = LogHeader::parse(lines.next().ok_or_else(|| LogError::parse(1, "empty log"))?)?;
        match lines.next() {
            Some(cols) if cols.trim() == R::COLUMNS => {}
            Some(cols) => return Err(LogError::parse(2, format!("expected columns {:?}, found {cols:?}", R::COLUMNS))),
            None => return Err(LogError::parse(2, "missing column line")),
        }
        let mut entries = Vec::new();
        let mut trailers = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 3;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(note) = line.strip_prefix('#') {
                trailers.push(note.trim().to_string());
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            entries.push(R::parse(&fields, line_no)?);
        }
        Ok(Self {
            header,
            entries,
            trailers,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.render());
        out.push('\n');
        out.push_str(R::COLUMNS);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&e.render());
            out.push('\n');
        }
        for t in &self.trailers {
            out.push_str("# ");
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

/// Append-only log writer that flushes every [`FLUSH_EVERY`] rows.
pub struct LogWriter<R> {
    out: Box<dyn Write + Send>,
    path: PathBuf,
    unflushed: usize,
    rows: usize,
    _row: std::marker::PhantomData<fn(R)>,
}

impl<R: LogRow> LogWriter<R> {
    pub fn create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|source| LogError::Io {
            path: path.clone(),
            source,
        })?;
        Self::from_writer(Box::new(BufWriter::new(file)), path, header)
    }

    pub fn from_writer(out: Box<dyn Write + Send>, path: PathBuf, header: LogHeader) -> Result<Self, LogError> {
        let mut w = Self {
            out,
            path,
            unflushed: 0,
            rows: 0,
            _row: std::marker::PhantomData,
        };
        let head = format!("{}\n{}\n", header.render(), R::COLUMNS);
        w.write_raw(&head)?;
        w.flush()?;
        Ok(w)
    }

    pub fn append(&mut self, row: &R) -> Result<(), LogError> {
        let mut line = row.render();
        line.push('\n');
        self.write_raw(&line)?;
        self.rows += 1;
        self.unflushed += 1;
        if self.unflushed >= FLUSH_EVERY {
            self.flush()?;
        }
        Ok(())
    }

    /// Writes a `# <note>` trailer line and flushes.
    pub fn note(&mut self, note: &str) -> Result<(), LogError> {
        self.write_raw(&format!("# {note}\n"))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.unflushed = 0;
        self.out.flush().map_err(|source| LogError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn write_raw(&mut self, s: &str) -> Result<(), LogError> {
        self.out.write_all(s.as_bytes()).map_err(|source| LogError::Io {
            path: self.path.clone(),
            source,
        })
    }
}
