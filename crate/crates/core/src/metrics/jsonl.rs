//! JSON-lines metrics files: a header line, task and event lines in
//! emission order, and a summary line written last. Each line is flushed as
//! it is written, so a file cut short by a crash still parses line by line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::records::{Line, RunEvent, RunHeader, Summary, TaskRecord};

#[derive(Debug)]
pub struct MetricsWriter {
    out: BufWriter<File>,
    lines: u64,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        if let Some(dir) = path.as_ref().parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        Ok(MetricsWriter {
            out: BufWriter::new(File::create(path)?),
            lines: 0,
        })
    }

    pub fn write(&mut self, line: &Line) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// A metrics file as read back, possibly incomplete.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedMetrics {
    pub header: Option<RunHeader>,
    pub tasks: Vec<TaskRecord>,
    pub events: Vec<RunEvent>,
    pub summary: Option<Summary>,
    pub errors: Vec<LineError>,
    pub lines: usize,
}

impl ParsedMetrics {
    pub fn parse(text: &str) -> Self {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Ok(Self::from_lines(f.lines()))
    }

    fn from_lines(lines: impl Iterator<Item = std::io::Result<String>>) -> Self {
        let mut p = ParsedMetrics::default();
        for (i, line) in lines.enumerate() {
            let no = i + 1;
            let text = match line {
                Ok(t) => t,
                Err(e) => {
                    p.errors.push(LineError {
                        line: no,
                        message: e.to_string(),
                    });
                    break;
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            p.lines += 1;
            match serde_json::from_str::<Line>(&text) {
                Ok(Line::Header(h)) => p.header = Some(h),
                Ok(Line::Task(t)) => p.tasks.push(t),
                Ok(Line::Event(e)) => p.events.push(e),
                Ok(Line::Summary(s)) => p.summary = Some(s),
                Err(e) => p.errors.push(LineError {
                    line: no,
                    message: e.to_string(),
                }),
            }
        }
        p
    }

    pub fn is_complete(&self) -> bool {
        self.header.is_some() && self.summary.is_some() && self.errors.is_empty()
    }
}
