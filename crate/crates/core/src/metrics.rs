//! CSV sinks for training logs and episode traces.
//!
//! Floats go through the csv writer's shortest round-trip formatting, so a
//! value read back parses to the identical `f64`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::maddpg::EpisodeLog;

pub const METRICS_HEADER: [&str; 6] = [
    "episode",
    "mean_reward",
    "hit_rate",
    "actor_loss",
    "critic_loss",
    "noise_scale",
];

pub const TRACE_HEADER: [&str; 5] = ["step", "agent", "action", "reward", "indicator"];

/// Appends serde rows under a fixed header, flushing after every row.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    rows: usize,
}

impl<W: Write> CsvSink<W> {
    /// Writes the header immediately.
    pub fn new(inner: W, header: &[&str]) -> io::Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(inner);
        writer.write_record(header)?;
        writer.flush()?;
        Ok(Self { writer, rows: 0 })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> io::Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| io::Error::other(e.to_string()))
    }
}

pub type FileSink = CsvSink<BufWriter<File>>;

/// `metrics.csv` style sink at `path`, truncating any existing file.
pub fn metrics_sink(path: &Path) -> io::Result<FileSink> {
    CsvSink::new(BufWriter::new(File::create(path)?), &METRICS_HEADER)
}

pub fn trace_sink(path: &Path) -> io::Result<FileSink> {
    CsvSink::new(BufWriter::new(File::create(path)?), &TRACE_HEADER)
}

/// Reads a metrics file back.
pub fn read_metrics(path: &Path) -> io::Result<Vec<EpisodeLog>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(io::Error::from))
        .collect()
}
